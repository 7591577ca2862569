import numpy as np
import pytest

from exitlaw.acceptance import constant_field


@pytest.fixture(scope="session")
def const_spec():
    return constant_field()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
