import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from exitlaw.stats import ks_one_sample, ks_two_sample, normal_cdf, summarize

samples = st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=60)


def test_normal_cdf_against_erfc():
    x = np.linspace(-38, 38, 20001)
    exact = np.array([0.5 * math.erfc(-v / math.sqrt(2)) for v in x])
    assert np.max(np.abs(normal_cdf(x) - exact)) <= 1e-7
    assert np.max(np.abs(normal_cdf(x) - exact)) <= 1e-14
    assert normal_cdf(0.0) == 0.5
    assert normal_cdf(-40.0) == 0.0 and normal_cdf(40.0) == 1.0


def test_ks_point_mass_at_zero():
    assert ks_one_sample(np.zeros(100), 0.0, 1.0) == pytest.approx(0.5, abs=1e-15)


def test_ks_quantile_grid():
    n = 1000
    xs = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    assert ks_one_sample(xs, 0.0, 1.0) <= 1 / (2 * n) + 1e-6


def test_ks_zero_variance_reference():
    assert ks_one_sample([1.0, 1.0], 1.0, 0.0) == 0.0
    assert ks_one_sample([0.0, 2.0], 1.0, 0.0) == 0.5


def test_ks_errors():
    with pytest.raises(ValueError):
        ks_one_sample([], 0.0, 1.0)
    with pytest.raises(ValueError):
        ks_one_sample([1.0], 0.0, -1.0)
    with pytest.raises(ValueError):
        ks_two_sample([], [1.0])
    with pytest.raises(ValueError):
        ks_two_sample([1.0], [])


def test_ks_two_sample_examples():
    xs = np.random.default_rng(0).uniform(0, 1, 40)
    assert ks_two_sample(xs, xs) == 0.0
    assert ks_two_sample(xs, xs + 2) == 1.0
    assert ks_two_sample([1, 3], [2, 4]) == 0.5


def test_ks_two_sample_against_scipy():
    from scipy.stats import ks_2samp

    rng = np.random.default_rng(1)
    for _ in range(20):
        xs = rng.normal(size=int(rng.integers(1, 300)))
        ys = rng.normal(0.2, 1.3, size=int(rng.integers(1, 300)))
        assert ks_two_sample(xs, ys) == pytest.approx(ks_2samp(xs, ys).statistic, abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(samples, samples, st.floats(-5, 5), st.floats(0.01, 10))
def test_ks_invariants(xs, ys, m, v):
    d1 = ks_one_sample(xs, m, v)
    d2 = ks_two_sample(xs, ys)
    assert 0.0 <= d1 <= 1.0
    assert 0.0 <= d2 <= 1.0
    assert d2 == ks_two_sample(ys, xs)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-4, 4, allow_nan=False), min_size=1, max_size=60),
    st.floats(-100, 100),
    st.floats(0.01, 100),
)
def test_ks_affine_invariance(zs, shift, scale):
    zs = np.array(zs)
    xs = shift + scale * zs
    assert ks_one_sample(xs, shift, scale * scale) == pytest.approx(ks_one_sample(zs, 0.0, 1.0), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=50), st.randoms(use_true_random=False))
def test_summary_permutation_invariant(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    a, b = summarize(xs), summarize(ys)
    assert a.mean == pytest.approx(b.mean, rel=1e-12, abs=1e-9)
    assert a.var == pytest.approx(b.var, rel=1e-9, abs=1e-9)
    assert (a.min, a.max) == (b.min, b.max)
    assert a.var >= 0
    assert a.mean_ci[0] <= a.mean <= a.mean_ci[1]
    assert a.var_ci[0] <= a.var <= a.var_ci[1]


def test_summary_examples():
    s = summarize([1.0, 2.0, 3.0])
    assert s.mean == 2.0 and s.var == 1.0 and s.has_variance
    one = summarize([5.0])
    assert one.mean == 5.0 and not one.has_variance and one.var_ci is None
    with pytest.raises(ValueError):
        summarize([])


def test_variance_ci_coverage():
    hits = 0
    for seed in range(50):
        xs = np.random.default_rng(seed).normal(0.0, math.sqrt(0.375), 100_000)
        lo, hi = summarize(xs).var_ci
        hits += lo <= 0.375 <= hi
    assert hits >= 45
