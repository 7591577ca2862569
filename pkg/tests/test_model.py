import json
import math

import numpy as np
import pytest

from exitlaw.errors import ConfigError, DomainError, NonDifferentiableError, ProblemError
from exitlaw.model import MatrixField, Surface, VectorField, eval_field, jacobian, load_problem, problem_from_dict

BASE = {
    "dim": 2,
    "b": ["1", "0"],
    "sigma": [["1", "0"], ["0", "1"]],
    "alpha1": 1.0,
    "alpha2": 1.0,
    "x0": [0.0, 0.0],
    "surface": "x1 - 1",
    "bbox": {"lo": [-5, -5], "hi": [5, 5]},
    "t_max": 4.0,
}


def vf(*srcs):
    return VectorField.from_strings(list(srcs))


def test_eval_field_examples():
    np.testing.assert_array_equal(eval_field(vf("1", "0"), [5.0, -2.0]), [1.0, 0.0])
    np.testing.assert_array_equal(eval_field(vf("-x1"), [2.0]), [-2.0])
    assert abs(eval_field(vf("sin(x1)"), [math.pi / 2])[0] - 1.0) <= 1e-12


def test_eval_field_domain_error():
    with pytest.raises(DomainError):
        eval_field(vf("log(x1)"), [-1.0])


def test_jacobian_examples():
    np.testing.assert_array_equal(jacobian(vf("-x1"), [3.7]), [[-1.0]])
    np.testing.assert_array_equal(jacobian(vf("x2", "-x1"), [0.4, -2.0]), [[0.0, 1.0], [-1.0, 0.0]])


def test_jacobian_matches_finite_differences():
    f = vf("exp(x1)*x2", "x1^2")
    p = np.array([0.3, 1.7])
    h = 1e-5
    fd = np.column_stack([(f(p + h * e) - f(p - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(jacobian(f, p), fd, atol=1e-6)
    exact = [[math.exp(0.3) * 1.7, math.exp(0.3)], [0.6, 0.0]]
    np.testing.assert_allclose(jacobian(f, p), exact, rtol=1e-14)


def test_jacobian_non_differentiable():
    with pytest.raises(NonDifferentiableError):
        jacobian(vf("abs(x1)"), [0.0])


def test_eval_many_matches_pointwise():
    f = vf("x1*x2", "cos(x2)")
    X = np.random.default_rng(0).normal(size=(2, 9))
    many = f.eval_many(X)
    for j in range(9):
        np.testing.assert_allclose(many[:, j], f(X[:, j]), rtol=1e-15)


def test_matrix_field_and_surface():
    s = MatrixField.from_strings([["1", "x1"], ["0", "2"]])
    assert not s.is_constant()
    np.testing.assert_array_equal(s([3.0, 0.0]), [[1.0, 3.0], [0.0, 2.0]])
    assert MatrixField.from_strings([["0", "0"], ["0", "0"]]).is_zero()
    g = Surface.from_string("x1^2 + x2^2 - 1", 2)
    assert g([1.0, 0.0]) == 0.0
    np.testing.assert_allclose(g.gradient([0.6, 0.8]), [1.2, 1.6])


def test_fields_reject_out_of_range_variables():
    with pytest.raises(ProblemError):
        VectorField.from_strings(["x3", "x1"])


def test_problem_from_dict_defaults():
    spec = problem_from_dict(BASE)
    assert spec.dim == 2
    assert spec.psi.is_zero()
    assert spec.init.xi_kind == "zero"
    np.testing.assert_array_equal(spec.x0, [0.0, 0.0])


@pytest.mark.parametrize(
    "patch",
    [
        {"sigma": [["1"]]},
        {"x0": [0.0]},
        {"psi": ["0", "0", "0"]},
        {"dim": 3},
        {"bbox": {"lo": [-5], "hi": [5]}},
        {"xi": {"type": "gaussian", "mean": [0, 0], "cov": [[1.0]]}},
    ],
)
def test_dimension_mismatch_rejected(patch):
    for _ in range(2):
        with pytest.raises(ProblemError):
            problem_from_dict({**BASE, **patch})


@pytest.mark.parametrize(
    "patch",
    [
        {"alpha1": 0.0},
        {"alpha2": -1.0},
        {"x0": [9.0, 0.0]},
        {"xi": {"type": "gaussian", "mean": [0, 0], "cov": [[1.0, 0.0], [0.0, -1.0]]}},
        {"xi": {"type": "gaussian", "mean": [0, 0], "cov": [[1.0, 0.5], [0.0, 1.0]]}},
        {"xi": {"type": "cauchy"}},
    ],
)
def test_invalid_values_rejected(patch):
    with pytest.raises(ProblemError):
        problem_from_dict({**BASE, **patch})


def test_gaussian_initial_law():
    spec = problem_from_dict({**BASE, "xi": {"type": "gaussian", "mean": [1, 2], "cov": [[2, 0.5], [0.5, 1]]}})
    L = spec.init.cov_factor()
    np.testing.assert_allclose(L @ L.T, [[2, 0.5], [0.5, 1]], atol=1e-14)
    np.testing.assert_array_equal(spec.init.mean(), [1.0, 2.0])


def test_psi_correction_takes_eps():
    spec = problem_from_dict({**BASE, "psi": ["0.5", "0"], "psi_eps_correction": ["eps*x2", "0"]})
    X = np.array([[0.0], [2.0]])
    np.testing.assert_allclose(spec.perturbation_many(X, 0.1)[:, 0], [0.5 + 0.2, 0.0])


def test_load_problem_errors(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError, match="nope.json"):
        load_problem(missing)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="line 1"):
        load_problem(bad)
    expr = tmp_path / "expr.json"
    expr.write_text(json.dumps({**BASE, "b": ["x1 +* x2", "0"]}))
    with pytest.raises(ConfigError, match="offset 4"):
        load_problem(expr)


def test_shipped_problem_files_load():
    from pathlib import Path

    for path in sorted((Path(__file__).parents[1] / "problems").glob("*.json")):
        data = json.loads(path.read_text())
        if "a1" in data:
            continue
        assert load_problem(path).dim >= 1
