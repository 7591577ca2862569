import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exitlaw.acceptance import constant_field
from exitlaw.errors import TangentialCrossing
from exitlaw.flow import integrate_flow, linearize
from exitlaw.limitlaw import active_terms, analyze, compute_limit_law, make_projections, sample_limit
from exitlaw.model import problem_from_dict


def test_projection_axis_aligned():
    p = make_projections([1.0, 0.0], [1.0, 0.0])
    assert p.pi_b([2.0, 3.0]) == 2.0
    np.testing.assert_array_equal(p.pi_M([2.0, 3.0]), [0.0, 3.0])


def test_projection_oblique():
    p = make_projections([1.0, 1.0], [1.0, 0.0])
    assert p.pi_b([2.0, 3.0]) == pytest.approx(2.0)
    np.testing.assert_allclose(p.pi_M([2.0, 3.0]), [0.0, 1.0], atol=1e-15)


def test_projection_of_b_itself():
    bz = np.array([0.3, -1.2, 2.0])
    p = make_projections(bz, [1.0, 0.5, 0.2])
    assert p.pi_b(bz) == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(p.pi_M(bz), 0.0, atol=1e-15)


def test_projection_tangential_rejected():
    with pytest.raises(TangentialCrossing):
        make_projections([0.0, 1.0], [1.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(
    st.integers(2, 5).flatmap(
        lambda d: st.tuples(
            st.lists(st.floats(-5, 5), min_size=d, max_size=d),
            st.lists(st.floats(-5, 5), min_size=d, max_size=d),
            st.lists(st.floats(-1e3, 1e3), min_size=d, max_size=d),
        )
    )
)
def test_projection_identity(args):
    bz, grad, v = (np.array(a) for a in args)
    try:
        p = make_projections(bz, grad)
    except TangentialCrossing:
        return
    v = v + 1.0
    # rounding scales with the obliqueness |b||grad g| / |<b, grad g>|, at most 1e3 here
    k = np.linalg.norm(bz) * np.linalg.norm(grad) / abs(bz @ grad)
    resid = v - p.pi_b(v) * bz - p.pi_M(v)
    assert np.linalg.norm(resid) <= 1e-12 * k * np.linalg.norm(v)
    assert abs(p.pi_M(v) @ grad) <= 1e-12 * k * np.linalg.norm(v) * np.linalg.norm(grad)
    basis = p.tangent_basis
    np.testing.assert_allclose(basis.T @ basis, np.eye(len(v) - 1), atol=1e-12)
    np.testing.assert_allclose(grad @ basis, 0.0, atol=1e-12 * np.linalg.norm(grad))


def test_projection_identity_random_vectors():
    rng = np.random.default_rng(5)
    bz, grad = rng.normal(size=3), rng.normal(size=3)
    grad += 2 * bz
    p = make_projections(bz, grad)
    V = rng.normal(size=(1000, 3)) * 100
    resid = V - np.outer(p.pi_b(V), bz) - p.pi_M(V)
    assert np.max(np.linalg.norm(resid, axis=1) / np.linalg.norm(V, axis=1)) <= 1e-10
    assert np.max(np.abs(p.pi_M(V) @ grad) / np.linalg.norm(V, axis=1)) <= 1e-10


def test_noise_only_constant_field():
    law = analyze(constant_field(alpha1=10.0, alpha2=10.0)).law
    assert law.alpha == 1.0
    assert law.active == {"xi": False, "psi": False, "noise": True}
    np.testing.assert_allclose(law.mu, 0.0, atol=1e-15)
    np.testing.assert_allclose(law.cov, np.eye(2), atol=1e-12)
    assert law.time_mean == pytest.approx(0.0, abs=1e-15)
    assert law.time_var == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(law.point_cov, [[1.0]], atol=1e-12)


def test_psi_only():
    law = analyze(constant_field(psi=["0.5", "0"], alpha1=0.5, alpha2=10.0)).law
    assert law.alpha == 0.5
    assert law.active == {"xi": False, "psi": True, "noise": False}
    np.testing.assert_allclose(law.mu, [0.5, 0.0], atol=1e-12)
    np.testing.assert_array_equal(law.cov, np.zeros((2, 2)))
    t, _ = sample_limit(law, 5, 0)
    np.testing.assert_allclose(t, -0.5, atol=1e-12)


def test_xi_only_point_mass():
    law = analyze(constant_field(xi={"type": "point_mass", "v": [0.0, 1.0]}, alpha2=0.5, alpha1=10.0)).law
    assert law.active == {"xi": True, "psi": False, "noise": False}
    assert law.time_mean == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(law.point_mean, [1.0], atol=1e-12)


def test_gaussian_xi_folds_into_covariance():
    cov = [[0.5, 0.1], [0.1, 0.2]]
    law = analyze(constant_field(xi={"type": "gaussian", "mean": [0.2, 0.0], "cov": cov}, alpha2=1.0)).law
    assert law.active == {"xi": True, "psi": False, "noise": True}
    np.testing.assert_allclose(law.cov, np.eye(2) + np.array(cov), atol=1e-12)
    np.testing.assert_allclose(law.mu, [0.2, 0.0], atol=1e-15)


def ou_spec(x_hit=0.25):
    return problem_from_dict(
        {
            "b": ["-x1"],
            "sigma": [["1"]],
            "alpha1": 10.0,
            "alpha2": 10.0,
            "x0": [1.0],
            "surface": f"x1 - {x_hit}",
            "bbox": {"lo": [-2], "hi": [2]},
            "t_max": 5.0,
        }
    )


def test_one_d_ornstein_uhlenbeck_variance():
    a = analyze(ou_spec())
    T = a.flow.T
    assert T == pytest.approx(math.log(4), abs=1e-9)
    assert a.law.cov[0, 0] == pytest.approx((1 - math.exp(-2 * T)) / 2, abs=1e-6)


def test_one_d_point_law_empty():
    law = analyze(ou_spec()).law
    assert law.point_mean.shape == (0,)
    assert law.point_cov.shape == (0, 0)
    _, pts = sample_limit(law, 10, 1)
    assert pts.shape == (10, 0)


def test_covariance_invariant_under_grid_doubling():
    spec = problem_from_dict(
        {
            "b": ["1 + 0.3*sin(x2)", "-x2 + 0.5*cos(x1)"],
            "sigma": [["1 + 0.2*x2", "0"], ["0.1", "0.5"]],
            "psi": ["x2", "0.2"],
            "alpha1": 1.0,
            "alpha2": 1.0,
            "x0": [0.0, 0.0],
            "xi": {"type": "gaussian", "mean": [0.1, 0.0], "cov": [[0.1, 0], [0, 0.2]]},
            "surface": "x1^2 + x2^2 - 1",
            "bbox": {"lo": [-3, -3], "hi": [3, 3]},
            "t_max": 4.0,
        }
    )
    a, b = analyze(spec, h_ode=1e-3).law, analyze(spec, h_ode=5e-4).law
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-8)
    np.testing.assert_allclose(a.mu, b.mu, atol=1e-8)


def test_misaligned_grid_rejected():
    spec = constant_field()
    a = analyze(spec)
    traj = integrate_flow(spec.b, spec.x0, 1e-3, 0.5)
    lin = linearize(traj, spec.b, psi=spec.psi, sigma=spec.sigma)
    with pytest.raises(ValueError, match="misaligned"):
        compute_limit_law(spec, a.flow, lin)


@settings(max_examples=200, deadline=None)
@given(
    st.one_of(st.floats(0.05, 3.0), st.sampled_from([0.5, 1.0, 2.0])),
    st.one_of(st.floats(0.05, 3.0), st.sampled_from([0.5, 1.0, 2.0])),
)
def test_exponent_logic(a1, a2):
    alpha, active = active_terms(a1, a2)
    assert alpha == min(a1, a2, 1.0)
    assert active["psi"] == (a1 == alpha)
    assert active["xi"] == (a2 == alpha)
    assert active["noise"] == (alpha == 1.0)
    assert any(active.values())


def test_ties_activate_all_terms():
    law = analyze(constant_field(psi=["0.5", "0"], xi={"type": "point_mass", "v": [0.0, 1.0]}, alpha1=1.0, alpha2=1.0)).law
    assert law.active == {"xi": True, "psi": True, "noise": True}
    np.testing.assert_allclose(law.mu, [0.5, 1.0], atol=1e-12)
    np.testing.assert_allclose(law.cov, np.eye(2), atol=1e-12)


def test_inactive_terms_are_exactly_zero():
    law = analyze(constant_field(psi=["0.5", "0"], alpha1=2.0, alpha2=3.0)).law
    assert not law.active["psi"]
    np.testing.assert_array_equal(law.mu, [0.0, 0.0])


def test_sample_limit_empty_and_deterministic():
    law = analyze(constant_field()).law
    t, p = sample_limit(law, 0, 1)
    assert t.shape == (0,) and p.shape == (0, 1)
    a, b = sample_limit(law, 50, 7), sample_limit(law, 50, 7)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_sample_limit_degenerate_law():
    law = analyze(constant_field()).law
    law = dataclasses.replace(law, mu=np.array([0.3, -0.4]), cov=np.zeros((2, 2)))
    t, p = sample_limit(law, 20, 3)
    np.testing.assert_array_equal(t, -0.3)
    np.testing.assert_array_equal(p[:, 0], -0.4)


def test_sample_limit_mean_clt():
    law = analyze(constant_field(psi=["0.5", "0.2"], alpha1=1.0)).law
    n = 100_000
    t, p = sample_limit(law, n, 11)
    assert abs(t.mean() - law.time_mean) <= 4 * math.sqrt(law.time_var / n)
    assert abs(p[:, 0].mean() - law.point_mean[0]) <= 4 * math.sqrt(law.point_cov[0, 0] / n)


def test_to_json_layout():
    js = analyze(constant_field()).to_json()
    assert set(js) == {"T", "z", "margin", "Phi_T", "Phi_T_inv", "limit_law"}
    assert set(js["limit_law"]) == {"alpha", "active", "mu", "cov", "time_law", "point_law"}
