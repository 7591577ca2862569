"""Executable acceptance criteria.

Each ``criterion_*`` function runs one numbered criterion and returns a list
of :class:`Check` rows (measured value, threshold, verdict). ``quick=True``
shrinks sample sizes by ``QUICK_FACTOR`` and widens KS thresholds by
``sqrt(QUICK_FACTOR)`` (the KS noise scale); moment tolerances are kept.
"""

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .conditioned1d import (
    OneDProblem,
    as_levinson_problem,
    conditioned_drift,
    laplace_defect,
    limit_variance,
    simulate_conditioned,
)
from .flow import integrate_flow, linearize
from .limitlaw import analyze, make_projections
from .mc import run_ensemble
from .model import VectorField, problem_from_dict
from .stats import ks_one_sample, ks_two_sample

QUICK_FACTOR = 4
SEED = 20240611


@dataclass(frozen=True)
class Check:
    criterion: str
    name: str
    measured: float
    threshold: str
    passed: bool
    detail: str = ""

    def line(self):
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] {self.criterion:<4} {self.name:<44} measured={self.measured:<14.6g} need {self.threshold}"


def _check(crit, name, measured, ok, threshold, detail=""):
    return Check(crit, name, float(measured), threshold, bool(ok), detail)


def _at_most(crit, name, measured, limit, detail=""):
    return _check(crit, name, measured, np.isfinite(measured) and measured <= limit, f"<= {limit:g}", detail)


def _within(crit, name, measured, target, tol, detail=""):
    ok = np.isfinite(measured) and abs(measured - target) <= tol
    return _check(crit, name, measured, ok, f"{target:g} +/- {tol:g}", detail)


def constant_field(**overrides):
    data = {
        "dim": 2,
        "b": ["1", "0"],
        "sigma": [["1", "0"], ["0", "1"]],
        "psi": ["0", "0"],
        "alpha1": 10.0,
        "alpha2": 10.0,
        "x0": [0.0, 0.0],
        "xi": {"type": "zero"},
        "surface": "x1 - 1",
        "bbox": {"lo": [-10.0, -10.0], "hi": [10.0, 10.0]},
        "t_max": 5.0,
    }
    data.update(overrides)
    return problem_from_dict(data)


def ou_conditioned():
    return OneDProblem.from_strings("-x1", "1", 0.5, 2.0, 1.0)


def _n(n, quick):
    return max(n // QUICK_FACTOR, 200) if quick else n


def _ks_limit(limit, quick):
    return limit * math.sqrt(QUICK_FACTOR) if quick else limit


def criterion_1(quick=False, jobs=1):
    eps = 0.05
    spec = constant_field()
    ens = run_ensemble(spec, eps, _n(20000, quick), SEED, h_sde=eps * eps / 10, jobs=jobs)
    r = ens.rescaled
    lim = _ks_limit(0.03, quick)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(r.u, -r.pib_w)[0, 1] if np.std(r.pib_w) > 0 else float("nan")
    return [
        _at_most("1a", "KS(u, N(0,1))", ks_one_sample(r.u, 0.0, 1.0), lim),
        _at_most("1b", "KS(tangent exit coord, N(0,1))", ks_one_sample(r.pim_w[:, 0], 0.0, 1.0), lim),
        _check(
            "1c", "corr(u, -pi_b w)", corr, corr >= 0.99, ">= 0.99",
            f"std(pi_b w) = {np.std(r.pib_w):.3g}; exit points lie on M, so pi_b w is 0 up to rounding",
        ),
    ]


def criterion_2(quick=False, jobs=1):
    eps = 0.01
    spec = constant_field(psi=["0.5", "0"], alpha1=0.5, alpha2=10.0)
    ens = run_ensemble(spec, eps, _n(5000, quick), SEED + 2, jobs=jobs)
    mean = float(np.mean(ens.rescaled.u))
    exact = -0.5 / (1.0 + 0.5 * eps ** 0.5)
    return [_within("2", "mean eps^-0.5 (tau - 1)", mean, -0.5, 0.02,
                    f"exact finite-eps mean is {exact:.5f}")]


def criterion_3(quick=False, jobs=1):
    eps = 0.01
    spec = constant_field(xi={"type": "point_mass", "v": [0.0, 1.0]}, alpha2=0.5, alpha1=10.0)
    ens = run_ensemble(spec, eps, _n(5000, quick), SEED + 3, jobs=jobs)
    r = ens.rescaled
    return [
        _within("3a", "mean rescaled tangent exit coord", float(np.mean(r.pim_w[:, 0])), 1.0, 0.02),
        _within("3b", "mean rescaled exit time", float(np.mean(r.u)), 0.0, 0.02),
    ]


CRITERION_4_H = 1e-4


def criterion_4(quick=False, jobs=1):
    prob = ou_conditioned()
    n = _n(2000, quick)
    ht = simulate_conditioned(prob, 1.0, n, SEED + 4, h_sde=CRITERION_4_H, method="htransform", jobs=jobs)
    rj = simulate_conditioned(prob, 1.0, n, SEED + 5, h_sde=CRITERION_4_H, method="rejection", jobs=jobs)
    return [_at_most("4", "KS2(htransform tau, rejection tau)", ks_two_sample(ht.tau, rj.tau),
                     _ks_limit(0.05, quick), f"acceptance rate {rj.acceptance_rate:.4f}")]


def criterion_5(quick=False, jobs=1):
    eps = 0.05
    prob = ou_conditioned()
    ens = simulate_conditioned(prob, eps, _n(20000, quick), SEED + 6, h_sde=eps * eps / 10, jobs=jobs)
    u = (ens.tau - math.log(2.0)) / eps
    var = float(np.var(u, ddof=1))
    return [
        _within("5a", "var eps^-1 (tau - ln 2)", var, 0.375, 0.0375),
        _at_most("5b", "KS(u, N(0, 3/8))", ks_one_sample(u, 0.0, 0.375), _ks_limit(0.04, quick)),
    ]


def criterion_6(quick=False, jobs=1):
    prob = ou_conditioned()
    ratios = [laplace_defect(prob, e)[1] for e in (0.2, 0.1, 0.05)]
    finite = all(np.isfinite(ratios))
    worst = max(ratios[1] / ratios[0], ratios[2] / ratios[1])
    return [_check("6", "max consecutive defect/eps^2 ratio", worst, finite and worst <= 1.5, "<= 1.5 (finite)",
                   "defect/eps^2 = " + ", ".join(f"{r:.4f}" for r in ratios))]


def _rotation_error():
    f = VectorField.from_strings(["x2", "-x1"])
    traj = integrate_flow(f, [1.0, 0.0], 1e-3, 3.0)
    lin = linearize(traj, f)
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    return max(np.max(np.abs(lin.Phi[k] - expm(A * t))) for k, t in enumerate(traj.times))


def _one_d_phi_error():
    f = VectorField.from_strings(["1 + 0.5*sin(x1)"])
    traj = integrate_flow(f, [0.0], 1e-3, 2.0)
    lin = linearize(traj, f)
    b0 = f(traj.points[0])[0]
    ratio = np.array([f(p)[0] / b0 for p in traj.points])
    return float(np.max(np.abs(lin.Phi[:, 0, 0] - ratio)))


def jacobian_fd_error(field, p, h=1e-5):
    p = np.asarray(p, float)
    J = field.jacobian(p)
    fd = np.empty_like(J)
    for j in range(len(p)):
        e = np.zeros_like(p)
        e[j] = h
        fd[:, j] = (field(p + e) - field(p - e)) / (2 * h)
    return float(np.max(np.abs(J - fd)))


def _dual_error():
    cases = [
        (["exp(x1)*x2", "x1^2"], [0.3, 1.7]),
        (["sin(x1)*cos(x2)", "log(x1)+sqrt(x2)"], [0.7, 2.1]),
        (["tanh(x1-x2)", "abs(x2)^1.5/(1+x1^2)"], [-0.4, 1.3]),
    ]
    return max(jacobian_fd_error(VectorField.from_strings(c), p) for c, p in cases)


def _drift_closed_form_error():
    prob = OneDProblem.from_strings("-1", "1", 0.0, 1.0, 0.5)
    worst = 0.0
    for eps, x in ((0.3, 0.5), (0.3, 0.05), (0.2, 0.9)):
        exact = -1.0 + 2.0 / (1.0 - math.exp(-2.0 * x / eps ** 2))
        worst = max(worst, abs(conditioned_drift(prob, eps, x) - exact) / abs(exact))
    return worst


def _variance_closed_form_error():
    a = limit_variance(OneDProblem.from_strings("-1", "1", -1.0, 1.0, 0.0))
    b = limit_variance(OneDProblem.from_strings("-x1", "1", 0.5, 2.0, 1.0))
    return max(abs(a - 1.0), abs(b - 0.375))


def _variance_consistency_error():
    prob = ou_conditioned()
    law = analyze(as_levinson_problem(prob)).law
    return abs(law.time_var - limit_variance(prob))


def criterion_7(quick=False, jobs=1):
    return [
        _at_most("7a", "Phi vs expm (rotation field)", _rotation_error(), 1e-8),
        _at_most("7b", "1-d Phi vs b(S^t x0)/b(x0)", _one_d_phi_error(), 1e-8),
        _at_most("7c", "dual Jacobian vs central differences", _dual_error(), 1e-6),
        _at_most("7d", "b_eps vs closed form (rel.)", _drift_closed_form_error(), 1e-10),
        _at_most("7e", "limit_variance vs closed forms", _variance_closed_form_error(), 1e-9),
        _at_most("7f", "limit-law vs conditioned variance", _variance_consistency_error(), 1e-6),
    ]


def projection_identity_error(n=1000, seed=SEED):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        d = int(rng.integers(2, 6))
        bz = rng.standard_normal(d)
        grad = bz + 0.5 * rng.standard_normal(d)
        proj = make_projections(bz, grad)
        V = rng.standard_normal((n // 10, d)) * 10.0 ** rng.uniform(-3, 3, (n // 10, 1))
        resid = V - np.outer(proj.pi_b(V), bz) - proj.pi_M(V)
        worst = max(worst, float(np.max(np.linalg.norm(resid, axis=1) / np.linalg.norm(V, axis=1))))
    return worst


def cocycle_error(seed=SEED):
    f = VectorField.from_strings(["x2", "-sin(x1) - 0.2*x2"])
    h = 1e-3
    traj = integrate_flow(f, [1.0, 0.0], h, 4.0)
    lin = linearize(traj, f)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        ks = int(rng.integers(1, 2000))
        kt = int(rng.integers(1, 2000))
        sub = integrate_flow(f, traj.points[ks], h, kt * h)
        lin_s = linearize(sub, f)
        lhs = lin.Phi[ks + kt]
        rhs = lin_s.Phi[kt] @ lin.Phi[ks]
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def ensemble_determinism(jobs=2):
    spec = constant_field()
    kw = dict(h_sde=2.5e-3, batch_size=37)
    a = run_ensemble(spec, 0.1, 120, 99, **kw)
    b = run_ensemble(spec, 0.1, 120, 99, **kw)
    c = run_ensemble(spec, 0.1, 120, 99, h_sde=2.5e-3, batch_size=120)
    d = run_ensemble(spec, 0.1, 120, 99, jobs=jobs, **kw)

    def same(x, y):
        return all(
            np.array_equal(getattr(x, k), getattr(y, k), equal_nan=True) for k in ("status", "tau", "x_exit", "x_probe")
        )

    return same(a, b), same(a, c), same(a, d)


def ks_bounds_ok(seed=SEED):
    rng = np.random.default_rng(seed)
    for _ in range(50):
        xs = rng.standard_normal(int(rng.integers(1, 200))) * rng.uniform(0.1, 3)
        ys = rng.standard_normal(int(rng.integers(1, 200))) + rng.uniform(-2, 2)
        d1 = ks_one_sample(xs, 0.0, 1.0)
        d2 = ks_two_sample(xs, ys)
        if not (0.0 <= d1 <= 1.0 and 0.0 <= d2 <= 1.0 and d2 == ks_two_sample(ys, xs)):
            return False
    return True


def criterion_8(quick=False, jobs=1):
    repeat, batching, parallel = ensemble_determinism(jobs=max(jobs, 2))
    return [
        _at_most("8a", "projection identity (rel. residual)", projection_identity_error(), 1e-10),
        _at_most("8b", "Phi cocycle", cocycle_error(), 1e-6),
        _check("8c", "ensemble determinism (repeat run)", float(repeat), repeat, "identical"),
        _check("8d", "ensemble order independence (batching)", float(batching), batching, "identical"),
        _check("8e", "ensemble serial == parallel", float(parallel), parallel, "identical"),
        _check("8f", "KS distance in [0,1], two-sample symmetric", float(ks_bounds_ok()), ks_bounds_ok(), "true"),
    ]


CRITERIA = {
    "1": criterion_1,
    "2": criterion_2,
    "3": criterion_3,
    "4": criterion_4,
    "5": criterion_5,
    "6": criterion_6,
    "7": criterion_7,
    "8": criterion_8,
}


def run_all(quick=False, jobs=1, only=None, echo=print):
    results = []
    for key, fn in CRITERIA.items():
        if only and key not in only:
            continue
        t0 = time.perf_counter()
        rows = fn(quick=quick, jobs=jobs)
        elapsed = time.perf_counter() - t0
        for row in rows:
            if echo:
                echo(row.line() + (f"  ({row.detail})" if row.detail else ""))
        if echo:
            echo(f"       criterion {key} took {elapsed:.1f} s")
        results.extend(rows)
    return results
