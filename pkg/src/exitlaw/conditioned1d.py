"""One-dimensional diffusions conditioned to leave an interval through the
upper end, against the drift.

The conditioned process is again a diffusion, with drift

    b_eps(x) = b(x) + eps^2 sigma(x)^2 h_eps(x) / int_{a1}^x h_eps,
    h_eps(x) = exp(-Phi(x) / eps^2),  Phi(x) = 2 int_{a1}^x b / sigma^2.

``h_eps`` spans thousands of orders of magnitude for small ``eps``, so the
ratio is evaluated through

    K(x) = int_{a1}^x exp((Phi(x) - Phi(y)) / eps^2) dy   (integrand <= 1)

with ``b_eps = b + eps^2 sigma^2 / K``. ``K`` is tabulated on a grid whose
cells are short against the boundary-layer width ``eps^2 / |Phi'|``, and
combined across cells with a cumulative log-sum-exp.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, DriftSignError, ProblemError, RejectionInfeasible
from .mc import path_generator, split_seed
from .model import InitialLaw, MatrixField, ProblemSpec, Surface, VectorField, parse_expression
from .model.expr import Expression, Neg
from .quadrature import gauss_legendre, romberg

CHECK_POINTS = 10_000
CLAMP_GAP = 1e-9
MIN_ACCEPTANCE = 1e-6
_GL_CELL = 8
_GL_PHI = 4
_CHUNK_CELLS = 1 << 17


@dataclass(frozen=True)
class OneDProblem:
    """Drift ``b`` and noise ``sigma`` on ``[a1, a2]`` with start ``x0``.

    ``reach`` is how far past ``a2`` the hypotheses ``b < 0``, ``sigma != 0``
    still hold (at most a quarter of the interval length); quantities that
    need a neighbourhood of ``a2`` use it.

    ``require_noise=False`` admits ``sigma == 0`` for the deterministic
    quadratures; the conditioned drift still refuses it.
    """

    b: Expression
    sigma: Expression
    a1: float
    a2: float
    x0: float
    reach: float = field(default=None, compare=False)
    require_noise: bool = field(default=True, compare=False)

    def __post_init__(self):
        if not self.a1 < self.a2:
            raise ProblemError(f"need a1 < a2, got [{self.a1}, {self.a2}]")
        if not self.a1 < self.x0 <= self.a2:
            raise ProblemError(f"x0 = {self.x0} must lie in ({self.a1}, {self.a2}]")
        for e in (self.b, self.sigma):
            if any(i > 0 for i in e.variables()):
                raise ProblemError(f"1-d expression {e} references a coordinate beyond x1")
        grid = np.linspace(self.a1, self.a2, CHECK_POINTS)
        bad = self._violations(grid)
        if bad.size:
            x = grid[bad[0]]
            raise DriftSignError(
                f"need b < 0 and sigma != 0 on [{self.a1}, {self.a2}]; violated at x = {x:.6g} "
                f"(b = {self.b_at(x):.6g}, sigma = {self.sigma_at(x):.6g})"
            )
        if self.reach is None:
            ext = np.linspace(self.a2, self.a2 + 0.25 * (self.a2 - self.a1), 2001)
            bad = self._violations(ext)
            reach = ext[-1] if bad.size == 0 else ext[max(bad[0] - 1, 0)]
            object.__setattr__(self, "reach", float(reach))

    @classmethod
    def from_strings(cls, b, sigma, a1, a2, x0, require_noise=True):
        return cls(parse_expression(b), parse_expression(sigma), float(a1), float(a2), float(x0),
                   require_noise=require_noise)

    def _violations(self, grid):
        try:
            bv, sv = self.b_many(grid), self.sigma_many(grid)
        except DomainError as exc:
            raise ProblemError(f"cannot evaluate b or sigma on [{grid[0]}, {grid[-1]}]: {exc}") from None
        ok = bv < 0
        if self.require_noise:
            ok &= sv != 0
        return np.nonzero(~ok)[0]

    def b_many(self, x):
        x = np.asarray(x, float)
        return np.broadcast_to(np.asarray(self.b.evaluate([x]), float), x.shape)

    def sigma_many(self, x):
        x = np.asarray(x, float)
        return np.broadcast_to(np.asarray(self.sigma.evaluate([x]), float), x.shape)

    def b_at(self, x):
        return float(self.b_many(np.array([x]))[0])

    def sigma_at(self, x):
        return float(self.sigma_many(np.array([x]))[0])


def load_oned_problem(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"problem file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return oned_problem_from_dict(data)
    except ConfigError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def oned_problem_from_dict(data):
    missing = [k for k in ("b", "sigma", "a1", "a2", "x0") if k not in data]
    if missing:
        raise ProblemError(f"missing keys {missing}")
    b, sigma = data["b"], data["sigma"]
    # accept the d = 1 layout of the general problem file as well
    if isinstance(b, list):
        b = b[0]
    while isinstance(sigma, list):
        sigma = sigma[0]
    return OneDProblem.from_strings(b, sigma, data["a1"], data["a2"], data["x0"])


# -- closed-form quadratures --------------------------------------------------

def _phi_prime(prob, y):
    s = prob.sigma_many(y)
    return 2.0 * prob.b_many(y) / (s * s)


def action_integral(prob, x):
    """``Phi(x) = 2 int_{a1}^x b / sigma^2`` by Romberg-refined trapezoids."""
    if not prob.a1 <= x <= prob.reach:
        raise ValueError(f"x = {x} outside [{prob.a1}, {prob.reach}]")
    return romberg(lambda y: _phi_prime(prob, y), prob.a1, x, rtol=1e-13)


def limit_variance(prob):
    """``-int_{x0}^{a2} sigma^2 / b^3``."""
    def f(y):
        b = prob.b_many(y)
        s = prob.sigma_many(y)
        return -(s * s) / (b * b * b)

    return romberg(f, prob.x0, prob.a2, rtol=1e-13)


def deterministic_time(prob):
    """Travel time from ``x0`` to ``a2`` along ``x' = -b(x)``."""
    return romberg(lambda y: -1.0 / prob.b_many(y), prob.x0, prob.a2, rtol=1e-13)


# -- the conditioned drift ----------------------------------------------------

def _hermite(t, f0, d0, f1, d1, dx):
    t2 = t * t
    t3 = t2 * t
    return (
        (2 * t3 - 3 * t2 + 1) * f0
        + (t3 - 2 * t2 + t) * dx * d0
        + (-2 * t3 + 3 * t2) * f1
        + (t3 - t2) * dx * d1
    )


class ConditionedDrift:
    """Tabulated ``Phi`` and ``log K`` for one ``(problem, eps)``; read-only after construction."""

    def __init__(self, prob, eps, max_cells=8_000_000):
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        if not prob.require_noise and np.any(prob.sigma_many(np.linspace(prob.a1, prob.a2, CHECK_POINTS)) == 0):
            raise DriftSignError("the conditioned drift needs sigma != 0 on [a1, a2]")
        self.prob = prob
        self.eps = float(eps)
        self.eps2 = self.eps * self.eps
        a1, hi = prob.a1, prob.reach
        length = hi - a1
        probe = np.linspace(a1, hi, 4001)
        slope = float(np.max(np.abs(_phi_prime(prob, probe))))
        dx = min(length / 4000.0, 2.0 * self.eps2 / slope)
        n = int(math.ceil(length / dx))
        if n > max_cells:
            raise ValueError(f"eps = {eps} needs {n} grid cells (limit {max_cells})")
        self.n = n
        self.dx = length / n
        self.x = a1 + self.dx * np.arange(n + 1)
        self.x[-1] = hi
        self.dphi = _phi_prime(prob, self.x)
        gx, gw = gauss_legendre(_GL_PHI)
        incr = np.empty(n)
        for lo in range(0, n, _CHUNK_CELLS):
            cells = self.x[lo: min(lo + _CHUNK_CELLS, n)]
            y = cells[:, None] + self.dx * gx[None, :]
            incr[lo: lo + len(cells)] = self.dx * (_phi_prime(prob, y) @ gw)
        self.phi = np.concatenate([[0.0], np.cumsum(incr)])
        # log of int over each cell of exp((Phi_{j+1} - Phi(y)) / eps^2)
        cx, cw = gauss_legendre(_GL_CELL)
        log_cell = np.empty(n)
        for lo in range(0, n, _CHUNK_CELLS):
            k = np.arange(lo, min(lo + _CHUNK_CELLS, n))
            t = np.broadcast_to(cx, (len(k), _GL_CELL))
            py = _hermite(t, self.phi[k, None], self.dphi[k, None], self.phi[k + 1, None],
                          self.dphi[k + 1, None], self.dx)
            vals = np.exp(np.minimum((self.phi[k + 1, None] - py) / self.eps2, 0.0)) @ cw
            log_cell[lo: lo + len(k)] = np.log(self.dx * vals)
        scaled = self.phi / self.eps2
        log_i = np.empty(n + 1)
        log_i[0] = -np.inf
        log_i[1:] = np.logaddexp.accumulate(log_cell - scaled[1:])
        self.log_int_h = log_i  # log int_{a1}^{x_k} h_eps
        with np.errstate(invalid="ignore"):
            self.log_k = log_i + scaled
        self.log_k[0] = -np.inf

    def _locate(self, x):
        x = np.asarray(x, float)
        if np.any(x < self.prob.a1) or np.any(x > self.prob.reach):
            raise ValueError(f"x outside [{self.prob.a1}, {self.prob.reach}]")
        k = np.minimum(((x - self.prob.a1) / self.dx).astype(np.int64), self.n - 1)
        # the index guess and the node table round differently
        return x, k, np.clip(x - self.x[k], 0.0, self.x[k + 1] - self.x[k])

    def _phi_in_cell(self, k, s):
        return _hermite(s / self.dx, self.phi[k], self.dphi[k], self.phi[k + 1], self.dphi[k + 1], self.dx)

    def phi_at(self, x):
        x, k, s = self._locate(x)
        return self._phi_in_cell(k, s)

    def log_k_at(self, x):
        """``log K(x)``."""
        x, k, s = self._locate(x)
        phi_x = self._phi_in_cell(k, s)
        cx, cw = gauss_legendre(_GL_CELL)
        ss = s[..., None] * cx
        py = self._phi_in_cell(k[..., None], ss)
        local = s * (np.exp(np.minimum((phi_x[..., None] - py) / self.eps2, 0.0)) @ cw)
        with np.errstate(divide="ignore"):
            carried = self.log_k[k] + (phi_x - self.phi[k]) / self.eps2
            return np.logaddexp(carried, np.log(local))

    def log_int_h_at(self, x):
        """``log int_{a1}^x h_eps``."""
        return self.log_k_at(x) - self.phi_at(x) / self.eps2

    def drift(self, x):
        """``b_eps(x)`` (vectorized); requires ``x > a1``."""
        x = np.asarray(x, float)
        if np.any(x <= self.prob.a1):
            raise ValueError("conditioned drift is undefined at or below a1")
        s = self.prob.sigma_many(x)
        return self.prob.b_many(x) + self.eps2 * s * s * np.exp(-self.log_k_at(x))

    def hit_probability(self, x):
        """``u_eps(x) = P_x(exit through a2)``, from the log-space integrals."""
        return np.exp(self.log_int_h_at(x) - self.log_int_h_at(self.prob.a2))


@lru_cache(maxsize=16)
def conditioned_drift_table(prob, eps):
    return ConditionedDrift(prob, eps)


def conditioned_drift(prob, eps, x):
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not x > prob.a1:
        raise ValueError(f"x = {x} must exceed a1 = {prob.a1}")
    return float(conditioned_drift_table(prob, float(eps)).drift(np.array([x]))[0])


def default_delta(prob):
    margin = 1e-3 * (prob.a2 - prob.a1)
    return min(0.1 * (prob.a2 - prob.a1), prob.x0 - prob.a1 - margin, prob.reach - prob.a2)


def laplace_defect(prob, eps, delta=None, points=2000):
    """``sup |b_eps + b|`` over ``[x0 - delta, a2 + delta]``; returns ``(defect, defect / eps^2)``."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    delta = default_delta(prob) if delta is None else delta
    lo, hi = prob.x0 - delta, prob.a2 + delta
    if not (delta > 0 and lo > prob.a1 and hi <= prob.reach):
        raise ValueError(
            f"delta = {delta} too large: [{lo:.6g}, {hi:.6g}] must lie in ({prob.a1}, {prob.reach}]"
        )
    grid = np.linspace(lo, hi, points)
    table = conditioned_drift_table(prob, float(eps))
    defect = float(np.max(np.abs(table.drift(grid) + prob.b_many(grid))))
    return defect, defect / (eps * eps)


def as_levinson_problem(prob):
    """The noise-only exit problem for the reversed flow ``x' = -b(x)`` leaving through ``a2``."""
    T0 = deterministic_time(prob)
    span = prob.a2 - prob.a1
    return ProblemSpec(
        b=VectorField((Neg(prob.b),)),
        sigma=MatrixField(((prob.sigma,),)),
        psi=VectorField.from_strings(["0"]),
        alpha1=10.0,
        init=InitialLaw(x0=(prob.x0,), alpha2=10.0),
        surface=Surface(parse_expression(f"x1 - {prob.a2!r}"), 1),
        bbox_lo=(prob.a1 - span,),
        bbox_hi=(prob.a2 + span,),
        t_max=2.0 * T0 + 1.0,
    )


# -- samplers -------------------------------------------------------------------

UPPER, LOWER, CAPPED = 0, 1, 2


def _simulate_1d_batch(args):
    """Euler-Maruyama for a batch of 1-d paths; one normal per step per path."""
    prob, eps, h, t_cap, seeds, method, chunk = args
    m = len(seeds)
    gens = [path_generator(s) for s in seeds]
    status = np.full(m, CAPPED, dtype=np.int8)
    tau = np.full(m, np.nan)
    overshoots = 0
    if method == "htransform":
        table = conditioned_drift_table(prob, float(eps))
        drift = table.drift
        floor = prob.a1 + CLAMP_GAP
    else:
        drift = prob.b_many
        floor = None
    a1, a2 = prob.a1, prob.a2
    if prob.x0 >= a2:
        return np.full(m, UPPER, dtype=np.int8), np.zeros(m), 0
    sqrt_h = math.sqrt(h)
    n_steps = int(math.ceil(t_cap / h - 1e-12))
    act = np.arange(m)
    x = np.full(m, prob.x0)
    noise = None
    for n in range(n_steps):
        if act.size == 0:
            break
        j = n % chunk
        if j == 0:
            noise = np.stack([gens[r].standard_normal(chunk) for r in act])
        s = prob.sigma_many(x)
        xn = x + drift(x) * h + eps * s * sqrt_h * noise[:, j]
        up = xn >= a2
        if floor is None:
            down = (xn <= a1) & ~up
        else:
            down = np.zeros_like(up)
            low = (xn < floor) & ~up
            if np.any(low):
                overshoots += int(np.sum(low))
                xn = np.where(low, floor, xn)
        done = up | down
        if np.any(done):
            t0 = n * h
            edge = np.where(up, a2, a1)
            with np.errstate(invalid="ignore", divide="ignore"):
                theta = np.clip((edge - x) / (xn - x), 0.0, 1.0)
            idx = act[done]
            tau[idx] = t0 + theta[done] * h
            status[idx] = np.where(up[done], UPPER, LOWER)
            keep = ~done
            act, x, noise = act[keep], xn[keep], noise[keep]
        else:
            x = xn
    return status, tau, overshoots


@dataclass(frozen=True)
class ConditionedEnsemble:
    method: str
    eps: float
    h_sde: float
    master_seed: int
    tau: np.ndarray
    path_seeds: np.ndarray
    n_trials: int
    n_accepted: int
    overshoots: int = 0
    capped: int = 0
    acceptance_estimate: float = None

    @property
    def acceptance_rate(self):
        return self.n_accepted / self.n_trials if self.n_trials else float("nan")


def _run_batches(tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_simulate_1d_batch, tasks))
    return [_simulate_1d_batch(t) for t in tasks]


def simulate_conditioned(prob, eps, n, master_seed, h_sde=None, method="htransform", t_cap=None,
                         jobs=1, batch_size=2000, chunk=256):
    """Exit times conditioned on leaving through ``a2``.

    ``htransform`` integrates the conditioned drift directly (state clamped
    just above ``a1``); ``rejection`` runs the original dynamics and keeps the
    paths that leave through ``a2``, in path-index order, until ``n`` are
    accepted.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if method not in ("htransform", "rejection"):
        raise ValueError(f"unknown method {method!r}")
    h_sde = eps * eps / 10.0 if h_sde is None else h_sde
    T0 = deterministic_time(prob)
    if method == "htransform":
        t_cap = 10.0 * T0 + 1.0 if t_cap is None else t_cap
        seeds = [split_seed(master_seed, i) for i in range(n)]
        tasks = [(prob, eps, h_sde, t_cap, seeds[i: i + batch_size], method, chunk)
                 for i in range(0, n, batch_size)]
        parts = _run_batches(tasks, jobs)
        status = np.concatenate([p[0] for p in parts])
        tau = np.concatenate([p[1] for p in parts])
        capped = int(np.sum(status == CAPPED))
        return ConditionedEnsemble(
            method, eps, h_sde, int(master_seed), tau[status == UPPER],
            np.array(seeds, dtype=np.uint64)[status == UPPER], n, int(np.sum(status == UPPER)),
            overshoots=sum(p[2] for p in parts), capped=capped,
        )

    table = conditioned_drift_table(prob, float(eps))
    p = float(table.hit_probability(np.array([prob.x0]))[0])
    if not p >= MIN_ACCEPTANCE:
        raise RejectionInfeasible(
            f"rejection sampling infeasible: estimated acceptance probability {p:.3e} "
            f"is below {MIN_ACCEPTANCE:g}",
            p,
        )
    t_cap = 50.0 * (T0 + 1.0) if t_cap is None else t_cap
    max_trials = int(math.ceil(20.0 * n / p)) + batch_size
    taus, kept_seeds = [], []
    trials = 0
    capped = 0
    start = 0
    while len(taus) < n:
        if start >= max_trials:
            raise RejectionInfeasible(
                f"only {len(taus)} of {n} acceptances after {start} trials (estimate {p:.3e})", p
            )
        stop = start + max(batch_size, jobs * batch_size)
        seeds = [split_seed(master_seed, i) for i in range(start, stop)]
        tasks = [(prob, eps, h_sde, t_cap, seeds[i: i + batch_size], method, chunk)
                 for i in range(0, len(seeds), batch_size)]
        parts = _run_batches(tasks, jobs)
        status = np.concatenate([q[0] for q in parts])
        tau = np.concatenate([q[1] for q in parts])
        for i in np.nonzero(status == UPPER)[0]:
            taus.append(tau[i])
            kept_seeds.append(seeds[i])
            if len(taus) == n:
                trials = start + int(i) + 1
                capped += int(np.sum(status[: i + 1] == CAPPED))
                break
        else:
            capped += int(np.sum(status == CAPPED))
        start = stop
    return ConditionedEnsemble(
        method, eps, h_sde, int(master_seed), np.array(taus), np.array(kept_seeds, dtype=np.uint64),
        trials, n, capped=capped, acceptance_estimate=p,
    )
