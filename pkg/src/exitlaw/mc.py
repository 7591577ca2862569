"""Euler-Maruyama simulation of the perturbed system with first-crossing
detection, and the seeded Monte Carlo ensemble driver.

Every path owns a Philox stream keyed by its ``path_seed``: the first ``d``
normals draw the initial perturbation, the ``k``-th following block of ``d``
normals drives step ``k``. Paths therefore do not depend on batching, chunk
size, worker count or execution order.
"""

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .limitlaw import analyze

EXITED, CAPPED, LEFT_BBOX = 0, 1, 2
STATUS_NAMES = ("exited", "capped", "left_bbox")
_RUNNING = -1

DEFAULT_CHUNK = 256
DEFAULT_BATCH = 2000
CROSSING_TOL = 1e-10
_SECANT_ITERS = 8


def split_seed(master_seed, index):
    """Counter-based child seed: a pure function of ``(master_seed, index)``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def path_generator(path_seed):
    return np.random.Generator(np.random.Philox(key=int(path_seed)))


@dataclass(frozen=True)
class ExitSample:
    tau: float
    x_exit: np.ndarray
    path_seed: int
    status: str


def _noise_block(gens, rows, steps, d):
    return np.stack([gens[r].standard_normal((steps, d)) for r in rows]) if len(rows) else np.empty((0, steps, d))


def _refine_crossing(surface, Xa, Xn, ga, gn):
    """Linear interpolation of ``g`` along the step, polished by regula falsi for curved surfaces."""
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(ga == gn, 1.0, ga / (ga - gn))
    theta = np.clip(theta, 0.0, 1.0)
    lo = np.zeros_like(theta)
    hi = np.ones_like(theta)
    glo, ghi = ga.copy(), gn.copy()
    for _ in range(_SECANT_ITERS):
        X = Xa + theta * (Xn - Xa)
        gx = surface.eval_many(X)
        if np.all(np.abs(gx) <= CROSSING_TOL):
            break
        same = np.sign(gx) == np.sign(glo)
        lo = np.where(same, theta, lo)
        glo = np.where(same, gx, glo)
        hi = np.where(same, hi, theta)
        ghi = np.where(same, ghi, gx)
        with np.errstate(invalid="ignore", divide="ignore"):
            nxt = lo + (hi - lo) * np.where(glo == ghi, 0.5, glo / (glo - ghi))
        theta = np.where(gx == 0.0, theta, np.clip(nxt, lo, hi))
    return theta, Xa + theta * (Xn - Xa)


def simulate_batch(spec, eps, h_sde, t_cap, path_seeds, t_probe=None, chunk=DEFAULT_CHUNK):
    """Simulate the paths ``path_seeds`` together (vectorized across paths).

    Returns ``(status, tau, x_exit, x_probe)``. ``x_probe`` holds the state at
    time ``t_probe`` (linear interpolation inside the step), or NaN.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not h_sde > 0:
        raise ValueError(f"h_sde must be positive, got {h_sde}")
    d = spec.dim
    m = len(path_seeds)
    gens = [path_generator(s) for s in path_seeds]
    status = np.full(m, _RUNNING, dtype=np.int8)
    tau = np.full(m, np.nan)
    x_exit = np.full((m, d), np.nan)
    x_probe = np.full((m, d), np.nan)
    probed = np.full(m, t_probe is None)

    Z0 = np.stack([g.standard_normal(d) for g in gens]) if m else np.empty((0, d))
    init = spec.init
    if init.xi_kind == "gaussian":
        xi = init.mean() + Z0 @ init.cov_factor().T
    elif init.xi_kind == "point_mass":
        xi = np.broadcast_to(init.mean(), (m, d))
    else:
        xi = np.zeros((m, d))
    X = (spec.x0 + eps ** init.alpha2 * xi).T.copy()  # (d, m)

    g_cur = spec.surface.eval_many(X) if m else np.empty(0)
    on_M = g_cur == 0.0
    status[on_M] = EXITED
    tau[on_M] = 0.0
    x_exit[on_M] = X[:, on_M].T
    outside = ~spec.in_box(X) & (status == _RUNNING)
    status[outside] = LEFT_BBOX
    x_exit[outside] = X[:, outside].T
    probed |= outside
    if t_probe is not None and t_probe <= 0.0:
        x_probe[:] = X.T
        probed[:] = True
    side = np.sign(g_cur)

    drift_pert = not (spec.psi.is_zero() and spec.psi_correction is None)
    pert_scale = eps ** spec.alpha1
    noisy = not spec.sigma.is_zero()
    sigma_const = spec.sigma(spec.x0) if spec.sigma.is_constant() else None
    sqrt_h = math.sqrt(h_sde)
    n_steps = int(math.ceil(t_cap / h_sde - 1e-12))

    act = np.nonzero((status == _RUNNING) | ~probed)[0]
    Xa = X[:, act]
    ga = g_cur[act]
    noise = None
    for n in range(n_steps):
        if act.size == 0:
            break
        j = n % chunk
        if j == 0:
            noise = _noise_block(gens, act, chunk, d) if noisy else None
        t0 = n * h_sde
        t1 = (n + 1) * h_sde
        step = spec.b.eval_many(Xa) * h_sde
        if drift_pert:
            step += pert_scale * spec.perturbation_many(Xa, eps) * h_sde
        if noisy:
            dW = sqrt_h * noise[:, j, :].T
            if sigma_const is not None:
                step += eps * (sigma_const @ dW)
            else:
                step += eps * np.einsum("ijm,jm->im", spec.sigma.eval_many(Xa), dW)
        Xn = Xa + step
        gn = spec.surface.eval_many(Xn)

        st = status[act]
        running = st == _RUNNING
        crossed = running & ((gn == 0.0) | (np.sign(gn) != side[act]))
        if np.any(crossed):
            idx = act[crossed]
            theta, xc = _refine_crossing(spec.surface, Xa[:, crossed], Xn[:, crossed], ga[crossed], gn[crossed])
            status[idx] = EXITED
            tau[idx] = t0 + theta * h_sde
            x_exit[idx] = xc.T
        if t_probe is not None:
            hit = (~probed[act]) & (t0 < t_probe) & (t_probe <= t1)
            if np.any(hit):
                idx = act[hit]
                frac = (t_probe - t0) / h_sde
                x_probe[idx] = (Xa[:, hit] + frac * (Xn[:, hit] - Xa[:, hit])).T
                probed[idx] = True
        inside = spec.in_box(Xn)
        if not np.all(inside):
            idx = act[~inside]
            newly = status[idx] == _RUNNING
            status[idx[newly]] = LEFT_BBOX
            x_exit[idx[newly]] = Xn[:, ~inside][:, newly].T
            probed[idx] = True

        keep = (status[act] == _RUNNING) | ~probed[act]
        if np.all(keep):
            Xa, ga = Xn, gn
        else:
            act = act[keep]
            Xa, ga = Xn[:, keep], gn[keep]
            if noise is not None:
                noise = noise[keep]
    leftover = status == _RUNNING
    status[leftover] = CAPPED
    if act.size:
        x_exit[act[status[act] == CAPPED]] = Xa[:, status[act] == CAPPED].T
    return status, tau, x_exit, x_probe


def simulate_path(spec, eps, h_sde, t_cap, path_seed):
    """One path; status ``capped``/``left_bbox`` is reported, never raised."""
    status, tau, x_exit, _ = simulate_batch(spec, eps, h_sde, t_cap, [path_seed])
    return ExitSample(float(tau[0]), x_exit[0], int(path_seed), STATUS_NAMES[status[0]])


@dataclass(frozen=True)
class Rescaled:
    index: np.ndarray  # rows of the ensemble with status exited
    u: np.ndarray
    w: np.ndarray
    pib_w: np.ndarray
    pim_w: np.ndarray  # tangent coordinates, (k, d-1)


def rescale(ensemble, flow, proj, alpha):
    """``u = eps^-alpha (tau - T)``, ``w = eps^-alpha (x_exit - z)`` over exited paths."""
    idx = np.nonzero(ensemble.status == EXITED)[0]
    f = ensemble.eps ** (-alpha)
    u = f * (ensemble.tau[idx] - flow.T)
    w = f * (ensemble.x_exit[idx] - flow.z)
    return Rescaled(idx, u, w, proj.pi_b(w), proj.tangent_coords(w))


@dataclass(frozen=True)
class ExitEnsemble:
    eps: float
    alpha: float
    h_sde: float
    t_cap: float
    n: int
    master_seed: int
    path_seeds: np.ndarray
    status: np.ndarray
    tau: np.ndarray
    x_exit: np.ndarray
    x_probe: np.ndarray
    T: float
    z: np.ndarray
    rescaled: Rescaled = field(default=None, compare=False)
    probe_disp: np.ndarray = field(default=None, compare=False)

    @property
    def counts(self):
        return {name: int(np.sum(self.status == k)) for k, name in enumerate(STATUS_NAMES)}

    def samples(self):
        return [
            ExitSample(float(self.tau[i]), self.x_exit[i], int(self.path_seeds[i]), STATUS_NAMES[self.status[i]])
            for i in range(self.n)
        ]


def _batch_worker(args):
    spec, eps, h_sde, t_cap, seeds, t_probe = args
    return simulate_batch(spec, eps, h_sde, t_cap, seeds, t_probe=t_probe)


def run_ensemble(spec, eps, n, master_seed, h_sde=None, t_cap=None, jobs=1, analysis=None,
                 batch_size=DEFAULT_BATCH):
    """Simulate ``n`` paths and rescale the exits around the deterministic crossing.

    Defaults: ``h_sde = eps^2 / 10``, ``t_cap = 3 T``. Besides the exit data
    the state at the deterministic hit time ``T`` is recorded
    (``x_probe``; rescaled as ``probe_disp``).
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if analysis is None:
        analysis = analyze(spec)
    flow, law = analysis.flow, analysis.law
    h_sde = eps * eps / 10.0 if h_sde is None else h_sde
    t_cap = 3.0 * flow.T if t_cap is None else t_cap
    seeds = [split_seed(master_seed, i) for i in range(n)]
    tasks = [
        (spec, eps, h_sde, t_cap, seeds[i: i + batch_size], flow.T)
        for i in range(0, n, batch_size)
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_batch_worker, tasks))
    else:
        parts = [_batch_worker(t) for t in tasks]
    status = np.concatenate([p[0] for p in parts])
    tau = np.concatenate([p[1] for p in parts])
    x_exit = np.concatenate([p[2] for p in parts])
    x_probe = np.concatenate([p[3] for p in parts])
    ens = ExitEnsemble(
        eps, law.alpha, h_sde, t_cap, n, int(master_seed), np.array(seeds, dtype=np.uint64),
        status, tau, x_exit, x_probe, flow.T, flow.z,
    )
    resc = rescale(ens, flow, law.projections, law.alpha)
    disp = eps ** (-law.alpha) * (x_probe - flow.z)
    object.__setattr__(ens, "rescaled", resc)
    object.__setattr__(ens, "probe_disp", disp)
    return ens


def _fmt(v):
    return repr(float(v))


def write_ensemble_csv(ens, path):
    d = ens.x_exit.shape[1]
    header = ["path_seed", "status", "tau"] + [f"x_exit_{i + 1}" for i in range(d)] + ["u", "pib_w"]
    header += [f"pim_w_{i + 1}" for i in range(d - 1)]
    r = ens.rescaled
    pos = {int(i): k for k, i in enumerate(r.index)}
    nan = float("nan")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for i in range(ens.n):
            k = pos.get(i)
            row = [str(int(ens.path_seeds[i])), STATUS_NAMES[ens.status[i]], _fmt(ens.tau[i])]
            row += [_fmt(v) for v in ens.x_exit[i]]
            if k is None:
                row += [_fmt(nan)] * (2 + d - 1)
            else:
                row += [_fmt(r.u[k]), _fmt(r.pib_w[k])] + [_fmt(v) for v in r.pim_w[k]]
            wr.writerow(row)
