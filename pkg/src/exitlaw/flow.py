"""Deterministic flow: fixed-step RK4 orbits, first crossing of the target
surface, and the fundamental matrix of the variational equation."""

from dataclasses import dataclass

import numpy as np

from .errors import BoxExit, DomainError, NoHit, TangentialCrossing

TRANSVERSALITY_TOL = 1e-3
BISECTION_ITERS = 60
HIT_TOL = 1e-10


@dataclass(frozen=True)
class Trajectory:
    """Orbit samples on a grid that is uniform except possibly for the last step."""

    times: np.ndarray
    points: np.ndarray
    h: float

    @property
    def x0(self):
        return self.points[0]

    @property
    def t_end(self):
        return float(self.times[-1])


@dataclass(frozen=True)
class FlowResult:
    T: float
    z: np.ndarray
    margin: float
    bracket: int
    grad_g: np.ndarray
    b_z: np.ndarray


@dataclass(frozen=True)
class Linearization:
    """Fundamental matrix along an orbit, plus the running integrals that the
    limit law needs (``int Phi^-1 Psi0`` and ``int Phi^-1 sigma sigma^T Phi^-T``)."""

    times: np.ndarray
    Phi: np.ndarray
    Phi_inv: np.ndarray
    psi_integral: np.ndarray = None
    noise_integral: np.ndarray = None


def _stages(field, x, h):
    k1 = field(x)
    X2 = x + 0.5 * h * k1
    k2 = field(X2)
    X3 = x + 0.5 * h * k2
    k3 = field(X3)
    X4 = x + h * k3
    k4 = field(X4)
    return (x, X2, X3, X4), (k1, k2, k3, k4)


def rk4_step(field, x, h):
    _, (k1, k2, k3, k4) = _stages(field, x, h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _outside(x, lo, hi):
    return lo is not None and (np.any(x < lo) or np.any(x > hi))


def integrate_flow(field, x0, h_ode, t_max, bbox=None, stop_on=None, margin_steps=2):
    """Classical RK4 on the grid ``0, h, 2h, ...`` until ``t_max`` is covered.

    ``bbox`` is an optional ``(lo, hi)`` pair; leaving it raises
    :class:`BoxExit`. With ``stop_on`` (a :class:`Surface`) integration ends
    ``margin_steps`` steps after the first sign change of the level function.
    """
    if not h_ode > 0:
        raise ValueError(f"h_ode must be positive, got {h_ode}")
    if not t_max >= h_ode:
        raise ValueError(f"t_max ({t_max}) must be at least h_ode ({h_ode})")
    x = np.asarray(x0, dtype=float).copy()
    lo = hi = None
    if bbox is not None:
        lo, hi = (np.asarray(v, dtype=float) for v in bbox)
    n_steps = int(np.ceil(t_max / h_ode - 1e-12))
    points = [x]
    g0 = stop_on(x) if stop_on is not None else None
    remaining = None
    for k in range(n_steps):
        x = rk4_step(field, x, h_ode)
        if _outside(x, lo, hi):
            raise BoxExit(
                f"orbit left the bounding box between t = {k * h_ode:.6g} and t = {(k + 1) * h_ode:.6g}",
                (k + 1) * h_ode,
            )
        points.append(x)
        if stop_on is not None:
            if remaining is None:
                gx = stop_on(x)
                if gx == 0.0 or np.sign(gx) != np.sign(g0):
                    remaining = margin_steps
            else:
                remaining -= 1
            if remaining == 0:
                break
    points = np.array(points)
    times = h_ode * np.arange(len(points))
    return Trajectory(times, points, float(h_ode))


def state_at(traj, field, t):
    """Orbit point at an arbitrary time, by a partial RK4 step from the grid."""
    if t < 0 or t > traj.t_end + 1e-12:
        raise ValueError(f"t = {t} outside [0, {traj.t_end}]")
    k = min(int(np.searchsorted(traj.times, t, side="right")) - 1, len(traj.times) - 1)
    s = t - traj.times[k]
    if s == 0.0:
        return traj.points[k].copy()
    return rk4_step(field, traj.points[k], s)


def transversality_margin(z, surface, field):
    """``|<grad g(z), b(z)>| / (|grad g(z)| |b(z)|)``."""
    grad = surface.gradient(z)
    bz = field(z)
    ng, nb = np.linalg.norm(grad), np.linalg.norm(bz)
    if ng == 0.0:
        raise TangentialCrossing(f"surface gradient vanishes at z = {list(z)}")
    if nb == 0.0:
        raise TangentialCrossing(f"drift vanishes at z = {list(z)}")
    return float(abs(grad @ bz) / (ng * nb))


def first_hit(traj, surface, field, tol=TRANSVERSALITY_TOL):
    """Locate the first crossing of ``surface`` along ``traj``.

    The bracketing grid step is refined by bisection on ``g`` of a partial
    RK4 step from the left node.
    """
    x0 = traj.points[0]
    g0 = surface(x0)
    if abs(g0) <= 1e-14:
        raise TangentialCrossing(
            "x0 lies on the target surface (g(x0) = 0); the first-crossing time is not defined"
        )
    scale = max(1.0, abs(g0))
    gs = np.array([surface(p) for p in traj.points])
    crossed = np.nonzero((gs == 0.0) | (np.sign(gs) != np.sign(g0)))[0]
    if crossed.size == 0:
        raise NoHit(f"orbit does not reach the target surface before t = {traj.t_end:.6g}")
    k = int(crossed[0]) - 1
    xk = traj.points[k]
    step = traj.times[k + 1] - traj.times[k]
    lo_s, hi_s = 0.0, step
    g_lo = gs[k]
    s, z = hi_s, traj.points[k + 1]
    gz = gs[k + 1]
    for _ in range(BISECTION_ITERS):
        if gz == 0.0:
            break
        s = 0.5 * (lo_s + hi_s)
        z = rk4_step(field, xk, s)
        gz = surface(z)
        if np.sign(gz) == np.sign(g_lo):
            lo_s = s
        else:
            hi_s = s
    if abs(gz) > HIT_TOL * scale:
        # the last midpoint may sit on the near side; take the crossing-side endpoint
        z = rk4_step(field, xk, hi_s)
        s, gz = hi_s, surface(z)
    if abs(gz) > HIT_TOL * scale:
        raise NoHit(f"could not refine the crossing to |g| <= {HIT_TOL * scale:.1e} (|g| = {abs(gz):.3e})")
    T = float(traj.times[k] + s)
    m = transversality_margin(z, surface, field)
    if m < tol:
        raise TangentialCrossing(
            f"crossing at T = {T:.6g} is not transversal (margin {m:.3e} < {tol:g}); "
            "the exit-law limit requires b(z) outside the tangent hyperplane of M"
        )
    return FlowResult(T, z, m, k, surface.gradient(z), field(z))


def truncate(traj, field, T):
    """The part of ``traj`` on ``[0, T]``, ending exactly at ``T``."""
    k = int(np.searchsorted(traj.times, T, side="right")) - 1
    times = list(traj.times[: k + 1])
    points = list(traj.points[: k + 1])
    s = T - traj.times[k]
    if s > 1e-14 * max(1.0, T):
        times.append(T)
        points.append(rk4_step(field, traj.points[k], s))
    return Trajectory(np.array(times), np.array(points), traj.h)


def linearize(traj, field, psi=None, sigma=None):
    """Integrate ``Phi' = A Phi`` and ``(Phi^-1)' = -Phi^-1 A`` with RK4 on the
    grid of ``traj``, ``A(t) = Db(S^t x0)``.

    If ``psi`` (vector field) or ``sigma`` (matrix field) is given, the running
    integrals ``int_0^t Phi^-1 psi`` and ``int_0^t Phi^-1 sigma sigma^T Phi^-T``
    are carried along in the same RK4 scheme.
    """
    d = traj.points.shape[1]
    n = len(traj.times)
    I = np.eye(d)
    Phi = np.empty((n, d, d))
    Pinv = np.empty((n, d, d))
    Phi[0] = I
    Pinv[0] = I
    J = np.zeros((n, d)) if psi is not None else None
    Q = np.zeros((n, d, d)) if sigma is not None else None

    def jac(x):
        try:
            return field.jacobian(x)
        except DomainError as exc:
            raise DomainError(f"Jacobian evaluation failed at {list(x)}: {exc}") from None

    A_node = jac(traj.points[0])
    for k in range(n - 1):
        h = traj.times[k + 1] - traj.times[k]
        X, _ = _stages(field, traj.points[k], h)
        A = (A_node, jac(X[1]), jac(X[2]), jac(X[3]))
        F, P = Phi[k], Pinv[k]
        K1 = A[0] @ F
        K2 = A[1] @ (F + 0.5 * h * K1)
        K3 = A[2] @ (F + 0.5 * h * K2)
        K4 = A[3] @ (F + h * K3)
        P1 = P
        L1 = -P1 @ A[0]
        P2 = P + 0.5 * h * L1
        L2 = -P2 @ A[1]
        P3 = P + 0.5 * h * L2
        L3 = -P3 @ A[2]
        P4 = P + h * L3
        L4 = -P4 @ A[3]
        Phi[k + 1] = F + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)
        Pinv[k + 1] = P + (h / 6.0) * (L1 + 2 * L2 + 2 * L3 + L4)
        Ps = (P1, P2, P3, P4)
        if J is not None:
            M = [Ps[i] @ psi(X[i]) for i in range(4)]
            J[k + 1] = J[k] + (h / 6.0) * (M[0] + 2 * M[1] + 2 * M[2] + M[3])
        if Q is not None:
            N = []
            for i in range(4):
                G = Ps[i] @ sigma(X[i])
                N.append(G @ G.T)
            Q[k + 1] = Q[k] + (h / 6.0) * (N[0] + 2 * N[1] + 2 * N[2] + N[3])
        A_node = jac(traj.points[k + 1])
    return Linearization(traj.times, Phi, Pinv, J, Q)
