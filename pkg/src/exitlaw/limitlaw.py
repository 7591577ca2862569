"""The Gaussian-plus-shift limit law of the rescaled exit time and exit point."""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import TangentialCrossing
from .flow import (
    TRANSVERSALITY_TOL,
    FlowResult,
    Linearization,
    Trajectory,
    first_hit,
    integrate_flow,
    linearize,
    truncate,
)


@dataclass(frozen=True)
class Projections:
    """Oblique splitting ``v = pi_b(v) b(z) + pi_M(v)`` with ``pi_M(v)`` tangent to M at z."""

    b_z: np.ndarray
    grad_g: np.ndarray
    tangent_basis: np.ndarray  # (d, d-1), orthonormal columns spanning T_zM
    pib_row: np.ndarray  # (d,)
    piM_matrix: np.ndarray  # (d, d)

    def pi_b(self, v):
        return np.asarray(v, float) @ self.pib_row

    def pi_M(self, v):
        return np.asarray(v, float) @ self.piM_matrix.T

    def tangent_coords(self, v):
        """Coordinates of ``pi_M(v)`` in the tangent basis (rows of ``v`` are vectors)."""
        return self.pi_M(v) @ self.tangent_basis


def _tangent_basis(normal):
    """Orthonormal complement of ``normal`` via Householder QR of ``[n, e_j ...]``.

    The axis most aligned with ``n`` is dropped so the remaining columns stay
    well conditioned.
    """
    d = len(normal)
    n = normal / np.linalg.norm(normal)
    keep = [j for j in range(d) if j != int(np.argmax(np.abs(n)))]
    A = np.column_stack([n, np.eye(d)[:, keep]])
    Q, R = np.linalg.qr(A)
    Q = Q * np.sign(np.diag(R))  # fix the sign ambiguity of QR
    return Q[:, 1:]


def make_projections(b_z, surface_gradient, tol=TRANSVERSALITY_TOL):
    b_z = np.asarray(b_z, dtype=float)
    grad = np.asarray(surface_gradient, dtype=float)
    denom = grad @ b_z
    scale = np.linalg.norm(grad) * np.linalg.norm(b_z)
    if scale == 0.0 or abs(denom) < tol * scale:
        raise TangentialCrossing(
            f"b(z) is (nearly) tangent to M: <grad g, b> = {denom:.3e}, projections undefined"
        )
    pib_row = grad / denom
    piM = np.eye(len(b_z)) - np.outer(b_z, pib_row)
    return Projections(b_z, grad, _tangent_basis(grad), pib_row, piM)


@dataclass(frozen=True)
class LimitLaw:
    alpha: float
    active: dict
    mu: np.ndarray
    cov: np.ndarray
    Phi_T: np.ndarray
    projections: Projections

    @property
    def dim(self):
        return len(self.mu)

    @property
    def time_mean(self):
        return float(-self.projections.pi_b(self.mu))

    @property
    def time_var(self):
        r = self.projections.pib_row
        return float(r @ self.cov @ r)

    @property
    def point_mean(self):
        return self.projections.tangent_coords(self.mu)

    @property
    def point_cov(self):
        B = self.projections.piM_matrix.T @ self.projections.tangent_basis  # v -> tangent coords is v @ B
        return B.T @ self.cov @ B

    def to_json(self):
        return {
            "alpha": self.alpha,
            "active": dict(self.active),
            "mu": self.mu.tolist(),
            "cov": self.cov.tolist(),
            "time_law": {"mean": self.time_mean, "var": self.time_var},
            "point_law": {"mean": self.point_mean.tolist(), "cov": self.point_cov.tolist()},
        }


def active_terms(alpha1, alpha2):
    """``alpha = min(alpha1, alpha2, 1)`` and the indicator of every term attaining it.

    Ties switch on every tied term.
    """
    alpha = min(alpha1, alpha2, 1.0)
    return alpha, {"xi": alpha2 == alpha, "psi": alpha1 == alpha, "noise": alpha == 1.0}


def _psd(C, what):
    C = 0.5 * (C + C.T)
    w, v = np.linalg.eigh(C)
    if w.min() < 0.0:
        clip = -w.min()
        if clip > 1e-10 * max(1.0, abs(w).max()):
            warnings.warn(f"{what}: clipped a negative eigenvalue of size {clip:.3e}")
        C = (v * np.clip(w, 0.0, None)) @ v.T
        C = 0.5 * (C + C.T)
    return C


def compute_limit_law(spec, flow, lin):
    if abs(lin.times[-1] - flow.T) > 1e-12 * max(1.0, flow.T):
        raise ValueError(
            f"misaligned grids: linearization ends at {lin.times[-1]!r}, hit time is {flow.T!r}"
        )
    d = spec.dim
    alpha, active = active_terms(spec.alpha1, spec.alpha2)
    Phi_T = lin.Phi[-1]
    mu = np.zeros(d)
    C = np.zeros((d, d))
    if active["xi"]:
        mu += Phi_T @ spec.init.mean()
        C += Phi_T @ spec.init.cov() @ Phi_T.T
    if active["psi"]:
        if lin.psi_integral is None:
            raise ValueError("linearization lacks the Psi integral")
        mu += Phi_T @ lin.psi_integral[-1]
    if active["noise"]:
        if lin.noise_integral is None:
            raise ValueError("linearization lacks the noise covariance integral")
        C += Phi_T @ lin.noise_integral[-1] @ Phi_T.T
    C = _psd(C, "limit covariance")
    proj = make_projections(flow.b_z, flow.grad_g)
    return LimitLaw(alpha, active, mu, C, Phi_T, proj)


def sample_limit(law, n, seed):
    """Draw ``n`` samples of ``(time_limit, point_limit)``; point part in tangent coordinates."""
    d = law.dim
    rng = np.random.default_rng(seed)
    if n == 0:
        return np.empty(0), np.empty((0, d - 1))
    w, v = np.linalg.eigh(law.cov)
    L = v * np.sqrt(np.clip(w, 0.0, None))
    phi = law.mu + rng.standard_normal((n, d)) @ L.T
    return -law.projections.pi_b(phi), law.projections.tangent_coords(phi)


@dataclass(frozen=True)
class Analysis:
    trajectory: Trajectory
    flow: FlowResult
    linearization: Linearization
    law: LimitLaw

    @property
    def projections(self):
        return self.law.projections

    def to_json(self):
        out = {
            "T": self.flow.T,
            "z": self.flow.z.tolist(),
            "margin": self.flow.margin,
            "Phi_T": self.linearization.Phi[-1].tolist(),
            "Phi_T_inv": self.linearization.Phi_inv[-1].tolist(),
        }
        out["limit_law"] = self.law.to_json()
        return out


def analyze(spec, h_ode=1e-3):
    """Orbit, crossing, linearization and limit law for a problem."""
    full = integrate_flow(
        spec.b, spec.x0, h_ode, spec.t_max, bbox=(spec.bbox_lo, spec.bbox_hi), stop_on=spec.surface
    )
    flow = first_hit(full, spec.surface, spec.b)
    traj = truncate(full, spec.b, flow.T)
    lin = linearize(traj, spec.b, psi=spec.psi, sigma=spec.sigma)
    return Analysis(traj, flow, lin, compute_limit_law(spec, flow, lin))
