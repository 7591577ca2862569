"""Problem records and the JSON problem-file format."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DomainError, ProblemError
from .fields import MatrixField, Surface, VectorField, sample_jacobian_norm

XI_KINDS = ("zero", "point_mass", "gaussian")


@dataclass(frozen=True)
class InitialLaw:
    """``X(0) = x0 + eps^alpha2 * xi``, with ``xi`` replaced by its limit law."""

    x0: tuple
    alpha2: float
    xi_kind: str = "zero"
    xi_mean: tuple = None
    xi_cov: tuple = None
    convergence: str = "distribution"

    def __post_init__(self):
        d = len(self.x0)
        if not self.alpha2 > 0:
            raise ProblemError(f"alpha2 must be positive, got {self.alpha2}")
        if self.xi_kind not in XI_KINDS:
            raise ProblemError(f"unknown xi type {self.xi_kind!r}; expected one of {XI_KINDS}")
        if self.convergence not in ("distribution", "probability"):
            raise ProblemError(f"xi convergence must be 'distribution' or 'probability', got {self.convergence!r}")
        if self.xi_kind in ("point_mass", "gaussian"):
            if self.xi_mean is None or len(self.xi_mean) != d:
                raise ProblemError(f"xi mean must have length {d}")
        if self.xi_kind == "gaussian":
            cov = np.asarray(self.xi_cov, dtype=float)
            if cov.shape != (d, d):
                raise ProblemError(f"xi covariance must be {d}x{d}")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ProblemError("xi covariance must be symmetric")
            if np.linalg.eigvalsh(cov).min() < -1e-12:
                raise ProblemError("xi covariance must be positive semidefinite")

    @property
    def dim(self):
        return len(self.x0)

    def mean(self):
        if self.xi_kind == "zero":
            return np.zeros(self.dim)
        return np.asarray(self.xi_mean, dtype=float)

    def cov(self):
        if self.xi_kind == "gaussian":
            return np.asarray(self.xi_cov, dtype=float)
        return np.zeros((self.dim, self.dim))

    def cov_factor(self):
        """``L`` with ``L @ L.T == cov`` (eigen-based, so singular covariances work)."""
        w, v = np.linalg.eigh(self.cov())
        return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class ProblemSpec:
    b: VectorField
    sigma: MatrixField
    psi: VectorField
    alpha1: float
    init: InitialLaw
    surface: Surface
    bbox_lo: tuple
    bbox_hi: tuple
    t_max: float
    psi_correction: VectorField = None

    def __post_init__(self):
        d = self.b.dim
        dims = {
            "sigma": self.sigma.dim,
            "psi": self.psi.dim,
            "x0": self.init.dim,
            "surface": self.surface.dim,
            "bbox.lo": len(self.bbox_lo),
            "bbox.hi": len(self.bbox_hi),
        }
        if self.psi_correction is not None:
            dims["psi_eps_correction"] = self.psi_correction.dim
        bad = {k: v for k, v in dims.items() if v != d}
        if bad:
            detail = ", ".join(f"{k} has {v}" for k, v in sorted(bad.items()))
            raise ProblemError(f"dimension mismatch: b has dimension {d} but {detail}")
        if not self.alpha1 > 0:
            raise ProblemError(f"alpha1 must be positive, got {self.alpha1}")
        if not self.t_max > 0:
            raise ProblemError(f"t_max must be positive, got {self.t_max}")
        lo, hi, x0 = (np.asarray(v, float) for v in (self.bbox_lo, self.bbox_hi, self.init.x0))
        if np.any(lo >= hi):
            raise ProblemError("bounding box needs lo < hi in every coordinate")
        if np.any(x0 < lo) or np.any(x0 > hi):
            raise ProblemError(f"bounding box does not contain x0 = {list(self.init.x0)}")

    @property
    def dim(self):
        return self.b.dim

    @property
    def alpha2(self):
        return self.init.alpha2

    @property
    def x0(self):
        return np.asarray(self.init.x0, dtype=float)

    def in_box(self, X):
        """Column mask of ``X`` (shape ``(d, m)``) lying inside the bounding box."""
        lo = np.asarray(self.bbox_lo, float)[:, None]
        hi = np.asarray(self.bbox_hi, float)[:, None]
        return np.all((X >= lo) & (X <= hi), axis=0)

    def perturbation_many(self, X, eps):
        """``Psi_eps = Psi_0 + R_eps`` at the columns of ``X``."""
        out = self.psi.eval_many(X)
        if self.psi_correction is not None:
            out = out + self.psi_correction.eval_many(X, eps=eps)
        return out

    def check_fields(self, n=64, seed=0):
        """Sample the box: every field must evaluate; Jacobians are only warned about."""
        lo, hi = np.asarray(self.bbox_lo, float), np.asarray(self.bbox_hi, float)
        rng = np.random.default_rng(seed)
        X = (lo[:, None] + (hi - lo)[:, None] * rng.random((self.dim, n)))
        X = np.concatenate([X, lo[:, None], hi[:, None], self.x0[:, None]], axis=1)
        for name, fn in (
            ("b", lambda: self.b.eval_many(X)),
            ("sigma", lambda: self.sigma.eval_many(X)),
            ("psi", lambda: self.psi.eval_many(X)),
            ("surface", lambda: self.surface.eval_many(X)),
        ):
            try:
                fn()
            except DomainError as exc:
                raise ProblemError(f"{name} cannot be evaluated on the bounding box: {exc}") from None
        if self.b.check_lipschitz:
            sample_jacobian_norm(self.b, lo, hi, n=n, seed=seed)


def _vector(data, key, required=True, default=None):
    if key not in data:
        if required:
            raise ProblemError(f"missing key {key!r}")
        return default
    v = data[key]
    if not isinstance(v, list):
        raise ProblemError(f"{key!r} must be a list")
    return v


def _number(data, key, default=None):
    if key not in data:
        if default is None:
            raise ProblemError(f"missing key {key!r}")
        return float(default)
    v = data[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProblemError(f"{key!r} must be a number")
    return float(v)


def problem_from_dict(data, check=True):
    """Build a :class:`ProblemSpec` from the JSON problem-file layout."""
    if not isinstance(data, dict):
        raise ProblemError("problem file must contain a JSON object")
    try:
        b = VectorField.from_strings(_vector(data, "b"))
        d = b.dim
        if "dim" in data and data["dim"] != d:
            raise ProblemError(f"dim = {data['dim']} but b has {d} components")
        sigma = MatrixField.from_strings(_vector(data, "sigma"))
        psi = VectorField.from_strings(_vector(data, "psi", required=False, default=["0"] * d))
        corr = data.get("psi_eps_correction")
        corr = VectorField.from_strings(corr, parameters=("eps",)) if corr is not None else None
        xi = data.get("xi", {"type": "zero"})
        if not isinstance(xi, dict) or "type" not in xi:
            raise ProblemError("'xi' must be an object with a 'type' key")
        kind = xi["type"]
        mean = xi.get("v", xi.get("mean"))
        cov = xi.get("cov")
        init = InitialLaw(
            x0=tuple(float(v) for v in _vector(data, "x0")),
            alpha2=_number(data, "alpha2"),
            xi_kind=kind,
            xi_mean=tuple(float(v) for v in mean) if mean is not None else None,
            xi_cov=tuple(tuple(float(v) for v in row) for row in cov) if cov is not None else None,
            convergence=xi.get("convergence", "distribution"),
        )
        surface_src = data.get("surface")
        if not isinstance(surface_src, str):
            raise ProblemError("'surface' must be an expression string")
        bbox = data.get("bbox")
        if not isinstance(bbox, dict):
            raise ProblemError("missing key 'bbox' with 'lo' and 'hi'")
        spec = ProblemSpec(
            b=b,
            sigma=sigma,
            psi=psi,
            alpha1=_number(data, "alpha1"),
            init=init,
            surface=Surface.from_string(surface_src, d),
            bbox_lo=tuple(float(v) for v in _vector(bbox, "lo")),
            bbox_hi=tuple(float(v) for v in _vector(bbox, "hi")),
            t_max=_number(data, "t_max"),
            psi_correction=corr,
        )
    except (TypeError, ValueError) as exc:
        raise ProblemError(f"malformed problem: {exc}") from None
    if check:
        spec.check_fields()
    return spec


def load_problem(path, check=True):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"problem file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read problem file {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return problem_from_dict(data, check=check)
    except ConfigError as exc:
        raise type(exc)(f"{path}: {exc}") from None
