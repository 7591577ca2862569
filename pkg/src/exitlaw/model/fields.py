"""Vector fields, matrix fields and implicit surfaces built from expressions."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, ProblemError
from .dual import Dual
from .expr import Expression, parse_expression


def _parse_all(sources, parameters=()):
    return tuple(s if isinstance(s, Expression) else parse_expression(s, parameters) for s in sources)


def _broadcast(value, m):
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return np.full(m, float(value))
    return value


def _dual_point(p):
    d = len(p)
    return [Dual.variable(float(v), i, d) for i, v in enumerate(p)]


@dataclass(frozen=True)
class VectorField:
    """A map R^d -> R^d given by ``d`` component expressions."""

    components: tuple
    check_lipschitz: bool = True
    parameter_names: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.components) < 1:
            raise ProblemError("vector field needs at least one component")
        for k, c in enumerate(self.components):
            bad = [i for i in c.variables() if i >= self.dim]
            if bad:
                raise ProblemError(
                    f"component {k + 1} references x{max(bad) + 1} but the field has dimension {self.dim}"
                )

    @classmethod
    def from_strings(cls, sources, parameters=(), check_lipschitz=True):
        return cls(_parse_all(sources, parameters), check_lipschitz, tuple(parameters))

    @property
    def dim(self):
        return len(self.components)

    def is_zero(self):
        return all(c.is_constant() and c.evaluate(()) == 0.0 for c in self.components)

    def __call__(self, p, **params):
        p = [float(v) for v in p]
        if len(p) != self.dim:
            raise DomainError(f"point has dimension {len(p)}, field has dimension {self.dim}")
        return np.array([float(c.evaluate(p, **params)) for c in self.components])

    def eval_many(self, X, **params):
        """Evaluate at the columns of ``X`` (shape ``(d, m)``); returns ``(d, m)``."""
        m = X.shape[1]
        rows = list(X)
        return np.stack([_broadcast(c.evaluate(rows, **params), m) for c in self.components])

    def jacobian(self, p, **params):
        if len(p) != self.dim:
            raise DomainError(f"point has dimension {len(p)}, field has dimension {self.dim}")
        xs = _dual_point(p)
        out = np.empty((self.dim, self.dim))
        for i, c in enumerate(self.components):
            r = c.evaluate(xs, **params)
            if isinstance(r, Dual):
                out[i] = r.grad
            else:
                out[i] = 0.0
        return out


@dataclass(frozen=True)
class MatrixField:
    """A map R^d -> R^{d x d}, stored row-major as nested tuples."""

    rows: tuple

    def __post_init__(self):
        d = len(self.rows)
        if d < 1 or any(len(r) != d for r in self.rows):
            raise ProblemError("matrix field must be square with at least one row")
        for r in self.rows:
            for c in r:
                if any(i >= d for i in c.variables()):
                    raise ProblemError(f"matrix entry {c} references a coordinate beyond dimension {d}")

    @classmethod
    def from_strings(cls, rows):
        return cls(tuple(_parse_all(r) for r in rows))

    @property
    def dim(self):
        return len(self.rows)

    def is_zero(self):
        return all(c.is_constant() and c.evaluate(()) == 0.0 for r in self.rows for c in r)

    def is_constant(self):
        return all(c.is_constant() for r in self.rows for c in r)

    def __call__(self, p):
        p = [float(v) for v in p]
        return np.array([[float(c.evaluate(p)) for c in r] for r in self.rows])

    def eval_many(self, X):
        """Returns shape ``(d, d, m)``."""
        m = X.shape[1]
        rows = list(X)
        return np.stack([np.stack([_broadcast(c.evaluate(rows), m) for c in r]) for r in self.rows])


@dataclass(frozen=True)
class Surface:
    """The level set ``{x : g(x) = 0}``."""

    g: Expression
    dim: int

    def __post_init__(self):
        if any(i >= self.dim for i in self.g.variables()):
            raise ProblemError(f"surface expression {self.g} references a coordinate beyond dimension {self.dim}")

    @classmethod
    def from_string(cls, src, dim):
        return cls(src if isinstance(src, Expression) else parse_expression(src), dim)

    def __call__(self, p):
        return float(self.g.evaluate([float(v) for v in p]))

    def eval_many(self, X):
        return _broadcast(self.g.evaluate(list(X)), X.shape[1])

    def gradient(self, p):
        r = self.g.evaluate(_dual_point(p))
        if isinstance(r, Dual):
            return r.grad.copy()
        return np.zeros(self.dim)


def eval_field(f, p, **params):
    """Component-wise evaluation of ``f`` at ``p``."""
    return f(p, **params)


def jacobian(f, p, **params):
    """Exact (forward-mode) Jacobian of ``f`` at ``p``."""
    return f.jacobian(p, **params)


def sample_jacobian_norm(f, lo, hi, n=64, seed=0):
    """Largest spectral norm of ``Df`` over corners plus ``n`` random points of the box.

    Only warns: regularity is needed near the deterministic orbit, not on the
    whole box. Returns ``nan`` if no sample could be differentiated.
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    rng = np.random.default_rng(seed)
    pts = [lo, hi, 0.5 * (lo + hi)] + list(lo + (hi - lo) * rng.random((n, len(lo))))
    norms = []
    failures = 0
    for p in pts:
        try:
            norms.append(np.linalg.norm(f.jacobian(p), 2))
        except DomainError:
            failures += 1
    if failures:
        warnings.warn(f"Jacobian undefined at {failures} of {len(pts)} sampled points of the bounding box")
    if not norms:
        return float("nan")
    worst = float(max(norms))
    if worst > 1e6:
        warnings.warn(f"Jacobian norm reaches {worst:.3g} on the bounding box; the field may not be Lipschitz there")
    return worst
