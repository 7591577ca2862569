"""Forward-mode dual numbers carrying a full gradient vector."""

import math

import numpy as np

from ..errors import DomainError, NonDifferentiableError


class Dual:
    """``val + grad . e`` with ``e`` nilpotent; ``grad`` is a 1-d array."""

    __slots__ = ("val", "grad")

    def __init__(self, val, grad):
        if not math.isfinite(val):
            raise DomainError(f"non-finite value {val}")
        self.val = float(val)
        self.grad = grad

    @classmethod
    def constant(cls, val, dim):
        return cls(val, np.zeros(dim))

    @classmethod
    def variable(cls, val, index, dim):
        g = np.zeros(dim)
        g[index] = 1.0
        return cls(val, g)

    def _lift(self, other):
        if isinstance(other, Dual):
            return other
        return Dual(float(other), np.zeros_like(self.grad))

    def __add__(self, other):
        other = self._lift(other)
        return Dual(self.val + other.val, self.grad + other.grad)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        return Dual(self.val - other.val, self.grad - other.grad)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)
        return Dual(self.val * other.val, self.val * other.grad + other.val * self.grad)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        if other.val == 0.0:
            raise DomainError("division by zero")
        q = self.val / other.val
        return Dual(q, (self.grad - q * other.grad) / other.val)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __neg__(self):
        return Dual(-self.val, -self.grad)

    def __pow__(self, other):
        other = self._lift(other)
        a, b = self.val, other.val
        exponent_const = not np.any(other.grad)
        if exponent_const:
            if a == 0.0 and b < 1.0 and b != 0.0:
                raise NonDifferentiableError(f"0^{b} is not differentiable")
            if a < 0.0 and not float(b).is_integer():
                raise DomainError(f"negative base {a} with non-integer exponent {b}")
            if b == 0.0:
                return Dual(1.0, np.zeros_like(self.grad))
            val = a ** b
            return Dual(val, b * a ** (b - 1.0) * self.grad)
        if a <= 0.0:
            raise DomainError(f"power with variable exponent needs a positive base, got {a}")
        val = a ** b
        return Dual(val, val * (b / a * self.grad + math.log(a) * other.grad))

    def __rpow__(self, other):
        return self._lift(other) ** self

    def __repr__(self):
        return f"Dual({self.val!r}, {self.grad!r})"


def d_sin(x):
    return Dual(math.sin(x.val), math.cos(x.val) * x.grad)


def d_cos(x):
    return Dual(math.cos(x.val), -math.sin(x.val) * x.grad)


def d_exp(x):
    try:
        v = math.exp(x.val)
    except OverflowError:
        raise DomainError(f"exp overflow at {x.val}") from None
    return Dual(v, v * x.grad)


def d_log(x):
    if x.val <= 0.0:
        raise DomainError(f"log of non-positive value {x.val}")
    return Dual(math.log(x.val), x.grad / x.val)


def d_sqrt(x):
    if x.val < 0.0:
        raise DomainError(f"sqrt of negative value {x.val}")
    if x.val == 0.0:
        raise NonDifferentiableError("sqrt is not differentiable at 0")
    r = math.sqrt(x.val)
    return Dual(r, x.grad / (2.0 * r))


def d_tanh(x):
    t = math.tanh(x.val)
    return Dual(t, (1.0 - t * t) * x.grad)


def d_abs(x):
    if x.val == 0.0:
        raise NonDifferentiableError("abs is not differentiable at 0")
    return Dual(abs(x.val), math.copysign(1.0, x.val) * x.grad)


DUAL_FUNCTIONS = {
    "sin": d_sin,
    "cos": d_cos,
    "exp": d_exp,
    "log": d_log,
    "sqrt": d_sqrt,
    "tanh": d_tanh,
    "abs": d_abs,
}
