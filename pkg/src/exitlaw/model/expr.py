"""A small expression language for scalar fields.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

so ``-x1^2`` is ``-(x1^2)`` and ``2^-1`` is ``0.5``. Variables are ``x1``,
``x2``, ... (``x`` is accepted as ``x1``); extra named parameters such as
``eps`` can be enabled per call.

Expressions evaluate on floats, numpy arrays (vectorized over points), or
:class:`~exitlaw.model.dual.Dual` numbers (forward-mode derivatives).
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, ExpressionSyntaxError
from .dual import DUAL_FUNCTIONS, Dual

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh", "abs")

_NP_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "abs": np.abs,
}


def _checked(value, what):
    if not np.all(np.isfinite(value)):
        raise DomainError(f"{what} produced a non-finite value")
    return value


class Expression:
    """Base node. Subclasses are frozen dataclasses, so trees compare structurally."""

    def compile(self):
        """Return ``fn(xs, params)`` evaluating this tree."""
        raise NotImplementedError

    def variables(self):
        """Set of variable indices (0-based) referenced by the tree."""
        raise NotImplementedError

    def parameters(self):
        raise NotImplementedError

    def __call__(self, xs, **params):
        return self._fn(xs, params)

    @property
    def _fn(self):
        fn = self.__dict__.get("_compiled")
        if fn is None:
            fn = self.compile()
            object.__setattr__(self, "_compiled", fn)
        return fn

    def evaluate(self, point, **params):
        """Evaluate at a point (sequence of coordinates, floats or arrays)."""
        return self._fn(point, params)

    def is_constant(self):
        return not self.variables() and not self.parameters()

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_compiled", None)
        return state


@dataclass(frozen=True, eq=True)
class Num(Expression):
    value: float

    def compile(self):
        v = self.value
        return lambda xs, params: v

    def variables(self):
        return frozenset()

    def parameters(self):
        return frozenset()

    def __str__(self):
        return repr(float(self.value))


@dataclass(frozen=True, eq=True)
class Var(Expression):
    index: int

    def compile(self):
        i = self.index

        def fn(xs, params):
            try:
                return xs[i]
            except IndexError:
                raise DomainError(f"x{i + 1} referenced but point has dimension {len(xs)}") from None

        return fn

    def variables(self):
        return frozenset({self.index})

    def parameters(self):
        return frozenset()

    def __str__(self):
        return f"x{self.index + 1}"


@dataclass(frozen=True, eq=True)
class Param(Expression):
    name: str

    def compile(self):
        name = self.name

        def fn(xs, params):
            try:
                return params[name]
            except KeyError:
                raise DomainError(f"parameter {name!r} not supplied") from None

        return fn

    def variables(self):
        return frozenset()

    def parameters(self):
        return frozenset({self.name})

    def __str__(self):
        return self.name


@dataclass(frozen=True, eq=True)
class Neg(Expression):
    arg: Expression

    def compile(self):
        f = self.arg.compile()
        return lambda xs, params: -f(xs, params)

    def variables(self):
        return self.arg.variables()

    def parameters(self):
        return self.arg.parameters()

    def __str__(self):
        return f"(-{self.arg})"


def _add(a, b):
    return a + b


def _sub(a, b):
    return a - b


def _mul(a, b):
    return a * b


def _div(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        return a / b
    with np.errstate(all="ignore"):
        return _checked(np.true_divide(a, b), "division")


def _pow(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        return a ** b if isinstance(a, Dual) else b.__rpow__(a)
    with np.errstate(all="ignore"):
        return _checked(np.power(np.asarray(a, dtype=float), b), "power")


_BINARY = {"+": _add, "-": _sub, "*": _mul, "/": _div, "^": _pow}


@dataclass(frozen=True, eq=True)
class BinOp(Expression):
    op: str
    left: Expression
    right: Expression

    def compile(self):
        f, g = self.left.compile(), self.right.compile()
        op = _BINARY[self.op]
        if self.op in "+-*":
            sym = self.op

            def fn(xs, params):
                with np.errstate(all="ignore"):
                    r = op(f(xs, params), g(xs, params))
                if isinstance(r, Dual):
                    return r
                return _checked(r, sym)
        else:
            def fn(xs, params):
                return op(f(xs, params), g(xs, params))
        return fn

    def variables(self):
        return self.left.variables() | self.right.variables()

    def parameters(self):
        return self.left.parameters() | self.right.parameters()

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True, eq=True)
class Call(Expression):
    func: str
    arg: Expression

    def compile(self):
        f = self.arg.compile()
        npf = _NP_FUNCTIONS[self.func]
        df = DUAL_FUNCTIONS[self.func]
        name = self.func

        def fn(xs, params):
            a = f(xs, params)
            if isinstance(a, Dual):
                return df(a)
            with np.errstate(all="ignore"):
                return _checked(npf(a), name)

        return fn

    def variables(self):
        return self.arg.variables()

    def parameters(self):
        return self.arg.parameters()

    def __str__(self):
        return f"{self.func}({self.arg})"


# -- parsing -----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
    r")"
)
_VAR = re.compile(r"x([1-9][0-9]*)\Z")


class _Parser:
    def __init__(self, src, parameters):
        self.src = src
        self.parameters = frozenset(parameters)
        self.tokens = self._tokenize(src)
        self.pos = 0

    def _offset(self, char_index):
        return len(self.src[:char_index].encode("utf-8"))

    def _error(self, message, char_index):
        return ExpressionSyntaxError(message, self._offset(char_index), self.src)

    def _tokenize(self, src):
        tokens = []
        i = 0
        n = len(src)
        while True:
            while i < n and src[i].isspace():
                i += 1
            if i >= n:
                break
            m = _TOKEN.match(src, i)
            if m is None or m.end() == i:
                raise self._error(f"unexpected character {src[i]!r}", i)
            kind = m.lastgroup
            start = m.start(kind)
            tokens.append((kind, m.group(kind), start))
            i = m.end()
        tokens.append(("end", "", n))
        return tokens

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value):
        kind, text, at = self.advance()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise self._error(f"expected {value!r}, found {found}", at)

    def parse(self):
        if self.peek()[0] == "end":
            raise self._error("empty expression", 0)
        node = self.expr()
        kind, text, at = self.peek()
        if kind != "end":
            raise self._error(f"unexpected token {text!r}", at)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.unary())
        if kind == "op" and text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, text, at = self.advance()
        if kind == "num":
            value = float(text)
            if not math.isfinite(value):
                raise self._error(f"literal {text} out of range", at)
            return Num(value)
        if kind == "name":
            follows_paren = self.peek()[1] == "(" and self.peek()[0] == "op"
            if text in FUNCTIONS:
                if not follows_paren:
                    raise self._error(f"function {text!r} needs one argument", at)
                self.advance()
                if self.peek()[1] == ")":
                    raise self._error(f"arity mismatch: {text!r} takes 1 argument, got 0", self.peek()[2])
                arg = self.expr()
                kind2, text2, at2 = self.peek()
                if text2 == ",":
                    raise self._error(f"arity mismatch: {text!r} takes 1 argument", at2)
                self.expect(")")
                return Call(text, arg)
            if follows_paren:
                raise self._error(f"unknown function {text!r}", at)
            if text == "x":
                return Var(0)
            m = _VAR.match(text)
            if m:
                return Var(int(m.group(1)) - 1)
            if text in self.parameters:
                return Param(text)
            raise self._error(f"unknown identifier {text!r}", at)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise self._error(f"unexpected {found}", at)


def parse_expression(src, parameters=()):
    """Parse ``src`` into an :class:`Expression` tree.

    ``parameters`` lists extra identifiers (e.g. ``("eps",)``) that are
    accepted as named inputs supplied at evaluation time.
    """
    if isinstance(src, (int, float)) and not isinstance(src, bool):
        src = repr(float(src))
    if not isinstance(src, str):
        raise ExpressionSyntaxError(f"expression must be a string, got {type(src).__name__}")
    return _Parser(src, parameters).parse()
