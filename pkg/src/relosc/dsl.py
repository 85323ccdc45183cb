"""Small expression language for potentials F(t,x), G(t,x), H(x) and weights alpha(t).

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := ['-'] atom ('^' number)?
    atom   := number | 't' | 'x'digit+ | 'pi' | func '(' expr ')' | '(' expr ')'
    func   := sin | cos | exp | sqrt | abs

Fields are evaluated on whole grids at once.  Gradients with respect to
x1..xn are carried alongside values as forward-mode dual numbers, so a single
pass returns both ``W`` and ``grad_x W`` at every node.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "abs")
MAX_DIM = 16


class DSLSyntaxError(ValueError):
    """Raised when a field source does not parse.  ``position`` is a 0-based column."""

    def __init__(self, message: str, position: int, source: str = ""):
        self.position = position
        self.source = source
        super().__init__(f"{message} at position {position}")


class FieldEvaluationError(ArithmeticError):
    """Division by zero, sqrt of a negative number, etc.  ``index`` is the first bad grid node."""

    def __init__(self, message: str, index: Optional[int] = None):
        self.index = index
        where = "" if index is None else f" (node {index})"
        super().__init__(message + where)


# ---------------------------------------------------------------- AST

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class TimeVar:
    pass


@dataclass(frozen=True)
class SpaceVar:
    index: int  # 0-based


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: float


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, TimeVar, SpaceVar, Neg, BinOp, Pow, Call]


# ---------------------------------------------------------------- parser

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
                    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))")


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            col = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise DSLSyntaxError(f"unexpected character {source[col]!r}", col, source)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, n: int):
        self.source = source
        self.n = n
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise DSLSyntaxError(message, tok[2], self.source)

    def expect(self, value):
        tok = self.peek()
        if tok[1] != value:
            self.fail(f"expected {value!r}, found {tok[1] or 'end of input'!r}")
        return self.take()

    def parse(self) -> Node:
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.factor())
        node = self.atom()
        if self.peek()[1] == "^":
            self.take()
            sign = 1.0
            if self.peek()[1] == "-":
                self.take()
                sign = -1.0
            tok = self.peek()
            if tok[0] != "num":
                self.fail("exponent must be a number literal")
            self.take()
            node = Pow(node, sign * float(tok[1]))
        return node

    def atom(self) -> Node:
        tok = self.peek()
        kind, text, pos = tok
        if kind == "num":
            self.take()
            return Num(float(text))
        if text == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            self.take()
            if text == "t":
                return TimeVar()
            if text == "pi":
                return Num(math.pi)
            m = re.fullmatch(r"x(\d+)", text)
            if m:
                k = int(m.group(1))
                if k < 1 or k > self.n:
                    raise DSLSyntaxError(
                        f"variable {text} out of range for dimension n={self.n}", pos, self.source)
                return SpaceVar(k - 1)
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            raise DSLSyntaxError(f"unknown identifier {text!r}", pos, self.source)
        self.fail(f"unexpected token {text or 'end of input'!r}")


# ---------------------------------------------------------------- evaluation

def _first_bad(mask) -> int:
    idx = np.flatnonzero(np.atleast_1d(mask))
    return int(idx[0]) if idx.size else -1


class _Evaluator:
    """Evaluates an AST on arrays; ``grad`` has shape (m, n) when derivatives are requested."""

    def __init__(self, t, x, want_grad):
        self.t = t
        self.x = x
        self.m = x.shape[0]
        self.n = x.shape[1]
        self.want_grad = want_grad

    def zeros_grad(self):
        return np.zeros((self.m, self.n)) if self.want_grad else None

    def run(self, node):
        if isinstance(node, Num):
            return np.full(self.m, node.value), self.zeros_grad()
        if isinstance(node, TimeVar):
            return self.t.copy(), self.zeros_grad()
        if isinstance(node, SpaceVar):
            g = self.zeros_grad()
            if g is not None:
                g[:, node.index] = 1.0
            return self.x[:, node.index].copy(), g
        if isinstance(node, Neg):
            v, g = self.run(node.arg)
            return -v, None if g is None else -g
        if isinstance(node, BinOp):
            return self.binop(node)
        if isinstance(node, Pow):
            return self.power(node)
        if isinstance(node, Call):
            return self.call(node)
        raise TypeError(f"not an AST node: {node!r}")

    def binop(self, node):
        a, ga = self.run(node.left)
        b, gb = self.run(node.right)
        op = node.op
        g = None
        if op == "+":
            v = a + b
            if self.want_grad:
                g = ga + gb
        elif op == "-":
            v = a - b
            if self.want_grad:
                g = ga - gb
        elif op == "*":
            v = a * b
            if self.want_grad:
                g = ga * b[:, None] + gb * a[:, None]
        else:
            bad = _first_bad(b == 0.0)
            if bad >= 0:
                raise FieldEvaluationError("division by zero", bad)
            v = a / b
            if self.want_grad:
                g = (ga * b[:, None] - gb * a[:, None]) / (b * b)[:, None]
        return v, g

    def power(self, node):
        a, ga = self.run(node.base)
        p = node.exponent
        integral = float(p).is_integer()
        if not integral:
            bad = _first_bad(a < 0.0)
            if bad >= 0:
                raise FieldEvaluationError(f"negative base raised to non-integer power {p}", bad)
        if p < 0:
            bad = _first_bad(a == 0.0)
            if bad >= 0:
                raise FieldEvaluationError("zero raised to a negative power", bad)
        with np.errstate(over="ignore"):
            v = np.power(a, p)
            g = None
            if self.want_grad:
                if p == 0:
                    g = np.zeros_like(ga)
                else:
                    if p < 1 and not integral:
                        bad = _first_bad(a == 0.0)
                        if bad >= 0:
                            raise FieldEvaluationError(f"derivative of x^{p} undefined at 0", bad)
                    g = ga * (p * np.power(a, p - 1.0))[:, None]
        return v, g

    def call(self, node):
        a, ga = self.run(node.arg)
        f = node.func
        d = None
        with np.errstate(over="ignore"):
            if f == "sin":
                v = np.sin(a)
                d = np.cos(a) if self.want_grad else None
            elif f == "cos":
                v = np.cos(a)
                d = -np.sin(a) if self.want_grad else None
            elif f == "exp":
                v = np.exp(a)
                d = v
            elif f == "abs":
                v = np.abs(a)
                d = np.sign(a)
            else:
                bad = _first_bad(a < 0.0)
                if bad >= 0:
                    raise FieldEvaluationError("sqrt of a negative number", bad)
                v = np.sqrt(a)
                if self.want_grad:
                    bad = _first_bad(v == 0.0)
                    if bad >= 0:
                        raise FieldEvaluationError("derivative of sqrt undefined at 0", bad)
                    d = 0.5 / v
        g = ga * d[:, None] if self.want_grad else None
        return v, g


@dataclass(frozen=True)
class ScalarField:
    """A parsed scalar field of (t, x1..xn)."""

    source: str
    n: int
    ast: Node = field(repr=False, compare=False)

    @property
    def uses_t(self) -> bool:
        return _mentions(self.ast, TimeVar)

    @property
    def is_zero(self) -> bool:
        return isinstance(self.ast, Num) and self.ast.value == 0.0

    def _prepare(self, t, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 and self.n > 0 and x.shape[0] == self.n:
            x = x[None, :]
        if x.ndim == 1:
            x = x[:, None] if self.n == 1 else x.reshape(-1, self.n)
        if x.shape[1] != self.n:
            raise ValueError(f"field expects {self.n} coordinates, got {x.shape[1]}")
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],)).astype(float)
        return t, x

    def value(self, t, x) -> np.ndarray:
        """Values at points ``x`` of shape (m, n), times ``t`` broadcast to (m,)."""
        t, x = self._prepare(t, x)
        v, _ = _Evaluator(t, x, False).run(self.ast)
        _check_nan(v)
        return v

    def value_and_grad(self, t, x):
        t, x = self._prepare(t, x)
        v, g = _Evaluator(t, x, True).run(self.ast)
        _check_nan(v)
        _check_nan(g)
        return v, g

    def grad(self, t, x) -> np.ndarray:
        return self.value_and_grad(t, x)[1]

    def of_t(self, t) -> np.ndarray:
        """Evaluate a field with no spatial variables (e.g. a weight alpha(t))."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        v, _ = _Evaluator(t, np.zeros((t.shape[0], self.n)), False).run(self.ast)
        _check_nan(v)
        return v


def _check_nan(a):
    bad = _first_bad(np.isnan(a).reshape(a.shape[0], -1).any(axis=1)) if a.size else -1
    if bad >= 0:
        raise FieldEvaluationError("evaluation produced NaN", bad)


def _mentions(node, cls) -> bool:
    if isinstance(node, cls):
        return True
    if isinstance(node, (Neg, Call)):
        return _mentions(node.arg, cls)
    if isinstance(node, Pow):
        return _mentions(node.base, cls)
    if isinstance(node, BinOp):
        return _mentions(node.left, cls) or _mentions(node.right, cls)
    return False


def parse_field(source: str, n: int) -> ScalarField:
    """Parse ``source`` into a :class:`ScalarField` over x1..xn.

    Raises :class:`DSLSyntaxError` with the column of the offending token for
    malformed input, unknown identifiers, and ``xk`` with ``k > n``.
    """
    if not 0 <= n <= MAX_DIM:
        raise ValueError(f"dimension must be in [0, {MAX_DIM}], got {n}")
    if not isinstance(source, str):
        source = str(source)
    if source.strip() == "":
        raise DSLSyntaxError("empty expression", 0, source)
    return ScalarField(source.strip(), n, _Parser(source, n).parse())
