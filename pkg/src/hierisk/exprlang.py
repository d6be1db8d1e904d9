"""A small arithmetic expression language for problem coefficients.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?          # right associative
    primary := NUMBER | VAR ['[' INT ']'] | FUNC '(' expr (',' expr)* ')'
             | '(' expr ')'

Variables are ``t, x, u, v, y, z``.  Vector-valued variables are indexed with
1-based subscripts (``x[2]``); a bare name means component 1.  Functions are
``abs, min, max, exp, log, sqrt, pos, neg`` where ``pos(a) = max(a, 0)`` and
``neg(a) = max(-a, 0)``.

Evaluation is vectorised: bindings may be floats or numpy arrays that
broadcast against each other.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import (
    ArityError,
    ExprDomainError,
    ExprSyntaxError,
    UnboundVariableError,
    UnknownIdentifierError,
)

VARIABLES = ("t", "x", "u", "v", "y", "z")
FUNCTIONS = {
    "abs": (1, 1),
    "exp": (1, 1),
    "log": (1, 1),
    "sqrt": (1, 1),
    "pos": (1, 1),
    "neg": (1, 1),
    "min": (2, None),
    "max": (2, None),
}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    index: int = 1


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Call]

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),\[\]])
    """,
    re.VERBOSE,
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", _byte_offset(source, pos))
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), _byte_offset(source, pos)))
        pos = m.end()
    tokens.append(("end", "", _byte_offset(source, len(source))))
    return tokens


def _byte_offset(source: str, char_pos: int) -> int:
    return len(source[:char_pos].encode("utf-8"))


class _Parser:
    def __init__(self, source: str, constants: Mapping[str, float]):
        self.tokens = _tokenize(source)
        self.i = 0
        self.constants = constants

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, value, offset = self.take()
        if value != text or kind == "end":
            found = "end of input" if kind == "end" else repr(value)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", offset)

    def parse(self) -> Expr:
        e = self.expr()
        kind, value, offset = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {value!r}", offset)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            nxt = self.tokens[self.i + 1] if self.peek()[0] == "num" else None
            if nxt is not None and nxt[1] != "^":
                # a signed literal is a single number, so folded constants print and re-parse alike
                return Num(-float(self.take()[1]))
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Expr:
        kind, value, offset = self.take()
        if kind == "num":
            return Num(float(value))
        if kind == "name":
            if value in FUNCTIONS:
                return self.call(value, offset)
            if value in VARIABLES:
                index = 1
                if self.peek()[1] == "[":
                    self.take()
                    k, idx, idx_off = self.take()
                    if k != "num" or not idx.isdigit() or int(idx) < 1:
                        raise ExprSyntaxError("subscript must be a positive integer", idx_off)
                    index = int(idx)
                    self.expect("]")
                return Var(value, index)
            if value in self.constants:
                return Num(float(self.constants[value]))
            raise UnknownIdentifierError(f"unknown identifier {value!r} at byte offset {offset}")
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(value)
        raise ExprSyntaxError(f"unexpected {found}", offset)

    def call(self, name: str, offset: int) -> Expr:
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        lo, hi = FUNCTIONS[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = str(lo) if hi == lo else f"at least {lo}"
            raise ArityError(f"{name}() takes {want} argument(s), got {len(args)} (byte offset {offset})")
        return Call(name, tuple(args))


def parse(source: str, constants: Mapping[str, float] | None = None) -> Expr:
    """Parse ``source`` into an expression tree.

    ``constants`` maps extra identifiers (model parameters such as ``mu``) to
    numbers; they are folded into literals at parse time.
    """
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source, constants or {}).parse()


# printing -------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(e: Expr) -> int:
    if isinstance(e, Num) and math.copysign(1.0, e.value) < 0:
        return 3
    if isinstance(e, BinOp):
        return 4 if e.op == "^" else _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    return 5


def to_source(e: Expr) -> str:
    """Render an expression with the minimal parentheses that re-parse to it."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name if e.index == 1 else f"{e.name}[{e.index}]"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_source(a) for a in e.args)})"
    if isinstance(e, Neg):
        inner = to_source(e.operand)
        bare = _prec(e.operand) >= 3 and not (isinstance(e.operand, Num) and _prec(e.operand) == 5)
        return f"-{inner}" if bare else f"-({inner})"
    if e.op == "^":
        left = to_source(e.left)
        if _prec(e.left) < 5:
            left = f"({left})"
        right = to_source(e.right)
        if _prec(e.right) < 3:
            right = f"({right})"
        return f"{left}^{right}"
    p = _PREC[e.op]
    left = to_source(e.left)
    if _prec(e.left) < p:
        left = f"({left})"
    right = to_source(e.right)
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {e.op} {right}"


def variables(e: Expr) -> set[str]:
    """Names of the variables referenced by ``e``."""
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Neg):
        return variables(e.operand)
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    if isinstance(e, Call):
        out: set[str] = set()
        for a in e.args:
            out |= variables(a)
        return out
    return set()


def add_constant(e: Expr, c: float) -> Expr:
    """Return the expression ``e + c`` (used for data perturbations)."""
    if c == 0:
        return e
    return BinOp("+", e, Num(float(c))) if c > 0 else BinOp("-", e, Num(float(-c)))


# evaluation -----------------------------------------------------------------


def _first_bad(mask) -> int | None:
    mask = np.asarray(mask)
    if mask.ndim == 0:
        return None
    return int(np.flatnonzero(mask)[0])


def _eval(e: Expr, env: Mapping):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            value = env[e.name]
        except KeyError:
            raise UnboundVariableError(f"variable {e.name!r} is not bound") from None
        if isinstance(value, (tuple, list)):
            if e.index > len(value):
                raise UnboundVariableError(f"{e.name}[{e.index}] is out of range (dimension {len(value)})")
            return value[e.index - 1]
        if e.index != 1:
            raise UnboundVariableError(f"{e.name}[{e.index}] requested but {e.name} is scalar")
        return value
    if isinstance(e, Neg):
        return -_eval(e.operand, env)
    if isinstance(e, BinOp):
        a = _eval(e.left, env)
        b = _eval(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            zero = np.asarray(b) == 0
            if np.any(zero):
                raise ExprDomainError("division by zero", _first_bad(np.broadcast_to(zero, np.broadcast(a, b).shape)))
            return a / b
        with np.errstate(all="ignore"):
            out = np.power(np.asarray(a, dtype=float), b)
        bad = ~np.isfinite(out) & np.isfinite(a) & np.isfinite(b)
        if np.any(bad):
            raise ExprDomainError("power undefined for these operands", _first_bad(bad))
        return out if np.ndim(out) else float(out)
    args = [_eval(a, env) for a in e.args]
    f = e.func
    if f == "abs":
        return np.abs(args[0])
    if f == "exp":
        return np.exp(args[0])
    if f == "log":
        bad = np.asarray(args[0]) <= 0
        if np.any(bad):
            raise ExprDomainError("log of a non-positive value", _first_bad(bad))
        return np.log(args[0])
    if f == "sqrt":
        bad = np.asarray(args[0]) < 0
        if np.any(bad):
            raise ExprDomainError("sqrt of a negative value", _first_bad(bad))
        return np.sqrt(args[0])
    if f == "pos":
        return np.maximum(args[0], 0.0)
    if f == "neg":
        return np.maximum(-args[0], 0.0)
    if f == "min":
        out = args[0]
        for a in args[1:]:
            out = np.minimum(out, a)
        return out
    out = args[0]
    for a in args[1:]:
        out = np.maximum(out, a)
    return out


def evaluate(e: Expr, env: Mapping | None = None):
    """Evaluate ``e`` under ``env``.

    Scalars in, float out; any array binding makes the result an array of the
    broadcast shape.  Vector variables are bound to a tuple of components.
    """
    out = _eval(e, env or {})
    if np.ndim(out) == 0:
        return float(out)
    return np.asarray(out, dtype=float)
