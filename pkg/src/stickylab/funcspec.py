"""Scalar function expressions of one variable.

Config files describe the skewness ``alpha(t)`` and the stickiness ``rho(u)``
as small infix expressions, e.g. ``0.5*min(1, t)`` or ``1/(1+u)``. This module
parses them into an immutable tree and evaluates that tree on floats or numpy
arrays.

Grammar, from loosest to tightest binding::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

so ``-t^2`` is ``-(t^2)`` and ``2^-1`` is ``2^(-1)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "FuncExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "DomainError",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "FuncExpr",
    "parse",
    "to_text",
    "evaluate",
]


class FuncExprError(ValueError):
    pass


class ExprSyntaxError(FuncExprError):
    def __init__(self, message: str, position: int) -> None:
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifierError(FuncExprError):
    def __init__(self, name: str, position: int, variable: str) -> None:
        super().__init__(
            f'unknown identifier "{name}" at position {position}'
            f' (the only variable allowed here is "{variable}")'
        )
        self.name = name
        self.position = position


class DomainError(FuncExprError):
    pass


# {{{ tree


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: Node


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple[Node, ...]


Node = Union[Num, Var, Neg, BinOp, Call]

# name -> (min args, max args); None means unbounded
FUNCTIONS: dict[str, tuple[int, int | None]] = {
    "exp": (1, 1),
    "sqrt": (1, 1),
    "min": (2, None),
    "max": (2, None),
}

# }}}


# {{{ tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


# }}}


# {{{ parser


class _Parser:
    def __init__(self, text: str, variable: str) -> None:
        self.tokens = _tokenize(text)
        self.i = 0
        self.variable = variable

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str) -> None:
        kind, text, pos = self.take()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                return self.call(text, pos)
            if text != self.variable:
                raise UnknownIdentifierError(text, pos, self.variable)
            return Var(text)
        if (kind, text) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"expected a number, name or '(', found {found}", pos)

    def call(self, name: str, pos: int) -> Node:
        if name not in FUNCTIONS:
            raise UnknownIdentifierError(name, pos, self.variable)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[:2] == ("op", ","):
            self.take()
            args.append(self.expr())
        self.expect(")")

        lo, hi = FUNCTIONS[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise ExprSyntaxError(
                f"{name}() takes {lo if hi == lo else f'at least {lo}'} "
                f"argument(s), got {len(args)}",
                pos,
            )
        return Call(name, tuple(args))


# }}}


# {{{ printing


def to_text(node: Node) -> str:
    """Print a tree so that parsing the result gives back the same tree."""
    if isinstance(node, Num):
        if not (math.isfinite(node.value) and node.value >= 0):
            raise ValueError(f"literal {node.value!r} has no textual form")
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_text(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


# }}}


# {{{ evaluation


def _pow(a, b):
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        a, b = float(a), float(b)
        if a == 0.0 and b < 0:
            raise ZeroDivisionError
        if a < 0 and b != int(b):
            raise ValueError
        return a**b
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    if np.any((a == 0) & (b < 0)):
        raise ZeroDivisionError
    if np.any((a < 0) & (b != np.round(b))):
        raise ValueError
    return np.power(a, b)


def _div(a, b):
    if np.any(np.asarray(b) == 0):
        raise ZeroDivisionError
    return a / b


def _sqrt(a):
    if np.any(np.asarray(a) < 0):
        raise ValueError
    return np.sqrt(a) if np.ndim(a) else math.sqrt(a)


def _exp(a):
    return np.exp(a) if np.ndim(a) else math.exp(a)


def _min(*args):
    out = args[0]
    for a in args[1:]:
        out = np.minimum(out, a) if np.ndim(out) or np.ndim(a) else min(out, a)
    return out


def _max(*args):
    out = args[0]
    for a in args[1:]:
        out = np.maximum(out, a) if np.ndim(out) or np.ndim(a) else max(out, a)
    return out


_BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "^": _pow,
}
_CALLS = {"exp": _exp, "sqrt": _sqrt, "min": _min, "max": _max}


def _eval(node: Node, value):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return value
    if isinstance(node, Neg):
        return -_eval(node.operand, value)
    if isinstance(node, BinOp):
        return _BINOPS[node.op](_eval(node.left, value), _eval(node.right, value))
    return _CALLS[node.name](*(_eval(a, value) for a in node.args))


def evaluate(node: Node, value):
    """Evaluate *node* at a float or an array of floats.

    Raises :class:`DomainError` on division by zero, a negative square root,
    a non-integer power of a negative number, overflow or a non-finite result.
    """
    scalar = np.ndim(value) == 0
    v = float(value) if scalar else np.asarray(value, dtype=float)
    try:
        with np.errstate(all="raise"):
            out = _eval(node, v)
    except (ZeroDivisionError, ValueError, OverflowError, FloatingPointError) as exc:
        raise DomainError(f"expression is undefined at {value!r}") from exc

    if scalar:
        out = float(out)
        if not math.isfinite(out):
            raise DomainError(f"expression is not finite at {value!r}")
        return out

    out = np.broadcast_to(np.asarray(out, dtype=float), np.shape(v)).copy()
    if not np.all(np.isfinite(out)):
        raise DomainError("expression is not finite on the whole sample")
    return out


# }}}


@dataclass(frozen=True)
class FuncExpr:
    """A parsed expression in a single variable."""

    tree: Node
    variable: str

    def __call__(self, value):
        return evaluate(self.tree, value)

    @property
    def text(self) -> str:
        return to_text(self.tree)

    @property
    def is_constant(self) -> bool:
        return not _mentions_variable(self.tree)

    def __str__(self) -> str:
        return self.text


def _mentions_variable(node: Node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Neg):
        return _mentions_variable(node.operand)
    if isinstance(node, BinOp):
        return _mentions_variable(node.left) or _mentions_variable(node.right)
    if isinstance(node, Call):
        return any(_mentions_variable(a) for a in node.args)
    return False


def parse(text: str, variable: str) -> FuncExpr:
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    if not variable.isidentifier() or variable in FUNCTIONS:
        raise ValueError(f"invalid variable name {variable!r}")
    return FuncExpr(_Parser(text, variable).parse(), variable)
