"""Expression language for coordinate fields.

Grammar (whitespace is ignored)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ("^" unary)?            # right-associative; -q1^2 == -(q1^2)
    atom   := number | symbol | func "(" expr ")" | "(" expr ")"
    symbol := "q" digits                   # q1 .. qn
    func   := "sqrt" | "sin" | "cos" | "exp" | "log" | "abs"
    number := digits ["." digits] [("e" | "E") ["+" | "-"] digits]

Nodes are immutable and compare structurally; ``parse(str(node)) == node``.
Python operators on nodes build new trees without any simplification.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

from . import dual as D
from .errors import DimensionError, ExpressionSyntaxError, UnknownSymbolError

FUNCTIONS: dict[str, Callable] = {
    "sqrt": D.sqrt,
    "sin": D.sin,
    "cos": D.cos,
    "exp": D.exp,
    "log": D.log,
    "abs": D.absolute,
}

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


class Node:
    """Base class of expression trees."""

    prec = _PREC["atom"]

    def __str__(self):
        return to_text(self)

    def max_index(self) -> int:
        raise NotImplementedError

    # tree construction -----------------------------------------------------
    def __add__(self, other):
        return Bin("+", self, as_node(other))

    def __radd__(self, other):
        return Bin("+", as_node(other), self)

    def __sub__(self, other):
        return Bin("-", self, as_node(other))

    def __rsub__(self, other):
        return Bin("-", as_node(other), self)

    def __mul__(self, other):
        return Bin("*", self, as_node(other))

    def __rmul__(self, other):
        return Bin("*", as_node(other), self)

    def __truediv__(self, other):
        return Bin("/", self, as_node(other))

    def __rtruediv__(self, other):
        return Bin("/", as_node(other), self)

    def __pow__(self, other):
        return Bin("^", self, as_node(other))

    def __neg__(self):
        return Neg(self)


@dataclass(frozen=True, eq=True)
class Num(Node):
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value < 0:
            raise ValueError("Num holds finite non-negative literals; use as_node()")

    def max_index(self):
        return 0


@dataclass(frozen=True, eq=True)
class Sym(Node):
    index: int

    def max_index(self):
        return self.index


@dataclass(frozen=True, eq=True)
class Neg(Node):
    arg: Node
    prec = _PREC["neg"]

    def max_index(self):
        return self.arg.max_index()


@dataclass(frozen=True, eq=True)
class Bin(Node):
    op: str
    left: Node
    right: Node

    @property
    def prec(self):
        return _PREC[self.op]

    def max_index(self):
        return max(self.left.max_index(), self.right.max_index())


@dataclass(frozen=True, eq=True)
class Call(Node):
    name: str
    arg: Node

    def max_index(self):
        return self.arg.max_index()


def as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    x = float(x)
    if x < 0 or (x == 0 and math.copysign(1.0, x) < 0):
        return Neg(Num(-x))
    return Num(x)


def call(name: str, arg) -> Node:
    if name not in FUNCTIONS:
        raise UnknownSymbolError(f"unknown function {name!r}")
    return Call(name, as_node(arg))


def sym(i: int) -> Sym:
    return Sym(i)


# -- printing -------------------------------------------------------------

def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_text(node: Node) -> str:
    if isinstance(node, Num):
        return _fmt_number(node.value)
    if isinstance(node, Sym):
        return f"q{node.index}"
    if isinstance(node, Call):
        return f"{node.name}({to_text(node.arg)})"
    if isinstance(node, Neg):
        inner = to_text(node.arg)
        return f"-({inner})" if node.arg.prec < _PREC["neg"] else f"-{inner}"
    if isinstance(node, Bin):
        left, right = to_text(node.left), to_text(node.right)
        p = node.prec
        if node.op == "^":
            if node.left.prec <= p:
                left = f"({left})"
            if node.right.prec < _PREC["neg"]:
                right = f"({right})"
            return f"{left}^{right}"
        if node.left.prec < p:
            left = f"({left})"
        if node.right.prec <= p:
            right = f"({right})"
        return f"{left} {node.op} {right}"
    raise TypeError(f"not an expression node: {node!r}")


# -- parsing ----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(text: str):
    pos, out = 0, []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        value = m.group(kind)
        out.append((kind, "^" if value == "**" else value, m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text, dim):
        self.toks = _tokenize(text)
        self.i = 0
        self.dim = dim

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, v, pos = self.take()
        if v != value:
            what = "end of input" if kind == "end" else repr(v)
            raise ExpressionSyntaxError(f"expected {value!r}, found {what}", pos)

    def parse(self):
        node = self.expr()
        kind, v, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected token {v!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        kind, v, pos = self.take()
        if kind == "num":
            return Num(float(v))
        if kind == "name":
            m = re.fullmatch(r"q(\d+)", v)
            if m:
                idx = int(m.group(1))
                if idx < 1 or idx > self.dim:
                    raise DimensionError(
                        f"coordinate {v} at position {pos} outside q1..q{self.dim}")
                return Sym(idx)
            if v in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(v, arg)
            raise UnknownSymbolError(f"unknown symbol {v!r} at position {pos}")
        if kind == "op" and v == "(":
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(v)
        raise ExpressionSyntaxError(f"unexpected {what}", pos)


def parse_expression(text: str, dim: int) -> Node:
    """Parse ``text`` into an expression tree over coordinates ``q1..q{dim}``."""
    if dim < 0:
        raise DimensionError("dimension must be non-negative")
    return _Parser(text, dim).parse()


# -- compilation ------------------------------------------------------------

def compile_node(node: Node) -> Callable:
    """Closure ``f(q)`` evaluating ``node`` on floats, arrays or duals."""
    if isinstance(node, Num):
        c = node.value
        return lambda q: c
    if isinstance(node, Sym):
        k = node.index - 1
        return lambda q: q[k]
    if isinstance(node, Neg):
        f = compile_node(node.arg)
        return lambda q: -f(q)
    if isinstance(node, Call):
        fn = FUNCTIONS[node.name]
        f = compile_node(node.arg)
        return lambda q: fn(f(q))
    if isinstance(node, Bin):
        lf, rf = compile_node(node.left), compile_node(node.right)
        op = node.op
        if op == "+":
            return lambda q: lf(q) + rf(q)
        if op == "-":
            return lambda q: lf(q) - rf(q)
        if op == "*":
            return lambda q: lf(q) * rf(q)
        if op == "/":
            return lambda q: D.div(lf(q), rf(q))
        if isinstance(node.right, Num):
            p = node.right.value
            return lambda q: D.power(lf(q), p)
        return lambda q: D.power(lf(q), rf(q))
    raise TypeError(f"not an expression node: {node!r}")


def is_constant(node: Node) -> bool:
    return node.max_index() == 0
