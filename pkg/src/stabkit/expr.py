"""
Arithmetic expressions over lagged samples.

Component maps are written as plain text such as ``2*x[1]*(1 - x[1])`` where
``x[j]`` is the sample ``j`` steps back in time.  Text is parsed once into an
immutable tree that is compiled to nested closures, so repeated evaluation in
long simulations stays cheap.

Grammar (lowest to highest binding)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | power
    power   := primary (("^" | "**") unary)?
    primary := NUMBER | "x" "[" INT "]" | FUNC "(" expr ")" | "(" expr ")"
    FUNC    := "abs" | "sin" | "cos" | "exp" | "sqrt"

``+ - * /`` associate to the left; ``^`` associates to the right
(``2^3^2 == 2^9``) and binds tighter than unary minus (``-x[1]^2`` is
``-(x[1]^2)``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

__all__ = [
    "Const",
    "Lag",
    "Unary",
    "Binary",
    "Node",
    "LaggedExpr",
    "ExprError",
    "ExprSyntaxError",
    "LagOutOfRangeError",
    "ExprDomainError",
    "parse",
    "evaluate",
    "to_text",
    "max_lag",
]


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class LagOutOfRangeError(ExprError):
    def __init__(self, index: int, order: int, offset: int):
        super().__init__(
            f"x[{index}] is out of range for declared order {order} "
            f"(lags must lie in 1..{order}; at byte offset {offset})"
        )
        self.index = index
        self.order = order
        self.offset = offset


class ExprDomainError(ExprError, ArithmeticError):
    """Evaluation left the reals (division by zero, sqrt of a negative, overflow...)."""

    def __init__(self, node: "Node", inputs: Sequence[float] | None = None):
        self.node = node
        self.inputs = None if inputs is None else tuple(float(v) for v in inputs)
        msg = f"domain error at {to_text(node)}"
        if self.inputs is not None:
            msg += f" for inputs {list(self.inputs)}"
        super().__init__(msg)


# -- tree --------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("constants must be finite")


@dataclass(frozen=True)
class Lag:
    index: int


@dataclass(frozen=True)
class Unary:
    op: str  # neg, abs, sin, cos, exp, sqrt
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^
    left: "Node"
    right: "Node"


Node = Union[Const, Lag, Unary, Binary]

UNARY_OPS = ("neg", "abs", "sin", "cos", "exp", "sqrt")
BINARY_OPS = ("+", "-", "*", "/", "^")
_FUNCS = {"abs": math.fabs, "sin": math.sin, "cos": math.cos, "exp": math.exp, "sqrt": math.sqrt}


def max_lag(node: Node) -> int:
    """Largest lag index referenced by ``node`` (0 for constant trees)."""
    if isinstance(node, Lag):
        return node.index
    if isinstance(node, Unary):
        return max_lag(node.operand)
    if isinstance(node, Binary):
        return max(max_lag(node.left), max_lag(node.right))
    return 0


# -- compilation -------------------------------------------------------------


class _Fault(Exception):
    def __init__(self, node: Node):
        self.node = node


def _pow(a: float, b: float) -> float:
    if a < 0.0 and not float(b).is_integer():
        raise ValueError("negative base with non-integer exponent")
    return math.pow(a, b)


def _compile(node: Node) -> Callable[[Sequence[float]], float]:
    if isinstance(node, Const):
        v = float(node.value)
        return lambda h: v
    if isinstance(node, Lag):
        i = node.index - 1
        return lambda h: h[i]
    if isinstance(node, Unary):
        inner = _compile(node.operand)
        if node.op == "neg":
            return lambda h: -inner(h)
        fn = _FUNCS[node.op]

        def unary(h):
            try:
                return fn(inner(h))
            except (ValueError, OverflowError):
                raise _Fault(node) from None

        return unary
    if isinstance(node, Binary):
        left, right = _compile(node.left), _compile(node.right)
        op = node.op
        if op == "+":
            return lambda h: left(h) + right(h)
        if op == "-":
            return lambda h: left(h) - right(h)
        if op == "*":
            return lambda h: left(h) * right(h)
        if op == "/":

            def div(h):
                a = left(h)
                b = right(h)
                if b == 0.0:
                    raise _Fault(node)
                return a / b

            return div

        def power(h):
            try:
                return _pow(left(h), right(h))
            except (ValueError, OverflowError, ZeroDivisionError):
                raise _Fault(node) from None

        return power
    raise TypeError(f"not an expression node: {node!r}")


@dataclass(frozen=True)
class LaggedExpr:
    """Parsed expression with its declared order.

    Instances are immutable and may be evaluated concurrently.
    """

    root: Node
    order: int
    _fn: Callable[[Sequence[float]], float] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("declared order must be a positive integer")
        if max_lag(self.root) > self.order:
            raise LagOutOfRangeError(max_lag(self.root), self.order, 0)
        object.__setattr__(self, "_fn", _compile(self.root))

    def __call__(self, history: Sequence[float]) -> float:
        return evaluate(self, history)

    def evaluate_prefix(self, values: Sequence[float]) -> float:
        """Evaluate on the first ``order`` entries of ``values``; trailing ones are ignored."""
        try:
            y = self._fn(values)
        except _Fault as fault:
            raise ExprDomainError(fault.node, values[: self.order]) from None
        if not math.isfinite(y):
            raise ExprDomainError(self.root, values[: self.order])
        return y

    def __str__(self) -> str:
        return to_text(self.root)


def evaluate(expr: LaggedExpr, history: Sequence[float]) -> float:
    """Evaluate ``expr`` where ``history[j-1]`` supplies ``x[j]``."""
    if len(history) != expr.order:
        raise ValueError(f"history has length {len(history)}, expected {expr.order}")
    return expr.evaluate_prefix(history)


# -- printing ----------------------------------------------------------------


def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(v)


def to_text(node: Node | LaggedExpr) -> str:
    """Canonical fully parenthesized text; parsing it back evaluates identically."""
    if isinstance(node, LaggedExpr):
        node = node.root
    if isinstance(node, Const):
        v = node.value
        if v < 0.0 or math.copysign(1.0, v) < 0.0:
            return f"(-{_fmt_number(-v)})"
        return _fmt_number(v)
    if isinstance(node, Lag):
        return f"x[{node.index}]"
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-{to_text(node.operand)})"
        return f"{node.op}({to_text(node.operand)})"
    return f"({to_text(node.left)} {node.op} {to_text(node.right)})"


# -- parsing -----------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_]\w*)
  | (?P<op>\*\*|[-+*/^()\[\]])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        if m.lastgroup != "ws":
            tokens.append(_Tok(m.lastgroup, m.group(), _byte_offset(text, pos)))
        pos = m.end()
    tokens.append(_Tok("end", "", _byte_offset(text, len(text))))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str, order: int):
        self.toks = _tokenize(text)
        self.i = 0
        self.order = order

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", self.tok.offset)
        return self.take()

    def expr(self) -> Node:
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.take().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.take().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.text == "-":
            self.take()
            return Unary("neg", self.unary())
        if self.tok.text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.tok.text in ("^", "**"):
            self.take()
            return Binary("^", base, self.unary())
        return base

    def primary(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.take()
            return Const(float(tok.text))
        if tok.text == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "name":
            self.take()
            if tok.text == "x":
                self.expect("[")
                idx = self.tok
                if idx.kind != "num" or not idx.text.isdigit():
                    raise ExprSyntaxError("lag index must be a positive integer", idx.offset)
                self.take()
                self.expect("]")
                j = int(idx.text)
                if not 1 <= j <= self.order:
                    raise LagOutOfRangeError(j, self.order, tok.offset)
                return Lag(j)
            if tok.text in _FUNCS:
                self.expect("(")
                node = self.expr()
                self.expect(")")
                return Unary(tok.text, node)
            raise ExprSyntaxError(f"unknown name {tok.text!r}", tok.offset)
        found = tok.text or "end of input"
        raise ExprSyntaxError(f"unexpected {found!r}", tok.offset)


def parse(text: str, declared_order: int) -> LaggedExpr:
    """Parse ``text`` into an expression of the given order.

    Raises ``ExprSyntaxError`` (with byte offset) on malformed input and
    ``LagOutOfRangeError`` when some ``x[j]`` lies outside ``1..declared_order``.
    """
    if not isinstance(declared_order, int) or declared_order < 1:
        raise ValueError("declared order must be a positive integer")
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    p = _Parser(text, declared_order)
    root = p.expr()
    if p.tok.kind != "end":
        raise ExprSyntaxError(f"unexpected {p.tok.text!r}", p.tok.offset)
    return LaggedExpr(root, declared_order)
