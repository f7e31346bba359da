"""Symbolic scalar expressions over named coordinates and parameters.

Expressions are immutable trees. They can be parsed from the small infix
grammar used in spec files, printed back, evaluated against a binding of
names to floats, differentiated exactly, and compiled into plain Python
callables for the hot loops (real or complex arithmetic).

Grammar::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?        # right-associative
    primary := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'
"""

from __future__ import annotations

import cmath
import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.text = text


class UnknownFunctionError(ExprSyntaxError):
    pass


class UnboundNameError(ExprError, KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"unbound name {self.name!r}"


class DomainError(ExprError, ArithmeticError):
    def __init__(self, message: str, node: "Expr | None" = None):
        where = f" in {to_string(node)!r}" if node is not None else ""
        super().__init__(message + where)
        self.node = node


# ---------------------------------------------------------------------------
# nodes


class Expr:
    __slots__ = ()
    prec = 5

    def __str__(self):
        return to_string(self)

    # arithmetic sugar used when assembling expressions in code
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __neg__(self):
        return neg(self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value < 0:
            raise ValueError("Const holds finite non-negative values; use neg()")


@dataclass(frozen=True, eq=True)
class Symbol(Expr):
    name: str


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def prec(self):
        return {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}[self.op]


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr
    prec = 3


@dataclass(frozen=True, eq=True)
class Call(Expr):
    fn: str
    arg: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


def const(value: float) -> Expr:
    value = float(value)
    if value < 0:
        return Neg(Const(-value))
    return Const(value + 0.0)


def as_expr(obj) -> Expr:
    if isinstance(obj, Expr):
        return obj
    if isinstance(obj, (int, float)):
        return const(obj)
    if isinstance(obj, str):
        return parse_expr(obj)
    raise TypeError(f"cannot convert {type(obj).__name__} to Expr")


def constant_value(e: Expr) -> float | None:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Neg) and isinstance(e.arg, Const):
        return -e.arg.value
    return None


# ---------------------------------------------------------------------------
# smart constructors: constant folding and 0/1 identities only


def add(a: Expr, b: Expr) -> Expr:
    va, vb = constant_value(a), constant_value(b)
    if va is not None and vb is not None:
        return const(va + vb)
    if va == 0.0:
        return b
    if vb == 0.0:
        return a
    if isinstance(b, Neg):
        return BinOp("-", a, b.arg)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    va, vb = constant_value(a), constant_value(b)
    if va is not None and vb is not None:
        return const(va - vb)
    if vb == 0.0:
        return a
    if va == 0.0:
        return neg(b)
    if isinstance(b, Neg):
        return BinOp("+", a, b.arg)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    va, vb = constant_value(a), constant_value(b)
    if va is not None and vb is not None:
        return const(va * vb)
    if va == 0.0 or vb == 0.0:
        return ZERO
    if va == 1.0:
        return b
    if vb == 1.0:
        return a
    if va == -1.0:
        return neg(b)
    if vb == -1.0:
        return neg(a)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    va, vb = constant_value(a), constant_value(b)
    if vb == 0.0:
        return BinOp("/", a, b)  # left for eval to report
    if va is not None and vb is not None:
        return const(va / vb)
    if va == 0.0:
        return ZERO
    if vb == 1.0:
        return a
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Neg):
        return a.arg
    va = constant_value(a)
    if va is not None:
        return const(-va)
    return Neg(a)


def power(a: Expr, b: Expr) -> Expr:
    va, vb = constant_value(a), constant_value(b)
    if vb == 0.0:
        return ONE
    if vb == 1.0:
        return a
    if va is not None and vb is not None:
        try:
            return const(_real_pow(va, vb))
        except (DomainError, OverflowError):
            pass
    return BinOp("^", a, b)


def call(fn: str, a: Expr) -> Expr:
    if fn not in FUNCTIONS:
        raise UnknownFunctionError(f"unknown function {fn!r}", 0)
    return Call(fn, a)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        start = m.start(m.lastgroup)
        tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, tok, what="unexpected token"):
        shown = "end of input" if tok[0] == "eof" else repr(tok[1])
        raise ExprSyntaxError(f"{what}: {shown}", tok[2], self.text)

    def expect(self, value):
        tok = self.take()
        if tok[1] != value or tok[0] != "op":
            self.fail(tok, f"expected {value!r}")
        return tok

    def parse(self):
        e = self.expr()
        tok = self.peek()
        if tok[0] != "eof":
            self.fail(tok)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            e = BinOp(op, e, self.unary())
        return e

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.primary()
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def primary(self):
        tok = self.take()
        kind, value, offset = tok
        if kind == "num":
            return Const(float(value))
        if kind == "name":
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "(":
                if value not in FUNCTIONS:
                    raise UnknownFunctionError(f"unknown function {value!r}", offset, self.text)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(value, arg)
            return Symbol(value)
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect(")")
            return e
        self.fail(tok)


def parse_expr(text: str) -> Expr:
    """Parse ``text`` into an expression tree (no folding is applied)."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# printing


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_string(e: Expr) -> str:
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Symbol):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({to_string(e.arg)})"
    if isinstance(e, Neg):
        inner = to_string(e.arg)
        if e.arg.prec < Neg.prec:
            inner = f"({inner})"
        return "-" + inner
    if isinstance(e, BinOp):
        p = e.prec
        left, right = to_string(e.left), to_string(e.right)
        if e.op == "^":
            if e.left.prec <= p:
                left = f"({left})"
            if e.right.prec < p or isinstance(e.right, Neg):
                right = f"({right})"
        else:
            if e.left.prec < p:
                left = f"({left})"
            if e.right.prec <= p:
                right = f"({right})"
        return f"{left}{e.op}{right}"
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# evaluation


def _real_pow(a: float, b: float, node=None) -> float:
    if a == 0.0 and b < 0:
        raise DomainError("zero to a negative power", node)
    if float(b).is_integer():
        return a ** int(b)
    if a < 0:
        raise DomainError("negative base with non-integer exponent", node)
    return math.exp(b * math.log(a)) if a > 0 else 0.0


def eval_expr(e: Expr, b: Mapping[str, float]) -> float:
    """Evaluate ``e`` recursively in IEEE double arithmetic."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Symbol):
        try:
            return float(b[e.name])
        except KeyError:
            raise UnboundNameError(e.name) from None
    if isinstance(e, Neg):
        return -eval_expr(e.arg, b)
    if isinstance(e, Call):
        x = eval_expr(e.arg, b)
        if e.fn == "log" and x <= 0:
            raise DomainError("log of non-positive value", e)
        if e.fn == "sqrt" and x < 0:
            raise DomainError("sqrt of negative value", e)
        try:
            return getattr(math, e.fn)(x)
        except OverflowError:
            raise DomainError("overflow", e) from None
    if isinstance(e, BinOp):
        lhs = eval_expr(e.left, b)
        rhs = eval_expr(e.right, b)
        if e.op == "+":
            return lhs + rhs
        if e.op == "-":
            return lhs - rhs
        if e.op == "*":
            return lhs * rhs
        if e.op == "/":
            if rhs == 0.0:
                raise DomainError("division by zero", e)
            return lhs / rhs
        return _real_pow(lhs, rhs, e)
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# differentiation


def diff_expr(e: Expr, var: str) -> Expr:
    """Exact derivative of ``e`` with respect to the name ``var``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Symbol):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return neg(diff_expr(e.arg, var))
    if isinstance(e, Call):
        u = e.arg
        du = diff_expr(u, var)
        if du == ZERO:
            return ZERO
        if e.fn == "sin":
            outer = Call("cos", u)
        elif e.fn == "cos":
            outer = neg(Call("sin", u))
        elif e.fn == "exp":
            outer = e
        elif e.fn == "log":
            outer = div(ONE, u)
        else:  # sqrt
            outer = div(ONE, mul(Const(2.0), e))
        return mul(outer, du)
    if isinstance(e, BinOp):
        u, v = e.left, e.right
        du, dv = diff_expr(u, var), diff_expr(v, var)
        if e.op == "+":
            return add(du, dv)
        if e.op == "-":
            return sub(du, dv)
        if e.op == "*":
            return add(mul(du, v), mul(u, dv))
        if e.op == "/":
            return div(sub(mul(du, v), mul(u, dv)), power(v, Const(2.0)))
        # power
        k = constant_value(v)
        if k is not None:
            if du == ZERO:
                return ZERO
            return mul(mul(const(k), power(u, const(k - 1.0))), du)
        # general exponent: u^v = exp(v log u)
        term = add(mul(dv, Call("log", u)), div(mul(v, du), u))
        return mul(e, term)
    raise TypeError(type(e))


def free_names(e: Expr) -> set[str]:
    if isinstance(e, Symbol):
        return {e.name}
    if isinstance(e, (Neg, Call)):
        return free_names(e.arg)
    if isinstance(e, BinOp):
        return free_names(e.left) | free_names(e.right)
    return set()


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace symbols by expressions, folding constants on the way back up."""
    if isinstance(e, Symbol):
        return mapping.get(e.name, e)
    if isinstance(e, Const):
        return e
    if isinstance(e, Neg):
        return neg(substitute(e.arg, mapping))
    if isinstance(e, Call):
        return Call(e.fn, substitute(e.arg, mapping))
    lhs, rhs = substitute(e.left, mapping), substitute(e.right, mapping)
    return {"+": add, "-": sub, "*": mul, "/": div, "^": power}[e.op](lhs, rhs)


# ---------------------------------------------------------------------------
# compilation to Python callables


def _rdiv(a, b):
    if b == 0:
        raise DomainError("division by zero")
    return a / b


def _rlog(x):
    if x <= 0:
        raise DomainError("log of non-positive value")
    return math.log(x)


def _rsqrt(x):
    if x < 0:
        raise DomainError("sqrt of negative value")
    return math.sqrt(x)


def _rpow(a, b):
    return _real_pow(a, b)


def _cdiv(a, b):
    if b == 0:
        raise DomainError("division by zero")
    return a / b


def _clog(z):
    if z.real <= 0:
        raise DomainError("log of non-positive value")
    return cmath.log(z)


def _csqrt(z):
    if z.real < 0:
        raise DomainError("sqrt of negative value")
    return cmath.sqrt(z)


def _cpow(a, b):
    if isinstance(b, complex) and b.imag == 0:
        b = b.real
    if isinstance(b, float) and b.is_integer():
        if a == 0 and b < 0:
            raise DomainError("zero to a negative power")
        return a ** int(b)
    if a.real <= 0:
        raise DomainError("non-positive base with non-integer exponent")
    return cmath.exp(b * cmath.log(a))


_REAL_ENV = {
    "sin": math.sin, "cos": math.cos, "exp": math.exp,
    "log": _rlog, "sqrt": _rsqrt, "_div": _rdiv, "_pow": _rpow,
}
_COMPLEX_ENV = {
    "sin": cmath.sin, "cos": cmath.cos, "exp": cmath.exp,
    "log": _clog, "sqrt": _csqrt, "_div": _cdiv, "_pow": _cpow,
}


def _emit(e: Expr, slots: Mapping[str, str]) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Symbol):
        try:
            return slots[e.name]
        except KeyError:
            raise UnboundNameError(e.name) from None
    if isinstance(e, Neg):
        return f"(-{_emit(e.arg, slots)})"
    if isinstance(e, Call):
        return f"{e.fn}({_emit(e.arg, slots)})"
    lhs, rhs = _emit(e.left, slots), _emit(e.right, slots)
    if e.op in "+-*":
        return f"({lhs}{e.op}{rhs})"
    if e.op == "/":
        return f"_div({lhs},{rhs})"
    k = constant_value(e.right)
    if k is not None and k.is_integer() and k >= 0:
        return f"({lhs}**{int(k)})"
    return f"_pow({lhs},{rhs})"


def compile_exprs(
    exprs: Sequence[Expr],
    variables: Sequence[str],
    params: Mapping[str, float] | None = None,
    complex_mode: bool = False,
) -> Callable[[Sequence[float]], tuple]:
    """Compile ``exprs`` into ``f(values) -> tuple`` over ``variables``.

    Parameters are frozen into the generated code as constants. Names that
    are neither variables nor parameters raise :class:`UnboundNameError` at
    compile time, so a compiled function never looks names up.
    """
    params = dict(params or {})
    slots = {name: f"_v[{i}]" for i, name in enumerate(variables)}
    for name, value in params.items():
        if name not in slots:
            slots[name] = repr(complex(value) if complex_mode else float(value))
    body = ", ".join(_emit(e, slots) for e in exprs)
    src = f"def _f(_v):\n    return ({body}{',' if len(exprs) == 1 else ''})\n"
    env = dict(_COMPLEX_ENV if complex_mode else _REAL_ENV)
    exec(compile(src, "<cofactor_lab.expr_core>", "exec"), env)
    fn = env["_f"]

    def wrapped(values):
        try:
            return fn(values)
        except ZeroDivisionError:
            raise DomainError("division by zero") from None
        except (ValueError, OverflowError) as exc:
            raise DomainError(str(exc)) from None

    wrapped.source = src
    return wrapped


def parse_all(texts: Iterable[str]) -> list[Expr]:
    return [parse_expr(t) for t in texts]
