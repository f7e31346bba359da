import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cofactor_lab.expr_core import (BinOp, Const, DomainError, ExprSyntaxError, Symbol,
                                    UnboundNameError, UnknownFunctionError, compile_exprs,
                                    diff_expr, eval_expr, free_names, parse_expr, substitute,
                                    to_string)

NAMES = ["x", "y", "c"]


def _safe_call(fn, arg):
    # keep every generated expression inside its domain
    if fn == "log":
        return f"log(1 + ({arg})^2)"
    if fn == "sqrt":
        return f"sqrt(2 + sin({arg}))"
    if fn == "exp":
        return f"exp(sin({arg}))"
    return f"{fn}({arg})"


leaves = st.one_of(st.sampled_from(NAMES),
                   st.floats(0.1, 5.0, allow_nan=False).map(lambda v: f"{v:.3g}"))

expr_text = st.recursive(
    leaves,
    lambda sub: st.one_of(
        st.tuples(sub, st.sampled_from(["+", "-", "*"]), sub).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(sub, sub).map(lambda t: f"({t[0]}) / (2 + sin({t[1]}))"),
        st.tuples(sub, st.integers(0, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "log", "sqrt"]), sub).map(
            lambda t: _safe_call(*t)),
        sub.map(lambda s: f"-({s})"),
    ),
    max_leaves=8,
)

points = st.fixed_dictionaries({n: st.floats(-1.5, 1.5, allow_nan=False) for n in NAMES})


def test_grammar_tree():
    e = parse_expr("c1*x^2/2")
    assert e == BinOp("/", BinOp("*", Symbol("c1"), BinOp("^", Symbol("x"), Const(2.0))), Const(2.0))


def test_power_is_right_associative_and_binds_tighter_than_minus():
    b = {"x": 2.0}
    assert eval_expr(parse_expr("x^3^2"), b) == 2.0 ** 9
    assert eval_expr(parse_expr("-x^2"), b) == -4.0


@pytest.mark.parametrize("text, value", [
    ("1 + 2*3", 7.0), ("(1 + 2)*3", 9.0), ("8/4/2", 1.0), ("2^-1", 0.5),
    ("sqrt(16) + exp(0) + log(1) + sin(0) + cos(0)", 6.0), ("1e-3*1000", 1.0),
])
def test_constant_evaluation(text, value):
    assert eval_expr(parse_expr(text), {}) == pytest.approx(value, abs=1e-15)


def test_syntax_error_reports_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("x + * 2")
    assert info.value.offset == 4


def test_unknown_function():
    with pytest.raises(UnknownFunctionError):
        parse_expr("tan(x)")


def test_missing_binding_is_an_error():
    with pytest.raises(UnboundNameError):
        eval_expr(parse_expr("x + z"), {"x": 1.0})


@pytest.mark.parametrize("text, b", [("1/x", {"x": 0.0}), ("log(x)", {"x": -1.0}),
                                     ("sqrt(x)", {"x": -4.0})])
def test_domain_errors(text, b):
    with pytest.raises(DomainError):
        eval_expr(parse_expr(text), b)


def test_compiled_domain_error():
    fn = compile_exprs([parse_expr("1/x")], ["x"])
    with pytest.raises(DomainError):
        fn([0.0])


def test_compile_rejects_unbound_names():
    with pytest.raises(UnboundNameError):
        compile_exprs([parse_expr("x + z")], ["x"])


def test_known_derivatives():
    d = diff_expr(parse_expr("a*y^2*x + c1*x^2/2"), "x")
    b = {"a": 1.5, "y": 2.0, "x": -0.5, "c1": 3.0}
    assert eval_expr(d, b) == pytest.approx(1.5 * 4.0 + 3.0 * -0.5)
    d = diff_expr(parse_expr("sin(x)*exp(y^2)"), "y")
    assert eval_expr(d, {"x": 0.3, "y": 0.7}) == pytest.approx(math.sin(0.3) * 2 * 0.7 * math.exp(0.49))


def test_substitute_and_free_names():
    e = substitute(parse_expr("q1*q2 + c"), {"q1": parse_expr("y + x"), "q2": parse_expr("x")})
    assert free_names(e) == {"x", "y", "c"}
    assert eval_expr(e, {"x": 2.0, "y": 1.0, "c": 0.5}) == pytest.approx(6.5)


@settings(max_examples=150, deadline=None)
@given(expr_text)
def test_print_parse_round_trip(text):
    e = parse_expr(text)
    again = parse_expr(to_string(e))
    assert again == e
    assert to_string(again) == to_string(e)


@settings(max_examples=100, deadline=None)
@given(expr_text, points, st.sampled_from(NAMES))
def test_derivative_matches_finite_difference(text, b, var):
    e = parse_expr(text)
    d = eval_expr(diff_expr(e, var), b)
    h = 1e-5

    def f(v):
        bb = dict(b)
        bb[var] = v
        return eval_expr(e, bb)

    x0 = b[var]
    fd = (f(x0 - 2 * h) - 8 * f(x0 - h) + 8 * f(x0 + h) - f(x0 + 2 * h)) / (12 * h)
    assert abs(d - fd) <= 1e-6 * max(1.0, abs(fd))


@settings(max_examples=60, deadline=None)
@given(expr_text, expr_text, st.floats(-3, 3), points)
def test_derivative_is_linear(t1, t2, k, b):
    e1, e2 = parse_expr(t1), parse_expr(t2)
    lhs = eval_expr(diff_expr(e1 + k * e2, "x"), b)
    rhs = eval_expr(diff_expr(e1, "x"), b) + k * eval_expr(diff_expr(e2, "x"), b)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(expr_text, points)
def test_compiled_matches_interpreter(text, b):
    e = parse_expr(text)
    fn = compile_exprs([e], NAMES)
    v = fn([b[n] for n in NAMES])[0]
    assert v == pytest.approx(eval_expr(e, b), rel=1e-12, abs=1e-12)
    cfn = compile_exprs([e], NAMES, complex_mode=True)
    z = cfn([complex(b[n]) for n in NAMES])[0]
    assert np.real(z) == pytest.approx(v, rel=1e-12, abs=1e-12)
