import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import TRAJECTORY_SYMBOLS, expressions
from delaynoether.parsing import parse_expr
from delaynoether.symexpr import (
    TAU,
    Const,
    DerivationError,
    EvaluationError,
    Func,
    Kind,
    Pow,
    Sym,
    Symbol,
    T,
    compile_expr,
    ddq,
    dq,
    evaluate,
    free_symbols,
    is_zero,
    p,
    partial,
    polynomial_degree,
    q,
    shift,
    simplify,
    total_time_derivative,
    u,
)

X = parse_expr
PROPS = settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def test_symbol_names():
    assert q(1).name == "q1"
    assert dq(1, -1).name == "dq1_tau"
    assert dq(2, 1).name == "dq2_adv"
    assert q(1, -2).name == "q1_tau2"
    assert T.name == "t" and TAU.name == "tau"


def test_time_symbol_carries_no_offset():
    with pytest.raises(ValueError):
        Symbol(Kind.TIME, offset=1)
    with pytest.raises(ValueError):
        Symbol(Kind.STATE)


# partial ------------------------------------------------------------------


def test_partial_example1_slot():
    assert partial(X("(dq1 + dq1_tau)^2"), dq(1)) == simplify(X("2*(dq1 + dq1_tau)"))


def test_partial_constant_and_product():
    assert partial(Const(7), q(1)) == Const(0)
    assert partial(X("q1*dq1"), q(1)) == Sym(dq(1))


def test_partial_of_functions_and_negative_powers():
    assert partial(X("sin(q1)"), q(1)) == X("cos(q1)")
    assert partial(X("1/q1"), q(1)) == simplify(X("-1/q1^2"))
    assert partial(X("log(q1)"), q(1)) == simplify(X("q1^-1"))


# shift --------------------------------------------------------------------


def test_shift_moves_offsets():
    assert shift(Sym(dq(1, -1)), 1) == Sym(dq(1))
    got = simplify(shift(X("2*(dq1 + dq1_tau)"), 1))
    assert got == simplify(X("2*(dq1_adv + dq1)"))


def test_shift_replaces_time_arithmetically():
    assert simplify(shift(X("t*q1"), 1)) == simplify(X("(t + tau)*q1_adv"))


# total derivative ----------------------------------------------------------


def test_total_derivative_examples():
    assert total_time_derivative(X("q1")) == Sym(dq(1))
    assert total_time_derivative(X("(dq1 + dq1_tau)^2")) == simplify(X("2*(dq1 + dq1_tau)*(ddq1 + ddq1_tau)"))
    assert total_time_derivative(X("t*q1")) == simplify(X("q1 + t*dq1"))
    assert total_time_derivative(X("tau*q1")) == simplify(X("tau*dq1"))


def test_total_derivative_rejects_second_derivatives_and_controls():
    with pytest.raises(DerivationError):
        total_time_derivative(Sym(ddq(1)))
    with pytest.raises(DerivationError):
        total_time_derivative(Sym(u(1)))
    with pytest.raises(DerivationError):
        total_time_derivative(Sym(p(1)))


# simplify -----------------------------------------------------------------


def test_simplify_rules():
    assert simplify(X("q1 - q1")) == Const(0)
    assert simplify(X("1*dq1 + 0")) == Sym(dq(1))
    assert simplify(X("(q1 + 1)*(q1 - 1)")) == simplify(X("q1^2 - 1"))
    assert simplify(X("q1/q1")) == Const(1)
    assert simplify(X("sin(0) + cos(0) + exp(0) + log(1)")) == Const(2)
    assert simplify(X("2/4 + 1/4")) == Const(Fraction(3, 4))


def test_simplify_keeps_rationals_exact():
    e = simplify(X("1/3 + 1/3 + 1/3 - q1 + q1"))
    assert e == Const(1)


def test_polynomial_degree():
    assert polynomial_degree(X("(dq1 + dq1_tau)^2")) == 2
    assert polynomial_degree(X("q1^3*dq1")) == 4
    assert polynomial_degree(X("sin(q1)")) is None
    assert polynomial_degree(X("1/q1")) is None


def test_is_zero():
    assert is_zero(X("(q1+dq1)^2 - q1^2 - 2*q1*dq1 - dq1^2"))
    assert not is_zero(X("q1"))


# evaluation ---------------------------------------------------------------


def test_evaluate_examples():
    assert evaluate(X("dq1 + dq1_tau"), {dq(1): 1, dq(1, -1): -1}) == 0
    assert evaluate(X("(dq1 + dq1_tau)^2"), {dq(1): 2, dq(1, -1): 1}) == 9
    assert evaluate(X("t*q1"), {T: 2, q(1): 3}) == 6


def test_evaluate_errors_name_the_symbol():
    with pytest.raises(EvaluationError, match="dq1_tau"):
        evaluate(X("dq1 + dq1_tau"), {dq(1): 1.0})
    with pytest.raises(EvaluationError):
        evaluate(X("log(q1)"), {q(1): -1.0})
    with pytest.raises(EvaluationError):
        evaluate(X("1/q1"), {q(1): 0.0})


def test_compile_matches_evaluate():
    e = X("sin(q1)*dq1_tau^2 - exp(t)/(1 + q1^2)")
    rng = np.random.default_rng(0)
    vals = {s: rng.uniform(-1, 1, 5) for s in free_symbols(e)}
    got = compile_expr(e)(vals)
    for i in range(5):
        assert got[i] == pytest.approx(evaluate(e, {s: v[i] for s, v in vals.items()}), rel=1e-14)


# properties ---------------------------------------------------------------

nonconst = st.sampled_from(TRAJECTORY_SYMBOLS)
shifts = st.integers(-1, 1)


@PROPS
@given(expressions(), shifts, shifts)
def test_shift_group_action(e, a, b):
    assert shift(e, 0) == e
    assert simplify(shift(shift(e, a), b)) == simplify(shift(e, a + b))


@PROPS
@given(expressions(), expressions(), nonconst, st.integers(-3, 3), st.integers(-3, 3))
def test_partial_linearity(e1, e2, s, a, b):
    lhs = partial(a * e1 + b * e2, s)
    rhs = simplify(a * partial(e1, s) + b * partial(e2, s))
    assert lhs == rhs


@PROPS
@given(expressions(), nonconst, shifts)
def test_shift_commutes_with_partial(e, s, k):
    assert simplify(shift(partial(e, s), k)) == partial(shift(e, k), s.shifted(k))


@PROPS
@given(expressions(), shifts)
def test_total_derivative_commutes_with_shift(e, k):
    assert simplify(shift(total_time_derivative(e), k)) == total_time_derivative(shift(e, k))


@PROPS
@given(expressions(), expressions())
def test_total_derivative_product_rule(e1, e2):
    D = total_time_derivative
    assert D(e1 * e2) == simplify(D(e1) * e2 + e1 * D(e2))


@PROPS
@given(expressions(), st.sampled_from(["sin", "cos", "exp"]), st.integers(2, 4))
def test_total_derivative_chain_rule(e, f, n):
    D = total_time_derivative
    outer = {"sin": Func("cos", e), "cos": -Func("sin", e), "exp": Func("exp", e)}[f]
    assert D(Func(f, e)) == simplify(outer * D(e))
    assert D(Pow(e, n)) == simplify(n * Pow(e, n - 1) * D(e))


@PROPS
@given(expressions())
def test_simplify_idempotent(e):
    once = simplify(e)
    assert simplify(once) == once


def _synthetic(s, t, tau=0.7):
    """Smooth trajectory q1 = sin(1.3 t), q2 = cos(0.4 t) + t^2/5 and derivatives."""
    at = t + s.offset * tau
    funcs = {
        (Kind.STATE, 1): lambda x: math.sin(1.3 * x),
        (Kind.STATE_DOT, 1): lambda x: 1.3 * math.cos(1.3 * x),
        (Kind.STATE_DDOT, 1): lambda x: -1.69 * math.sin(1.3 * x),
        (Kind.STATE, 2): lambda x: math.cos(0.4 * x) + x * x / 5,
        (Kind.STATE_DOT, 2): lambda x: -0.4 * math.sin(0.4 * x) + 2 * x / 5,
        (Kind.STATE_DDOT, 2): lambda x: -0.16 * math.cos(0.4 * x) + 2 / 5,
    }
    if s == T:
        return t
    if s == TAU:
        return tau
    return funcs[(s.kind, s.index)](at)


@PROPS
@given(expressions(funcs=("sin", "cos")), st.floats(-1, 1))
def test_total_derivative_matches_finite_difference(e, t0):
    de = total_time_derivative(e)

    def along(expr, t):
        return evaluate(expr, {s: _synthetic(s, t) for s in free_symbols(expr) | {T}})

    step = 1e-5
    fd = (along(e, t0 + step) - along(e, t0 - step)) / (2 * step)
    exact = along(de, t0)
    assert abs(fd - exact) <= 1e-6 * max(1.0, abs(exact))
