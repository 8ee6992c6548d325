import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stickylab.funcspec import (
    BinOp,
    Call,
    DomainError,
    ExprSyntaxError,
    Neg,
    Num,
    UnknownIdentifierError,
    Var,
    parse,
    to_text,
)


def test_literal():
    f = parse("0.3", "t")
    assert f.tree == Num(0.3)
    assert f.is_constant
    assert f(7.0) == 0.3


def test_reciprocal_at_one():
    assert parse("1/(1+u)", "u")(1.0) == 0.5


def test_unknown_identifier_is_named():
    with pytest.raises(UnknownIdentifierError, match='"q"'):
        parse("0.5*exp(-t)+q", "t")


def test_unknown_function():
    with pytest.raises(UnknownIdentifierError, match="sin"):
        parse("sin(t)", "t")


def test_power_and_max():
    assert parse("t^2", "t")(3.0) == 9.0
    assert parse("max(0, t-1)", "t")(0.5) == 0.0


def test_division_by_zero_is_a_domain_error():
    with pytest.raises(DomainError):
        parse("1/t", "t")(0.0)


@pytest.mark.parametrize("text", ["sqrt(t-2)", "(t-2)^0.5", "exp(t*1000)"])
def test_other_domain_errors(text):
    with pytest.raises(DomainError):
        parse(text, "t")(1.0)


@pytest.mark.parametrize(
    "text, pos",
    [("", 0), ("1+", 2), ("(t", 2), ("t $ 2", 2), ("min(t)", 0), ("exp(t, t)", 0), ("2 t", 2)],
)
def test_syntax_errors_carry_a_position(text, pos):
    with pytest.raises(ExprSyntaxError) as err:
        parse(text, "t")
    assert err.value.position == pos


def test_precedence():
    # ^ binds tighter than unary minus, which binds tighter than * and /
    assert parse("-t^2", "t")(3.0) == -9.0
    assert parse("2^-1", "t")(0.0) == 0.5
    assert parse("2^3^2", "t")(0.0) == 512.0
    assert parse("8/4/2", "t")(0.0) == 1.0
    assert parse("1-2-3", "t")(0.0) == -4.0
    assert parse("2*-t", "t")(3.0) == -6.0


def test_exponent_literals():
    assert parse("1.5e-3*t", "t")(2.0) == 3e-3
    assert parse(".5", "t")(0.0) == 0.5


def test_array_evaluation_matches_scalar():
    f = parse("0.5*min(1, t) + sqrt(t)/(1+exp(-t))", "t")
    ts = np.linspace(0.0, 2.0, 17)
    assert np.array_equal(f(ts), np.array([f(float(t)) for t in ts]))


def test_constant_broadcasts_over_arrays():
    out = parse("0.25", "t")(np.zeros(5))
    assert out.shape == (5,) and np.all(out == 0.25)


def test_array_domain_error():
    with pytest.raises(DomainError):
        parse("1/u", "u")(np.linspace(0.0, 1.0, 5))


# random well-formed trees

_leaves = st.one_of(
    st.floats(min_value=0.0, max_value=1e6, allow_nan=False, allow_infinity=False).map(Num),
    st.just(Var("t")),
)


def _extend(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from("+-*/^"), children, children).map(lambda a: BinOp(*a)),
        st.tuples(st.sampled_from(["exp", "sqrt"]), children).map(lambda a: Call(a[0], (a[1],))),
        st.tuples(st.sampled_from(["min", "max"]), st.lists(children, min_size=2, max_size=3)).map(
            lambda a: Call(a[0], tuple(a[1]))
        ),
    )


trees = st.recursive(_leaves, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_print_parse_round_trip(tree):
    text = to_text(tree)
    again = parse(text, "t").tree
    assert again == tree
    assert to_text(again) == text


@settings(max_examples=200, deadline=None)
@given(trees, st.floats(min_value=-3.0, max_value=3.0))
def test_evaluation_is_deterministic(tree, t):
    f = parse(to_text(tree), "t")

    def value():
        try:
            return f(t)
        except DomainError:
            return "domain"

    a, b = value(), value()
    assert a == b or (isinstance(a, float) and math.isnan(a) and math.isnan(b))
