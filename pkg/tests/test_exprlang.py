from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierisk.errors import (
    ArityError,
    ExprDomainError,
    ExprSyntaxError,
    UnboundVariableError,
    UnknownIdentifierError,
)
from hierisk.exprlang import BinOp, Call, Neg, Num, Var, add_constant, evaluate, parse, to_source, variables


def test_arithmetic_example():
    assert evaluate(parse("1 + 2*x"), {"x": 3}) == 7


@pytest.mark.parametrize("x", [0.0, 0.5, 1.0, 2.0])
def test_max_matches_pos(x):
    assert evaluate(parse("max(1-x, 0)"), {"x": x}) == evaluate(parse("pos(1-x)"), {"x": x})


def test_abs_example():
    assert evaluate(parse("0.3*abs(z)"), {"z": -2}) == pytest.approx(0.6, abs=1e-15)


def test_evaluate_examples():
    assert evaluate(parse("5"), {}) == 5
    assert evaluate(parse("x^2 - y"), {"x": 3, "y": 4}) == 5
    assert evaluate(parse("exp(0)")) == 1


def test_precedence():
    assert evaluate(parse("-2^2")) == -4  # power binds tighter than unary minus
    assert evaluate(parse("2^3^2")) == 512  # right associative
    assert evaluate(parse("2*3+4")) == 10
    assert evaluate(parse("2*(3+4)")) == 14
    assert evaluate(parse("8/4/2")) == 1
    assert evaluate(parse("2^-1")) == 0.5


def test_neg_and_minmax():
    assert evaluate(parse("neg(-3)")) == 3
    assert evaluate(parse("neg(3)")) == 0
    assert evaluate(parse("min(3, 1, 2)")) == 1
    assert evaluate(parse("max(3, 1, 2)")) == 3


def test_vectorised():
    out = evaluate(parse("x^2 + u"), {"x": np.array([1.0, 2.0]), "u": 1.0})
    np.testing.assert_array_equal(out, [2.0, 5.0])


def test_indexed_variables():
    e = parse("x[1] + 2*x[2]")
    assert evaluate(e, {"x": (1.0, 3.0)}) == 7
    assert parse("x") == parse("x[1]")


def test_constants_are_folded():
    e = parse("mu*abs(z)", {"mu": 0.3})
    assert variables(e) == {"z"}
    assert evaluate(e, {"z": 2}) == pytest.approx(0.6)


def test_variables_and_add_constant():
    e = parse("x + t*y")
    assert variables(e) == {"x", "t", "y"}
    assert evaluate(add_constant(e, 2.5), {"x": 1, "t": 0, "y": 0}) == 3.5


@pytest.mark.parametrize(
    "src, offset",
    [("1 + ", 4), ("(1", 2), ("1 $ 2", 2), ("", 0), ("1 2", 2)],
)
def test_syntax_error_offsets(src, offset):
    with pytest.raises(ExprSyntaxError) as info:
        parse(src)
    assert info.value.offset == offset
    assert f"byte offset {offset}" in str(info.value)


def test_offsets_are_bytes():
    with pytest.raises(ExprSyntaxError) as info:
        parse("1 + é")
    assert info.value.offset == 4
    with pytest.raises(ExprSyntaxError) as info:
        parse("(x + 1")
    assert info.value.offset == 6


def test_unknown_identifier_and_arity():
    with pytest.raises(UnknownIdentifierError):
        parse("w + 1")
    with pytest.raises(UnknownIdentifierError):
        parse("tanh(x)")
    with pytest.raises(ArityError):
        parse("exp(1, 2)")
    with pytest.raises(ArityError):
        parse("max(1)")


def test_unbound_and_domain_errors():
    with pytest.raises(UnboundVariableError):
        evaluate(parse("x + 1"), {})
    with pytest.raises(ExprDomainError):
        evaluate(parse("1/x"), {"x": 0.0})
    with pytest.raises(ExprDomainError):
        evaluate(parse("log(x)"), {"x": 0.0})
    with pytest.raises(ExprDomainError):
        evaluate(parse("sqrt(x)"), {"x": -1.0})
    with pytest.raises(ExprDomainError) as info:
        evaluate(parse("log(x)"), {"x": np.array([1.0, 2.0, -1.0])})
    assert info.value.index == 2


def test_pure_evaluation():
    e = parse("exp(x)/3 + sqrt(abs(x))")
    x = np.linspace(-3, 3, 101)
    a = evaluate(e, {"x": x})
    b = evaluate(e, {"x": x})
    assert a.tobytes() == b.tobytes()


def test_tree_shapes():
    assert parse("-x") == Neg(Var("x"))
    assert parse("1+2") == BinOp("+", Num(1.0), Num(2.0))
    assert parse("pos(x)") == Call("pos", (Var("x"),))


# -- round trip ---------------------------------------------------------------------------

_leaf = st.one_of(
    st.sampled_from(["t", "x", "u", "v", "y", "z", "x[2]"]),
    st.floats(min_value=0, max_value=1e6, allow_nan=False).map(repr),
    st.integers(min_value=0, max_value=99).map(str),
)


def _grow(children):
    binop = st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(
        lambda t: f"{t[0]} {t[1]} {t[2]}"
    )
    paren = children.map(lambda c: f"({c})")
    neg = children.map(lambda c: f"-{c}")
    unary_call = st.tuples(st.sampled_from(["abs", "exp", "log", "sqrt", "pos", "neg"]), children).map(
        lambda t: f"{t[0]}({t[1]})"
    )
    nary = st.tuples(st.sampled_from(["min", "max"]), st.lists(children, min_size=2, max_size=3)).map(
        lambda t: f"{t[0]}({', '.join(t[1])})"
    )
    return st.one_of(binop, paren, neg, unary_call, nary)


sources = st.recursive(_leaf, _grow, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(sources)
def test_print_parse_round_trip(src):
    tree = parse(src)
    assert parse(to_source(tree)) == tree


@settings(max_examples=100, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False, min_value=-1e300, max_value=1e300))
def test_number_round_trip(value):
    tree = Num(value)
    again = parse(to_source(tree))
    assert again == tree and math.copysign(1, again.value) == math.copysign(1, value)


def test_signed_literals():
    assert parse("-2") == Num(-2.0)
    assert parse("-(2)") == Neg(Num(2.0))
    assert parse("-2^2") == Neg(BinOp("^", Num(2.0), Num(2.0)))
    assert evaluate(parse("(-2)^2")) == 4
    for src in ("-(2)", "(-2)^2", "1 - -2", "--2", "x^-1", "-x"):
        assert parse(to_source(parse(src))) == parse(src)


def test_folded_negative_constant_round_trip():
    tree = parse("mu*z^mu", {"mu": -0.3})
    assert parse(to_source(tree)) == tree


def test_float_literal_precision():
    assert evaluate(parse(repr(math.pi))) == math.pi
