import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stable_sde import expr
from stable_sde.expr import BinOp, Call, ExpressionError, Neg, Num, Var, parse_entry_expression
from stable_sde.field import MatrixField, evaluate_compiled


def ev(text, x):
    return expr.evaluate(parse_entry_expression(text), np.asarray(x, dtype=float))


def test_examples():
    assert ev("1 + 0.1*sin(x1)", [0.0]) == 1.0
    assert ev("min(2, exp(x2))", [5.0, 0.0]) == 1.0


def test_precedence_and_associativity():
    assert ev("1 + 2*3", [0]) == 7.0
    assert ev("(1 + 2)*3", [0]) == 9.0
    assert ev("1 - 2 - 3", [0]) == -4.0
    assert ev("-x1*x2", [2.0, 3.0]) == -6.0
    assert ev("--x1", [2.0]) == 2.0
    assert ev("max(x1, -x1) - abs(x1)", [-3.5]) == 0.0
    assert ev("2.5e-1 + .5", [0]) == 0.75


@pytest.mark.parametrize("text,fragment", [
    ("1/x1", "division"),
    ("x1^2", "powers"),
    ("foo(x1)", "unknown identifier"),
    ("y", "unknown identifier"),
    ("sin(x1", "expected ')'"),
    ("1 +", "unexpected end"),
    ("min(1)", "takes 2"),
    ("1 $ 2", "unexpected character"),
    ("", "empty"),
    ("   ", "empty"),
])
def test_errors(text, fragment):
    with pytest.raises(ExpressionError) as exc:
        parse_entry_expression(text)
    assert fragment in str(exc.value)


def test_error_position_points_at_offending_token():
    with pytest.raises(ExpressionError) as exc:
        parse_entry_expression("1 + x1/2")
    assert exc.value.position == 6


def test_dimension_bound():
    with pytest.raises(ExpressionError, match="exceeds dimension"):
        parse_entry_expression("x3", 2)
    assert parse_entry_expression("x2", 2) == Var(2)


def test_substitute_scaled():
    node = expr.substitute_scaled(parse_entry_expression("sin(x1)"), 0.5)
    assert expr.evaluate(node, np.array([math.pi])) == pytest.approx(1.0, abs=1e-15)


def test_variables():
    assert expr.variables(parse_entry_expression("x1*sin(x3) + 2")) == {1, 3}


# --- property tests ---------------------------------------------------------------

_leaf = st.one_of(
    st.floats(0.0, 10.0, allow_nan=False).map(Num),
    st.integers(1, 3).map(Var),
)


def _extend(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from(["+", "-", "*"]), children, children).map(lambda t: BinOp(*t)),
        st.tuples(st.sampled_from(["sin", "cos", "abs"]), children).map(lambda t: Call(t[0], (t[1],))),
        st.tuples(st.sampled_from(["min", "max"]), children, children)
        .map(lambda t: Call(t[0], (t[1], t[2]))),
    )


nodes = st.recursive(_leaf, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(nodes)
def test_print_parse_fixed_point(node):
    text = expr.to_text(node)
    again = parse_entry_expression(text)
    assert again == node
    assert expr.to_text(again) == text


@settings(max_examples=150, deadline=None)
@given(nodes, st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_compiled_evaluator_agrees_with_tree(node, x):
    zero = Num(0.0)
    field = MatrixField(3, ((node, zero, zero), (zero, Num(1.0), zero), (zero, zero, Num(1.0))),
                        ((-10.0, 10.0),) * 3)
    got = evaluate_compiled(field, np.array([x]))[0, 0, 0]
    want = float(expr.evaluate(node, np.array(x)))
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(nodes, st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_evaluation_deterministic(node, x):
    a = expr.evaluate(node, np.array(x))
    b = expr.evaluate(node, np.array(x))
    assert np.array_equal(a, b)
