import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relosc.dsl import DSLSyntaxError, FieldEvaluationError, parse_field
from oracles import central_difference


def at(field, t, *x):
    v, g = field.value_and_grad(np.array([t]), np.array([x], float))
    return float(v[0]), g[0]


def test_square():
    v, g = at(parse_field("x1^2", 1), 0.0, 3.0)
    assert v == 9.0 and g[0] == 6.0


def test_cosine_at_zero():
    v, g = at(parse_field("cos(x1)", 1), 0.0, 0.0)
    assert v == 1.0 and g[0] == 0.0


def test_time_and_two_variables():
    v, g = at(parse_field("sin(t)*x1 + x2^2", 2), math.pi / 2, 2.0, 3.0)
    assert v == pytest.approx(11.0, abs=1e-14)
    np.testing.assert_allclose(g, [1.0, 6.0], atol=1e-14)


def test_precedence_and_unary_minus():
    f = parse_field("-x1^2 + 2*3 - 4/2", 1)
    assert at(f, 0, 3.0)[0] == pytest.approx(-9 + 6 - 2)
    assert at(parse_field("2^-1", 1), 0, 0.0)[0] == 0.5
    assert at(parse_field("pi", 1), 0, 0.0)[0] == pytest.approx(math.pi)


@pytest.mark.parametrize("src", ["x1 +", "x1 ** 2", "foo(x1)", "y", "x3", "(x1", "x1)", "sin x1", ""])
def test_syntax_errors(src):
    with pytest.raises(DSLSyntaxError) as exc:
        parse_field(src, 2)
    assert exc.value.position >= 0


def test_error_position_points_at_end():
    with pytest.raises(DSLSyntaxError) as exc:
        parse_field("x1 +", 1)
    assert exc.value.position == 4


@pytest.mark.parametrize("src,x", [("1/x1", 0.0), ("sqrt(x1)", -1.0), ("x1^0.5", -2.0), ("x1^-1", 0.0)])
def test_domain_faults(src, x):
    with pytest.raises(FieldEvaluationError):
        parse_field(src, 1).value_and_grad(np.zeros(1), np.array([[x]]))


def test_abs_uses_sign_subgradient_at_zero():
    v, g = parse_field("abs(x1)", 1).value_and_grad(np.zeros(1), np.zeros((1, 1)))
    assert v[0] == 0.0 and g[0, 0] == 0.0


def test_flags():
    assert parse_field("0", 1).is_zero
    assert not parse_field("x1", 1).is_zero
    assert parse_field("t*x1", 1).uses_t and not parse_field("x1", 1).uses_t


def test_dimension_bounds():
    with pytest.raises(ValueError):
        parse_field("x1", 17)


SMOOTH = ["x1^2*x2 - sin(t*x1)", "exp(x1/3)*cos(x2) + sqrt(1 + x1^2)", "(x1 - x2)^3 / (2 + cos(t))",
          "abs(x1 - 5) * x2^4", "x1^-2 + x2"]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(SMOOTH), st.floats(0, 1), st.floats(0.5, 2), st.floats(-2, 2))
def test_gradient_matches_finite_differences(src, t, x1, x2):
    f = parse_field(src, 2)
    x = np.array([x1, x2])
    _, g = at(f, t, *x)
    fd = central_difference(lambda y: float(f.value(np.array([t]), y[None, :])[0]), x)
    scale = max(1.0, np.abs(fd).max())
    assert np.max(np.abs(g - fd)) <= 1e-5 * scale


def test_vectorized_matches_pointwise():
    f = parse_field("sin(t)*x1 + x2^3", 2)
    rng = np.random.default_rng(1)
    t, x = rng.uniform(size=7), rng.normal(size=(7, 2))
    v, g = f.value_and_grad(t, x)
    for i in range(7):
        vi, gi = at(f, t[i], *x[i])
        assert v[i] == vi and np.array_equal(g[i], gi)
