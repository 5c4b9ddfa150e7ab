from __future__ import annotations

import numpy as np
import pytest
import sympy as sym

from obstacle_afem.exceptions import ProblemDefinitionError
from obstacle_afem.services.benchmark_service import radial_value
from obstacle_afem.utils import expressions


@pytest.mark.parametrize("text", ["x + z", "sin(x)", "x +* y"])
def test_parse_rejects_outside_grammar(text):
    with pytest.raises(ProblemDefinitionError):
        expressions.parse(text)


def test_piecewise_matches_radial_solution():
    expr = expressions.parse("Piecewise((r**2/2 - ln(r) - 1/2, r >= 1), (0, True))")
    field = expressions.compile_scalar(expr, 0.1)
    x = np.array([0.0, 0.5, 1.0, 0.9, -1.0])
    y = np.array([0.0, 0.5, 0.0, 0.9, 1.0])
    assert np.allclose(field(x, y), radial_value(x, y))


def test_constant_expression_broadcasts():
    field = expressions.compile_scalar(expressions.parse("2*eps"), 0.25)
    values = field(np.zeros((3, 4)), np.zeros((3, 4)))
    assert values.shape == (3, 4)
    assert np.all(values == 0.5)
    assert field.constant_value == pytest.approx(0.5)


def test_compile_gradient():
    gradient = expressions.compile_gradient(expressions.parse("x**2*y + eps*y"), 0.5)
    assert np.allclose(gradient(np.array([1.0]), np.array([2.0])), [[4.0, 1.5]])


def test_optional_obstacle():
    assert expressions.compile_optional(None, 0.1) is None
    assert expressions.compile_optional("oo", 0.1) is None
    assert expressions.compile_optional("Min(x, y)", 0.1)(np.array([1.0]), np.array([-2.0]))[0] == -2.0


def test_radial_force_is_consistent_with_exact_solution():
    value = expressions.parse("r**2/2 - ln(r) - 1/2")
    force = expressions.parse("-2*eps**2 + r**2/2 - ln(r) - 1/2")
    assert expressions.residual(value, force) == 0
    assert expressions.residual(value, value) == sym.simplify(-2 * expressions.eps**2)
