"""
Small expression grammar for problem descriptors.

Accepted: numbers, + - * / **, exp, ln (log), sqrt, Abs, Min, Max,
Piecewise((expr, predicate), ..., (expr, True)), comparisons joined with
& and |, the symbols x, y, r = sqrt(x^2 + y^2) and eps, and oo for an
absent bound.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np
import sympy as sym

from ..exceptions import ProblemDefinitionError

x, y, eps = sym.symbols("x y eps", real=True)
r = sym.sqrt(x**2 + y**2)

NAMESPACE = {
    "x": x,
    "y": y,
    "r": r,
    "eps": eps,
    "exp": sym.exp,
    "ln": sym.log,
    "log": sym.log,
    "sqrt": sym.sqrt,
    "Abs": sym.Abs,
    "Min": sym.Min,
    "Max": sym.Max,
    "Piecewise": sym.Piecewise,
    "oo": sym.oo,
    "pi": sym.pi,
}

_ALLOWED_FUNCTIONS = (sym.exp, sym.log, sym.Abs, sym.Min, sym.Max, sym.Piecewise)


def parse(text: str) -> sym.Expr:
    """Parse and validate one expression."""
    try:
        expr = sym.sympify(text, locals=NAMESPACE)
    except (sym.SympifyError, SyntaxError, TypeError) as exc:
        raise ProblemDefinitionError(f"cannot parse expression '{text}'", {"error": str(exc)}) from exc

    unknown = expr.free_symbols - {x, y, eps}
    if unknown:
        raise ProblemDefinitionError(
            f"unknown symbols in '{text}'", {"symbols": sorted(str(s) for s in unknown)}
        )
    for fn in expr.atoms(sym.Function):
        if not isinstance(fn, _ALLOWED_FUNCTIONS):
            raise ProblemDefinitionError(f"function '{fn.func}' is not part of the grammar", {"expression": text})
    return expr


def is_infinite(expr: sym.Expr) -> bool:
    return expr in (sym.oo, -sym.oo)


def _vectorize(fn: Callable, shape_of: Callable) -> Callable:
    def _field(xv, yv):
        xv = np.asarray(xv, dtype=float)
        yv = np.asarray(yv, dtype=float)
        with np.errstate(all="ignore"):
            values = np.asarray(fn(xv, yv), dtype=float)
        return np.broadcast_to(values, shape_of(xv, yv)).copy()

    return _field


def compile_scalar(expr: sym.Expr, eps_value: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """numpy field f(x, y) with eps substituted."""
    bound = expr.subs(eps, eps_value)
    fn = sym.lambdify((x, y), bound, "numpy")
    field = _vectorize(fn, lambda xv, yv: np.broadcast(xv, yv).shape)
    if bound.is_number:
        field.constant_value = float(bound)
    return field


def compile_gradient(expr: sym.Expr, eps_value: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """numpy field returning (..., 2) with the symbolic gradient."""
    bound = expr.subs(eps, eps_value)
    dx = compile_scalar(sym.diff(bound, x), eps_value)
    dy = compile_scalar(sym.diff(bound, y), eps_value)

    def _gradient(xv, yv):
        return np.stack([dx(xv, yv), dy(xv, yv)], axis=-1)

    return _gradient


def compile_optional(text: Optional[str], eps_value: float):
    """None for an absent or infinite expression, else the compiled field."""
    if text is None:
        return None
    expr = parse(text)
    if is_infinite(expr):
        return None
    return compile_scalar(expr, eps_value)


def residual(value: sym.Expr, force: sym.Expr) -> sym.Expr:
    """Strong residual -eps^2 Lap value + value - force."""
    return sym.simplify(-(eps**2) * (sym.diff(value, x, 2) + sym.diff(value, y, 2)) + value - force)
