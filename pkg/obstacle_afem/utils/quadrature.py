"""
Quadrature rules on the reference triangle and on edges.

Triangle rules use barycentric points and weights normalized to sum to 1,
so that the integral over a physical element is ``area * sum(w * f(x_q))``.
Edge rules use parameters in [0, 1] with weights summing to 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadratureRule:
    name: str
    points: np.ndarray  # (Q, 3) barycentric
    weights: np.ndarray  # (Q,)
    degree: int

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def physical_points(self, vertices: np.ndarray) -> np.ndarray:
        """(M, Q, 2) points for element vertex coordinates of shape (M, 3, 2)."""
        return np.einsum("qi,mid->mqd", self.points, vertices)


@dataclass(frozen=True)
class EdgeRule:
    name: str
    points: np.ndarray  # (Q,) in [0, 1]
    weights: np.ndarray  # (Q,)
    degree: int

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def physical_points(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """(E, Q, 2) points on segments from ``a`` to ``b``."""
        t = self.points[None, :, None]
        return (1.0 - t) * a[:, None, :] + t * b[:, None, :]


def _centroid_rule() -> QuadratureRule:
    return QuadratureRule("centroid", np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]), 1)


def _midpoint_rule() -> QuadratureRule:
    points = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
    return QuadratureRule("midpoint3", points, np.full(3, 1 / 3), 2)


def _seven_point_rule() -> QuadratureRule:
    s15 = np.sqrt(15.0)
    a1, b1 = (6.0 - s15) / 21.0, (9.0 + 2.0 * s15) / 21.0
    a2, b2 = (6.0 + s15) / 21.0, (9.0 - 2.0 * s15) / 21.0
    w1, w2 = (155.0 - s15) / 1200.0, (155.0 + s15) / 1200.0
    points = np.array(
        [
            [1 / 3, 1 / 3, 1 / 3],
            [b1, a1, a1],
            [a1, b1, a1],
            [a1, a1, b1],
            [b2, a2, a2],
            [a2, b2, a2],
            [a2, a2, b2],
        ]
    )
    weights = np.array([9 / 40, w1, w1, w1, w2, w2, w2])
    return QuadratureRule("seven_point", points, weights, 5)


_TRIANGLE_RULES = {
    1: _centroid_rule,
    2: _midpoint_rule,
    5: _seven_point_rule,
}


@lru_cache(maxsize=None)
def triangle_rule(degree: int = 5) -> QuadratureRule:
    """Cheapest registered rule exact for polynomials of the given degree."""
    for d in sorted(_TRIANGLE_RULES):
        if d >= degree:
            return _TRIANGLE_RULES[d]()
    raise ValueError(f"no triangle rule of degree {degree}")


@lru_cache(maxsize=None)
def edge_rule(points: int = 4) -> EdgeRule:
    """Gauss-Legendre rule with ``points`` nodes mapped to [0, 1]."""
    if not 1 <= points <= 5:
        raise ValueError("edge rules have 1 to 5 points")
    x, w = np.polynomial.legendre.leggauss(points)
    return EdgeRule(f"gauss{points}", 0.5 * (x + 1.0), 0.5 * w, 2 * points - 1)


def subdivide(rule: QuadratureRule, levels: int = 1) -> QuadratureRule:
    """Composite rule on the 4**levels red sub-triangles of the reference element."""
    corners = [np.eye(3)]
    for _ in range(levels):
        children = []
        for c in corners:
            m01, m12, m20 = 0.5 * (c[0] + c[1]), 0.5 * (c[1] + c[2]), 0.5 * (c[2] + c[0])
            children += [
                np.array([c[0], m01, m20]),
                np.array([m01, c[1], m12]),
                np.array([m20, m12, c[2]]),
                np.array([m12, m20, m01]),
            ]
        corners = children
    points = np.vstack([rule.points @ c for c in corners])
    weights = np.concatenate([rule.weights / len(corners)] * len(corners))
    return QuadratureRule(f"{rule.name}x{len(corners)}", points, weights, rule.degree)


def verify_exactness(rule: QuadratureRule) -> bool:
    """Check the rule against all monomials l1^a l2^b up to its degree.

    Uses the closed form  int_T l1^a l2^b l3^c = 2|T| a! b! c! / (a+b+c+2)!.
    """
    l1, l2 = rule.points[:, 0], rule.points[:, 1]
    for total in range(rule.degree + 1):
        for a in range(total + 1):
            b = total - a
            exact = 2.0 * factorial(a) * factorial(b) / factorial(a + b + 2)
            approx = float(np.sum(rule.weights * l1**a * l2**b))
            if abs(approx - exact) > 1e-13 * max(1.0, abs(exact)):
                logger.warning("Rule %s fails for l1^%d l2^%d: %.3e vs %.3e", rule.name, a, b, approx, exact)
                return False
    return True


def verify_edge_exactness(rule: EdgeRule) -> bool:
    for k in range(rule.degree + 1):
        if abs(float(np.sum(rule.weights * rule.points**k)) - 1.0 / (k + 1)) > 1e-13:
            return False
    return True


__all__ = [
    "QuadratureRule",
    "EdgeRule",
    "triangle_rule",
    "edge_rule",
    "subdivide",
    "verify_exactness",
    "verify_edge_exactness",
]
