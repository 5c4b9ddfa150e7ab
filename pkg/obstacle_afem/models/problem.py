"""
Problem data and problem definitions.

Scalar fields are callables ``field(x, y)`` taking and returning numpy
arrays of equal shape. The internal form is always the upper obstacle
problem ``psi <= g``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np

from ..exceptions import ProblemDefinitionError
from .mesh import Mesh

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]
VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]  # returns (..., 2)
Predicate = Callable[[np.ndarray, np.ndarray], np.ndarray]


def constant(value: float) -> ScalarField:
    def _field(x, y):
        return np.full(np.shape(x), float(value))

    _field.constant_value = float(value)
    return _field


def evaluate(fn: ScalarField, points: np.ndarray) -> np.ndarray:
    """Evaluate a field at points of shape (..., 2)."""
    values = fn(points[..., 0], points[..., 1])
    return np.broadcast_to(np.asarray(values, dtype=float), points.shape[:-1]).copy()


def negate(fn: ScalarField) -> ScalarField:
    def _field(x, y):
        return -np.asarray(fn(x, y), dtype=float)

    return _field


def negate_vector(fn: VectorField) -> VectorField:
    def _field(x, y):
        return -np.asarray(fn(x, y), dtype=float)

    return _field


@dataclass(frozen=True)
class ProblemData:
    """Data of the obstacle problem  -eps^2 Lap phi + phi = f,  phi <= g.

    ``g`` is None for the unconstrained problem. ``constraint`` restricts the
    obstacle to the region where it returns True; elsewhere nodes are free of
    the obstacle. ``discrete_obstacle`` states that g is piecewise linear on
    every mesh (g = g_m), which makes the obstacle consistency terms vanish.
    """

    eps: float
    f: ScalarField
    pi: ScalarField = field(default_factory=lambda: constant(0.0))
    g: Optional[ScalarField] = None
    phi_d: ScalarField = field(default_factory=lambda: constant(0.0))
    constraint: Optional[Predicate] = None
    discrete_obstacle: bool = True
    grad_g: Optional[VectorField] = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ProblemDefinitionError(f"eps must be positive, got {self.eps}")

    @property
    def constrained(self) -> bool:
        return self.g is not None

    def constraint_mask(self, points: np.ndarray) -> np.ndarray:
        """Where the obstacle applies; all False for the unconstrained problem."""
        if self.g is None:
            return np.zeros(points.shape[:-1], dtype=bool)
        if self.constraint is None:
            return np.ones(points.shape[:-1], dtype=bool)
        return np.broadcast_to(np.asarray(self.constraint(points[..., 0], points[..., 1]), dtype=bool), points.shape[:-1]).copy()

    def nodal_obstacle(self, mesh: Mesh) -> np.ndarray:
        """g_m at the nodes; +inf where no obstacle applies."""
        g_m = np.full(mesh.n_nodes, np.inf)
        mask = self.constraint_mask(mesh.vertices)
        if mask.any():
            g_m[mask] = evaluate(self.g, mesh.vertices[mask])
        return g_m

    def obstacle_gap_field(self, points: np.ndarray) -> np.ndarray:
        """g at points inside the constraint region, +inf outside."""
        out = np.full(points.shape[:-1], np.inf)
        mask = self.constraint_mask(points)
        if mask.any():
            out[mask] = evaluate(self.g, points[mask])
        return out

    def with_eps(self, eps: float) -> "ProblemData":
        return replace(self, eps=eps)


@dataclass(frozen=True)
class ExactSolution:
    """Exact solution in canonical (upper obstacle) sign.

    ``region`` labels points by smooth piece; elements whose sample points
    carry different labels are treated as cut by a kink.
    """

    value: ScalarField
    gradient: VectorField
    region: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class ProblemDefinition:
    name: str
    mesh: Mesh
    data: ProblemData
    exact: Optional[ExactSolution] = None
    negated: bool = False
    initial_refinements: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        dirichlet = self.mesh.node_sets.dirichlet
        if dirichlet.size and self.data.constrained:
            points = self.mesh.vertices[dirichlet]
            values = evaluate(self.data.phi_d, points)
            bound = self.data.obstacle_gap_field(points)
            bad = values > bound + 1e-9 * (1.0 + np.abs(values))
            if bad.any():
                raise ProblemDefinitionError(
                    "Dirichlet data exceed the obstacle",
                    {"node": int(dirichlet[np.argmax(bad)])},
                )

    @property
    def has_exact(self) -> bool:
        return self.exact is not None
