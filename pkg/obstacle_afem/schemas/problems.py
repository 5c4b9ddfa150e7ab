from __future__ import annotations

from typing import Optional

from pydantic import Field, field_validator

from .common import BaseSchema, BoundaryTag


class FieldExpressions(BaseSchema):
    f: str = Field("0", description="Force density f(x, y)")
    pi: str = Field("0", description="Neumann data on the Neumann boundary")
    g: str = Field("oo", description="Obstacle (upper bound); 'oo' means unconstrained")
    phi_d: str = Field("0", description="Dirichlet data")
    exact: Optional[str] = Field(None, description="Exact solution, if known")


class ProblemDescriptor(BaseSchema):
    """Custom problem read from JSON.

    Expressions use the grammar of ``utils.expressions``: + - * / exp ln sqrt,
    the symbols x, y, r, eps and Piecewise((expr, predicate), ...).
    """

    name: str
    polygon: list[tuple[float, float]] = Field(..., description="Counter-clockwise polygon vertices")
    triangles: Optional[list[tuple[int, int, int]]] = Field(
        None, description="Triangulation of the polygon vertices; a fan from vertex 0 if omitted"
    )
    boundary_tags: list[BoundaryTag] = Field(
        ..., description="Tag of polygon side k, the side from vertex k to vertex k+1"
    )
    fields: FieldExpressions = Field(default_factory=FieldExpressions)
    lower_obstacle: bool = Field(False, description="Data describe a lower obstacle problem, psi >= g")
    discrete_obstacle: bool = Field(True, description="The obstacle is piecewise linear on every mesh")
    initial_uniform_refinements: int = Field(3, ge=0)

    @field_validator("boundary_tags")
    @classmethod
    def tag_per_side(cls, v, info):
        polygon = info.data.get("polygon") or []
        if polygon and len(v) != len(polygon):
            raise ValueError("one boundary tag per polygon side is required")
        return v
