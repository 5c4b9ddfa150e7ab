from __future__ import annotations

from typing import Optional

from pydantic import Field, field_validator

from .common import BaseSchema, BoundaryTag


class MeshSnapshot(BaseSchema):
    """JSON form of a mesh: vertices, triangles and tagged boundary edges."""

    vertices: list[tuple[float, float]] = Field(..., description="Vertex coordinates [[x, y], ...]")
    triangles: list[tuple[int, int, int]] = Field(..., description="Vertex index triples")
    boundary: list[tuple[int, int, BoundaryTag]] = Field(..., description='Boundary edges [[i, j, "D"|"N"], ...]')
    nvb_ordered: bool = Field(
        False,
        description="Triangles are stored newest vertex first; the refinement edge is (t[1], t[2])",
    )
    generation: Optional[list[int]] = Field(None, description="Refinement level per triangle")

    @field_validator("triangles")
    @classmethod
    def non_empty(cls, v):
        if not v:
            raise ValueError("mesh needs at least one triangle")
        return v
