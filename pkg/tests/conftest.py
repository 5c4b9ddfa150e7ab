from __future__ import annotations

import numpy as np
import pytest

from obstacle_afem.models.problem import ProblemData, constant
from obstacle_afem.schemas.common import BoundaryTag, MeshPattern
from obstacle_afem.services.assembly_service import build_system
from obstacle_afem.services.mesh_service import square_mesh, uniform_refine


@pytest.fixture
def two_triangles():
    """[0, 1]^2 split along one diagonal, Dirichlet boundary."""
    return square_mesh(0.0, 1.0, tags=BoundaryTag.DIRICHLET)


@pytest.fixture
def unit_square():
    """[0, 1]^2 with 4 x 4 cells, Dirichlet boundary: 9 free nodes."""
    return square_mesh(0.0, 1.0, cells=4, tags=BoundaryTag.DIRICHLET)


@pytest.fixture
def neumann_square():
    return uniform_refine(square_mesh(0.0, 1.0, tags=BoundaryTag.NEUMANN), 2)


@pytest.fixture
def crossed_square():
    return square_mesh(-1.0, 1.0, cells=2, pattern=MeshPattern.CROSSED, tags=BoundaryTag.DIRICHLET)


@pytest.fixture
def plateau_data():
    """f = 1 pushed against the flat obstacle g = 0.05 + 0.2 x."""
    return ProblemData(
        eps=0.2,
        f=constant(1.0),
        g=lambda x, y: 0.05 + 0.2 * np.asarray(x),
    )


@pytest.fixture
def plateau_system(unit_square, plateau_data):
    return build_system(unit_square, plateau_data)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
