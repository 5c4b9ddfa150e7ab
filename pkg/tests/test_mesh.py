from __future__ import annotations

import numpy as np
import pytest

from obstacle_afem.exceptions import MeshError
from obstacle_afem.models.mesh import DIRICHLET, NEUMANN
from obstacle_afem.schemas.common import BoundaryTag
from obstacle_afem.services.mesh_service import (
    bisect,
    build_mesh,
    build_patches,
    check_conformity,
    mesh_from_snapshot,
    mesh_to_snapshot,
    min_angle,
    polygon_mesh,
    retag,
    square_mesh,
    uniform_refine,
)


def test_two_triangle_square(two_triangles):
    mesh = two_triangles
    assert mesh.n_elements == 2
    assert mesh.n_nodes == 4
    assert mesh.n_edges == 5
    # refinement edge is the diagonal, shared by both elements
    refinement = mesh.element_edges[:, 0]
    assert refinement[0] == refinement[1]
    assert mesh.edge_lengths[refinement[0]] == pytest.approx(np.sqrt(2.0))
    assert (mesh.signed_areas > 0).all()


def test_crossed_pattern_centre_patch(crossed_square):
    mesh = crossed_square
    assert mesh.n_elements == 8
    centre = int(np.argmin(np.hypot(*mesh.vertices.T)))
    patches = build_patches(mesh)
    assert patches.patch_sizes[centre] == 8
    assert patches.h[centre] == pytest.approx(2.0 * np.sqrt(2.0))


def test_uniform_refine_halves_every_edge(two_triangles):
    once = uniform_refine(two_triangles)
    assert once.n_elements == 8
    assert once.n_nodes == 9
    thrice = uniform_refine(two_triangles, 3)
    assert thrice.n_elements == 128
    assert thrice.n_nodes == 81
    assert thrice.edge_lengths.min() == pytest.approx(0.125)
    check_conformity(thrice)


def test_bisect_closure_refines_neighbour(two_triangles):
    refined, prolongation = bisect(two_triangles, [0])
    # the diagonal is the refinement edge of both triangles
    assert refined.n_elements == 4
    assert refined.n_nodes == 5
    assert np.allclose(refined.vertices[4], [0.5, 0.5])
    assert prolongation.n_new == 5
    check_conformity(refined)


def test_bisect_empty_marking_is_identity(two_triangles):
    refined, prolongation = bisect(two_triangles, [])
    assert refined is two_triangles
    assert prolongation.n_new == two_triangles.n_nodes


def test_bisect_rejects_unknown_element(two_triangles):
    with pytest.raises(MeshError):
        bisect(two_triangles, [2])


def test_bisection_keeps_shape(two_triangles, rng):
    mesh = uniform_refine(two_triangles, 1)
    for _ in range(6):
        marked = rng.choice(mesh.n_elements, size=max(1, mesh.n_elements // 5), replace=False)
        mesh, _ = bisect(mesh, marked)
        check_conformity(mesh)
    # bisection of right isosceles triangles from the right angle gives similar children
    assert min_angle(mesh) == pytest.approx(np.pi / 4)
    assert np.isclose(mesh.areas.sum(), 1.0)


def test_prolongation_reproduces_linear_fields(two_triangles):
    mesh = uniform_refine(two_triangles, 1)
    refined, prolongation = bisect(mesh, [0, 3, 5])
    linear = lambda v: 1.0 + v[:, 0] - 2.0 * v[:, 1]
    values = prolongation.apply(linear(mesh.vertices))
    assert np.allclose(values, linear(refined.vertices))


def test_prolongation_mask_needs_both_parents(two_triangles):
    refined, prolongation = bisect(two_triangles, [0])
    diagonal = prolongation.parent_edges[0]
    mask = np.zeros(4, dtype=bool)
    mask[diagonal[0]] = True
    assert not prolongation.apply_mask(mask)[4]
    mask[diagonal[1]] = True
    assert prolongation.apply_mask(mask)[4]


def test_boundary_tags_follow_refinement():
    mesh = square_mesh(0.0, 1.0, tags=lambda x, y: "D" if y == 0.0 else "N")
    refined = uniform_refine(mesh, 2)
    dirichlet = refined.boundary_edges[refined.boundary_tags == DIRICHLET]
    assert dirichlet.shape[0] == 4
    assert np.allclose(refined.vertices[dirichlet.reshape(-1), 1], 0.0)
    assert (refined.boundary_tags == NEUMANN).sum() == 12


def test_dirichlet_wins_at_corners():
    mesh = square_mesh(0.0, 1.0, tags=lambda x, y: "D" if x == 0.0 else "N")
    sets = mesh.node_sets
    corners = {int(p) for p in sets.dirichlet}
    assert corners == {int(p) for p in np.flatnonzero(mesh.vertices[:, 0] == 0.0)}
    assert not set(sets.neumann.tolist()) & corners


def test_find_edges_missing_pair(two_triangles):
    ids = two_triangles.find_edges(np.array([0, 0, 7]), np.array([1, 9, 1]))
    assert ids[0] >= 0
    assert ids[1] == -1
    assert ids[2] == -1


def test_build_mesh_rejects_hanging_node():
    vertices = [(0, 0), (2, 0), (1, 0), (1, 1)]
    triangles = [(0, 2, 3), (2, 1, 3), (0, 1, 3)]
    with pytest.raises(MeshError):
        build_mesh(vertices, triangles, [])


def test_build_mesh_rejects_untagged_boundary():
    with pytest.raises(MeshError, match="no tag"):
        build_mesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)], [(0, 1, "D"), (1, 2, "D")])


def test_build_mesh_rejects_missing_vertex():
    with pytest.raises(MeshError) as info:
        build_mesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 5)], [])
    assert info.value.entity_id == 0


def test_build_mesh_flips_clockwise_triangles():
    mesh = build_mesh([(0, 0), (1, 0), (0, 1)], [(0, 2, 1)], [(0, 1, "N"), (1, 2, "N"), (2, 0, "N")])
    assert mesh.signed_areas[0] == pytest.approx(0.5)


def test_polygon_fan():
    mesh = polygon_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], ["D", "N", "N", "N"])
    assert mesh.n_elements == 2
    assert mesh.areas.sum() == pytest.approx(1.0)


def test_snapshot_continues_refinement(two_triangles):
    mesh, _ = bisect(uniform_refine(two_triangles, 1), [1, 2])
    copy = mesh_from_snapshot(mesh_to_snapshot(mesh))
    assert np.array_equal(copy.elements, mesh.elements)
    a, _ = bisect(mesh, [0, 4])
    b, _ = bisect(copy, [0, 4])
    assert np.allclose(a.vertices, b.vertices)
    assert np.array_equal(a.elements, b.elements)


def test_retag_switches_boundary(two_triangles):
    mesh = retag(two_triangles, BoundaryTag.NEUMANN)
    assert (mesh.boundary_tags == NEUMANN).all()
    assert mesh.node_sets.dirichlet.size == 0


def test_patch_diameters(two_triangles):
    patches = build_patches(two_triangles)
    assert np.allclose(patches.h, np.sqrt(2.0))
    assert np.allclose(patches.patch_area[[0, 3]], 1.0)
