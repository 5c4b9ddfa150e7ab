from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from obstacle_afem.models.estimator import FULL_CONTACT, NO_CONTACT, SEMI_CONTACT, Weights
from obstacle_afem.models.problem import ProblemData, constant
from obstacle_afem.models.solution import P1Function
from obstacle_afem.schemas.common import EstimatorChoice, NodeClass
from obstacle_afem.services.assembly_service import build_system
from obstacle_afem.services.benchmark_service import example2, example2_free
from obstacle_afem.services.estimator_service import (
    classify_nodes,
    edge_normals,
    element_indicators,
    estimate,
    eta4,
    eta123,
    eta567,
    gradient_jumps,
    lumped_force,
    oscillations,
    totals,
)
from obstacle_afem.services.mesh_service import build_patches, square_mesh, uniform_refine
from obstacle_afem.services.vi_solver import solve_pdas
from obstacle_afem.utils.quadrature import subdivide, triangle_rule


def _solve(problem, refinements):
    mesh = uniform_refine(problem.mesh, refinements)
    system = build_system(mesh, problem.data)
    solution = solve_pdas(system, mesh)
    return mesh, system, solution, estimate(mesh, solution, problem.data, g_m=system.g_m)


@pytest.fixture(scope="module")
def radial_run():
    return _solve(example2(0.1), 3)


def test_edge_normals_point_out_of_owner(neumann_square):
    mesh = neumann_square
    normals = edge_normals(mesh)
    midpoints = mesh.vertices[mesh.edges].mean(axis=1)
    owners = mesh.centroids[mesh.edge_elements[:, 0]]
    assert np.all(np.einsum("sd,sd->s", normals, midpoints - owners) > 0)
    assert np.allclose(np.hypot(*normals.T), 1.0)


def test_linear_field_has_no_jumps(neumann_square):
    phi = P1Function(neumann_square, 2.0 * neumann_square.vertices[:, 0] - neumann_square.vertices[:, 1])
    assert np.abs(gradient_jumps(phi)).max() < 1e-12


def test_jump_sign_of_a_kink():
    mesh = square_mesh(-1.0, 1.0, cells=2, tags="N")
    phi = P1Function(mesh, np.abs(mesh.vertices[:, 0]))
    jumps = gradient_jumps(phi)
    on_kink = np.all(np.isclose(mesh.vertices[mesh.edges][:, :, 0], 0.0), axis=1)
    # |x| is convex: the normal derivative grows across x = 0
    assert np.allclose(jumps[on_kink], 2.0)
    assert np.allclose(jumps[~on_kink], 0.0)


def test_robust_weights():
    weights = Weights.robust(np.array([0.01, 1.0]), 0.1)
    assert np.allclose(weights.volume, [0.1, 1.0])
    assert np.allclose(weights.side, [np.sqrt(0.1) / np.sqrt(0.1), 1.0 / np.sqrt(0.1)])
    plain = Weights.non_robust(np.array([0.25]))
    assert np.allclose(plain.side, 0.5)


def test_no_contact_equals_standard_estimator():
    _, _, solution, breakdown = _solve(example2_free(0.1), 2)
    assert not solution.active.any()
    assert np.all(breakdown.eta_nodes[:, 3:] == 0.0)
    assert (breakdown.classes == NO_CONTACT).all()
    assert breakdown.eta == pytest.approx(breakdown.eta_std, rel=1e-12)
    assert breakdown.eta_std_full == pytest.approx(breakdown.eta_std, rel=1e-12)


def test_contact_localisation(radial_run):
    mesh, _, solution, breakdown = radial_run
    semi = breakdown.classes == SEMI_CONTACT
    full = breakdown.classes == FULL_CONTACT
    assert full.any()
    assert semi.any()
    assert np.all(breakdown.eta_nodes[~semi, 3] == 0.0)
    assert np.sum(breakdown.eta_nodes[full, :3]) == 0.0
    # the obstacle is piecewise linear, so the consistency terms vanish
    assert np.all(breakdown.eta_nodes[:, 4:7] == 0.0)
    # full contact sits inside the unit disk
    assert np.all(np.hypot(*mesh.vertices[full].T) < 1.0)


def test_standard_terms_bounded_by_eta(radial_run):
    *_, breakdown = radial_run
    assert breakdown.eta_std <= breakdown.eta
    assert breakdown.eta_std_full >= breakdown.eta_std
    assert np.all(breakdown.eta_nodes >= 0.0)
    assert breakdown.clipped == 0


def test_lumped_force_nonnegative_at_contact(radial_run):
    mesh, _, solution, breakdown = radial_run
    assert np.all(breakdown.s_p[breakdown.contact] >= -1e-9)
    assert np.allclose(breakdown.s_p, lumped_force(mesh, solution.lam))


def test_classification_without_contact(neumann_square):
    data = ProblemData(eps=0.5, f=constant(1.0), g=constant(10.0))
    phi = P1Function(neumann_square, np.ones(neumann_square.n_nodes))
    g_m = data.nodal_obstacle(neumann_square)
    classes, contact = classify_nodes(neumann_square, phi, g_m, np.zeros(neumann_square.n_nodes), data)
    assert not contact.any()
    assert (classes == NO_CONTACT).all()


def test_full_contact_when_patch_touches(neumann_square):
    data = ProblemData(eps=0.5, f=constant(1.0), g=constant(0.0))
    phi = P1Function(neumann_square, np.zeros(neumann_square.n_nodes))
    g_m = data.nodal_obstacle(neumann_square)
    lam = np.ones(neumann_square.n_nodes)
    classes, contact = classify_nodes(neumann_square, phi, g_m, lam, data)
    assert contact.all()
    # f - phi = 1 > 0, no jumps, and no Neumann flux residual
    assert (classes == FULL_CONTACT).all()


def test_element_indicators_distribute_by_patch_size(two_triangles):
    indicators = element_indicators(np.ones(two_triangles.n_nodes), two_triangles)
    # each triangle has two diagonal vertices (2 elements) and one corner (1 element)
    assert np.allclose(indicators, np.sqrt(0.5 + 0.5 + 1.0))


def test_node_squares_follow_choice(radial_run):
    *_, breakdown = radial_run
    assert np.allclose(breakdown.node_squares(EstimatorChoice.ETA), np.sum(breakdown.eta_nodes**2, axis=1))
    assert np.allclose(breakdown.node_squares("eta_std"), np.sum(breakdown.std_nodes**2, axis=1))
    assert breakdown.total(EstimatorChoice.ETA_NR) == breakdown.eta_nr


def test_oscillation_of_constant_data_vanishes(neumann_square):
    data = ProblemData(eps=0.1, f=constant(3.0), pi=constant(-1.0))
    weights = Weights.robust(build_patches(neumann_square).h, data.eps)
    osc_f, osc_pi = oscillations(neumann_square, build_patches(neumann_square), data, weights)
    assert np.allclose(osc_f, 0.0)
    assert np.allclose(osc_pi, 0.0)


def test_totals_and_rows(radial_run):
    mesh, _, _, breakdown = radial_run
    summary = totals(breakdown)
    assert summary["eta"] == pytest.approx(sum(summary[f"eta{k}"] for k in range(1, 8)))
    assert summary["semi_contact"] + summary["full_contact"] == int(breakdown.contact.sum())
    rows = breakdown.node_rows()
    assert len(rows) == mesh.n_nodes
    assert {r["class"] for r in rows} <= {c.value for c in NodeClass}


# --------------------------------------------------------- curved obstacles
def _curved(sign, t=1.0, f=None):
    """g = 0.25 + sign * 0.5 (x - 0.5)^2 scaled by t: sign -1 is concave, +1 convex."""
    return ProblemData(
        eps=0.3,
        f=f or constant(t),
        g=lambda x, y: t * (0.25 + sign * 0.5 * (np.asarray(x) - 0.5) ** 2),
        discrete_obstacle=False,
        grad_g=lambda x, y: np.stack([t * sign * (np.asarray(x) - 0.5), np.zeros_like(y)], axis=-1),
    )


def _touching_state(mesh, data):
    """phi = g_m on every node with a unit discrete contact force."""
    g_m = data.nodal_obstacle(mesh)
    phi = P1Function(mesh, g_m.copy())
    lam = np.ones(mesh.n_nodes)
    patches = build_patches(mesh)
    classes, contact = classify_nodes(mesh, phi, g_m, lam, data, patches)
    return patches, phi, g_m, lam, classes, contact


def test_concave_obstacle_consistency_terms(neumann_square):
    mesh = neumann_square
    data = _curved(-1.0)
    patches, phi, g_m, lam, classes, contact = _touching_state(mesh, data)
    x = mesh.vertices[:, 0]
    semi = classes == SEMI_CONTACT
    full = classes == FULL_CONTACT
    assert contact.all()
    # the interpolant of a concave g kinks downward across the inner vertical lines
    assert np.array_equal(semi, np.isin(x, [0.25, 0.5, 0.75]))
    assert np.array_equal(full, np.isin(x, [0.0, 1.0]))

    values, _, clipped = eta567(mesh, patches, phi, g_m, lam, classes, contact, data)
    # g >= g_m, so (g - g_m)^+ feeds eta5 and eta6 while phi_m <= g keeps eta7 at 0
    assert np.all(values[semi, 0] > 0.0)
    assert np.all(values[~semi, 0] == 0.0)
    assert np.all(values[full, 1] > 0.0)
    assert np.all(values[~full, 1] == 0.0)
    assert np.all(values[:, 2] == 0.0)
    assert clipped == 0


def test_convex_obstacle_consistency_terms(neumann_square):
    mesh = neumann_square
    data = _curved(1.0)
    patches, phi, g_m, lam, classes, contact = _touching_state(mesh, data)
    values, eta7_h1, _ = eta567(mesh, patches, phi, g_m, lam, classes, contact, data)
    # phi_m = g_m > g inside every element: only eta7 sees the gap
    assert np.all(values[contact, 2] > 0.0)
    assert np.all(eta7_h1[contact] >= values[contact, 2])
    assert np.allclose(values[:, :2], 0.0, atol=1e-6)


def test_consistency_terms_vanish_for_discrete_obstacle(neumann_square):
    mesh = neumann_square
    data = _curved(-1.0)
    data = dataclasses.replace(data, discrete_obstacle=True)
    patches, phi, g_m, lam, classes, contact = _touching_state(mesh, data)
    values, eta7_h1, _ = eta567(mesh, patches, phi, g_m, lam, classes, contact, data)
    assert not values.any()
    assert not eta7_h1.any()


@pytest.mark.parametrize("sign", [-1.0, 1.0])
def test_estimator_scales_with_data(neumann_square, sign):
    mesh = neumann_square

    def run(t):
        data = _curved(sign, t, f=lambda x, y: t * (2.0 * np.asarray(x) - 0.5))
        system = build_system(mesh, data)
        solution = solve_pdas(system, mesh)
        return estimate(mesh, solution, data, g_m=system.g_m)

    base, scaled = run(1.0), run(3.0)
    assert base.contact.any()
    assert np.array_equal(base.classes, scaled.classes)
    assert np.allclose(scaled.eta_nodes, 3.0 * base.eta_nodes, rtol=1e-8, atol=1e-12)
    assert scaled.eta == pytest.approx(3.0 * base.eta, rel=1e-8)
    assert scaled.eta_nr == pytest.approx(3.0 * base.eta_nr, rel=1e-8)


# ----------------------------------------------------------- hand checks
def _corner_oracle(mesh, nodal):
    """Brute-force int over the corner sub-triangles at p of (P1 field) * phi_p."""
    rule = subdivide(triangle_rule(5), 2)
    out = np.zeros(mesh.n_nodes)
    for e, tri in enumerate(mesh.elements):
        verts = mesh.vertices[tri]
        frame = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
        for i in range(3):
            p, q, r = verts[i], verts[(i + 1) % 3], verts[(i + 2) % 3]
            corner = np.array([p, p + (q - p) / 4.0, p + (r - p) / 4.0])
            points = rule.physical_points(corner[None])[0]
            local = np.linalg.solve(frame, (points - verts[0]).T).T
            bary = np.column_stack([1.0 - local.sum(axis=1), local])
            out[tri[i]] += mesh.areas[e] / 16.0 * np.sum(rule.weights * (bary @ nodal[tri]) * bary[:, i])
    return out


def test_eta4_two_elements_against_quadrature(two_triangles):
    mesh = two_triangles
    phi = np.array([0.0, -1.0, 0.0, 0.0])
    g_m = np.zeros(4)
    lam = np.ones(4)
    classes = np.full(4, SEMI_CONTACT, dtype=np.int8)
    values, clipped = eta4(mesh, P1Function(mesh, phi), g_m, lam, classes)
    expected = np.sqrt(lumped_force(mesh, lam) * _corner_oracle(mesh, g_m - phi))
    assert np.allclose(values, expected, rtol=1e-12)
    # corner 2 does not share an element with the gap at corner 1
    assert values[2] == 0.0
    assert values[1] > values[0] > 0.0
    assert clipped == 0


def test_eta4_random_gaps_against_quadrature(neumann_square, rng):
    mesh = neumann_square
    n = mesh.n_nodes
    g_m = rng.uniform(-1.0, 1.0, n)
    gap = rng.uniform(0.0, 1.0, n)
    lam = rng.uniform(0.5, 2.0, n)
    classes = np.where(rng.random(n) < 0.5, SEMI_CONTACT, NO_CONTACT).astype(np.int8)
    values, _ = eta4(mesh, P1Function(mesh, g_m - gap), g_m, lam, classes)
    expected = np.sqrt(lumped_force(mesh, lam) * _corner_oracle(mesh, gap))
    semi = classes == SEMI_CONTACT
    assert np.allclose(values[semi], expected[semi], rtol=1e-10)
    assert np.all(values[~semi] == 0.0)


def test_eta2_of_a_kink():
    mesh = square_mesh(-1.0, 1.0, cells=2, tags="N")
    phi = P1Function(mesh, np.abs(mesh.vertices[:, 0]))
    data = ProblemData(eps=0.5, f=constant(0.0))
    patches = build_patches(mesh)
    weights = Weights.robust(patches.h, data.eps)
    values = eta123(mesh, patches, phi, data, np.zeros(mesh.n_nodes, dtype=np.int8), weights)

    # J = 2 on the two unit sides along x = 0; the centre node 4 owns both
    expected = np.zeros(mesh.n_nodes)
    expected[4] = weights.side[4] * data.eps**2 * 2.0 * np.sqrt(2.0)
    expected[[1, 7]] = weights.side[[1, 7]] * data.eps**2 * 2.0
    assert np.allclose(values[:, 1], expected, atol=1e-12)
