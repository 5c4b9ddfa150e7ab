"""
Residual error estimator for the singularly perturbed obstacle problem.

Sign conventions: for an interior side s shared by elements e and e~,
n_e is the unit normal pointing out of e and

    J_s = (grad phi|_e~ - grad phi|_e) . n_e,

so that the linear residual reads

    <R, v> = (f - phi, v) + sum_s (eps^2 J_s, v)_s + (pi - eps^2 grad phi . n, v)_{Gamma_N}.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from ..config import get_settings
from ..exceptions import EstimatorError
from ..models.estimator import (
    FULL_CONTACT,
    NO_CONTACT,
    SEMI_CONTACT,
    EstimatorBreakdown,
    Weights,
)
from ..models.mesh import DIRICHLET, INTERIOR, NEUMANN, Mesh, PatchIndex
from ..models.problem import ProblemData, evaluate
from ..models.solution import DiscreteSolution, P1Function
from ..utils.quadrature import edge_rule, triangle_rule
from .mesh_service import build_patches

logger = logging.getLogger(__name__)

# Corner sub-triangle of the twice red-refined element at local vertex p,
# in barycentric coordinates ordered (lambda_p, lambda_next, lambda_prev)
_CORNER = np.array([[1.0, 0.0, 0.0], [0.75, 0.25, 0.0], [0.75, 0.0, 0.25]])
_CORNER_MIDPOINTS = np.array([[0.875, 0.125, 0.0], [0.875, 0.0, 0.125], [0.75, 0.125, 0.125]])
_CORNER_AREA = 1.0 / 16.0


def _local_order(points: np.ndarray, i: int) -> np.ndarray:
    """Reorder (lambda_p, lambda_next, lambda_prev) rows into local coordinates for vertex i."""
    out = np.empty_like(points)
    out[:, i] = points[:, 0]
    out[:, (i + 1) % 3] = points[:, 1]
    out[:, (i + 2) % 3] = points[:, 2]
    return out


def _to_nodes(mesh: Mesh, per_element_vertex: np.ndarray) -> np.ndarray:
    """Sum (M, 3) element-vertex values into nodes."""
    return np.bincount(mesh.elements.reshape(-1), weights=per_element_vertex.reshape(-1), minlength=mesh.n_nodes)


def _edges_to_nodes(mesh: Mesh, per_edge_endpoint: np.ndarray, edge_ids: np.ndarray) -> np.ndarray:
    """Sum (K, 2) edge-endpoint values into nodes."""
    ends = mesh.edges[edge_ids]
    return np.bincount(ends.reshape(-1), weights=per_edge_endpoint.reshape(-1), minlength=mesh.n_nodes)


# ----------------------------------------------------------------- residuals
def edge_normals(mesh: Mesh) -> np.ndarray:
    """(E, 2) unit normal of each edge, pointing out of ``edge_elements[:, 0]``."""
    owner = mesh.edge_elements[:, 0]
    local = np.argmax(mesh.element_edges[owner] == np.arange(mesh.n_edges)[:, None], axis=1)
    return mesh.outward_normals[owner, local]


def gradient_jumps(phi: P1Function) -> np.ndarray:
    """(E,) J_s on interior edges, 0 on boundary edges."""
    mesh = phi.mesh
    grads = phi.gradients
    e1, e2 = mesh.edge_elements[:, 0], mesh.edge_elements[:, 1]
    interior = e2 >= 0
    jumps = np.zeros(mesh.n_edges)
    normals = edge_normals(mesh)
    jumps[interior] = np.einsum("sd,sd->s", grads[e2[interior]] - grads[e1[interior]], normals[interior])
    return jumps


def _neumann_edges(mesh: Mesh) -> np.ndarray:
    return np.flatnonzero(mesh.edge_tags == NEUMANN)


def _neumann_flux(phi: P1Function, data: ProblemData, edge_ids: np.ndarray, t: np.ndarray) -> np.ndarray:
    """(K, Q) values of pi - eps^2 grad phi . n at edge parameters t."""
    mesh = phi.mesh
    a, b = mesh.vertices[mesh.edges[edge_ids, 0]], mesh.vertices[mesh.edges[edge_ids, 1]]
    points = (1.0 - t)[None, :, None] * a[:, None, :] + t[None, :, None] * b[:, None, :]
    owner = mesh.edge_elements[edge_ids, 0]
    flux = np.einsum("kd,kd->k", phi.gradients[owner], edge_normals(mesh)[edge_ids])
    return evaluate(data.pi, points) - data.eps**2 * flux[:, None]


# ------------------------------------------------------------ classification
def classify_nodes(
    mesh: Mesh,
    phi: P1Function,
    g_m: np.ndarray,
    lam: np.ndarray,
    data: ProblemData,
    patches: Optional[PatchIndex] = None,
    tol: Optional[float] = None,
    tau_feas: Optional[float] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Node classes and the contact mask.

    A contact node is a free node with a finite obstacle and |phi - g_m| <= tau.
    It is full-contact when all nodes of its patch touch the obstacle and the
    residual densities are nonnegative on its patch; otherwise semi-contact.
    """
    settings = get_settings()
    tol = settings.residual_sign_tol if tol is None else tol
    tau_feas = settings.tau_feas if tau_feas is None else tau_feas
    patches = patches or build_patches(mesh)
    finite = np.isfinite(g_m)
    scale = 1.0 + (float(np.abs(g_m[finite]).max()) if finite.any() else 0.0)

    touching = finite.copy()
    touching[finite] = np.abs(phi.coefficients[finite] - g_m[finite]) <= tau_feas * scale
    free = ~mesh.node_sets.dirichlet_mask(mesh.n_nodes)
    contact = touching & free

    incidence = mesh.node_element_incidence
    # (a) every patch node touches
    element_touching = touching[mesh.elements].all(axis=1)
    patch_touching = (incidence @ (~element_touching).astype(float)) == 0

    # (b) sufficient sign test
    centroid_residual = evaluate(data.f, mesh.centroids) - phi.coefficients[mesh.elements].mean(axis=1)
    bad_elements = (centroid_residual < -tol).astype(float)
    jumps = gradient_jumps(phi)
    bad_edges = np.zeros(mesh.n_edges)
    interior = mesh.edge_tags == INTERIOR
    bad_edges[interior] = data.eps**2 * jumps[interior] < -tol
    neumann = _neumann_edges(mesh)
    if neumann.size:
        bad_edges[neumann] = _neumann_flux(phi, data, neumann, np.array([0.5]))[:, 0] < -tol
    sign_ok = (incidence @ bad_elements == 0) & (mesh.node_edge_incidence @ bad_edges == 0)

    classes = np.full(mesh.n_nodes, NO_CONTACT, dtype=np.int8)
    classes[contact] = SEMI_CONTACT
    classes[contact & patch_touching & sign_ok] = FULL_CONTACT
    return classes, contact


# ------------------------------------------------------------------- eta1-3
def _residual_squares(
    mesh: Mesh,
    patches: PatchIndex,
    phi: P1Function,
    data: ProblemData,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unweighted ||f - phi||^2_{omega_p}, ||eps^2 J||^2_{gamma_p^I}, ||pi - eps^2 dphi/dn||^2_{gamma_p^N}."""
    rule = triangle_rule(5)
    points = rule.physical_points(mesh.vertices[mesh.elements])
    residual = evaluate(data.f, points) - phi.at_quadrature(rule)
    element_sq = mesh.areas * (residual**2 @ rule.weights)
    volume = patches.elements @ element_sq

    jumps = gradient_jumps(phi)
    edge_sq = data.eps**4 * jumps**2 * mesh.edge_lengths
    side = patches.skeleton @ edge_sq

    neumann = _neumann_edges(mesh)
    boundary = np.zeros(mesh.n_nodes)
    if neumann.size:
        erule = edge_rule(4)
        flux = _neumann_flux(phi, data, neumann, erule.points)
        per_edge = np.zeros(mesh.n_edges)
        per_edge[neumann] = mesh.edge_lengths[neumann] * (flux**2 @ erule.weights)
        boundary = patches.neumann @ per_edge
    return volume, side, boundary


def eta123(
    mesh: Mesh,
    patches: PatchIndex,
    phi: P1Function,
    data: ProblemData,
    classes: np.ndarray,
    weights: Optional[Weights] = None,
) -> np.ndarray:
    """(N, 3) eta_{1,p}, eta_{2,p}, eta_{3,p}; zero at full-contact nodes."""
    weights = weights or Weights.robust(patches.h, data.eps)
    volume, side, boundary = _residual_squares(mesh, patches, phi, data)
    out = np.column_stack(
        [
            weights.volume * np.sqrt(volume),
            weights.side * np.sqrt(side),
            weights.side * np.sqrt(boundary),
        ]
    )
    out[classes == FULL_CONTACT] = 0.0
    return out


# ---------------------------------------------------------------------- eta4
def lumped_force(mesh: Mesh, lam: np.ndarray) -> np.ndarray:
    """s_p = <lambda_m, phi_p> / int phi_p."""
    return lam / ((mesh.node_element_incidence @ mesh.areas) / 3.0)


def _corner_integrals(mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
    """(N,) int over the corner sub-triangles at p of (P1 field) * phi_p, integrated exactly."""
    values = nodal[mesh.elements]
    per = np.empty((mesh.n_elements, 3))
    for i in range(3):
        bary = _local_order(_CORNER_MIDPOINTS, i)
        per[:, i] = (values @ bary.T) @ bary[:, i] / 3.0
    per *= (mesh.areas * _CORNER_AREA)[:, None]
    return _to_nodes(mesh, per)


def _checked_sqrt(radicand: np.ndarray, magnitude: np.ndarray, label: str) -> tuple[np.ndarray, int]:
    tol = get_settings().radicand_tol
    bound = tol * (1.0 + magnitude)
    bad = radicand < -bound
    if bad.any():
        p = int(np.flatnonzero(bad)[0])
        raise EstimatorError(f"negative radicand in {label}", {"node": p, "value": float(radicand[p])})
    clipped = int(np.count_nonzero(radicand < 0))
    if clipped:
        logger.warning("⚠️ Clipped %d slightly negative radicands in %s", clipped, label)
    return np.sqrt(np.maximum(radicand, 0.0)), clipped


def eta4(
    mesh: Mesh,
    phi: P1Function,
    g_m: np.ndarray,
    lam: np.ndarray,
    classes: np.ndarray,
) -> tuple[np.ndarray, int]:
    """eta_{4,p} = (s_p int_{omega~_p} (g_m - phi_m) phi_p)^{1/2} on semi-contact nodes."""
    gap = np.where(np.isfinite(g_m), g_m - phi.coefficients, 0.0)
    s_p = lumped_force(mesh, lam)
    integral = _corner_integrals(mesh, gap)
    magnitude = np.abs(s_p) * _corner_integrals(mesh, np.abs(gap))
    semi = classes == SEMI_CONTACT
    out = np.zeros(mesh.n_nodes)
    values, clipped = _checked_sqrt((s_p * integral)[semi], magnitude[semi], "eta4")
    out[semi] = values
    return out, clipped


# ------------------------------------------------------------------ eta5-7
def _finite_difference_gradient(fn, points: np.ndarray) -> np.ndarray:
    step = 1e-6 * np.maximum(1.0, np.abs(points))
    grad = np.empty(points.shape)
    for d in range(2):
        shift = np.zeros_like(points)
        shift[..., d] = step[..., d]
        grad[..., d] = (evaluate(fn, points + shift) - evaluate(fn, points - shift)) / (2.0 * step[..., d])
    return grad


def _obstacle_gradient(data: ProblemData, points: np.ndarray) -> np.ndarray:
    if data.grad_g is not None:
        return np.broadcast_to(np.asarray(data.grad_g(points[..., 0], points[..., 1]), dtype=float), points.shape).copy()
    return _finite_difference_gradient(data.g, points)


def _consistency_gap(data: ProblemData, g_fill: np.ndarray, mesh: Mesh, bary: np.ndarray) -> np.ndarray:
    """(M, K) values of (g - g_m)^+ at barycentric points; 0 outside the constraint region."""
    points = np.einsum("ki,mid->mkd", bary, mesh.vertices[mesh.elements])
    g = data.obstacle_gap_field(points)
    g_m = g_fill[mesh.elements] @ bary.T
    return np.where(np.isfinite(g), np.maximum(g - g_m, 0.0), 0.0)


def eta567(
    mesh: Mesh,
    patches: PatchIndex,
    phi: P1Function,
    g_m: np.ndarray,
    lam: np.ndarray,
    classes: np.ndarray,
    contact: np.ndarray,
    data: ProblemData,
) -> tuple[np.ndarray, np.ndarray, int]:
    """(N, 3) eta_5, eta_6, eta_7 and (N,) the H1 variant of eta_7.

    All vanish for a discrete obstacle (g = g_m).
    """
    n = mesh.n_nodes
    out = np.zeros((n, 3))
    eta7_h1 = np.zeros(n)
    if not data.constrained or data.discrete_obstacle:
        return out, eta7_h1, 0
    clipped = 0
    g_fill = np.where(np.isfinite(g_m), g_m, 0.0)
    rule = triangle_rule(5)
    semi = classes == SEMI_CONTACT
    full = classes == FULL_CONTACT

    # eta5 on the corner sub-triangles
    s_p = lumped_force(mesh, lam)
    per = np.empty((mesh.n_elements, 3))
    for i in range(3):
        bary = _local_order(rule.points @ _CORNER, i)
        gap = _consistency_gap(data, g_fill, mesh, bary)
        per[:, i] = gap @ (rule.weights * bary[:, i])
    per *= (mesh.areas * _CORNER_AREA)[:, None]
    corner = _to_nodes(mesh, per)
    values, c5 = _checked_sqrt((s_p * corner)[semi], (np.abs(s_p) * corner)[semi], "eta5")
    out[semi, 0] = values
    clipped += c5

    # eta6: residual pairing with (g - g_m)^+ phi_p
    gap_q = _consistency_gap(data, g_fill, mesh, rule.points)
    points = rule.physical_points(mesh.vertices[mesh.elements])
    residual = evaluate(data.f, points) - phi.at_quadrature(rule)
    volume = mesh.areas[:, None] * np.einsum("mq,q,qi->mi", residual * gap_q, rule.weights, rule.points)
    pairing = _to_nodes(mesh, volume)

    erule = edge_rule(4)
    t = erule.points
    edge_bary_a = np.column_stack([1.0 - t, t])
    jumps = data.eps**2 * gradient_jumps(phi)
    edge_ids = np.flatnonzero(mesh.edge_tags != DIRICHLET)
    a, b = mesh.vertices[mesh.edges[edge_ids, 0]], mesh.vertices[mesh.edges[edge_ids, 1]]
    epoints = (1.0 - t)[None, :, None] * a[:, None, :] + t[None, :, None] * b[:, None, :]
    g_edge = data.obstacle_gap_field(epoints)
    gm_edge = g_fill[mesh.edges[edge_ids]] @ edge_bary_a.T
    gap_edge = np.where(np.isfinite(g_edge), np.maximum(g_edge - gm_edge, 0.0), 0.0)
    density = np.zeros((edge_ids.size, t.size))
    tags = mesh.edge_tags[edge_ids]
    inner = tags == INTERIOR
    density[inner] = jumps[edge_ids[inner]][:, None]
    neumann_local = np.flatnonzero(tags == NEUMANN)
    if neumann_local.size:
        density[neumann_local] = _neumann_flux(phi, data, edge_ids[neumann_local], t)
    weighted = (density * gap_edge) * erule.weights
    ends = mesh.edge_lengths[edge_ids, None] * np.column_stack([weighted @ (1.0 - t), weighted @ t])
    pairing += _edges_to_nodes(mesh, ends, edge_ids)
    values, c6 = _checked_sqrt(pairing[full], np.abs(pairing[full]), "eta6")
    out[full, 1] = values
    clipped += c6

    # eta7: eps-norm of (phi_m - g)^+ phi_p on omega_p
    g = data.obstacle_gap_field(points)
    inside = np.isfinite(g)
    diff = np.where(inside, phi.at_quadrature(rule) - np.where(inside, g, 0.0), -1.0)
    positive = diff > 0
    grad_g = np.zeros(points.shape)
    if positive.any():
        grad_g[positive] = _obstacle_gradient(data, points[positive])
    grad_diff = phi.gradients[:, None, :] - grad_g  # (M, Q, 2)
    value_sq = np.zeros((mesh.n_elements, 3))
    grad_sq = np.zeros((mesh.n_elements, 3))
    for i in range(3):
        basis = rule.points[:, i]
        v = np.where(positive, diff * basis, 0.0)
        dv = grad_diff * basis[None, :, None] + diff[:, :, None] * mesh.gradients[:, None, i, :]
        dv = np.where(positive[:, :, None], dv, 0.0)
        value_sq[:, i] = mesh.areas * ((v**2) @ rule.weights)
        grad_sq[:, i] = mesh.areas * ((dv**2).sum(axis=2) @ rule.weights)
    l2 = _to_nodes(mesh, value_sq)
    h1 = _to_nodes(mesh, grad_sq)
    out[contact, 2] = np.sqrt(data.eps**2 * h1 + l2)[contact]
    eta7_h1[contact] = np.sqrt(h1 + l2)[contact]
    return out, eta7_h1, clipped


# ------------------------------------------------------------------ extras
def oscillations(
    mesh: Mesh,
    patches: PatchIndex,
    data: ProblemData,
    weights: Weights,
) -> tuple[np.ndarray, np.ndarray]:
    """osc_p(f) and osc_p(pi) against centroid and edge-midpoint values."""
    rule = triangle_rule(5)
    points = rule.physical_points(mesh.vertices[mesh.elements])
    f_bar = evaluate(data.f, mesh.centroids)
    element_sq = mesh.areas * ((evaluate(data.f, points) - f_bar[:, None]) ** 2 @ rule.weights)
    osc_f = weights.volume * np.sqrt(patches.elements @ element_sq)

    osc_pi = np.zeros(mesh.n_nodes)
    neumann = _neumann_edges(mesh)
    if neumann.size:
        erule = edge_rule(4)
        a, b = mesh.vertices[mesh.edges[neumann, 0]], mesh.vertices[mesh.edges[neumann, 1]]
        values = evaluate(data.pi, erule.physical_points(a, b))
        pi_bar = evaluate(data.pi, 0.5 * (a + b))
        per_edge = np.zeros(mesh.n_edges)
        per_edge[neumann] = mesh.edge_lengths[neumann] * ((values - pi_bar[:, None]) ** 2 @ erule.weights)
        osc_pi = weights.side * np.sqrt(patches.neumann @ per_edge)
    return osc_f, osc_pi


def obstacle_jump_term(
    mesh: Mesh,
    patches: PatchIndex,
    phi: P1Function,
    g_m: np.ndarray,
    data: ProblemData,
    weights: Weights,
    classes: np.ndarray,
) -> np.ndarray:
    """w_side ||eps^2 [grad g_m]||_{gamma_p^I} at semi-contact nodes."""
    g_fill = np.where(np.isfinite(g_m), g_m, phi.coefficients)
    jumps = gradient_jumps(P1Function(mesh, g_fill))
    side = patches.skeleton @ (data.eps**4 * jumps**2 * mesh.edge_lengths)
    out = weights.side * np.sqrt(side)
    out[classes != SEMI_CONTACT] = 0.0
    return out


def element_indicators(node_squares: np.ndarray, mesh: Mesh) -> np.ndarray:
    """indicator(e)^2 = sum over vertices p of e of eta_p^2 / #omega_p."""
    counts = np.diff(mesh.node_element_incidence.indptr)
    share = node_squares / counts
    return np.sqrt(share[mesh.elements].sum(axis=1))


# ------------------------------------------------------------- orchestration
def estimate(
    mesh: Mesh,
    solution: DiscreteSolution,
    data: ProblemData,
    g_m: Optional[np.ndarray] = None,
    patches: Optional[PatchIndex] = None,
) -> EstimatorBreakdown:
    """Full breakdown: classes, eta_1..eta_7, the non-robust and standard variants."""
    patches = patches or build_patches(mesh)
    g_m = data.nodal_obstacle(mesh) if g_m is None else g_m
    phi = solution.phi if isinstance(solution.phi, P1Function) else P1Function(mesh, solution.phi)
    lam = solution.lam

    classes, contact = classify_nodes(mesh, phi, g_m, lam, data, patches)
    robust = Weights.robust(patches.h, data.eps)
    plain = Weights.non_robust(patches.h)

    volume, side, boundary = _residual_squares(mesh, patches, phi, data)
    std_nodes = np.column_stack([robust.volume * np.sqrt(volume), robust.side * np.sqrt(side), robust.side * np.sqrt(boundary)])
    nr123 = np.column_stack([plain.volume * np.sqrt(volume), plain.side * np.sqrt(side), plain.side * np.sqrt(boundary)])
    full = classes == FULL_CONTACT
    eta_nodes = np.zeros((mesh.n_nodes, 7))
    eta_nodes[:, :3] = std_nodes
    eta_nodes[full, :3] = 0.0
    nr123[full] = 0.0

    e4, clipped4 = eta4(mesh, phi, g_m, lam, classes)
    eta_nodes[:, 3] = e4
    e567, eta7_h1, clipped567 = eta567(mesh, patches, phi, g_m, lam, classes, contact, data)
    eta_nodes[:, 4:7] = e567

    nr_nodes = eta_nodes.copy()
    nr_nodes[:, :3] = nr123
    nr_nodes[:, 6] = eta7_h1

    osc_f, osc_pi = oscillations(mesh, patches, data, robust)
    breakdown = EstimatorBreakdown(
        classes=classes,
        contact=contact,
        s_p=lumped_force(mesh, lam),
        eta_nodes=eta_nodes,
        nr_nodes=nr_nodes,
        std_nodes=std_nodes,
        osc_f_nodes=osc_f,
        osc_pi_nodes=osc_pi,
        obstacle_jump=obstacle_jump_term(mesh, patches, phi, g_m, data, robust, classes),
        weights=robust,
        clipped=clipped4 + clipped567,
    )
    logger.debug(
        "Estimator: eta=%.4e eta_std=%.4e eta_nr=%.4e semi=%d full=%d",
        breakdown.eta,
        breakdown.eta_std,
        breakdown.eta_nr,
        breakdown.count(SEMI_CONTACT),
        breakdown.count(FULL_CONTACT),
    )
    return breakdown


def totals(breakdown: EstimatorBreakdown) -> dict[str, float]:
    """eta, eta_rss, eta_std, eta_nr, oscillations and the seven components."""
    return breakdown.totals()
