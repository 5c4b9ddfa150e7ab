"""
P1 assembly of a_eps(u, v) = eps^2 (grad u, grad v) + (u, v) and of the load.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from ..exceptions import AssemblyError
from ..models.mesh import NEUMANN, Mesh
from ..models.problem import ProblemData, evaluate
from ..models.solution import ObstacleSystem, P1Function
from ..utils.quadrature import EdgeRule, QuadratureRule, edge_rule, triangle_rule

logger = logging.getLogger(__name__)

_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def _coo_to_csr(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(mesh.elements, 3, axis=1).reshape(-1)
    cols = np.tile(mesh.elements, (1, 3)).reshape(-1)
    n = mesh.n_nodes
    return sp.coo_matrix((local.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """(grad phi_p, grad phi_q) assembled exactly."""
    G = mesh.gradients
    local = mesh.areas[:, None, None] * np.einsum("mid,mjd->mij", G, G)
    return _coo_to_csr(mesh, local)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """(phi_p, phi_q) assembled exactly."""
    local = mesh.areas[:, None, None] * _LOCAL_MASS[None, :, :]
    return _coo_to_csr(mesh, local)


def assemble_operator(mesh: Mesh, eps: float) -> sp.csr_matrix:
    if eps < 0:
        raise AssemblyError(f"eps must be non-negative, got {eps}")
    A = (eps**2) * assemble_stiffness(mesh) + assemble_mass(mesh)
    logger.debug("Assembled operator: n=%d nnz=%d eps=%g", A.shape[0], A.nnz, eps)
    return A.tocsr()


def element_integrals(mesh: Mesh, fn, rule: QuadratureRule) -> np.ndarray:
    """(M, 3) values of int_e fn * phi_i for the three local basis functions."""
    points = rule.physical_points(mesh.vertices[mesh.elements])
    values = evaluate(fn, points)  # (M, Q)
    return mesh.areas[:, None] * np.einsum("mq,q,qi->mi", values, rule.weights, rule.points)


def neumann_integrals(mesh: Mesh, fn, rule: EdgeRule) -> tuple[np.ndarray, np.ndarray]:
    """Endpoint loads int_s fn * phi on the Neumann edges; returns (edges (K, 2), values (K, 2))."""
    edges = mesh.boundary_edges[mesh.boundary_tags == NEUMANN]
    if edges.size == 0:
        return edges, np.zeros((0, 2))
    a, b = mesh.vertices[edges[:, 0]], mesh.vertices[edges[:, 1]]
    values = evaluate(fn, rule.physical_points(a, b))  # (K, Q)
    length = np.hypot(*(b - a).T)
    t = rule.points
    loads = np.column_stack([values @ (rule.weights * (1.0 - t)), values @ (rule.weights * t)])
    return edges, length[:, None] * loads


def assemble_load(
    mesh: Mesh,
    data: ProblemData,
    quad: Optional[QuadratureRule] = None,
    edge_quad: Optional[EdgeRule] = None,
) -> np.ndarray:
    """b_p = int f phi_p + int_{Gamma_N} pi phi_p by quadrature."""
    quad = quad or triangle_rule(5)
    edge_quad = edge_quad or edge_rule(4)
    if quad.degree < 2:
        raise AssemblyError(f"load quadrature needs degree >= 2, got {quad.degree}")
    b = np.bincount(
        mesh.elements.reshape(-1),
        weights=element_integrals(mesh, data.f, quad).reshape(-1),
        minlength=mesh.n_nodes,
    )
    edges, loads = neumann_integrals(mesh, data.pi, edge_quad)
    if edges.size:
        b += np.bincount(edges.reshape(-1), weights=loads.reshape(-1), minlength=mesh.n_nodes)
    return b


def basis_integrals(mesh: Mesh) -> np.ndarray:
    """int_{omega_p} phi_p = |omega_p| / 3."""
    return (mesh.node_element_incidence @ mesh.areas) / 3.0


def energy_norm_matrix(phi: Union[P1Function, np.ndarray], A: sp.spmatrix) -> float:
    c = phi.coefficients if isinstance(phi, P1Function) else np.asarray(phi, dtype=float)
    q = float(c @ (A @ c))
    if q < -1e-12 * max(1.0, float(np.abs(c).max(initial=0.0)) ** 2):
        raise AssemblyError("negative quadratic form", {"value": q})
    return float(np.sqrt(max(q, 0.0)))


def energy_norm_quadrature(
    mesh: Mesh,
    coefficients: np.ndarray,
    eps: float,
    quad: Optional[QuadratureRule] = None,
) -> float:
    """{eps^2 |grad phi|^2 + |phi|^2}^{1/2} integrated by quadrature."""
    quad = quad or triangle_rule(5)
    phi = P1Function(mesh, coefficients)
    grad2 = (phi.gradients**2).sum(axis=1)
    values = phi.at_quadrature(quad)
    l2 = mesh.areas * (values**2 @ quad.weights)
    return float(np.sqrt(np.sum(mesh.areas * eps**2 * grad2 + l2)))


def dirichlet_values(mesh: Mesh, data: ProblemData) -> tuple[np.ndarray, np.ndarray]:
    """Dirichlet nodes and the nodal interpolant of phi^D there."""
    nodes = mesh.node_sets.dirichlet
    return nodes, evaluate(data.phi_d, mesh.vertices[nodes])


def build_system(
    mesh: Mesh,
    data: ProblemData,
    quad: Optional[QuadratureRule] = None,
    edge_quad: Optional[EdgeRule] = None,
) -> ObstacleSystem:
    nodes, values = dirichlet_values(mesh, data)
    return ObstacleSystem(
        A=assemble_operator(mesh, data.eps),
        b=assemble_load(mesh, data, quad, edge_quad),
        g_m=data.nodal_obstacle(mesh),
        dirichlet=nodes,
        dirichlet_values=values,
    )


def export_coo(A: sp.spmatrix, path: Union[str, Path]) -> Path:
    """Write a matrix as 'row col value' text lines."""
    coo = sp.coo_matrix(A)
    order = np.lexsort((coo.col, coo.row))
    table = np.column_stack([coo.row[order], coo.col[order], coo.data[order]])
    path = Path(path)
    np.savetxt(path, table, fmt=["%d", "%d", "%.17g"], header=f"{A.shape[0]} {A.shape[1]} {coo.nnz}")
    return path
