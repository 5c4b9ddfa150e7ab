"""
Primal-dual active set solver for the discrete obstacle problem.

    find phi <= g_m (free nodes), phi = phi_D (Dirichlet nodes) with
    lambda = b - A phi >= 0,  lambda * (g_m - phi) = 0.
"""

from __future__ import annotations

import itertools
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..config import get_settings
from ..exceptions import ActiveSetCycleError, LinearSolverError, MaxIterationsError, SolverError
from ..models.mesh import Mesh
from ..models.solution import DiscreteSolution, KKTReport, ObstacleSystem, P1Function
from ..schemas.common import LinearSolverMethod
from ..utils.export import write_rows

logger = logging.getLogger(__name__)


# ------------------------------------------------------------- linear solves
def _cg(A: sp.csr_matrix, rhs: np.ndarray, tol: float, max_iter: int, history: list[float]) -> np.ndarray:
    diag = A.diagonal()
    M = sp.diags(1.0 / diag)
    rhs_norm = float(np.linalg.norm(rhs))

    def record(xk):
        history.append(float(np.linalg.norm(rhs - A @ xk)) / rhs_norm)

    try:
        x, info = spla.cg(A, rhs, rtol=tol, atol=0.0, maxiter=max_iter, M=M, callback=record)
    except TypeError:  # scipy < 1.12 spells the relative tolerance ``tol``
        x, info = spla.cg(A, rhs, tol=tol, atol=0.0, maxiter=max_iter, M=M, callback=record)
    if info < 0:
        raise LinearSolverError("conjugate gradient breakdown", history)
    return x


def linear_solve(
    A: sp.spmatrix,
    rhs: np.ndarray,
    method: Union[LinearSolverMethod, str, None] = None,
    tol: Optional[float] = None,
) -> np.ndarray:
    """Solve an SPD system to ||rhs - A x|| <= tol ||rhs||.

    The direct path uses a sparse LU factorization plus up to two steps of
    iterative refinement.
    """
    settings = get_settings()
    method = LinearSolverMethod(method or settings.linear_solver)
    tol = settings.tau_lin if tol is None else tol
    rhs = np.asarray(rhs, dtype=float)
    if rhs.size == 0:
        return np.zeros(0)
    A = sp.csr_matrix(A)
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros_like(rhs)

    history: list[float] = []
    if method is LinearSolverMethod.CG:
        x = _cg(A, rhs, tol, settings.cg_max_iter, history)
        residual = float(np.linalg.norm(rhs - A @ x))
    else:
        try:
            lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise LinearSolverError(f"factorization failed: {exc}") from exc
        x = lu.solve(rhs)
        residual = float(np.linalg.norm(rhs - A @ x))
        history.append(residual / rhs_norm)
        for _ in range(2):
            if residual <= tol * rhs_norm:
                break
            x = x + lu.solve(rhs - A @ x)
            residual = float(np.linalg.norm(rhs - A @ x))
            history.append(residual / rhs_norm)

    if not np.isfinite(residual) or residual > tol * rhs_norm:
        raise LinearSolverError(
            f"linear solve missed tolerance: residual {residual / rhs_norm:.3e} > {tol:.1e}", history
        )
    return x


def _solve_with_fixed(sys: ObstacleSystem, fixed_values: np.ndarray, fixed: np.ndarray, method=None) -> tuple[np.ndarray, float]:
    """Solve for the nodes not in ``fixed``; ``fixed_values`` holds the prescribed entries."""
    x = fixed_values.copy()
    unknown = np.flatnonzero(~fixed)
    if unknown.size == 0:
        return x, 0.0
    A = sys.A
    rhs = sys.b[unknown] - A[unknown][:, np.flatnonzero(fixed)] @ x[fixed]
    x[unknown] = linear_solve(A[unknown][:, unknown], rhs, method=method)
    residual = float(np.linalg.norm(rhs - A[unknown][:, unknown] @ x[unknown]))
    return x, residual


def constraining_force(sys: ObstacleSystem, phi: Union[P1Function, np.ndarray]) -> np.ndarray:
    """Nodal values <lambda_m, phi_p> = b_p - (A phi)_p on free nodes, 0 on Dirichlet nodes."""
    c = phi.coefficients if isinstance(phi, P1Function) else np.asarray(phi, dtype=float)
    lam = sys.b - sys.A @ c
    lam[sys.dirichlet] = 0.0
    return lam


def _scale(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    return 1.0 + (float(np.abs(finite).max()) if finite.size else 0.0)


def contact_mask(sys: ObstacleSystem, phi: np.ndarray, tau_feas: Optional[float] = None) -> np.ndarray:
    """Constrained free nodes where phi meets the obstacle within tolerance."""
    tau = (get_settings().tau_feas if tau_feas is None else tau_feas) * _scale(sys.g_m)
    mask = sys.constrained_mask.copy()
    mask[mask] = np.abs(phi[mask] - sys.g_m[mask]) <= tau
    return mask


def kkt_report(sys: ObstacleSystem, phi: np.ndarray, lam: np.ndarray) -> KKTReport:
    constrained = sys.constrained_mask
    finite = np.isfinite(sys.g_m)
    gap = np.where(finite, sys.g_m - phi, np.inf)
    feasibility = float(np.max(np.maximum(-gap[finite], 0.0), initial=0.0))
    complementarity = float(np.max(np.abs(lam[constrained] * gap[constrained]), initial=0.0))
    contact = contact_mask(sys, phi)
    sign = float(np.max(np.maximum(-lam[contact], 0.0), initial=0.0))
    return KKTReport(
        feasibility=feasibility,
        complementarity=complementarity,
        sign=sign,
        contact_nodes=int(contact.sum()),
    )


def _finish(
    sys: ObstacleSystem,
    mesh: Optional[Mesh],
    x: np.ndarray,
    active: np.ndarray,
    iterations: int,
    history: list[dict],
) -> DiscreteSolution:
    lam = constraining_force(sys, x)
    lam[~active] = 0.0
    kkt = kkt_report(sys, x, lam)
    settings = get_settings()
    scale = 1.0 + float(np.abs(sys.b).max(initial=0.0))
    if not kkt.passed(settings.tau_feas * _scale(sys.g_m), settings.tau_comp, settings.tau_sign, scale):
        logger.warning("⚠️ KKT residuals above tolerance: %s", kkt.as_dict())
    phi = P1Function(mesh, x) if mesh is not None else x
    return DiscreteSolution(phi=phi, lam=lam, active=active, iterations=iterations, history=history, kkt=kkt)


def solve_pdas(
    sys: ObstacleSystem,
    mesh: Optional[Mesh] = None,
    c_pdas: Optional[float] = None,
    max_iter: Optional[int] = None,
    initial_active: Optional[np.ndarray] = None,
    method: Union[LinearSolverMethod, str, None] = None,
    dump: Union[str, Path, None] = None,
) -> DiscreteSolution:
    """Primal-dual active set iteration.

    Without ``initial_active`` the iteration starts from the unconstrained
    solution clipped to the obstacle with lambda = 0, so the first active set
    is empty. The returned multiplier is b - A phi on the final active set and
    exactly 0 elsewhere.
    """
    settings = get_settings()
    c_pdas = settings.c_pdas if c_pdas is None else c_pdas
    max_iter = settings.pdas_max_iter if max_iter is None else max_iter
    if c_pdas <= 0:
        raise SolverError(f"c_pdas must be positive, got {c_pdas}")

    free = sys.free_mask
    constrained = sys.constrained_mask
    base = sys.boundary_vector()
    g = np.where(np.isfinite(sys.g_m), sys.g_m, 0.0)

    if initial_active is None:
        active = np.zeros(sys.n, dtype=bool)
    else:
        active = np.asarray(initial_active, dtype=bool) & constrained

    seen: set[bytes] = {np.packbits(active).tobytes()}
    history: list[dict] = []
    for iteration in range(1, max_iter + 1):
        values = base.copy()
        values[active] = g[active]
        x, residual = _solve_with_fixed(sys, values, ~free | active, method)
        lam = np.zeros(sys.n)
        lam[active] = (sys.b - sys.A @ x)[active]

        indicator = lam + c_pdas * (x - g)
        new_active = constrained & (indicator > 0)
        changed = int(np.count_nonzero(new_active != active))
        history.append({"iteration": iteration, "active_size": int(active.sum()), "changed": changed, "residual": residual})
        logger.debug("PDAS it=%d active=%d changed=%d residual=%.3e", iteration, active.sum(), changed, residual)

        if changed == 0:
            if dump is not None:
                write_rows(dump, history)
            return _finish(sys, mesh, x, active, iteration, history)

        key = np.packbits(new_active).tobytes()
        if key in seen:
            raise ActiveSetCycleError(
                "active set revisited without convergence", {"iteration": iteration, "active_size": int(new_active.sum())}
            )
        seen.add(key)
        active = new_active

    raise MaxIterationsError(f"PDAS did not converge in {max_iter} iterations", {"active_size": int(active.sum())})


def solve_by_enumeration(sys: ObstacleSystem, mesh: Optional[Mesh] = None, max_nodes: int = 12) -> DiscreteSolution:
    """Exhaustive search over all active sets of the constrained free nodes."""
    candidates = np.flatnonzero(sys.constrained_mask)
    if candidates.size > max_nodes:
        raise SolverError(f"enumeration limited to {max_nodes} constrained nodes, got {candidates.size}")
    free = sys.free_mask
    base = sys.boundary_vector()
    tol = 1e-10 * _scale(sys.g_m) * (1.0 + float(np.abs(sys.b).max(initial=0.0)))
    count = 0
    for size in range(candidates.size + 1):
        for subset in itertools.combinations(candidates, size):
            count += 1
            active = np.zeros(sys.n, dtype=bool)
            active[list(subset)] = True
            values = base.copy()
            values[active] = sys.g_m[active]
            x, _ = _solve_with_fixed(sys, values, ~free | active)
            lam = (sys.b - sys.A @ x)
            inactive = sys.constrained_mask & ~active
            if (x[inactive] <= sys.g_m[inactive] + tol).all() and (lam[active] >= -tol).all():
                logger.debug("Enumeration found the KKT active set after %d candidates", count)
                return _finish(sys, mesh, x, active, count, [])
    raise SolverError("no active set satisfies the KKT conditions", {"candidates": count})
