"""
Adaptive loop: solve, estimate, mark, refine.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..exceptions import AfemError, EstimatorError
from ..models.estimator import FULL_CONTACT, SEMI_CONTACT, EstimatorBreakdown
from ..models.mesh import Mesh
from ..models.problem import ProblemDefinition
from ..models.solution import DiscreteSolution
from ..models.trace import AdaptiveTrace, IterationRecord
from ..schemas.runs import AdaptiveConfig
from .assembly_service import build_system
from .benchmark_service import energy_error, efficiency_index, get_problem
from .estimator_service import element_indicators, estimate
from .mesh_service import bisect, build_patches, uniform_refine
from .vi_solver import solve_pdas

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class AdaptiveResult:
    problem: ProblemDefinition
    trace: AdaptiveTrace
    mesh: Mesh
    solution: DiscreteSolution
    breakdown: EstimatorBreakdown
    indicators: np.ndarray


def mark_mean_value(indicators: np.ndarray, factor: float, squared: bool = False) -> np.ndarray:
    """Elements whose indicator exceeds ``factor`` times the mean indicator.

    With ``squared`` the rule compares squared indicators with the mean of
    the squares.
    """
    values = np.asarray(indicators, dtype=float)
    if values.size == 0:
        raise EstimatorError("no indicators to mark")
    if (values < 0).any():
        raise EstimatorError("indicators must be nonnegative", {"min": float(values.min())})
    if squared:
        values = values**2
    return np.flatnonzero(values > factor * values.mean())


def _record(
    iteration: int,
    mesh: Mesh,
    solution: DiscreteSolution,
    breakdown: EstimatorBreakdown,
    errors: Optional[tuple[float, float]],
    config: AdaptiveConfig,
    previous: Optional[IterationRecord],
    wall_time: float,
) -> IterationRecord:
    dofs = mesh.n_nodes - mesh.node_sets.dirichlet.size
    kkt = solution.kkt
    record = IterationRecord(
        iteration=iteration,
        elements=mesh.n_elements,
        nodes=mesh.n_nodes,
        dofs=dofs,
        eta=breakdown.eta,
        eta_rss=breakdown.eta_rss,
        eta_std=breakdown.eta_std,
        eta_nr=breakdown.eta_nr,
        eta_std_full=breakdown.eta_std_full,
        components=tuple(float(v) for v in breakdown.components),
        osc_f=breakdown.osc_f,
        osc_pi=breakdown.osc_pi,
        pdas_iterations=solution.iterations,
        contact_nodes=kkt.contact_nodes if kkt else 0,
        semi_contact=breakdown.count(SEMI_CONTACT),
        full_contact=breakdown.count(FULL_CONTACT),
        kkt_feasibility=kkt.feasibility if kkt else 0.0,
        kkt_complementarity=kkt.complementarity if kkt else 0.0,
        wall_time=wall_time,
    )
    if errors is not None:
        record.error_energy, record.error_h1 = errors
        record.efficiency = efficiency_index(config.estimator, record.total(config.estimator), record.eta_nr, *errors)
        record.reliability = record.error_energy / record.eta if record.eta > 0 else None
        if previous is not None and previous.error_energy and record.error_energy > 0 and dofs != previous.dofs:
            record.eoc = float(-np.log(record.error_energy / previous.error_energy) / np.log(dofs / previous.dofs))
    return record


def run_adaptive(config: AdaptiveConfig, problem: Optional[ProblemDefinition] = None) -> AdaptiveResult:
    """Run the adaptive loop until the element cap is passed or nothing is marked."""
    problem = problem or get_problem(config.problem, config.eps)
    data = problem.data
    refinements = problem.initial_refinements if config.initial_uniform_refinements is None else config.initial_uniform_refinements
    mesh = uniform_refine(problem.mesh, refinements)
    if config.max_elements <= mesh.n_elements:
        logger.warning(
            "⚠️ max_elements=%d does not exceed the initial %d elements; no adaptive step will run",
            config.max_elements,
            mesh.n_elements,
        )

    trace = AdaptiveTrace(problem=problem.name, eps=config.eps, estimator=config.estimator)
    warm: Optional[np.ndarray] = None
    logger.info(
        "Adaptive run %s eps=%g estimator=%s: %d initial elements",
        problem.name,
        config.eps,
        config.estimator.value,
        mesh.n_elements,
    )

    for iteration in range(config.max_iterations + 1):
        start = time.perf_counter()
        try:
            system = build_system(mesh, data)
            dump = Path(config.pdas_dump) / f"pdas_{iteration:03d}.csv" if config.pdas_dump else None
            solution = solve_pdas(system, mesh, initial_active=warm if config.warm_start else None, dump=dump)
            patches = build_patches(mesh)
            breakdown = estimate(mesh, solution, data, g_m=system.g_m, patches=patches)
            errors = energy_error(mesh, solution.coefficients, problem.exact, data.eps) if problem.exact else None
            indicators = element_indicators(breakdown.node_squares(config.estimator), mesh)
        except AfemError as exc:
            exc.with_context(iteration=iteration, elements=mesh.n_elements)
            logger.error("❌ Adaptive iteration %d failed: %s", iteration, exc)
            raise

        previous = trace.records[-1] if trace.records else None
        record = _record(iteration, mesh, solution, breakdown, errors, config, previous, time.perf_counter() - start)
        trace.append(record)
        logger.info(
            "it=%d elements=%d eta=%.4e pdas=%d%s",
            iteration,
            record.elements,
            record.eta,
            record.pdas_iterations,
            f" error={record.error_energy:.4e}" if record.error_energy is not None else "",
        )

        if mesh.n_elements >= config.max_elements:
            trace.stop_reason = "max_elements"
            break
        marked = mark_mean_value(indicators, config.marking_factor, config.squared_mean)
        if marked.size == 0:
            trace.stop_reason = "nothing_marked"
            logger.warning(
                "⚠️ Marking selected no element at iteration %d (%d elements, cap %d); the run stops short of the cap",
                iteration,
                mesh.n_elements,
                config.max_elements,
            )
            break
        if iteration == config.max_iterations:
            trace.stop_reason = "max_iterations"
            break
        mesh, prolongation = bisect(mesh, marked)
        warm = prolongation.apply_mask(solution.active)

    logger.info("✅ %s eps=%g finished after %d iterations (%s)", problem.name, config.eps, len(trace), trace.stop_reason)
    return AdaptiveResult(
        problem=problem,
        trace=trace,
        mesh=mesh,
        solution=solution,
        breakdown=breakdown,
        indicators=indicators,
    )
