"""
Experiment runs: execute a sweep, write one result bundle per job and the
summary tables.
"""

from __future__ import annotations

import logging
import os
from collections import defaultdict
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import __version__
from ..config import get_settings
from ..exceptions import AfemError, ConfigurationError
from ..models.trace import TRACE_COLUMNS
from ..schemas.common import EstimatorChoice
from ..schemas.runs import AdaptiveConfig, BundleIndex, BundleRecord, RunConfig, RunMetadata
from ..utils.export import column_definitions, write_json, write_rows
from ..utils.job_pool import JobPool
from ..utils.monitoring import ResourceMonitor, system_info
from .adaptive_service import run_adaptive
from .benchmark_service import eoc_window_fit, is_known_problem, reliability_ratios
from .mesh_service import mesh_to_snapshot

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

BREAKDOWN_COLUMNS = ["node_id", "class", "s_p"] + [f"eta{k}" for k in range(1, 8)]
INDICATOR_COLUMNS = ["element_id", "indicator"]
EFFICIENCY_COLUMNS = [
    "eps",
    "estimator",
    "nodes",
    "efficiency",
    "robustness_ratio",
    "reliability_max",
    "reliability_stability",
]
EOC_COLUMNS = [
    "problem",
    "eps",
    "estimator",
    "iterations",
    "dofs",
    "error_energy",
    "eoc_last5",
    "stop_reason",
    "reached_cap",
]


@dataclass
class RunSummary:
    bundles: list[BundleRecord]
    efficiency: list[dict]
    eoc: list[dict]

    @property
    def failures(self) -> list[BundleRecord]:
        return [b for b in self.bundles if b.status != "ok"]

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.failures else EXIT_OK


def bundle_name(problem: str, eps: float, estimator: EstimatorChoice) -> str:
    stem = Path(problem).stem if problem.endswith(".json") else problem
    return f"{stem}_eps{eps:g}_{EstimatorChoice(estimator).value}"


def _conventions(config: AdaptiveConfig) -> dict:
    return {
        "sign": "upper obstacle psi <= g; lower obstacle data are negated",
        "eta_total": "plain sum eta1 + ... + eta7",
        "marking": f"mean value rule on {'squared' if config.squared_mean else 'plain'} element indicators",
        "marking_factor": config.marking_factor,
        "element_indicator": "sum over vertices of eta_p^2 / #omega_p, square root",
        "refinement": "single newest vertex bisection of marked elements plus conforming closure",
        "uniform_refinement": "two bisection sweeps per level",
        "stop": "element count >= max_elements after refinement, or nothing marked",
        "eoc_axis": "free nodes (DOFs)",
        "warm_start": config.warm_start,
    }


def _tolerances() -> dict[str, float]:
    settings = get_settings()
    return {
        "tau_feas": settings.tau_feas,
        "tau_comp": settings.tau_comp,
        "tau_sign": settings.tau_sign,
        "tau_lin": settings.tau_lin,
        "residual_sign_tol": settings.residual_sign_tol,
        "radicand_tol": settings.radicand_tol,
        "c_pdas": settings.c_pdas,
        "pdas_max_iter": settings.pdas_max_iter,
    }


def _metadata(config: AdaptiveConfig, status: str, **extra) -> RunMetadata:
    settings = get_settings()
    return RunMetadata(
        package_version=__version__,
        problem=config.problem,
        eps=config.eps,
        estimator=config.estimator,
        status=status,
        tolerances=_tolerances(),
        quadrature={"load": "7-point degree 5", "neumann": "4-point Gauss", "error": "7-point degree 5, x4 on cut elements"},
        conventions={**_conventions(config), "linear_solver": settings.linear_solver},
        **extra,
    )


def execute_job(config: AdaptiveConfig, out_root: str, reference_mode: bool = False) -> BundleRecord:
    """Run one adaptive job and write its bundle; solver failures become a failed record."""
    directory = Path(out_root) / bundle_name(config.problem, config.eps, config.estimator)
    directory.mkdir(parents=True, exist_ok=True)
    monitor = ResourceMonitor()
    monitor.sample("start")
    logger.info("Starting job %s", directory.name)

    try:
        result = run_adaptive(config)
    except AfemError as e:
        monitor.sample("failed")
        metadata = _metadata(config, "failed", error=str(e), resources=monitor.summary())
        files = {"metadata": str(write_json(directory / "metadata.json", metadata).relative_to(out_root))}
        logger.error(f"❌ Job {directory.name} failed: {e}")
        return BundleRecord(
            problem=config.problem,
            eps=config.eps,
            estimator=config.estimator,
            status="failed",
            error=str(e),
            directory=str(directory),
            files=files,
        )

    trace = result.trace
    columns = [c for c in TRACE_COLUMNS if not (reference_mode and c == "wall_time")]
    paths = {
        "trace": write_rows(directory / "trace.csv", trace.rows(), columns),
        "mesh": write_json(directory / "mesh.json", mesh_to_snapshot(result.mesh)),
        "breakdown": write_rows(directory / "breakdown.csv", result.breakdown.node_rows(), BREAKDOWN_COLUMNS),
        "indicators": write_rows(
            directory / "indicators.csv",
            ({"element_id": e, "indicator": float(v)} for e, v in enumerate(result.indicators)),
            INDICATOR_COLUMNS,
        ),
    }
    monitor.sample("finish")

    final = trace.final
    reliability = reliability_ratios(trace) if trace.has_errors else np.array([])
    summary = {
        "problem": config.problem,
        "eps": config.eps,
        "estimator": config.estimator.value,
        "iterations": len(trace),
        "elements": final.elements,
        "nodes": final.nodes,
        "dofs": final.dofs,
        "eta": final.eta,
        "eta_std": final.eta_std,
        "eta_nr": final.eta_nr,
        "error_energy": final.error_energy,
        "error_h1": final.error_h1,
        "efficiency": final.efficiency,
        "eoc_last5": eoc_window_fit([r.dofs for r in trace.records], [r.error_energy for r in trace.records])
        if trace.has_errors
        else None,
        "reliability_max": float(np.nanmax(reliability)) if reliability.size else None,
        "stop_reason": trace.stop_reason,
        "reached_cap": trace.stop_reason == "max_elements",
    }
    resources = {} if reference_mode else {**monitor.summary(), "system": system_info()}
    metadata = _metadata(
        config,
        "ok",
        iterations=len(trace),
        final_elements=final.elements,
        stop_reason=trace.stop_reason,
        problem_metadata=result.problem.metadata,
        resources=resources,
        columns=column_definitions(columns + BREAKDOWN_COLUMNS + INDICATOR_COLUMNS),
    )
    paths["metadata"] = write_json(directory / "metadata.json", metadata)
    logger.info(f"✅ Job {directory.name} wrote {len(paths)} files")
    return BundleRecord(
        problem=config.problem,
        eps=config.eps,
        estimator=config.estimator,
        status="ok",
        directory=str(directory),
        files={k: str(Path(p).relative_to(out_root)) for k, p in paths.items()},
        final=summary,
    )


def _ratio(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None and v > 0]
    if not present:
        return None
    return float(max(present) / min(present))


def summarize(bundles: Sequence[BundleRecord]) -> tuple[list[dict], list[dict]]:
    """Efficiency-vs-eps table at the final iteration and the EOC table per run."""
    ok = [b for b in bundles if b.status == "ok"]
    by_estimator: dict[str, list[BundleRecord]] = defaultdict(list)
    for b in ok:
        by_estimator[b.estimator.value].append(b)

    efficiency, eoc = [], []
    for estimator, group in by_estimator.items():
        group = sorted(group, key=lambda b: -b.eps)
        robustness = _ratio([b.final.get("efficiency") for b in group])
        stability = _ratio([b.final.get("reliability_max") for b in group])
        for b in group:
            efficiency.append(
                {
                    "eps": b.eps,
                    "estimator": estimator,
                    "nodes": b.final.get("nodes"),
                    "efficiency": b.final.get("efficiency"),
                    "robustness_ratio": robustness,
                    "reliability_max": b.final.get("reliability_max"),
                    "reliability_stability": stability,
                }
            )
    for b in ok:
        row = {k: b.final.get(k) for k in EOC_COLUMNS}
        row.update(problem=b.problem, eps=b.eps, estimator=b.estimator.value)
        eoc.append(row)
    return efficiency, eoc


def validate(config: RunConfig) -> Path:
    """Checks that need the filesystem; raises ConfigurationError before any compute."""
    if not is_known_problem(config.problem):
        raise ConfigurationError(f"unknown problem '{config.problem}'")
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigurationError(f"cannot create output directory {out}", {"error": str(e)}) from e
    if not os.access(out, os.W_OK):
        raise ConfigurationError(f"output directory {out} is not writable")
    return out


def run(config: RunConfig) -> RunSummary:
    """Run the (eps, estimator) sweep and write bundles, summaries and the index."""
    out = validate(config)
    jobs = config.jobs()
    if config.pdas_dump:
        jobs = [
            job.model_copy(update={"pdas_dump": str(out / bundle_name(job.problem, job.eps, job.estimator) / "pdas")})
            for job in jobs
        ]
    logger.info("Running %d jobs for %s with %d workers", len(jobs), config.problem, config.workers)

    pool = JobPool(workers=config.workers, sequential=config.reference_mode)
    outcomes = pool.map(partial(execute_job, out_root=str(out), reference_mode=config.reference_mode), jobs)
    bundles = []
    for outcome in outcomes:
        if outcome.ok:
            bundles.append(outcome.result)
        else:
            job = outcome.job
            bundles.append(
                BundleRecord(
                    problem=job.problem,
                    eps=job.eps,
                    estimator=job.estimator,
                    status="failed",
                    error=outcome.error,
                    directory=str(out / bundle_name(job.problem, job.eps, job.estimator)),
                )
            )

    efficiency, eoc = summarize(bundles)
    write_rows(out / "summary_efficiency.csv", efficiency, EFFICIENCY_COLUMNS)
    write_rows(out / "summary_eoc.csv", eoc, EOC_COLUMNS)
    write_json(out / "bundles.json", BundleIndex(bundles=bundles))

    summary = RunSummary(bundles=bundles, efficiency=efficiency, eoc=eoc)
    for failed in summary.failures:
        logger.error(f"❌ {bundle_name(failed.problem, failed.eps, failed.estimator)}: {failed.error}")
    return summary
