from __future__ import annotations

import logging
import sys

from obstacle_afem.schemas.common import EstimatorChoice
from obstacle_afem.schemas.runs import AdaptiveConfig
from obstacle_afem.services.adaptive_service import run_adaptive
from obstacle_afem.services.benchmark_service import eoc_window_fit, localisation_ratio
from obstacle_afem.utils.export import write_rows


def study(problem: str, eps: float, estimator: EstimatorChoice, out: str) -> None:
    result = run_adaptive(AdaptiveConfig(problem=problem, eps=eps, estimator=estimator))
    trace = result.trace
    write_rows(f"{out}/{problem}_eps{eps:g}_{estimator.value}_trace.csv", trace.rows())

    dofs = [r.dofs for r in trace.records]
    errors = [r.error_energy for r in trace.records]
    print(f"{problem} eps={eps:g} {estimator.value}: {len(trace)} iterations, stop={trace.stop_reason}")
    print(f"  final dofs={dofs[-1]} error={errors[-1]}")
    print(f"  EOC over the last 5 iterations: {eoc_window_fit(dofs, errors)}")
    if problem.startswith("example2"):
        print(f"  core/annulus mean diameter: {localisation_ratio(result.mesh)}")


def main(out: str = "results/convergence") -> None:
    logging.basicConfig(level=logging.INFO)
    # error reduction with the new and the standard estimator
    for estimator in (EstimatorChoice.ETA, EstimatorChoice.ETA_STD):
        study("example1", 0.08, estimator, out)
    # resolution of the free boundary
    for estimator in (EstimatorChoice.ETA, EstimatorChoice.ETA_STD):
        study("example2", 0.01, estimator, out)


if __name__ == "__main__":
    main(*sys.argv[1:2])
