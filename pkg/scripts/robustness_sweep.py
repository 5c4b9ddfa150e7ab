from __future__ import annotations

import logging
import sys

from obstacle_afem.schemas.common import EstimatorChoice
from obstacle_afem.schemas.runs import RunConfig
from obstacle_afem.services.run_service import run


EPS_VALUES = [0.4, 0.2, 0.1, 0.05]


def main(out: str = "results/robustness", workers: int = 4) -> int:
    logging.basicConfig(level=logging.INFO)
    config = RunConfig(
        problem="example1",
        eps=EPS_VALUES,
        estimators=[EstimatorChoice.ETA, EstimatorChoice.ETA_NR],
        output_dir=out,
        workers=workers,
    )
    summary = run(config)

    print("eps      estimator  nodes    efficiency")
    for row in summary.efficiency:
        index = row["efficiency"]
        print(f"{row['eps']:<8g} {row['estimator']:<10} {row['nodes']:<8} {index if index is None else f'{index:.4f}'}")
    for estimator in ("eta", "eta_nr"):
        ratios = {r["robustness_ratio"] for r in summary.efficiency if r["estimator"] == estimator}
        print(f"{estimator}: max/min efficiency over eps = {ratios.pop() if ratios else None}")
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main(*sys.argv[1:2]))
