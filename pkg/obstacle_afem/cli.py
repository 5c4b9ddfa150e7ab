"""
Command line entry point for experiment runs.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from .config import get_settings
from .exceptions import ConfigurationError
from .schemas.common import EstimatorChoice
from .schemas.runs import RunConfig
from .services.run_service import EXIT_CONFIG, run

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(
        prog=settings.app_name,
        description="Adaptive finite elements for singularly perturbed obstacle problems",
    )
    parser.add_argument("--problem", required=True, help="example1 | example2 | example2_free | path to a JSON descriptor")
    parser.add_argument("--eps", type=float, action="append", required=True, help="diffusion scale; repeat for a sweep")
    parser.add_argument(
        "--estimator",
        action="append",
        choices=[c.value for c in EstimatorChoice],
        help="estimator driving the marking; repeatable (default: eta)",
    )
    parser.add_argument("--marking-factor", type=float, default=settings.marking_factor)
    parser.add_argument("--max-elements", type=int, default=settings.max_elements)
    parser.add_argument("--initial-refinements", type=int, default=None, help="override the problem's uniform pre-refinements")
    parser.add_argument("--out", default=settings.output_dir, help="output directory")
    parser.add_argument("--reference-mode", action="store_true", help="sequential, bit-reproducible run")
    parser.add_argument("--workers", type=int, default=settings.workers)
    parser.add_argument("--squared-mean", action="store_true", help="mark against the mean of squared indicators")
    parser.add_argument("--pdas-dump", action="store_true", help="write per-solve active set histories")
    parser.add_argument("--log-level", default=settings.log_level)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        problem=args.problem,
        eps=args.eps,
        estimators=args.estimator or [EstimatorChoice.ETA],
        marking_factor=args.marking_factor,
        max_elements=args.max_elements,
        initial_refinements=args.initial_refinements,
        output_dir=args.out,
        reference_mode=args.reference_mode,
        workers=args.workers,
        squared_mean=args.squared_mean,
        pdas_dump=args.pdas_dump,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = config_from_args(args)
        summary = run(config)
    except (ValidationError, ConfigurationError) as e:
        logger.error(f"❌ Configuration error: {e}")
        return EXIT_CONFIG

    done = len(summary.bundles) - len(summary.failures)
    if summary.failures:
        logger.warning(f"⚠️ {done}/{len(summary.bundles)} jobs finished, {len(summary.failures)} failed")
    else:
        logger.info(f"✅ {done} jobs finished, results in {config.output_dir}")
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main())
