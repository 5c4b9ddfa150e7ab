"""
CSV and JSON writers for run artifacts.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Column definitions shipped in every metadata sidecar
COLUMN_DEFINITIONS: dict[str, str] = {
    "iteration": "adaptive iteration index, 0 = initial mesh",
    "elements": "number of triangles",
    "nodes": "number of mesh vertices",
    "dofs": "number of free (non-Dirichlet) nodes",
    "eta": "robust estimator, plain sum of eta1..eta7",
    "eta_rss": "root-sum-square of eta1..eta7",
    "eta_std": "standard residual estimator eta1+eta2+eta3",
    "eta_nr": "non-robust variant with h_p weights",
    "eta_std_full": "standard residual estimator over every node, drives eta_std marking",
    "eta1": "volume residual (sum_p eta_1p^2)^(1/2)",
    "eta2": "jump residual (sum_p eta_2p^2)^(1/2)",
    "eta3": "Neumann residual (sum_p eta_3p^2)^(1/2)",
    "eta4": "semi-contact complementarity term",
    "eta5": "semi-contact obstacle consistency term",
    "eta6": "full-contact obstacle consistency term",
    "eta7": "obstacle violation term",
    "osc_f": "data oscillation of f",
    "osc_pi": "data oscillation of pi",
    "error_energy": "exact error in the eps-weighted energy norm",
    "error_h1": "exact error in the H1 norm",
    "efficiency": "estimator divided by the matching exact error",
    "reliability": "energy error divided by eta",
    "eoc": "experimental order of convergence in DOFs",
    "pdas_iterations": "active set iterations of the obstacle solve",
    "contact_nodes": "nodes where the solution meets the obstacle",
    "semi_contact": "number of semi-contact nodes",
    "full_contact": "number of full-contact nodes",
    "kkt_feasibility": "max positive part of phi - g",
    "kkt_complementarity": "max |lambda (g - phi)|",
    "wall_time": "seconds spent in the iteration",
    "node_id": "mesh vertex index",
    "class": "no_contact | semi_contact | full_contact",
    "s_p": "lumped constraining force at the node",
    "element_id": "triangle index",
    "indicator": "element marking indicator",
    "problem": "problem registry name or descriptor name",
    "eps": "diffusion scale eps",
    "estimator": "estimator that drove the marking",
    "eoc_last5": "least squares EOC over the last five iterations",
    "robustness_ratio": "max / min efficiency over the eps sweep of one estimator",
    "reliability_max": "largest error_energy / eta over the iterations of one run",
    "reliability_stability": "max / min reliability_max over the eps sweep of one estimator",
    "stop_reason": "max_elements | nothing_marked | max_iterations",
    "reached_cap": "run stopped at the element cap; false means the EOC rests on a short trace",
}


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if hasattr(value, "value"):
        return value.value
    return value


def write_rows(path: PathLike, rows: Iterable[Mapping[str, Any]], columns: Optional[Sequence[str]] = None) -> Path:
    """Write dict rows as CSV; columns default to the keys of the first row."""
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in columns})
    logger.debug("Wrote %d rows to %s", len(rows), path)
    return path


def read_rows(path: PathLike) -> list[dict[str, str]]:
    with Path(path).open(newline="") as handle:
        return list(csv.DictReader(handle))


def write_json(path: PathLike, payload: Union[BaseModel, Mapping[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, BaseModel):
        text = payload.model_dump_json(indent=2)
    else:
        text = json.dumps(payload, indent=2, sort_keys=True, default=_cell)
    path.write_text(text + "\n")
    return path


def column_definitions(columns: Iterable[str]) -> dict[str, str]:
    """Definitions for the given columns; unknown columns raise KeyError."""
    return {c: COLUMN_DEFINITIONS[c] for c in columns}
