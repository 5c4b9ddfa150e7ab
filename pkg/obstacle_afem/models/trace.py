"""
Per-iteration record of an adaptive run.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from ..schemas.common import EstimatorChoice

TRACE_COLUMNS = [
    "iteration",
    "elements",
    "nodes",
    "dofs",
    "eta",
    "eta_rss",
    "eta_std",
    "eta_nr",
    "eta_std_full",
    "eta1",
    "eta2",
    "eta3",
    "eta4",
    "eta5",
    "eta6",
    "eta7",
    "osc_f",
    "osc_pi",
    "error_energy",
    "error_h1",
    "efficiency",
    "reliability",
    "eoc",
    "pdas_iterations",
    "contact_nodes",
    "semi_contact",
    "full_contact",
    "kkt_feasibility",
    "kkt_complementarity",
    "wall_time",
]


@dataclass
class IterationRecord:
    iteration: int
    elements: int
    nodes: int
    dofs: int
    eta: float
    eta_rss: float
    eta_std: float
    eta_nr: float
    eta_std_full: float
    components: tuple[float, ...]
    osc_f: float
    osc_pi: float
    pdas_iterations: int
    contact_nodes: int
    semi_contact: int
    full_contact: int
    kkt_feasibility: float
    kkt_complementarity: float
    wall_time: float
    error_energy: Optional[float] = None
    error_h1: Optional[float] = None
    efficiency: Optional[float] = None
    reliability: Optional[float] = None
    eoc: Optional[float] = None

    def total(self, choice: Union[EstimatorChoice, str]) -> float:
        """Total of the estimator that drives marking for ``choice``."""
        choice = EstimatorChoice(choice)
        if choice is EstimatorChoice.ETA:
            return self.eta
        if choice is EstimatorChoice.ETA_STD:
            return self.eta_std_full
        return self.eta_nr

    def as_row(self) -> dict:
        row = asdict(self)
        for k, value in enumerate(row.pop("components"), start=1):
            row[f"eta{k}"] = value
        return row


@dataclass
class AdaptiveTrace:
    """Ordered iterations of one (problem, eps, estimator) run."""

    problem: str
    eps: float
    estimator: EstimatorChoice
    records: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = ""

    def append(self, record: IterationRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    @property
    def has_errors(self) -> bool:
        return bool(self.records) and all(r.error_energy is not None for r in self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r.as_row()[name] is None else r.as_row()[name] for r in self.records], dtype=float)

    def rows(self) -> list[dict]:
        return [r.as_row() for r in self.records]

    def element_counts_increase(self) -> bool:
        counts = [r.elements for r in self.records]
        return all(b > a for a, b in zip(counts, counts[1:]))
