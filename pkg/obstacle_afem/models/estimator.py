"""
Estimator results: node classes, weights and the per-node breakdown.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ..schemas.common import EstimatorChoice, NodeClass

# Node class codes stored in ``EstimatorBreakdown.classes``
NO_CONTACT = 0
SEMI_CONTACT = 1
FULL_CONTACT = 2

CLASS_NAMES = {
    NO_CONTACT: NodeClass.NO_CONTACT,
    SEMI_CONTACT: NodeClass.SEMI_CONTACT,
    FULL_CONTACT: NodeClass.FULL_CONTACT,
}

N_COMPONENTS = 7


@dataclass(frozen=True)
class Weights:
    """Per-node scaling of volume and side residuals."""

    volume: np.ndarray
    side: np.ndarray

    @classmethod
    def robust(cls, h: np.ndarray, eps: float) -> "Weights":
        volume = np.minimum(h / eps, 1.0)
        return cls(volume=volume, side=np.sqrt(volume) / np.sqrt(eps))

    @classmethod
    def non_robust(cls, h: np.ndarray) -> "Weights":
        return cls(volume=np.asarray(h, dtype=float), side=np.sqrt(h))


@dataclass(eq=False)
class EstimatorBreakdown:
    """Per-node contributions and derived totals.

    ``eta_nodes[:, k]`` is eta_{k+1,p} already restricted to its index set.
    ``std_nodes`` holds the standard residual terms eta_1..eta_3 over all
    nodes, without the full-contact exclusion.
    """

    classes: np.ndarray  # (N,) NO_CONTACT / SEMI_CONTACT / FULL_CONTACT
    contact: np.ndarray  # (N,) bool
    s_p: np.ndarray  # (N,)
    eta_nodes: np.ndarray  # (N, 7)
    nr_nodes: np.ndarray  # (N, 7)
    std_nodes: np.ndarray  # (N, 3)
    osc_f_nodes: np.ndarray  # (N,)
    osc_pi_nodes: np.ndarray  # (N,)
    obstacle_jump: np.ndarray  # (N,)
    weights: Weights
    clipped: int = 0
    meta: dict = field(default_factory=dict)

    # ------------------------------------------------------------- per class
    def class_names(self) -> list[NodeClass]:
        return [CLASS_NAMES[int(c)] for c in self.classes]

    def count(self, code: int) -> int:
        return int(np.count_nonzero(self.classes == code))

    # --------------------------------------------------------------- totals
    @staticmethod
    def _norms(values: np.ndarray) -> np.ndarray:
        return np.sqrt(np.sum(values**2, axis=0))

    @property
    def components(self) -> np.ndarray:
        """(7,) eta_k = (sum_p eta_{k,p}^2)^{1/2}."""
        return self._norms(self.eta_nodes)

    @property
    def eta(self) -> float:
        return float(self.components.sum())

    @property
    def eta_rss(self) -> float:
        return float(np.sqrt(np.sum(self.components**2)))

    @property
    def eta_std(self) -> float:
        """eta_1 + eta_2 + eta_3 of the robust estimator."""
        return float(self.components[:3].sum())

    @property
    def eta_std_full(self) -> float:
        """Standard residual estimator summed over every node."""
        return float(self._norms(self.std_nodes).sum())

    @property
    def eta_nr(self) -> float:
        return float(self._norms(self.nr_nodes).sum())

    @property
    def osc_f(self) -> float:
        return float(np.sqrt(np.sum(self.osc_f_nodes**2)))

    @property
    def osc_pi(self) -> float:
        return float(np.sqrt(np.sum(self.osc_pi_nodes**2)))

    def total(self, choice: Union[EstimatorChoice, str]) -> float:
        choice = EstimatorChoice(choice)
        if choice is EstimatorChoice.ETA:
            return self.eta
        if choice is EstimatorChoice.ETA_STD:
            return self.eta_std_full
        return self.eta_nr

    def node_squares(self, choice: Union[EstimatorChoice, str]) -> np.ndarray:
        """sum_k eta_{k,p}^2 for the chosen estimator."""
        choice = EstimatorChoice(choice)
        if choice is EstimatorChoice.ETA:
            values = self.eta_nodes
        elif choice is EstimatorChoice.ETA_STD:
            values = self.std_nodes
        else:
            values = self.nr_nodes
        return np.sum(values**2, axis=1)

    def totals(self) -> dict[str, float]:
        out = {
            "eta": self.eta,
            "eta_rss": self.eta_rss,
            "eta_std": self.eta_std,
            "eta_std_full": self.eta_std_full,
            "eta_nr": self.eta_nr,
            "osc_f": self.osc_f,
            "osc_pi": self.osc_pi,
        }
        for k, value in enumerate(self.components, start=1):
            out[f"eta{k}"] = float(value)
        out["semi_contact"] = self.count(SEMI_CONTACT)
        out["full_contact"] = self.count(FULL_CONTACT)
        return out

    def node_rows(self) -> list[dict]:
        rows = []
        for p in range(self.classes.shape[0]):
            row = {"node_id": p, "class": CLASS_NAMES[int(self.classes[p])].value, "s_p": float(self.s_p[p])}
            for k in range(N_COMPONENTS):
                row[f"eta{k + 1}"] = float(self.eta_nodes[p, k])
            rows.append(row)
        return rows
