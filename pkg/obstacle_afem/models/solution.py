from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from ..exceptions import SolverError
from ..utils.quadrature import QuadratureRule
from .mesh import Mesh


@dataclass(frozen=True, eq=False)
class P1Function:
    """Continuous piecewise linear field given by its nodal values."""

    mesh: Mesh
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.mesh.n_nodes,):
            raise ValueError(f"expected {self.mesh.n_nodes} coefficients, got shape {c.shape}")
        object.__setattr__(self, "coefficients", c)

    def __getitem__(self, p):
        return self.coefficients[p]

    @property
    def element_values(self) -> np.ndarray:
        """(M, 3) nodal values per element."""
        return self.coefficients[self.mesh.elements]

    def at_quadrature(self, rule: QuadratureRule) -> np.ndarray:
        """(M, Q) values at the quadrature points of every element."""
        return self.element_values @ rule.points.T

    def at_barycentric(self, bary: np.ndarray) -> np.ndarray:
        """(M, K) values at barycentric points of shape (K, 3)."""
        return self.element_values @ np.asarray(bary).T

    @property
    def gradients(self) -> np.ndarray:
        """(M, 2) elementwise constant gradient."""
        return np.einsum("mi,mid->md", self.element_values, self.mesh.gradients)

    def __neg__(self) -> "P1Function":
        return P1Function(self.mesh, -self.coefficients)


@dataclass(frozen=True, eq=False)
class ObstacleSystem:
    """Discrete obstacle problem: find phi <= g_m with phi = values on the Dirichlet nodes.

    ``g_m`` is +inf at nodes without an obstacle.
    """

    A: sp.csr_matrix
    b: np.ndarray
    g_m: np.ndarray
    dirichlet: np.ndarray
    dirichlet_values: np.ndarray

    def __post_init__(self):
        n = self.A.shape[0]
        if self.b.shape != (n,) or self.g_m.shape != (n,):
            raise SolverError("operator, load and obstacle sizes differ", {"n": n})
        if self.dirichlet.size:
            slack = self.g_m[self.dirichlet] - self.dirichlet_values
            if (slack < -1e-9 * (1.0 + np.abs(self.dirichlet_values))).any():
                bad = int(self.dirichlet[np.argmin(slack)])
                raise SolverError("Dirichlet value above the obstacle", {"node": bad})

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.dirichlet] = False
        return mask

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(self.free_mask)

    @property
    def constrained_mask(self) -> np.ndarray:
        """Free nodes that carry a finite obstacle."""
        return self.free_mask & np.isfinite(self.g_m)

    def boundary_vector(self) -> np.ndarray:
        """Zero vector with the Dirichlet values filled in."""
        x = np.zeros(self.n)
        x[self.dirichlet] = self.dirichlet_values
        return x


@dataclass
class KKTReport:
    feasibility: float
    complementarity: float
    sign: float
    contact_nodes: int

    def passed(self, tau_feas: float, tau_comp: float, tau_sign: float, scale: float = 1.0) -> bool:
        return self.feasibility <= tau_feas and self.complementarity <= tau_comp * scale and self.sign <= tau_sign

    def as_dict(self) -> dict:
        return {
            "feasibility": self.feasibility,
            "complementarity": self.complementarity,
            "sign": self.sign,
            "contact_nodes": self.contact_nodes,
        }


@dataclass(eq=False)
class DiscreteSolution:
    """Converged discrete solution; ``lam`` holds <lambda_m, phi_p> (0 on Dirichlet nodes)."""

    phi: Union[P1Function, np.ndarray]
    lam: np.ndarray
    active: np.ndarray
    iterations: int
    history: list[dict] = field(default_factory=list)
    kkt: Optional[KKTReport] = None

    @property
    def mesh(self) -> Optional[Mesh]:
        return self.phi.mesh if isinstance(self.phi, P1Function) else None

    @property
    def coefficients(self) -> np.ndarray:
        return self.phi.coefficients if isinstance(self.phi, P1Function) else np.asarray(self.phi)
