"""
Benchmark problems with exact solutions, error norms and convergence tables.

Both reference examples are lower obstacle problems (phi >= 0). They are
stored in the canonical upper obstacle form by negating every field, so the
exact solutions below carry the canonical sign as well.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..exceptions import ConfigurationError, ProblemDefinitionError
from ..models.mesh import Mesh
from ..models.problem import ExactSolution, ProblemData, ProblemDefinition, constant, negate, negate_vector
from ..models.trace import AdaptiveTrace
from ..schemas.common import BoundaryTag, EstimatorChoice, MeshPattern
from ..schemas.problems import ProblemDescriptor
from ..utils import expressions
from ..utils.quadrature import QuadratureRule, subdivide, triangle_rule
from .mesh_service import polygon_mesh, square_mesh

logger = logging.getLogger(__name__)

ALPHA = -np.pi / 16
STRIPS = ((-1.5, -0.5), (0.5, 1.5))
EOC_FLOOR = 1e-13


# ----------------------------------------------------------------- example 1
def strip_coefficients(eps: float, lo: float, hi: float) -> tuple[float, float]:
    """c1, c2 of c1 exp(x/eps) + c2 exp(-x/eps) - 1 vanishing at lo and hi."""
    matrix = np.array([[np.exp(lo / eps), np.exp(-lo / eps)], [np.exp(hi / eps), np.exp(-hi / eps)]])
    c1, c2 = np.linalg.solve(matrix, np.ones(2))
    return float(c1), float(c2)


def strip_ansatz(x: np.ndarray, eps: float, c1: float, c2: float) -> np.ndarray:
    return c1 * np.exp(x / eps) + c2 * np.exp(-x / eps) - 1.0


@dataclass(frozen=True)
class StripSolution:
    """Exact solution of the rotated strip example, in the lower obstacle sign.

    Inside a strip of half width h around m the profile is
    cosh((xi - m)/eps) / cosh(h/eps) - 1, written with decaying exponentials
    so that small eps does not overflow. It is 0 outside the strips.
    """

    eps: float
    alpha: float = ALPHA
    strips: tuple[tuple[float, float], ...] = STRIPS

    def coefficients(self) -> list[tuple[float, float]]:
        return [strip_coefficients(self.eps, lo, hi) for lo, hi in self.strips]

    def xi(self, x, y) -> np.ndarray:
        """First coordinate of R^{-1} (x, y)."""
        return np.cos(self.alpha) * np.asarray(x) + np.sin(self.alpha) * np.asarray(y)

    def region(self, x, y) -> np.ndarray:
        xi = self.xi(x, y)
        label = np.zeros(np.shape(xi), dtype=np.int64)
        for k, (lo, hi) in enumerate(self.strips, start=1):
            label[(xi > lo) & (xi < hi)] = k
        return label

    def outside(self, x, y) -> np.ndarray:
        return self.region(x, y) == 0

    def _pieces(self, xi: np.ndarray):
        for lo, hi in self.strips:
            inside = (xi > lo) & (xi < hi)
            m, h = 0.5 * (lo + hi), 0.5 * (hi - lo)
            d = np.abs(xi - m)
            decay = np.exp((d - h) / self.eps)
            norm = 1.0 + np.exp(-2.0 * h / self.eps)
            tail = np.exp(-2.0 * d / self.eps)
            yield inside, decay, norm, tail, np.sign(xi - m)

    def profile(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        out = np.zeros_like(xi)
        for inside, decay, norm, tail, _ in self._pieces(xi):
            out = np.where(inside, decay * (1.0 + tail) / norm - 1.0, out)
        return out

    def derivative(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        out = np.zeros_like(xi)
        for inside, decay, norm, tail, sign in self._pieces(xi):
            out = np.where(inside, sign * decay * (1.0 - tail) / (self.eps * norm), out)
        return out

    def value(self, x, y) -> np.ndarray:
        return self.profile(self.xi(x, y))

    def gradient(self, x, y) -> np.ndarray:
        d = self.derivative(self.xi(x, y))
        return np.stack([d * np.cos(self.alpha), d * np.sin(self.alpha)], axis=-1)


def example1(eps: float) -> ProblemDefinition:
    """Boundary layers enforced by obstacle constraints on [-2.5, 2.5]^2.

    f = -1 everywhere, phi >= 0 outside the rotated strips, homogeneous
    Neumann data on the whole boundary.
    """
    exact = StripSolution(eps)
    data = ProblemData(
        eps=eps,
        f=constant(1.0),
        pi=constant(0.0),
        g=constant(0.0),
        constraint=exact.outside,
        discrete_obstacle=True,
    )
    mesh = square_mesh(-2.5, 2.5, cells=1, pattern=MeshPattern.DIAGONAL, tags=BoundaryTag.NEUMANN)
    coefficients = exact.coefficients()
    return ProblemDefinition(
        name="example1",
        mesh=mesh,
        data=data,
        exact=ExactSolution(value=negate(exact.value), gradient=negate_vector(exact.gradient), region=exact.region),
        negated=True,
        initial_refinements=4,
        metadata={
            "alpha": ALPHA,
            "strips": [list(s) for s in STRIPS],
            "strip_coefficients": [list(c) for c in coefficients],
            "f_outside_strips": -1.0,
            "initial_mesh": "two-element diagonal split of [-2.5, 2.5]^2",
            "boundary": "Neumann, pi = 0",
        },
    )


# ----------------------------------------------------------------- example 2
def _safe_radius(x, y) -> np.ndarray:
    return np.maximum(np.hypot(x, y), 1e-300)


def radial_value(x, y) -> np.ndarray:
    """r^2/2 - ln r - 1/2 for r >= 1, 0 inside the unit disk."""
    r = _safe_radius(x, y)
    return np.where(r >= 1.0, 0.5 * r**2 - np.log(r) - 0.5, 0.0)


def radial_gradient(x, y) -> np.ndarray:
    r = _safe_radius(x, y)
    scale = np.where(r >= 1.0, 1.0 - 1.0 / r**2, 0.0)
    return np.stack([scale * np.asarray(x, dtype=float), scale * np.asarray(y, dtype=float)], axis=-1)


def radial_boundary(x, y) -> np.ndarray:
    r = _safe_radius(x, y)
    return 0.5 * r**2 - np.log(r) - 0.5


def radial_force(eps: float) -> Callable:
    def _force(x, y):
        r = _safe_radius(x, y)
        return np.where(r >= 1.0, -2.0 * eps**2 + 0.5 * r**2 - np.log(r) - 0.5, -2.0 * eps**2 + 0.5 * (r**2 - 1.0))

    return _force


def radial_region(x, y) -> np.ndarray:
    return (np.hypot(x, y) >= 1.0).astype(np.int64)


def _example2_mesh() -> Mesh:
    return square_mesh(-1.0, 1.0, cells=1, pattern=MeshPattern.DIAGONAL, tags=BoundaryTag.DIRICHLET)


def example2(eps: float) -> ProblemDefinition:
    """Smooth radial example on [-1, 1]^2 with contact inside the unit disk."""
    data = ProblemData(
        eps=eps,
        f=negate(radial_force(eps)),
        g=constant(0.0),
        phi_d=negate(radial_boundary),
        discrete_obstacle=True,
    )
    return ProblemDefinition(
        name="example2",
        mesh=_example2_mesh(),
        data=data,
        exact=ExactSolution(value=negate(radial_value), gradient=negate_vector(radial_gradient), region=radial_region),
        negated=True,
        initial_refinements=3,
        metadata={
            "initial_mesh": "two-element diagonal split of [-1, 1]^2",
            "boundary": "Dirichlet, phi_D = r^2/2 - ln r - 1/2",
        },
    )


def example2_free(eps: float) -> ProblemDefinition:
    """Data of the radial example with the obstacle removed."""
    base = example2(eps)
    data = ProblemData(eps=eps, f=base.data.f, phi_d=base.data.phi_d)
    return ProblemDefinition(
        name="example2_free",
        mesh=base.mesh,
        data=data,
        negated=True,
        initial_refinements=base.initial_refinements,
        metadata={**base.metadata, "obstacle": "none"},
    )


# ------------------------------------------------------------------ registry
PROBLEMS: dict[str, Callable[[float], ProblemDefinition]] = {
    "example1": example1,
    "example2": example2,
    "example2_free": example2_free,
}


def is_known_problem(name: str) -> bool:
    return name in PROBLEMS or (name.endswith(".json") and Path(name).is_file())


def load_descriptor(source: Union[str, Path, ProblemDescriptor], eps: float) -> ProblemDefinition:
    """Problem from a JSON descriptor file or an already parsed descriptor."""
    if isinstance(source, ProblemDescriptor):
        descriptor = source
    else:
        descriptor = ProblemDescriptor.model_validate_json(Path(source).read_text())

    fields = descriptor.fields
    f = expressions.compile_scalar(expressions.parse(fields.f), eps)
    pi = expressions.compile_scalar(expressions.parse(fields.pi), eps)
    phi_d = expressions.compile_scalar(expressions.parse(fields.phi_d), eps)
    g = expressions.compile_optional(fields.g, eps)
    exact = None
    if fields.exact is not None:
        expr = expressions.parse(fields.exact)
        exact = ExactSolution(
            value=expressions.compile_scalar(expr, eps),
            gradient=expressions.compile_gradient(expr, eps),
        )

    if descriptor.lower_obstacle:
        f, pi, phi_d = negate(f), negate(pi), negate(phi_d)
        g = negate(g) if g is not None else None
        if exact is not None:
            exact = ExactSolution(value=negate(exact.value), gradient=negate_vector(exact.gradient))

    mesh = polygon_mesh(descriptor.polygon, descriptor.boundary_tags, descriptor.triangles)
    data = ProblemData(eps=eps, f=f, pi=pi, g=g, phi_d=phi_d, discrete_obstacle=descriptor.discrete_obstacle)
    return ProblemDefinition(
        name=descriptor.name,
        mesh=mesh,
        data=data,
        exact=exact,
        negated=descriptor.lower_obstacle,
        initial_refinements=descriptor.initial_uniform_refinements,
        metadata={"descriptor": descriptor.model_dump(mode="json")},
    )


def get_problem(name: str, eps: float) -> ProblemDefinition:
    """Registry lookup by name, or a path to a JSON descriptor."""
    if name in PROBLEMS:
        return PROBLEMS[name](eps)
    if name.endswith(".json"):
        if not Path(name).is_file():
            raise ConfigurationError(f"problem descriptor not found: {name}")
        return load_descriptor(name, eps)
    raise ConfigurationError(f"unknown problem '{name}'", {"known": sorted(PROBLEMS)})


# -------------------------------------------------------------------- errors
def _cut_elements(mesh: Mesh, exact: ExactSolution, rule: QuadratureRule) -> np.ndarray:
    if exact.region is None:
        return np.zeros(mesh.n_elements, dtype=bool)
    corners = mesh.vertices[mesh.elements]
    samples = np.concatenate([corners, rule.physical_points(corners)], axis=1)
    labels = exact.region(samples[..., 0], samples[..., 1])
    return (labels != labels[:, :1]).any(axis=1)


def _error_squares(
    mesh: Mesh, coefficients: np.ndarray, exact: ExactSolution, rule: QuadratureRule, ids: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per element integrals of |grad e|^2 and e^2 over the elements ``ids``."""
    local = coefficients[mesh.elements[ids]]
    points = rule.physical_points(mesh.vertices[mesh.elements[ids]])
    grad_h = np.einsum("mi,mid->md", local, mesh.gradients[ids])
    value_error = exact.value(points[..., 0], points[..., 1]) - local @ rule.points.T
    grad_error = exact.gradient(points[..., 0], points[..., 1]) - grad_h[:, None, :]
    areas = mesh.areas[ids]
    l2 = areas * ((value_error**2) @ rule.weights)
    h1 = areas * (np.sum(grad_error**2, axis=-1) @ rule.weights)
    return h1, l2


def energy_error(
    mesh: Mesh,
    coefficients: np.ndarray,
    exact: ExactSolution,
    eps: float,
    rule: Optional[QuadratureRule] = None,
    cut_levels: int = 1,
) -> tuple[float, float]:
    """(||phi - phi_m||_eps, ||phi - phi_m||_1).

    Elements crossed by a kink of the exact solution use the composite rule
    on ``4**cut_levels`` sub-triangles.
    """
    rule = rule or triangle_rule(5)
    coefficients = np.asarray(coefficients, dtype=float)
    cut = _cut_elements(mesh, exact, rule)
    h1 = np.zeros(mesh.n_elements)
    l2 = np.zeros(mesh.n_elements)
    smooth = np.flatnonzero(~cut)
    h1[smooth], l2[smooth] = _error_squares(mesh, coefficients, exact, rule, smooth)
    if cut.any():
        ids = np.flatnonzero(cut)
        h1[ids], l2[ids] = _error_squares(mesh, coefficients, exact, subdivide(rule, cut_levels), ids)
    energy = float(np.sqrt(eps**2 * h1.sum() + l2.sum()))
    full = float(np.sqrt(h1.sum() + l2.sum()))
    return energy, full


def efficiency_index(estimator: EstimatorChoice, eta: float, eta_nr: float, error_energy: float, error_h1: float) -> Optional[float]:
    """eta/||e||_eps for eta and eta_std runs, eta_nr/||e||_1 for eta_nr runs.

    ``eta`` is the total of the estimator that drove the marking.
    """
    if EstimatorChoice(estimator) is EstimatorChoice.ETA_NR:
        return eta_nr / error_h1 if error_h1 > 0 else None
    return eta / error_energy if error_energy > 0 else None


def eoc(dofs: Sequence[float], errors: Sequence[float], floor: float = EOC_FLOOR) -> list[Optional[float]]:
    """EOC between consecutive entries, None for the first entry and below the floor."""
    out: list[Optional[float]] = [None]
    for (n0, e0), (n1, e1) in zip(zip(dofs, errors), zip(dofs[1:], errors[1:])):
        if e0 is None or e1 is None or e0 <= floor or e1 <= floor or n1 == n0:
            out.append(None)
        else:
            out.append(float(-np.log(e1 / e0) / np.log(n1 / n0)))
    return out


def eoc_window_fit(dofs: Sequence[float], errors: Sequence[float], window: int = 5) -> Optional[float]:
    """Least squares slope of -log e against log N over the last ``window`` entries."""
    pairs = [(n, e) for n, e in zip(dofs, errors) if e is not None and e > EOC_FLOOR][-window:]
    if len(pairs) < 2 or len({n for n, _ in pairs}) < 2:
        return None
    n, e = np.array(pairs, dtype=float).T
    slope = np.polyfit(np.log(n), np.log(e), 1)[0]
    return float(-slope)


def efficiency_and_eoc(trace: AdaptiveTrace) -> list[dict]:
    """Per iteration efficiency index and EOC from a trace with exact errors."""
    records = trace.records
    errors = [r.error_energy for r in records]
    rates = eoc([r.dofs for r in records], errors)
    rows = []
    for record, rate in zip(records, rates):
        index = None
        if record.error_energy is not None:
            index = efficiency_index(
                trace.estimator,
                record.total(trace.estimator),
                record.eta_nr,
                record.error_energy,
                record.error_h1,
            )
        rows.append(
            {
                "iteration": record.iteration,
                "nodes": record.nodes,
                "dofs": record.dofs,
                "error_energy": record.error_energy,
                "efficiency": index,
                "eoc": rate,
            }
        )
    return rows


def reliability_ratios(trace: AdaptiveTrace) -> np.ndarray:
    """||e||_eps / eta per iteration."""
    return np.array([r.error_energy / r.eta if r.eta > 0 and r.error_energy is not None else np.nan for r in trace.records])


def reliability_stability(traces: Sequence[AdaptiveTrace]) -> Optional[float]:
    """max C / min C over a sweep, C being the largest ratio of each run."""
    constants = [np.nanmax(reliability_ratios(t)) for t in traces if t.has_errors]
    constants = [c for c in constants if np.isfinite(c) and c > 0]
    if not constants:
        return None
    return float(max(constants) / min(constants))


# -------------------------------------------------------- refinement pattern
Region = Callable[[np.ndarray, np.ndarray], np.ndarray]


def core_region(x, y) -> np.ndarray:
    return np.hypot(x, y) <= 0.8


def annulus_region(x, y) -> np.ndarray:
    r = np.hypot(x, y)
    return (r >= 0.9) & (r <= 1.1)


def region_mean_diameter(mesh: Mesh, region: Region) -> Optional[float]:
    inside = region(mesh.centroids[:, 0], mesh.centroids[:, 1])
    if not inside.any():
        return None
    return float(mesh.element_diameters[inside].mean())


def region_share(mesh: Mesh, region: Region) -> float:
    inside = region(mesh.centroids[:, 0], mesh.centroids[:, 1])
    return float(np.count_nonzero(inside) / mesh.n_elements)


def localisation_ratio(mesh: Mesh, inner: Region = core_region, band: Region = annulus_region) -> Optional[float]:
    """Mean diameter in ``inner`` over mean diameter in ``band``."""
    a, b = region_mean_diameter(mesh, inner), region_mean_diameter(mesh, band)
    if a is None or b is None or b == 0:
        return None
    return a / b


def check_exact_boundary(problem: ProblemDefinition, tol: float = 1e-12) -> float:
    """Largest mismatch between the exact solution and phi_D at Dirichlet nodes."""
    if problem.exact is None:
        raise ProblemDefinitionError(f"problem '{problem.name}' has no exact solution")
    nodes = problem.mesh.node_sets.dirichlet
    if nodes.size == 0:
        return 0.0
    p = problem.mesh.vertices[nodes]
    mismatch = np.abs(problem.exact.value(p[:, 0], p[:, 1]) - problem.data.phi_d(p[:, 0], p[:, 1]))
    worst = float(mismatch.max())
    if worst > tol:
        logger.warning("⚠️ Exact solution misses the Dirichlet data of %s by %.3e", problem.name, worst)
    return worst
