from __future__ import annotations

import numpy as np
import pytest

from obstacle_afem.exceptions import ConfigurationError
from obstacle_afem.models.problem import ExactSolution, constant
from obstacle_afem.models.trace import AdaptiveTrace, IterationRecord
from obstacle_afem.schemas.common import EstimatorChoice
from obstacle_afem.schemas.problems import FieldExpressions, ProblemDescriptor
from obstacle_afem.schemas.runs import AdaptiveConfig
from obstacle_afem.services.adaptive_service import run_adaptive
from obstacle_afem.services.benchmark_service import (
    STRIPS,
    StripSolution,
    check_exact_boundary,
    efficiency_and_eoc,
    efficiency_index,
    energy_error,
    eoc,
    eoc_window_fit,
    example1,
    example2,
    get_problem,
    load_descriptor,
    localisation_ratio,
    radial_boundary,
    radial_force,
    radial_gradient,
    radial_value,
    reliability_stability,
    strip_ansatz,
    strip_coefficients,
)
from obstacle_afem.services.mesh_service import uniform_refine


def _zero_gradient(x, y):
    return np.zeros(np.shape(x) + (2,))


def _record(iteration, dofs, eta, error):
    return IterationRecord(
        iteration=iteration,
        elements=2 * dofs,
        nodes=dofs,
        dofs=dofs,
        eta=eta,
        eta_rss=eta,
        eta_std=eta,
        eta_nr=eta,
        eta_std_full=eta,
        components=(eta, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        osc_f=0.0,
        osc_pi=0.0,
        pdas_iterations=1,
        contact_nodes=0,
        semi_contact=0,
        full_contact=0,
        kkt_feasibility=0.0,
        kkt_complementarity=0.0,
        wall_time=0.0,
        error_energy=error,
        error_h1=error,
    )


def _trace(eps, ratios):
    trace = AdaptiveTrace(problem="example1", eps=eps, estimator=EstimatorChoice.ETA)
    for k, ratio in enumerate(ratios):
        trace.append(_record(k, 10 * 4**k, 1.0, ratio))
    return trace


# ------------------------------------------------------------------ example 1
@pytest.mark.parametrize("lo, hi", STRIPS)
def test_strip_coefficients_vanish_at_strip_ends(lo, hi):
    c1, c2 = strip_coefficients(0.4, lo, hi)
    values = strip_ansatz(np.array([lo, hi]), 0.4, c1, c2)
    assert np.allclose(values, 0.0, atol=1e-12)


def test_strip_profile_matches_ansatz():
    exact = StripSolution(0.4)
    for (lo, hi), (c1, c2) in zip(STRIPS, exact.coefficients()):
        xi = np.linspace(lo, hi, 11)[1:-1]
        assert np.allclose(exact.profile(xi), strip_ansatz(xi, 0.4, c1, c2), rtol=1e-10, atol=1e-12)


def test_strip_profile_shape():
    exact = StripSolution(0.4)
    assert exact.profile(np.array([-1.0]))[0] == pytest.approx(1.0 / np.cosh(0.5 / 0.4) - 1.0)
    assert exact.profile(np.array([0.0, 2.0]))[0] == 0.0
    # odd derivative around the strip centre
    d = exact.derivative(np.array([-1.2, -0.8]))
    assert d[0] == pytest.approx(-d[1])


def test_strip_profile_survives_small_eps():
    exact = StripSolution(1e-3)
    values = exact.profile(np.linspace(-2.5, 2.5, 101))
    assert np.all(np.isfinite(values))
    assert values.min() >= -1.0


def test_example1_setup():
    problem = example1(0.1)
    mesh = uniform_refine(problem.mesh, problem.initial_refinements)
    assert mesh.n_elements == 512
    assert mesh.node_sets.dirichlet.size == 0
    assert mesh.areas.sum() == pytest.approx(25.0)
    # canonical sign: the exact solution is the negated strip profile
    assert problem.exact.value(np.array([np.cos(-np.pi / 16)]), np.array([np.sin(-np.pi / 16)]))[0] > 0.0


# ------------------------------------------------------------------ example 2
def test_radial_solution_solves_the_equation_outside_the_disk():
    eps = 0.1
    h = 1e-4
    x, y = np.array([1.2, 0.9, -0.8]), np.array([0.3, -0.9, 0.95])
    value = radial_value(x, y)
    laplacian = (
        radial_value(x + h, y) + radial_value(x - h, y) + radial_value(x, y + h) + radial_value(x, y - h) - 4 * value
    ) / h**2
    residual = -(eps**2) * laplacian + value - radial_force(eps)(x, y)
    assert np.abs(residual).max() < 1e-5


def test_radial_solution_in_contact_inside_the_disk():
    x, y = np.array([0.0, 0.3, -0.5]), np.array([0.0, 0.4, 0.5])
    assert np.all(radial_value(x, y) == 0.0)
    assert np.all(radial_force(0.01)(x, y) < 0.0)


def test_radial_solution_is_c1_at_the_unit_circle():
    inside = radial_gradient(np.array([1.0 - 1e-9]), np.array([0.0]))
    outside = radial_gradient(np.array([1.0 + 1e-9]), np.array([0.0]))
    assert np.allclose(inside, outside, atol=1e-8)
    assert radial_boundary(np.array([1.0]), np.array([0.0]))[0] == pytest.approx(0.0)


def test_example2_exact_solution_meets_dirichlet_data():
    problem = example2(0.1)
    assert check_exact_boundary(problem) < 1e-12
    assert problem.negated


# ---------------------------------------------------------------- error norms
def test_energy_error_of_zero_solution():
    problem = example1(0.3)
    mesh = uniform_refine(problem.mesh, 1)
    exact = ExactSolution(value=constant(0.0), gradient=_zero_gradient)
    energy, h1 = energy_error(mesh, np.ones(mesh.n_nodes), exact, 0.3)
    assert energy == pytest.approx(5.0)
    assert h1 == pytest.approx(5.0)


def test_energy_error_of_interpolated_linear_solution(neumann_square):
    exact = ExactSolution(
        value=lambda x, y: x + 2.0 * y,
        gradient=lambda x, y: np.stack([np.ones_like(x), 2.0 * np.ones_like(y)], axis=-1),
    )
    coefficients = neumann_square.vertices @ np.array([1.0, 2.0])
    energy, h1 = energy_error(neumann_square, coefficients, exact, 0.1)
    assert energy < 1e-12
    assert h1 < 1e-12


def test_energy_error_on_cut_elements_is_converged():
    problem = example2(0.1)
    mesh = uniform_refine(problem.mesh, 2)
    zero = np.zeros(mesh.n_nodes)
    coarse, _ = energy_error(mesh, zero, problem.exact, 0.1)
    fine, _ = energy_error(mesh, zero, problem.exact, 0.1, cut_levels=3)
    assert coarse == pytest.approx(fine, rel=1e-2)


# ------------------------------------------------------------ tables and EOC
def test_eoc_of_halving_error():
    rates = eoc([100, 400, 1600], [1.0, 0.5, 0.25])
    assert rates[0] is None
    assert rates[1] == pytest.approx(0.5)
    assert rates[2] == pytest.approx(0.5)


def test_eoc_below_floor_is_absent():
    assert eoc([100, 400], [1e-14, 1e-15]) == [None, None]


def test_eoc_window_fit():
    dofs = [10 * 4**k for k in range(8)]
    errors = [n**-0.5 for n in dofs]
    assert eoc_window_fit(dofs, errors) == pytest.approx(0.5)
    assert eoc_window_fit(dofs[:1], errors[:1]) is None


def test_efficiency_index_per_estimator():
    assert efficiency_index(EstimatorChoice.ETA, 2.0, 3.0, 1.0, 4.0) == pytest.approx(2.0)
    assert efficiency_index(EstimatorChoice.ETA_STD, 2.0, 3.0, 1.0, 4.0) == pytest.approx(2.0)
    assert efficiency_index(EstimatorChoice.ETA_NR, 2.0, 3.0, 1.0, 4.0) == pytest.approx(0.75)
    assert efficiency_index(EstimatorChoice.ETA, 2.0, 3.0, 0.0, 0.0) is None


def test_efficiency_and_eoc_table():
    trace = _trace(0.1, [1.0, 0.5, 0.25])
    rows = efficiency_and_eoc(trace)
    assert [r["eoc"] for r in rows][1:] == pytest.approx([0.5, 0.5])
    assert [r["efficiency"] for r in rows] == pytest.approx([1.0, 2.0, 4.0])


def test_reliability_stability():
    traces = [_trace(0.4, [0.5, 0.6]), _trace(0.1, [0.9, 0.3])]
    assert reliability_stability(traces) == pytest.approx(0.9 / 0.6)
    assert reliability_stability([_trace(0.2, [0.7]), _trace(0.1, [0.7])]) == pytest.approx(1.0)


def test_localisation_of_uniform_mesh(two_triangles):
    problem = example2(0.1)
    mesh = uniform_refine(problem.mesh, 4)
    assert localisation_ratio(mesh) == pytest.approx(1.0)
    assert localisation_ratio(two_triangles) is None


# ---------------------------------------------------------------- registry
def test_unknown_problem():
    with pytest.raises(ConfigurationError):
        get_problem("example3", 0.1)
    with pytest.raises(ConfigurationError):
        get_problem("missing.json", 0.1)


def test_descriptor_with_lower_obstacle():
    descriptor = ProblemDescriptor(
        name="unit_lower",
        polygon=[(0, 0), (1, 0), (1, 1), (0, 1)],
        boundary_tags=["D", "N", "N", "N"],
        fields=FieldExpressions(f="1", g="0", phi_d="x", exact="x*(1 - x)"),
        lower_obstacle=True,
        initial_uniform_refinements=2,
    )
    problem = load_descriptor(descriptor, 0.2)
    assert problem.negated
    assert problem.mesh.n_elements == 2
    assert problem.initial_refinements == 2
    point = (np.array([0.5]), np.array([0.25]))
    assert problem.data.f(*point)[0] == pytest.approx(-1.0)
    assert problem.data.phi_d(*point)[0] == pytest.approx(-0.5)
    assert problem.data.g(*point)[0] == pytest.approx(0.0)
    assert problem.exact.value(*point)[0] == pytest.approx(-0.25)
    assert problem.exact.gradient(*point)[0] == pytest.approx([0.0, 0.0])


def test_descriptor_from_file(tmp_path):
    path = tmp_path / "free.json"
    path.write_text(
        ProblemDescriptor(
            name="free",
            polygon=[(0, 0), (1, 0), (0, 1)],
            boundary_tags=["D", "D", "D"],
            fields=FieldExpressions(f="exp(-x)", phi_d="0"),
        ).model_dump_json()
    )
    problem = get_problem(str(path), 0.5)
    assert problem.name == "free"
    assert not problem.data.constrained


# ----------------------------------------------------------------- acceptance
@pytest.mark.slow
def test_example1_converges_at_optimal_rate():
    config = AdaptiveConfig(problem="example1", eps=0.08, max_elements=20000)
    trace = run_adaptive(config).trace
    records = trace.records
    rate = eoc_window_fit([r.dofs for r in records], [r.error_energy for r in records])
    assert 0.35 <= rate <= 0.65
    assert all(r.kkt_feasibility <= 1e-9 for r in records)


@pytest.mark.slow
def test_robust_efficiency_across_eps():
    robust, plain = [], []
    for eps in (0.4, 0.2, 0.1, 0.05):
        robust.append(run_adaptive(AdaptiveConfig(problem="example1", eps=eps)).trace.final.efficiency)
        plain.append(
            run_adaptive(AdaptiveConfig(problem="example1", eps=eps, estimator=EstimatorChoice.ETA_NR)).trace.final.efficiency
        )
    assert max(robust) / min(robust) <= 5.0
    assert all(b < a for a, b in zip(plain, plain[1:]))
    assert plain[0] / plain[-1] >= 2.0


@pytest.mark.slow
def test_full_contact_core_is_not_over_refined():
    ratios = {}
    for estimator in (EstimatorChoice.ETA, EstimatorChoice.ETA_STD):
        result = run_adaptive(AdaptiveConfig(problem="example2", eps=0.01, estimator=estimator))
        ratios[estimator] = localisation_ratio(result.mesh)
    assert ratios[EstimatorChoice.ETA] >= 2.0
    assert ratios[EstimatorChoice.ETA_STD] < ratios[EstimatorChoice.ETA]


@pytest.mark.slow
@pytest.mark.parametrize("problem", ["example1", "example2"])
def test_reliability_is_stable_across_eps(problem):
    traces = [run_adaptive(AdaptiveConfig(problem=problem, eps=eps)).trace for eps in (0.4, 0.2, 0.1, 0.05)]
    assert all(t.has_errors for t in traces)
    assert reliability_stability(traces) <= 3.0


@pytest.mark.slow
def test_robust_estimator_beats_standard_at_equal_dofs():
    runs = {
        estimator: run_adaptive(AdaptiveConfig(problem="example1", eps=0.08, estimator=estimator, max_elements=20000)).trace
        for estimator in (EstimatorChoice.ETA, EstimatorChoice.ETA_STD)
    }
    robust, standard = runs[EstimatorChoice.ETA], runs[EstimatorChoice.ETA_STD]
    common = min(robust.final.dofs, standard.final.dofs)

    robust_dofs = np.log(robust.column("dofs"))
    robust_errors = np.log(robust.column("error_energy"))
    robust_error = float(np.exp(np.interp(np.log(common), robust_dofs, robust_errors)))
    standard_error = [r.error_energy for r in standard.records if r.dofs <= common][-1]
    assert robust_error < standard_error
