import math
from dataclasses import replace

import numpy as np
import pytest

from meshmaps import (PwAffineMap, build_box_mesh, build_disc_mesh, identity_map, integrate_energy,
                      interpolate)
from numerics import component_rng, finite_difference_error
from variational import (INTEGRANDS, REPORT_COLUMNS, EnergyAssembler, IntegrandSpec, MinimizeOptions,
                         competitor_energy_semianalytic, degree_integral, det_energy, dirichlet,
                         energy_gradient, example_lagrangian, frobenius_norm, gap_experiment,
                         get_integrand, kconvexity_sample_check, lattice_window, minimize,
                         minors_square, radial_map, radial_retraction, random_rank_one_pair,
                         stripe_pairing, superlinearity_check, unit_square_window,
                         weak_minor_convergence_experiment)
from youngmeasure import StripeSequence, rank_one_decomposition

ID = np.eye(2)
E11 = np.array([[1.0, 0.0], [0.0, 0.0]])


# ============================================================================
# Integrands
# ============================================================================

@pytest.mark.parametrize("name", sorted(INTEGRANDS))
def test_registered_integrands_build(name):
    """Every registered integrand builds and evaluates."""
    spec = get_integrand(name)
    assert isinstance(spec, IntegrandSpec)
    values = spec.evaluate(np.zeros((1, 2)), np.zeros((1, 2)), ID[None])
    assert values.shape == (1,)


def test_get_integrand_suggestion():
    """Unknown integrands get a close-match suggestion."""
    with pytest.raises(ValueError, match="Did you mean 'det-square'"):
        get_integrand("det-sq")
    with pytest.raises(ValueError, match="Valid integrands"):
        get_integrand("bogus")


def test_example_lagrangian_values():
    """The example integrand at known points."""
    spec = example_lagrangian(1e-3, 1.5)
    t = np.array([[0.0, 0.0], [1.0, 0.0]])
    v = np.stack([ID, ID])
    expected = [1e-3 * 2 ** 0.75 + 1.0, 1e-3 * (2 ** 0.75 + 4.0) + 1.0]
    assert np.allclose(spec.evaluate(t, np.zeros((2, 2)), v), expected)
    with pytest.raises(ValueError, match="eps"):
        example_lagrangian(0.0)
    with pytest.raises(ValueError, match="p must"):
        example_lagrangian(1e-3, 2.0)


def test_orientation_barrier_infinite():
    """The orientation barrier is infinite for non-positive determinant."""
    spec = get_integrand("orientation")
    v = np.stack([ID, np.diag([1.0, -1.0])])
    values = spec.evaluate(np.zeros((2, 2)), np.zeros((2, 2)), v)
    assert values[0] == pytest.approx(4.0)
    assert values[1] == math.inf


def test_integrand_gradient_checked():
    """A wrong integrand gradient fails the finite-difference check."""
    def lifted(t, x, minors):
        return np.sum(minors[0].reshape(minors[0].shape[0], -1) ** 2, axis=1)

    def wrong(t, x, minors):
        return np.zeros_like(x), (minors[0],)

    with pytest.raises(ValueError, match="finite differences"):
        IntegrandSpec("wrong", 1, lifted, wrong)
    with pytest.raises(ValueError, match="outside"):
        IntegrandSpec("too-high", 3, lifted)


@pytest.mark.parametrize("name", ["example", "dirichlet", "det-square", "det", "orientation",
                                  "random", "norm"])
def test_kconvexity_passes_for_polyconvex(name):
    """Polyconvex integrands show no sampled convexity violation and no segment."""
    report = kconvexity_sample_check(get_integrand(name), component_rng(0, f"kconv-{name}"))
    assert report.passed
    assert report.segment is None


@pytest.mark.parametrize("name", ["neg-abs-det", "neg-square"])
def test_kconvexity_flags_non_convex(name):
    """Concave integrands are flagged with a positive worst excess."""
    report = kconvexity_sample_check(get_integrand(name), component_rng(0, f"kconv-{name}"))
    assert not report.passed
    assert report.worst > 0


@pytest.mark.parametrize("name", ["neg-abs-det", "neg-square"])
def test_kconvexity_reports_violating_segment(name):
    """The reported segment reproduces the worst excess when re-evaluated."""
    spec = get_integrand(name)
    report = kconvexity_sample_check(spec, component_rng(0, f"kconv-{name}"))
    segment = report.segment
    assert segment is not None
    assert 0.05 <= segment.weight <= 0.95
    assert segment.t.shape == (1, 2) and segment.x.shape == (1, 2)
    assert len(segment.first) == len(segment.second) == spec.degree_bound
    lhs = spec.lifted(segment.t, segment.x, segment.mixed())
    rhs = (segment.weight * spec.lifted(segment.t, segment.x, segment.first)
           + (1.0 - segment.weight) * spec.lifted(segment.t, segment.x, segment.second))
    assert float(lhs[0] - rhs[0]) == pytest.approx(report.worst, rel=1e-9)
    assert segment.excess == report.worst > 0


@pytest.mark.parametrize("name", ["example", "dirichlet", "det-square", "orientation", "random"])
def test_superlinearity_of_coercive_integrands(name):
    """Sampled L / r_k grows on the sphere grid and the declared witness holds."""
    report = superlinearity_check(get_integrand(name))
    assert report.superlinear
    assert report.witness_consistent is True
    assert report.ratios[-1] > report.ratios[len(report.ratios) // 2] > 0


def test_superlinearity_rejects_linear_growth():
    """|v| has bounded L / r_1 whatever witness it declares."""
    report = superlinearity_check(frobenius_norm())
    assert not report.superlinear
    assert report.ratios[-1] == pytest.approx(1.0, abs=1e-6)
    assert report.witness_consistent is True


def test_superlinearity_ignores_false_witness():
    """A quadratic witness attached to |v| is caught against sampled values of L."""
    report = superlinearity_check(replace(frobenius_norm(), witness=lambda s: np.asarray(s) ** 2))
    assert not report.superlinear
    assert report.witness_consistent is False


def test_superlinearity_requires_consistent_witness():
    """A true growth rate does not excuse a witness that overshoots L."""
    report = superlinearity_check(replace(get_integrand("dirichlet"),
                                          witness=lambda s: np.asarray(s) ** 3))
    assert report.witness_consistent is False
    assert not report.superlinear


def test_superlinearity_without_witness():
    """Integrands without a witness are judged from their sampled values alone."""
    report = superlinearity_check(get_integrand("det"))
    assert report.witness_consistent is None
    assert not report.superlinear
    assert min(report.ratios) < 0


# ============================================================================
# Energies
# ============================================================================

def test_degree_integral_and_det_energy_of_identity():
    """det integrates to the area for the identity."""
    mapping = identity_map(build_disc_mesh(0.25))
    assert degree_integral(mapping) == pytest.approx(mapping.mesh.total_volume, rel=1e-12)
    assert det_energy(mapping) == pytest.approx(mapping.mesh.total_volume, rel=1e-12)
    with pytest.raises(ValueError, match="n = m = 2"):
        degree_integral(interpolate(lambda t: t[:, :1], mapping.mesh))


def test_degree_integral_depends_on_boundary_only():
    """Interior perturbations leave the degree integral unchanged."""
    mesh = build_disc_mesh(0.25)
    values = np.array(identity_map(mesh).nodal_values)
    values[mesh.interior_nodes] += component_rng(0, "test-degree").normal(
        scale=0.2, size=(mesh.interior_nodes.size, 2))
    assert degree_integral(PwAffineMap(mesh, values)) == pytest.approx(mesh.total_volume, rel=1e-12)


def test_energy_gradient_matches_finite_differences():
    """The discrete energy gradient matches central differences."""
    mesh = build_box_mesh(2, 2)
    spec = minors_square()
    values = np.array(identity_map(mesh).nodal_values)
    values += component_rng(0, "test-energy-gradient").normal(scale=0.1, size=values.shape)
    assembler = EnergyAssembler(mesh, spec)
    analytic = energy_gradient(PwAffineMap(mesh, values), spec)
    step = 1e-6
    numeric = np.zeros_like(values)
    for a in range(values.shape[0]):
        for i in range(2):
            shift = np.zeros_like(values)
            shift[a, i] = step
            numeric[a, i] = (assembler.energy(values + shift) - assembler.energy(values - shift)) / (2 * step)
    assert np.allclose(analytic, numeric, atol=1e-6)


def test_radial_map_jacobian():
    """The radial map has the closed-form Jacobian."""
    mapping = radial_map(build_disc_mesh(0.3))
    points = component_rng(0, "test-radial").uniform(0.2, 0.6, size=(10, 2))
    assert finite_difference_error(mapping.value, mapping.jacobian, points) < 1e-8


def test_radial_retraction():
    """The retraction maps the annulus onto the circle."""
    target = radial_retraction()
    inside = np.array([[0.3, -0.4], [1.0, 0.0]])
    assert np.array_equal(target.value(inside), inside)
    outside = np.array([[3.0, 4.0], [0.0, -1.5]])
    assert np.all(np.linalg.norm(target.value(outside), axis=1) < 2.0)
    points = component_rng(0, "test-retraction").normal(scale=2.0, size=(12, 2))
    assert finite_difference_error(target.value, target.jacobian, points) < 1e-6


def test_competitor_energy_closed_form():
    """eps (2 pi / (2 - p) + pi) for every delta."""
    expected = 1e-3 * (2 * math.pi / 0.5 + math.pi)
    for delta in (0.1, 0.25, 0.4):
        assert competitor_energy_semianalytic(1e-3, 1.5, delta) == pytest.approx(expected, rel=1e-10)
    with pytest.raises(ValueError, match="p must"):
        competitor_energy_semianalytic(1e-3, 2.0)
    with pytest.raises(ValueError, match="delta"):
        competitor_energy_semianalytic(1e-3, 1.5, 0.5)


# ============================================================================
# Minimization
# ============================================================================

def test_minimize_options_validation():
    """Non-positive tolerances and iteration counts are rejected."""
    with pytest.raises(ValueError, match="Tolerance"):
        MinimizeOptions(tolerance=0.0)
    with pytest.raises(ValueError, match="Armijo"):
        MinimizeOptions(armijo=1.0)
    with pytest.raises(ValueError, match="starts"):
        MinimizeOptions(starts=0)


def test_minimize_det_square_from_perturbed_start():
    """Descent lowers the energy and keeps the boundary values."""
    mesh = build_disc_mesh(0.3)
    values = np.array(identity_map(mesh).nodal_values)
    values[mesh.interior_nodes] += component_rng(0, "test-minimize").normal(
        scale=0.1, size=(mesh.interior_nodes.size, 2))
    start = PwAffineMap(mesh, values)
    result = minimize(mesh, minors_square(), start, MinimizeOptions(max_iterations=40))

    energies = [r.energy for r in result.report]
    assert all(b <= a for a, b in zip(energies, energies[1:]))
    assert result.energy <= energies[0]
    # |v|^2 + det^2 is bounded below by its value at the identity
    assert result.energy >= 3.0 * mesh.total_volume - 1e-9
    assert np.array_equal(result.map.nodal_values[mesh.boundary_nodes], values[mesh.boundary_nodes])
    degrees = [r.degree_integral for r in result.report]
    assert np.allclose(degrees, mesh.total_volume, rtol=1e-12)
    assert len(result.report_rows()[0]) == len(REPORT_COLUMNS)


def test_minimize_identity_converges_at_once():
    """Starting at a minimizer converges at iteration zero."""
    mesh = build_disc_mesh(0.3)
    result = minimize(mesh, minors_square(), identity_map(mesh))
    assert result.converged
    assert result.iterations == 0


def test_minimize_multiple_starts_deterministic():
    """Equal seeds give equal results."""
    mesh = build_box_mesh(2, 3)
    options = MinimizeOptions(max_iterations=15, starts=3, seed=4)
    first = minimize(mesh, minors_square(), identity_map(mesh), options)
    second = minimize(mesh, minors_square(), identity_map(mesh), options)
    assert first.energy == second.energy
    assert first.start == second.start


def test_minimize_rejects_other_mesh():
    """The start map must live on the problem mesh."""
    with pytest.raises(ValueError, match="minimization mesh"):
        minimize(build_box_mesh(2, 2), minors_square(), identity_map(build_box_mesh(2, 3)))


def _stiffness(mesh):
    """P1 stiffness matrix, so that the Dirichlet energy of nodal values u is sum_i u_i . K u_i."""
    G = mesh.basis_gradients
    local = mesh.cell_volumes[:, None, None] * (G @ np.swapaxes(G, 1, 2))
    rows = np.broadcast_to(mesh.simplices[:, :, None], local.shape)
    cols = np.broadcast_to(mesh.simplices[:, None, :], local.shape)
    K = np.zeros((mesh.num_vertices, mesh.num_vertices))
    np.add.at(K, (rows, cols), local)
    return K


def test_dirichlet_energy_of_identity_is_two():
    """|Id|^2 = 2 on the unit square, and the identity is already discrete harmonic."""
    mesh = build_box_mesh(2, 4)
    assert integrate_energy(identity_map(mesh), dirichlet()) == pytest.approx(2.0, rel=1e-14)
    result = minimize(mesh, dirichlet(), identity_map(mesh))
    assert result.converged
    assert result.iterations == 0
    assert result.energy == pytest.approx(2.0, rel=1e-14)


def test_minimize_dirichlet_matches_discrete_laplace_solve():
    """Descent on |v|^2 lands on the discrete harmonic extension of the boundary values."""
    mesh = build_box_mesh(2, 4)

    def boundary_data(t):
        bump_ = 0.2 * np.sin(np.pi * t[:, 0]) * np.sin(np.pi * t[:, 1])
        return np.stack([t[:, 0] + 0.5 * t[:, 0] * t[:, 1], t[:, 1] + 0.3 * t[:, 0] ** 2], axis=1) \
            + bump_[:, None]

    start = interpolate(boundary_data, mesh)
    K = _stiffness(mesh)
    interior, boundary = mesh.interior_nodes, mesh.boundary_nodes
    harmonic = np.array(start.nodal_values)
    harmonic[interior] = np.linalg.solve(K[np.ix_(interior, interior)],
                                         -K[np.ix_(interior, boundary)] @ harmonic[boundary])
    direct_energy = float(np.einsum("vi,vw,wi->", harmonic, K, harmonic))
    assert direct_energy == pytest.approx(integrate_energy(PwAffineMap(mesh, harmonic), dirichlet()),
                                          rel=1e-12)

    result = minimize(mesh, dirichlet(), start, MinimizeOptions(tolerance=1e-9, max_iterations=4000))
    assert result.energy < integrate_energy(start, dirichlet())
    assert result.energy == pytest.approx(direct_energy, rel=1e-10)
    assert np.allclose(result.map.nodal_values, harmonic, atol=1e-6)


def test_gap_experiment_small():
    """A coarse gap run reports a non-negative lower bound below the competitor."""
    report = gap_experiment(h=0.25, options=MinimizeOptions(max_iterations=20), levels=2)
    assert report.certified
    assert report.minimizer_energy >= report.lower_bound - 1e-8
    assert report.degree == pytest.approx(report.polygon_area, rel=1e-10)
    assert report.gap_ratio > 100
    assert len(report.blowup) == 2
    assert report.blowup[1][1] > report.blowup[0][1]


# ============================================================================
# Weak continuity of minors
# ============================================================================

def test_random_rank_one_pair():
    """Random pairs differ by a rank-one matrix."""
    A, B = random_rank_one_pair(component_rng(0, "test-pair"))
    a, nu = rank_one_decomposition(A, B)
    assert np.allclose(np.outer(a, nu), A - B)


def test_unit_square_window_pairing_vanishes():
    """On the unit square window the minor pairing is zero."""
    stripes = StripeSequence(ID, ID - E11, 0.3)
    psi = unit_square_window((1.0, 0.0))
    for frequency in (1, 3, 8):
        assert abs(stripe_pairing(stripes, frequency, psi)) <= 1e-12
    with pytest.raises(ValueError, match="axis-aligned"):
        unit_square_window((math.sqrt(0.5), math.sqrt(0.5)))


def test_lattice_window_pairing_decays_quadratically():
    """Whole periods inside the window leave a pairing proportional to 1/i^2."""
    psi = lattice_window((1.0, 0.0), (0.5, 0.5))
    table = weak_minor_convergence_experiment(ID, ID - E11, 0.3, [4, 8, 16, 32], [psi])
    column = table.column(0)
    assert table.decreasing_beyond(4)
    for coarse, fine in zip(column, column[1:]):
        assert coarse / fine == pytest.approx(4.0, rel=1e-6)
    assert table.rows[-1].sup_distance == pytest.approx(0.21 / 32)


def test_weak_minor_experiment_validation():
    """Invalid frequencies and windows are rejected."""
    with pytest.raises(ValueError, match="rank one"):
        weak_minor_convergence_experiment(ID, -ID, 0.5, [1], [unit_square_window((1.0, 0.0))])
    with pytest.raises(ValueError, match="positive integers"):
        weak_minor_convergence_experiment(ID, ID - E11, 0.5, [0, 1], [unit_square_window((1.0, 0.0))])
