import math
from unittest.mock import patch

import numpy as np
import pytest

from meshmaps import build_box_mesh, identity_map, interpolate
from nulllag import (bump, bump_field, clamp_form, divergence_one_field, make_null_lagrangian,
                     sine_form, unit_square)
from numerics import EvaluationError, ResourceLimitError, component_rng
from youngmeasure import (AtomicYoungMeasure, DiscreteMeasure, JetAtom, NonGraphReport,
                          StripeSequence, TargetMap, anchoring_residual, closedness_residual,
                          disintegrate, from_map, growth_weights, integrate, jensen_gap,
                          kr_distance, laminate, marginal_residual, push_forward,
                          rank_one_decomposition, structure_residual, tail_bound,
                          tightness_profile)

ID = np.eye(2)
E11 = np.array([[1.0, 0.0], [0.0, 0.0]])


def det(t, x, v):
    return v[:, 0, 0] * v[:, 1, 1] - v[:, 0, 1] * v[:, 1, 0]


def squared_norm(t, x, v):
    return np.sum(v.reshape(v.shape[0], -1) ** 2, axis=1)


def single_atom(v, weight=1.0):
    return AtomicYoungMeasure([0], [[0.5, 0.5]], [[0.5, 0.5]], [v], [weight], 2)


@pytest.fixture
def base():
    return identity_map(build_box_mesh(2, 4))


# ============================================================================
# Construction
# ============================================================================

def test_lift_of_identity(base):
    """The lift of the identity puts one Dirac atom at each quadrature point."""
    measure = from_map(base)
    assert measure.total_mass == pytest.approx(1.0, abs=1e-14)
    assert marginal_residual(measure) <= 1e-15
    assert integrate(measure, det) == pytest.approx(1.0)
    assert np.allclose(growth_weights(measure), 2.0 + math.sqrt(2.0))


def test_duplicate_atoms_merge():
    """Atoms with equal jets are merged and their weights added."""
    atom = JetAtom(0, (0.1, 0.2), (0.0, 0.0), ((1.0, 0.0), (0.0, 1.0)), 0.25)
    measure = AtomicYoungMeasure.from_atoms([atom, atom], 2)
    assert measure.size == 1
    assert measure.weights.tolist() == [0.5]


def test_atoms_sorted_canonically():
    """Atoms are stored in a canonical order."""
    atoms = [JetAtom(1, (0.0, 0.0), (0.0, 0.0), ((0.0, 0.0), (0.0, 0.0)), 0.5),
             JetAtom(0, (0.5, 0.0), (0.0, 0.0), ((0.0, 0.0), (0.0, 0.0)), 0.25),
             JetAtom(0, (0.1, 0.0), (0.0, 0.0), ((0.0, 0.0), (0.0, 0.0)), 0.25)]
    measure = AtomicYoungMeasure.from_atoms(atoms, 1)
    assert measure.cells.tolist() == [0, 0, 1]
    assert measure.t[:, 0].tolist() == [0.1, 0.5, 0.0]
    assert measure.atoms[0].weight == 0.25


def test_measure_validation(base):
    """Negative weights, mismatched shapes and wrong total mass are rejected."""
    with pytest.raises(ValueError, match="positive"):
        single_atom(ID, weight=0.0)
    with pytest.raises(ValueError, match="Degree bound"):
        AtomicYoungMeasure([0], [[0.5, 0.5]], [[0.5, 0.5]], [ID], [1.0], 3)
    with pytest.raises(ValueError, match="outside its cell"):
        AtomicYoungMeasure([0], [[0.9, 0.9]], [[0.0, 0.0]], [ID], [1.0], 2, base.mesh)
    with pytest.raises(ValueError, match="at least one atom"):
        AtomicYoungMeasure.from_atoms([], 2)


def test_marginal_needs_mesh():
    """Marginals are only defined over a mesh."""
    with pytest.raises(ValueError, match="mesh"):
        marginal_residual(single_atom(ID))


# ============================================================================
# Laminates and structure
# ============================================================================

def test_rank_one_laminate_is_a_generalized_map(base):
    """A rank-one laminate passes the structure check."""
    measure = laminate(ID, ID - E11, 0.3, base)
    assert measure.total_mass == pytest.approx(1.0, abs=1e-14)
    assert marginal_residual(measure) <= 1e-15
    assert structure_residual(disintegrate(measure)) <= 1e-14


def test_non_rank_one_laminate_fails_structure(base):
    """A laminate of Id and -Id is not a generalized map."""
    measure = laminate(ID, -ID, 0.5, base)
    assert structure_residual(disintegrate(measure)) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="not a generalized map"):
        jensen_gap(measure, det)


def test_laminate_validation(base):
    """Laminate weights lie in [0, 1] and matrices share a shape."""
    with pytest.raises(ValueError, match="weight"):
        laminate(ID, -ID, 1.0, base)
    with pytest.raises(ValueError, match="shape"):
        laminate(np.eye(3), -np.eye(3), 0.5, base)


def test_disintegrate_reports_non_graph():
    """Two values at one point are reported as a non-graph."""
    measure = AtomicYoungMeasure([0, 0], [[0.5, 0.5], [0.5, 0.5]], [[0.0, 0.0], [1.0, 0.0]],
                                 [ID, ID], [0.5, 0.5], 2)
    report = disintegrate(measure)
    assert isinstance(report, NonGraphReport)
    assert report.spread == 1.0
    with pytest.raises(ValueError, match="not graph-like"):
        structure_residual(report)


def test_disintegrate_moments(base):
    """Disintegration recovers the mean gradient and minors."""
    measure = laminate(ID, ID - E11, 0.25, base)
    result = disintegrate(measure)
    assert len(result.fibers) == base.mesh.num_cells
    fiber = result.fibers[0]
    assert fiber.probabilities.sum() == pytest.approx(1.0)
    assert np.allclose(fiber.moments[0], [[0.25, 0.0], [0.0, 1.0]])
    assert fiber.moments[1][0, 0] == pytest.approx(0.25)


def test_jensen_gap_on_rank_one_laminate(base):
    """Zero for det; lam (1 - lam) |A - B|^2 for the squared norm."""
    measure = laminate(ID, ID - E11, 0.3, base)
    assert jensen_gap(measure, det) == pytest.approx(0.0, abs=1e-14)
    assert jensen_gap(measure, squared_norm) == pytest.approx(0.21, abs=1e-13)


# ============================================================================
# Push-forward
# ============================================================================

def test_push_forward_by_linear_map(base):
    """Pushing forward by a linear map transforms values and gradients."""
    M = np.array([[2.0, 1.0], [0.0, 3.0]])
    target = TargetMap(lambda x: x @ M.T, lambda x: np.broadcast_to(M, (len(x), 2, 2)), "linear")
    measure = from_map(base)
    pushed = push_forward(measure, target)
    assert pushed.size == measure.size
    assert np.allclose(pushed.v, M)
    assert integrate(pushed, det) == pytest.approx(np.linalg.det(M))


# ============================================================================
# Closedness and anchoring
# ============================================================================

def test_closedness_of_lifted_identity():
    """The lifted identity has zero closedness residual."""
    mapping = identity_map(build_box_mesh(2, 32))
    spec = make_null_lagrangian(1, sine_form(2, 0, [1.0], [[1.0, 0.5]], [0.3]),
                                bump_field(2, 1, (0.5, 0.5), 0.35, [1.0, -0.5]))
    assert closedness_residual(from_map(mapping, 6), spec) <= 1e-5


def test_closedness_detects_non_gradient_oscillation():
    """+-Id atoms over a constant map: the det part of F survives as the integral of phi."""
    mesh = build_box_mesh(2, 8)
    constant = from_map(interpolate(lambda t: 0.5 + 0.0 * t, mesh), 4)
    P = constant.size
    spread = AtomicYoungMeasure(np.concatenate([constant.cells, constant.cells]),
                                np.concatenate([constant.t, constant.t]),
                                np.concatenate([constant.x, constant.x]),
                                np.concatenate([np.broadcast_to(ID, (P, 2, 2)),
                                                np.broadcast_to(-ID, (P, 2, 2))]),
                                np.concatenate([constant.weights, constant.weights]) / 2.0, 2, mesh)
    spec = make_null_lagrangian(2, clamp_form(2, 1, (2,)), bump_field(2, 2, (0.5, 0.5), 0.35))
    # d chi = dx1 ^ dx2 near x = (0.5, 0.5) and det(+-Id) = 1
    expected = float(np.sum(constant.weights * bump(constant.t, (0.5, 0.5), 0.35)[0]))
    assert spread.total_mass == pytest.approx(1.0, abs=1e-14)
    assert expected > 1e-2
    assert closedness_residual(spread, spec) == pytest.approx(expected, rel=1e-12)
    assert closedness_residual(constant, spec) == 0.0


def test_anchoring_residual():
    """The anchoring residual vanishes for a lift and not for a shifted measure."""
    mesh = build_box_mesh(2, 8)
    base = identity_map(mesh)
    chi = clamp_form(2, 1)
    U = divergence_one_field(unit_square())
    assert anchoring_residual(from_map(base), base, chi, U) == 0.0
    doubled = from_map(interpolate(lambda t: 2.0 * t, mesh))
    assert anchoring_residual(doubled, base, chi, U) > 1e-2
    with pytest.raises(ValueError, match="0-form"):
        anchoring_residual(from_map(base), base, clamp_form(2, 1, (1,)), U)


# ============================================================================
# Transport distance
# ============================================================================

def test_kr_distance_identical_is_zero(base):
    """A measure is at distance zero from itself."""
    measure = laminate(ID, ID - E11, 0.3, base)
    assert kr_distance(measure, measure) == pytest.approx(0.0, abs=1e-12)


def test_kr_distance_single_atoms():
    """min(|Id - 2Id|, 1) + |r_2(2Id) - r_2(Id)| = 1 + (5 + 2 sqrt 2) - (2 + sqrt 2)."""
    first, second = single_atom(ID), single_atom(2.0 * ID)
    assert kr_distance(first, second) == pytest.approx(4.0 + math.sqrt(2.0), rel=1e-12)
    assert kr_distance(first, second, weighted=False) == pytest.approx(1.0)


def test_kr_distance_is_symmetric(base):
    """The distance does not depend on argument order."""
    first = laminate(ID, ID - E11, 0.3, base)
    second = laminate(ID, ID - E11, 0.6, base)
    assert kr_distance(first, second) == pytest.approx(kr_distance(second, first), abs=1e-12)
    assert kr_distance(first, second) > 0.0


def test_kr_distance_errors():
    """Mismatched masses and shapes are rejected."""
    with pytest.raises(ValueError, match="masses differ"):
        kr_distance(single_atom(ID), single_atom(ID, weight=0.5))
    with pytest.raises(ValueError, match="different jet spaces"):
        kr_distance(DiscreteMeasure([[0.0]], [1.0], [1.0]), DiscreteMeasure([[0.0, 0.0]], [1.0], [1.0]))
    many = DiscreteMeasure(np.zeros((10_001, 1)), np.full(10_001, 1e-4), np.ones(10_001))
    with pytest.raises(ResourceLimitError):
        kr_distance(many, DiscreteMeasure([[0.0]], [many.mass], [1.0]))


def test_kr_distance_bounds_lipschitz_integrals():
    """|int f dmu - int f dnu| <= KR for f = a h(p) + b r with h 1-Lipschitz into [0, 1] and |a|, |b| <= 1."""
    rng = component_rng(0, "test-kr-duality")
    for _ in range(50):
        dim = int(rng.integers(1, 4))
        first, second = (DiscreteMeasure(rng.uniform(0.0, 1.5, size=(n, dim)), rng.dirichlet(np.ones(n)),
                                         rng.uniform(1.0, 3.0, size=n))
                         for n in rng.integers(1, 6, size=2))
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        shift = rng.uniform(-1.0, 1.0)
        a, b = rng.uniform(-1.0, 1.0, size=2)

        def f(measure):
            h = np.clip(measure.points @ direction + shift, 0.0, 1.0)
            return a * h + b * measure.growth

        gap = abs(float(np.dot(first.weights, f(first)) - np.dot(second.weights, f(second))))
        assert gap <= kr_distance(first, second) + 1e-10


def test_kr_distance_bounds_jet_integrals(base):
    """The same duality bound for lifted laminates, testing with r_k itself and a clipped coordinate."""
    first = laminate(ID, ID - E11, 0.3, base)
    second = laminate(2.0 * ID, 2.0 * ID - E11, 0.6, base)
    distance = kr_distance(first, second)

    def growth(t, x, v):
        return 1.0 + np.linalg.norm(v.reshape(v.shape[0], -1), axis=1) + np.abs(det(t, x, v))

    def clipped(t, x, v):
        return np.clip(v[:, 0, 0], 0.0, 1.0)

    for test_function in (growth, clipped):
        gap = abs(integrate(first, test_function) - integrate(second, test_function))
        assert gap <= distance + 1e-10
    assert distance > 0.0


def test_kr_distance_solver_failure():
    """A network simplex that stops before optimality raises instead of returning a bound."""
    failed = (0.5, {"cost": 0.5, "warning": "numItermax reached before optimality", "result_code": 2})
    with patch("youngmeasure.ot.emd2", return_value=failed):
        with pytest.raises(EvaluationError, match="stopped early"):
            kr_distance(single_atom(ID), single_atom(2.0 * ID))


# ============================================================================
# Tightness
# ============================================================================

def test_tightness_profile_non_increasing(base):
    """The tail mass profile is non-increasing in the radius."""
    family = [laminate(ID, ID - E11, 0.5, base), laminate(3.0 * ID, 3.0 * ID - 5.0 * E11, 0.5, base)]
    profile = tightness_profile(family, [0.5, 1.0, 2.0, 8.0, 100.0])
    values = [v for _, v in profile]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert values[-1] == 0.0
    assert values[0] > 0.0
    with pytest.raises(ValueError, match="at least one"):
        tightness_profile([], [1.0])


def test_tail_bound():
    """The tail mass is bounded by the energy over the radius."""
    assert tail_bound(1.0, lambda s: s ** 2, 2.0) == pytest.approx(0.75)
    assert tail_bound(1.0, lambda s: -s, 2.0) == math.inf
    with pytest.raises(ValueError, match="positive"):
        tail_bound(1.0, lambda s: s, 0.0)


# ============================================================================
# Rank-one stripes
# ============================================================================

def test_rank_one_decomposition():
    """A rank-one difference splits into a tensor product."""
    a, nu = rank_one_decomposition(ID, ID - E11)
    assert np.allclose(np.outer(a, nu), E11)
    assert np.linalg.norm(nu) == pytest.approx(1.0)
    a, nu = rank_one_decomposition(-E11, np.zeros((2, 2)))
    assert nu[0] > 0
    with pytest.raises(ValueError, match="rank one"):
        rank_one_decomposition(ID, -ID)


def test_stripe_sequence_gradients_and_distance():
    """Stripe maps alternate between the two gradients and approach the mean."""
    stripes = StripeSequence(ID, ID - E11, 0.3)
    t = component_rng(0, "test-stripes").uniform(0, 1, size=(500, 2))
    for frequency in (1, 4, 16):
        grads = stripes.gradient(frequency, t)
        on_a = np.all(grads == ID, axis=(1, 2))
        on_b = np.all(grads == ID - E11, axis=(1, 2))
        assert np.all(on_a | on_b)
        gap = np.linalg.norm(stripes.value(frequency, t) - stripes.limit_value(t), axis=1)
        assert np.all(gap <= stripes.sup_distance(frequency) + 1e-12)
    assert stripes.sup_distance(16) == pytest.approx(0.21 / 16)


def test_stripe_sequence_validation():
    """Frequencies must be positive and the gradients rank-one connected."""
    with pytest.raises(ValueError, match="weight"):
        StripeSequence(ID, ID - E11, 0.0)
    with pytest.raises(ValueError, match="rank one"):
        StripeSequence(ID, -ID, 0.5)
    with pytest.raises(ValueError, match="positive integer"):
        StripeSequence(ID, ID - E11, 0.5).value(0, [[0.0, 0.0]])


def test_limit_laminate_matches_mean_gradient(base):
    """The limit laminate has the stripe sequence's mean gradient."""
    stripes = StripeSequence(ID, ID - E11, 0.3)
    measure = stripes.limit_laminate(base.mesh)
    result = disintegrate(measure)
    assert np.allclose(result.fibers[0].moments[0], stripes.mean_gradient)
