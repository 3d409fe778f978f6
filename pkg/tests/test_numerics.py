import math

import numpy as np
import pytest

from numerics import (EvaluationError, UnsupportedDomainError, component_rng,
                      finite_difference_error, fitted_order, integrate_samples, tree_sum)


def test_tree_sum_small_cases():
    """Empty, single and three-term sums."""
    assert tree_sum([]) == 0.0
    assert tree_sum([2.5]) == 2.5
    assert tree_sum([1.0, 2.0, 3.0]) == 6.0


def test_tree_sum_is_order_fixed():
    """The same values in the same order always give the same bits."""
    values = component_rng(0, "test-tree").normal(size=1001)
    assert tree_sum(values) == tree_sum(values.copy())
    assert tree_sum(values) == pytest.approx(math.fsum(values), abs=1e-12)


def test_integrate_samples():
    """Weighted sums propagate +inf and reject NaN, -inf and length mismatches."""
    assert integrate_samples([1.0, 2.0], [0.5, 0.25]) == 1.0
    assert integrate_samples([1.0, math.inf], [0.5, 0.5]) == math.inf
    with pytest.raises(EvaluationError, match="NaN"):
        integrate_samples([1.0, math.nan], [0.5, 0.5])
    with pytest.raises(EvaluationError, match="-inf"):
        integrate_samples([-math.inf], [1.0])
    with pytest.raises(ValueError, match="2 values for 1 weights"):
        integrate_samples([1.0, 2.0], [1.0])


def test_component_rng_streams():
    """Streams are reproducible per (seed, label) and differ otherwise."""
    first = component_rng(7, "alpha").normal(size=4)
    assert np.array_equal(first, component_rng(7, "alpha").normal(size=4))
    assert not np.array_equal(first, component_rng(7, "beta").normal(size=4))
    assert not np.array_equal(first, component_rng(8, "alpha").normal(size=4))
    with pytest.raises(ValueError, match="non-negative"):
        component_rng(-1, "alpha")


def test_finite_difference_error():
    """A correct Jacobian passes and a scaled one fails."""
    points = component_rng(0, "test-fd").uniform(-1, 1, size=(8, 2))

    def func(p):
        return np.stack([p[:, 0] * p[:, 1], np.sin(p[:, 0])], axis=1)

    def good(p):
        return np.stack([np.stack([p[:, 1], p[:, 0]], axis=1),
                         np.stack([np.cos(p[:, 0]), np.zeros(len(p))], axis=1)], axis=1)

    def bad(p):
        return 2.0 * good(p)

    assert finite_difference_error(func, good, points) < 1e-8
    assert finite_difference_error(func, bad, points) > 0.1


def test_fitted_order():
    """Log-log slopes for power laws and rounding-level residuals."""
    sizes = [0.1, 0.05, 0.025]
    assert fitted_order(sizes, [s ** 2 for s in sizes]) == pytest.approx(2.0)
    assert fitted_order(sizes, [1.0 / s for s in sizes]) == pytest.approx(-1.0)
    assert fitted_order(sizes, [0.0, 1.0, 2.0]) == math.inf
    with pytest.raises(ValueError, match="two refinement levels"):
        fitted_order([0.1], [0.01])


def test_unsupported_domain_is_a_value_error():
    """UnsupportedDomainError is caught as invalid input."""
    assert issubclass(UnsupportedDomainError, ValueError)
