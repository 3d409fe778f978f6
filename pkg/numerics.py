"""
Shared numerical plumbing for polyvar.

Deterministic reductions, seeded random generators, finite-difference checks
and the error types raised across the toolkit.
"""

import logging
import math
import zlib
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class EvaluationError(ArithmeticError):
    """An integrand or callback produced NaN (never used for +inf energies)."""


class ResourceLimitError(RuntimeError):
    """A mesh or transport problem exceeds its size budget."""


class UnsupportedDomainError(ValueError):
    """The domain descriptor does not support the requested construction."""


def tree_sum(values) -> float:
    """
    Sum values with a fixed pairwise tree over their index order.

    The pairing only depends on the number of values, so the result is
    bitwise reproducible whatever produced the array.
    """
    a = np.asarray(values, dtype=float).ravel()
    if a.size == 0:
        return 0.0
    while a.size > 1:
        if a.size % 2:
            a = np.append(a, 0.0)
        a = a[0::2] + a[1::2]
    return float(a[0])


def integrate_samples(values, weights, what: str = "integrand") -> float:
    """
    Weighted fixed-order sum of sampled integrand values.

    Args:
        values: Integrand values, one per sample
        weights: Positive sample weights
        what: Label used in error messages

    Returns:
        The weighted sum, or math.inf when any sample is +inf

    Raises:
        EvaluationError: If a value is NaN or -inf
    """
    values = np.asarray(values, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if values.shape != weights.shape:
        raise ValueError(f"{what}: {values.size} values for {weights.size} weights")
    if np.isnan(values).any():
        raise EvaluationError(f"{what} returned NaN at {int(np.isnan(values).sum())} samples")
    if np.isneginf(values).any():
        raise EvaluationError(f"{what} returned -inf")
    if np.isposinf(values).any():
        return math.inf
    return tree_sum(values * weights)


def component_rng(seed: int, label: str) -> np.random.Generator:
    """
    Derive the generator of one named component from the run seed.

    Distinct labels give independent streams; the same (seed, label) pair
    always gives the same stream.
    """
    if seed < 0:
        raise ValueError(f"Seed must be non-negative, got {seed}")
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode("utf-8"))]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def finite_difference_error(func: Callable, jacobian: Callable, points: np.ndarray,
                            step: float = 1e-6) -> float:
    """
    Largest relative mismatch between an analytic Jacobian and central differences.

    Args:
        func: Maps (P, d) points to (P, k) values
        jacobian: Maps (P, d) points to (P, k, d) derivatives
        points: Probe points, shape (P, d)
        step: Central-difference step

    Returns:
        max |fd - analytic| / (1 + |analytic|) over all entries
    """
    points = np.asarray(points, dtype=float)
    analytic = np.asarray(jacobian(points), dtype=float)
    analytic = analytic.reshape(points.shape[0], -1, points.shape[1])
    worst = 0.0
    for j in range(points.shape[1]):
        shift = np.zeros_like(points)
        shift[:, j] = step
        upper = np.asarray(func(points + shift), dtype=float).reshape(points.shape[0], -1)
        lower = np.asarray(func(points - shift), dtype=float).reshape(points.shape[0], -1)
        fd = (upper - lower) / (2.0 * step)
        err = np.abs(fd - analytic[:, :, j]) / (1.0 + np.abs(analytic[:, :, j]))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


def fitted_order(sizes: Sequence[float], errors: Sequence[float]) -> float:
    """Slope of log(error) against log(size), the observed convergence order."""
    sizes = np.asarray(sizes, dtype=float)
    errors = np.abs(np.asarray(errors, dtype=float))
    if sizes.size < 2:
        raise ValueError("Need at least two refinement levels to fit an order")
    if np.any(errors <= 0.0):
        return math.inf
    slope, _ = np.polyfit(np.log(sizes), np.log(errors), 1)
    return float(slope)
