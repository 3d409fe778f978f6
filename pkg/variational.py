"""
Polyconvex integrands, the direct-method minimizer, and the two headline
experiments: the energy gap on the unit disc and the weak continuity of
minors along rank-one oscillations.

An integrand L(t, x, v) = Lk(t, x, wedge_1 v, ..., wedge_k v) is described by
its lifted function Lk, convex in the minors, and optionally the lifted
gradient and a superlinear witness ell with Lk >= ell(|minors|).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate as scipy_integrate
from scipy.optimize import brentq

from exterior import batched_det, compound, compound_gradient, r_k
from meshmaps import (PwAffineMap, SimplicialMesh, SmoothMap, _physical_points, _resolve_rule,
                      build_disc_mesh, identity_map, interpolate)
from numerics import (EvaluationError, component_rng, finite_difference_error, fitted_order,
                      tree_sum)
from youngmeasure import StripeSequence, TargetMap

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-5
PAIRING_FLOOR = 1e-12

Minors = Tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class IntegrandSpec:
    """
    A k-convex integrand given through its lifted function.

    lifted(t, x, minors) returns (P,) values; lifted_gradient returns
    (dL/dx (P, m), (dL/dv_1, ..., dL/dv_k)) with dL/dv_i shaped like wedge_i(v).
    """
    name: str
    degree_bound: int
    lifted: Callable[[np.ndarray, np.ndarray, Minors], np.ndarray]
    lifted_gradient: Optional[Callable[[np.ndarray, np.ndarray, Minors],
                                       Tuple[np.ndarray, Minors]]] = None
    witness: Optional[Callable[[np.ndarray], np.ndarray]] = None
    source_dim: int = 2
    target_dim: int = 2
    polyconvex: bool = True
    description: str = ""
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        if not 1 <= self.degree_bound <= min(self.source_dim, self.target_dim):
            raise ValueError(f"Integrand '{self.name}': k={self.degree_bound} outside "
                             f"1..{min(self.source_dim, self.target_dim)}")
        if self.validate and self.lifted_gradient is not None:
            error = self.gradient_error()
            if error > GRADIENT_TOLERANCE:
                raise ValueError(f"Integrand '{self.name}': gradient disagrees with finite "
                                 f"differences (relative error {error:.3g})")

    def minors(self, v) -> Minors:
        return tuple(compound(v, i) for i in range(1, self.degree_bound + 1))

    def evaluate(self, t, x, v) -> np.ndarray:
        """
        L at jets; +inf is allowed.

        Raises:
            EvaluationError: If the integrand returns NaN
        """
        values = np.asarray(self.lifted(np.atleast_2d(t), np.atleast_2d(x), self.minors(v)),
                            dtype=float)
        if np.isnan(values).any():
            raise EvaluationError(f"Integrand '{self.name}' returned NaN")
        return values

    __call__ = evaluate

    def jet_gradient(self, t, x, v) -> Tuple[np.ndarray, np.ndarray]:
        """(dL/dx, dL/dv) at jets, chained through the minors."""
        if self.lifted_gradient is None:
            raise ValueError(f"Integrand '{self.name}' has no gradient")
        v = np.asarray(v, dtype=float)
        dx, dminors = self.lifted_gradient(np.atleast_2d(t), np.atleast_2d(x), self.minors(v))
        dv = np.zeros_like(v)
        for i, weights in enumerate(dminors, start=1):
            dv = dv + compound_gradient(v, i, weights)
        return np.asarray(dx, dtype=float), dv

    def gradient_error(self, samples: int = 8) -> float:
        """Relative mismatch between jet_gradient and central differences on random jets."""
        n, m = self.source_dim, self.target_dim
        rng = component_rng(0, f"integrand-check:{self.name}")
        t = rng.uniform(-0.9, 0.9, size=(samples, n)) / math.sqrt(n)
        eye = np.eye(m, n).ravel()
        jets = np.concatenate([rng.normal(size=(samples, m)),
                               eye + 0.3 * rng.normal(size=(samples, m * n))], axis=1)
        finite = np.isfinite(self.evaluate(t, jets[:, :m], jets[:, m:].reshape(-1, m, n)))
        t, jets = t[finite], jets[finite]

        def values(z):
            return self.evaluate(t, z[:, :m], z[:, m:].reshape(-1, m, n))[:, None]

        def jacobian(z):
            dx, dv = self.jet_gradient(t, z[:, :m], z[:, m:].reshape(-1, m, n))
            return np.concatenate([dx, dv.reshape(z.shape[0], -1)], axis=1)[:, None, :]

        return finite_difference_error(values, jacobian, jets)


def example_lagrangian(eps: float = 1e-3, p: float = 1.5) -> IntegrandSpec:
    """
    L = eps (|v_1|^p + |t|^4 |v_1|^4) + v_2^2 on the disc, n = m = 2.

    Witness ell(s) = eps s^p / 2^p - 1.

    Raises:
        ValueError: If eps <= 0 or p is not in (1, 2)
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not 1.0 < p < 2.0:
        raise ValueError(f"p must lie in (1, 2), got {p}")

    def lifted(t, x, minors):
        v1, v2 = minors
        norm2 = np.sum(v1.reshape(v1.shape[0], -1) ** 2, axis=1)
        r4 = np.sum(t * t, axis=1) ** 2
        return eps * (norm2 ** (p / 2) + r4 * norm2 ** 2) + v2[:, 0, 0] ** 2

    def gradient(t, x, minors):
        v1, v2 = minors
        norm2 = np.sum(v1.reshape(v1.shape[0], -1) ** 2, axis=1)
        r4 = np.sum(t * t, axis=1) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            power = np.where(norm2 > 0, p * norm2 ** (p / 2 - 1), 0.0)
        dv1 = eps * (power + 4.0 * r4 * norm2)[:, None, None] * v1
        return np.zeros_like(x), (dv1, 2.0 * v2)

    def witness(s):
        return eps * np.asarray(s, dtype=float) ** p / 2.0 ** p - 1.0

    return IntegrandSpec(f"example(eps={eps:g},p={p:g})", 2, lifted, gradient, witness,
                         description="eps(|v|^p + |t|^4 |v|^4) + det(v)^2")


def dirichlet(source_dim: int = 2, target_dim: int = 2) -> IntegrandSpec:
    def lifted(t, x, minors):
        v1 = minors[0]
        return np.sum(v1.reshape(v1.shape[0], -1) ** 2, axis=1)

    def gradient(t, x, minors):
        return np.zeros_like(x), (2.0 * minors[0],)

    return IntegrandSpec("dirichlet", 1, lifted, gradient, lambda s: np.asarray(s) ** 2 - 1.0,
                         source_dim, target_dim, description="|v|^2")


def minors_square(source_dim: int = 2, target_dim: int = 2) -> IntegrandSpec:
    """sum_i |wedge_i v|^2 over i = 1..min(n, m); |v|^2 + det(v)^2 in the plane."""
    k = min(source_dim, target_dim)

    def lifted(t, x, minors):
        return sum(np.sum(mi.reshape(mi.shape[0], -1) ** 2, axis=1) for mi in minors)

    def gradient(t, x, minors):
        return np.zeros_like(x), tuple(2.0 * mi for mi in minors)

    return IntegrandSpec("det-square", k, lifted, gradient, lambda s: np.asarray(s) ** 2 - 1.0,
                         source_dim, target_dim, description="sum of squared minors")


def affine_det() -> IntegrandSpec:
    """L = det v, a null Lagrangian (convex and concave in v_2)."""
    def lifted(t, x, minors):
        return minors[1][:, 0, 0].copy()

    def gradient(t, x, minors):
        return np.zeros_like(x), (np.zeros_like(minors[0]), np.ones_like(minors[1]))

    return IntegrandSpec("det", 2, lifted, gradient, description="det v")


def negative_abs_det() -> IntegrandSpec:
    """-|det v|: concave in v_2, hence not polyconvex."""
    def lifted(t, x, minors):
        return -np.abs(minors[1][:, 0, 0])

    def gradient(t, x, minors):
        return np.zeros_like(x), (np.zeros_like(minors[0]), -np.sign(minors[1]))

    return IntegrandSpec("neg-abs-det", 2, lifted, gradient, polyconvex=False,
                         description="-|det v|")


def negative_square(source_dim: int = 2, target_dim: int = 2) -> IntegrandSpec:
    def lifted(t, x, minors):
        v1 = minors[0]
        return -np.sum(v1.reshape(v1.shape[0], -1) ** 2, axis=1)

    def gradient(t, x, minors):
        return np.zeros_like(x), (-2.0 * minors[0],)

    return IntegrandSpec("neg-square", 1, lifted, gradient, source_dim=source_dim,
                         target_dim=target_dim, polyconvex=False, description="-|v|^2")


def frobenius_norm(source_dim: int = 2, target_dim: int = 2) -> IntegrandSpec:
    """|v|, convex with linear growth only."""
    def lifted(t, x, minors):
        v1 = minors[0]
        return np.sqrt(np.sum(v1.reshape(v1.shape[0], -1) ** 2, axis=1))

    def gradient(t, x, minors):
        v1 = minors[0]
        norm = np.sqrt(np.sum(v1.reshape(v1.shape[0], -1) ** 2, axis=1))
        safe = np.where(norm > 0, norm, 1.0)
        return np.zeros_like(x), ((norm > 0)[:, None, None] * v1 / safe[:, None, None],)

    return IntegrandSpec("norm", 1, lifted, gradient, lambda s: np.asarray(s, dtype=float),
                         source_dim, target_dim, description="|v|")


def orientation_barrier() -> IntegrandSpec:
    """|v|^2 + det^2 + 1/det for det > 0 and +inf otherwise."""
    def lifted(t, x, minors):
        v1, v2 = minors
        det = v2[:, 0, 0]
        base = np.sum(v1.reshape(v1.shape[0], -1) ** 2, axis=1) + det ** 2
        with np.errstate(divide="ignore"):
            return np.where(det > 0, base + 1.0 / np.where(det > 0, det, 1.0), np.inf)

    def gradient(t, x, minors):
        v1, v2 = minors
        det = np.where(v2 > 0, v2, 1.0)
        return np.zeros_like(x), (2.0 * v1, 2.0 * v2 - 1.0 / det ** 2)

    return IntegrandSpec("orientation", 2, lifted, gradient, lambda s: np.asarray(s) ** 2 / 2 - 1.0,
                         description="|v|^2 + det^2 + 1/det, +inf for det <= 0")


def random_polyconvex(rng: np.random.Generator, source_dim: int = 2,
                      target_dim: int = 2) -> IntegrandSpec:
    """
    sum_i a_i |v_i - W_i|^2 + g sqrt(1 + |v_1|^2) + d |x|^2 with random positive a_i, g, d.

    Convex in every minor, so polyconvex by construction.
    """
    k = min(source_dim, target_dim)
    shapes = [compound(np.zeros((target_dim, source_dim)), i).shape for i in range(1, k + 1)]
    alphas = rng.uniform(0.2, 2.0, size=k)
    centers = [rng.normal(size=s) for s in shapes]
    gamma, delta = rng.uniform(0.0, 1.0, size=2)
    offset = float(sum(np.sum(c * c) for c in centers))

    def lifted(t, x, minors):
        total = gamma * np.sqrt(1.0 + np.sum(minors[0].reshape(minors[0].shape[0], -1) ** 2, axis=1))
        total = total + delta * np.sum(x * x, axis=1)
        for a, c, mi in zip(alphas, centers, minors):
            diff = (mi - c).reshape(mi.shape[0], -1)
            total = total + a * np.sum(diff * diff, axis=1)
        return total

    def gradient(t, x, minors):
        v1 = minors[0]
        root = np.sqrt(1.0 + np.sum(v1.reshape(v1.shape[0], -1) ** 2, axis=1))
        grads = [2.0 * a * (mi - c) for a, c, mi in zip(alphas, centers, minors)]
        grads[0] = grads[0] + gamma * v1 / root[:, None, None]
        return 2.0 * delta * x, tuple(grads)

    return IntegrandSpec("random-polyconvex", k, lifted, gradient,
                         lambda s: float(np.min(alphas)) * (np.asarray(s) ** 2 / 2 - offset),
                         source_dim, target_dim, description="random convex function of the minors")


@dataclass(frozen=True)
class IntegrandEntry:
    name: str
    description: str
    build: Callable[..., IntegrandSpec]


INTEGRANDS: Dict[str, IntegrandEntry] = {
    "example": IntegrandEntry("example", "eps(|v|^p + |t|^4 |v|^4) + det(v)^2",
                              lambda eps=1e-3, p=1.5, **_: example_lagrangian(eps, p)),
    "dirichlet": IntegrandEntry("dirichlet", "|v|^2", lambda **_: dirichlet()),
    "det-square": IntegrandEntry("det-square", "|v|^2 + det(v)^2", lambda **_: minors_square()),
    "det": IntegrandEntry("det", "det v (null Lagrangian)", lambda **_: affine_det()),
    "neg-abs-det": IntegrandEntry("neg-abs-det", "-|det v| (not polyconvex)",
                                  lambda **_: negative_abs_det()),
    "neg-square": IntegrandEntry("neg-square", "-|v|^2 (not convex)", lambda **_: negative_square()),
    "norm": IntegrandEntry("norm", "|v| (linear growth)", lambda **_: frobenius_norm()),
    "orientation": IntegrandEntry("orientation", "|v|^2 + det^2 + 1/det, +inf if det <= 0",
                                  lambda **_: orientation_barrier()),
    "random": IntegrandEntry("random", "random polyconvex quadratic-plus-root",
                             lambda seed=0, **_: random_polyconvex(component_rng(seed, "integrand"))),
}


def get_integrand(name: str, **params) -> IntegrandSpec:
    """
    Build a registered integrand by name.

    Raises:
        ValueError: For unknown names, with a close-match suggestion
    """
    entry = INTEGRANDS.get(name)
    if entry is None:
        suggestions = [n for n in INTEGRANDS if n.startswith(name[:3])] if name else []
        hint = f" Did you mean '{suggestions[0]}'?" if suggestions else ""
        raise ValueError(f"Unknown integrand '{name}'.{hint} Valid integrands: {', '.join(INTEGRANDS)}")
    return entry.build(**params)


@dataclass(frozen=True)
class ConvexitySegment:
    """The sampled segment with the largest excess of Lk(mix) over the mixed values."""
    t: np.ndarray
    x: np.ndarray
    first: Minors
    second: Minors
    weight: float
    excess: float

    def mixed(self) -> Minors:
        return tuple(self.weight * a + (1.0 - self.weight) * b
                     for a, b in zip(self.first, self.second))


@dataclass(frozen=True)
class KConvexityReport:
    trials: int
    violations: int
    worst: float
    segment: Optional[ConvexitySegment] = None

    @property
    def passed(self) -> bool:
        return self.violations == 0


def kconvexity_sample_check(spec: IntegrandSpec, rng: np.random.Generator, trials: int = 200,
                            tol: float = 1e-10) -> KConvexityReport:
    """
    Sampled convexity of the lifted function in the minors, at fixed (t, x).

    Pairs of unrelated minor tuples are mixed with a random weight; the worst
    excess of Lk(mix) over the mixed values is reported, and when some trial
    violates convexity the report carries that worst segment.
    """
    n, m, k = spec.source_dim, spec.target_dim, spec.degree_bound
    t = rng.uniform(-0.5, 0.5, size=(trials, n))
    x = rng.normal(size=(trials, m))
    shapes = [compound(np.zeros((m, n)), i).shape for i in range(1, k + 1)]
    first = tuple(rng.normal(scale=2.0, size=(trials,) + s) for s in shapes)
    second = tuple(rng.normal(scale=2.0, size=(trials,) + s) for s in shapes)
    lam = rng.uniform(0.05, 0.95, size=trials)
    mixed = tuple(lam[:, None, None] * a + (1 - lam)[:, None, None] * b for a, b in zip(first, second))
    with np.errstate(invalid="ignore"):
        lhs = spec.lifted(t, x, mixed)
        rhs = lam * spec.lifted(t, x, first) + (1 - lam) * spec.lifted(t, x, second)
        excess = np.where(np.isfinite(rhs), lhs - rhs, -np.inf)
    scale = 1.0 + np.abs(np.where(np.isfinite(rhs), rhs, 0.0))
    bad = excess > tol * scale
    if not excess.size:
        return KConvexityReport(trials, 0, 0.0)
    j = int(np.argmax(excess))
    worst = float(excess[j])
    segment = None
    if bad.any():
        segment = ConvexitySegment(t[j:j + 1].copy(), x[j:j + 1].copy(),
                                   tuple(a[j:j + 1].copy() for a in first),
                                   tuple(b[j:j + 1].copy() for b in second), float(lam[j]), worst)
        logger.debug(f"Integrand '{spec.name}': convexity fails at weight {lam[j]:.3f}, "
                     f"excess {worst:.3g}")
    return KConvexityReport(trials, int(bad.sum()), worst, segment)


@dataclass(frozen=True)
class SuperlinearityReport:
    """
    Smallest sampled L / r_k on each sphere r_k(v) = R.

    witness_consistent is None when the integrand declares no witness, and
    otherwise records whether L >= ell(|minors|) held at every sampled jet.
    """
    radii: Tuple[float, ...]
    ratios: Tuple[float, ...]
    superlinear: bool
    witness_consistent: Optional[bool] = None


def _scale_to_radius(norms: np.ndarray, radius: float) -> float:
    """The s > 0 with 1 + sum_i s^i norms[i-1] = radius."""
    def excess(s):
        return 1.0 + sum(c * s ** i for i, c in enumerate(norms, start=1)) - radius

    return brentq(excess, 0.0, (radius - 1.0) / norms[0], xtol=1e-14 * radius, rtol=1e-15)


def superlinearity_check(spec: IntegrandSpec, rng: Optional[np.random.Generator] = None,
                         r_min: float = 10.0, r_max: float = 1e12, samples: int = 24,
                         directions: int = 32, growth: float = 10.0) -> SuperlinearityReport:
    """
    Sampled test that L(t, x, v) / r_k(v) grows without bound.

    Each radius R of a geometric grid is reached by scaling fixed random
    directions v (half of them rank one) until r_k(v) = R, at random (t, x).
    L passes when the smallest ratio is positive on the upper half of the grid
    and grows by at least the given factor from its middle to its end. A
    declared witness is checked against the same jets and must hold too.
    """
    n, m, k = spec.source_dim, spec.target_dim, spec.degree_bound
    rng = rng if rng is not None else component_rng(0, f"superlinearity:{spec.name}")
    half = directions // 2
    generic = rng.normal(size=(directions - half, m, n))
    rank_one = rng.normal(size=(half, m, 1)) * rng.normal(size=(half, 1, n))
    base = np.concatenate([generic, rank_one])
    base /= np.linalg.norm(base.reshape(directions, -1), axis=1)[:, None, None]
    norms = np.stack([np.linalg.norm(compound(base, i).reshape(directions, -1), axis=1)
                      for i in range(1, k + 1)], axis=1)
    t = rng.uniform(-0.5, 0.5, size=(directions, n))
    x = rng.normal(size=(directions, m))

    radii = np.geomspace(r_min, r_max, samples)
    ratios = []
    consistent = True
    for radius in radii:
        scales = np.array([_scale_to_radius(row, radius) for row in norms])
        v = scales[:, None, None] * base
        values = spec.evaluate(t, x, v)
        ratios.append(float(np.min(values / r_k(v, k))))
        if spec.witness is not None:
            minors = spec.minors(v)
            size = np.sqrt(sum(np.sum(mi.reshape(directions, -1) ** 2, axis=1) for mi in minors))
            bound = np.asarray(spec.witness(size), dtype=float)
            consistent = consistent and bool(np.all(values >= bound - 1e-9 * (1.0 + np.abs(bound))))
    upper = np.asarray(ratios[samples // 2:])
    grows = bool(np.all(upper > 0) and upper[-1] >= growth * upper[0])
    witness_consistent = consistent if spec.witness is not None else None
    superlinear = grows and witness_consistent is not False
    if witness_consistent is False:
        logger.warning(f"Integrand '{spec.name}': declared witness exceeds L at sampled jets")
    return SuperlinearityReport(tuple(radii.tolist()), tuple(ratios), superlinear, witness_consistent)


def degree_integral(mapping: PwAffineMap) -> float:
    """
    Exact integral of det du for a planar piecewise-affine map.

    Raises:
        ValueError: Unless n = m = 2
    """
    if mapping.source_dim != 2 or mapping.target_dim != 2:
        raise ValueError("degree_integral needs n = m = 2")
    return tree_sum(batched_det(mapping.gradients) * mapping.mesh.cell_volumes)


class EnergyAssembler:
    """Energy and nodal gradient of u -> integral of L(t, u, du) for nodal values on one mesh."""

    def __init__(self, mesh: SimplicialMesh, integrand: IntegrandSpec, rule=None):
        self.mesh = mesh
        self.integrand = integrand
        self.rule = _resolve_rule(mesh, rule)
        _, self.t, weights = _physical_points(mesh, self.rule)
        self.weights = weights.reshape(mesh.num_cells, self.rule.size)

    def _jets(self, values: np.ndarray):
        corners = values[self.mesh.simplices]
        x = np.einsum("qa,cam->cqm", self.rule.points, corners).reshape(-1, values.shape[1])
        grads = np.einsum("cam,can->cmn", corners, self.mesh.basis_gradients)
        return x, grads, np.repeat(grads, self.rule.size, axis=0)

    def energy(self, values: np.ndarray) -> float:
        x, _, v = self._jets(values)
        dens = self.integrand.evaluate(self.t, x, v)
        if np.isneginf(dens).any():
            raise EvaluationError(f"Integrand '{self.integrand.name}' returned -inf")
        if np.isposinf(dens).any():
            return math.inf
        return tree_sum((dens.reshape(self.weights.shape) * self.weights).sum(axis=1))

    def gradient(self, values: np.ndarray) -> np.ndarray:
        x, _, v = self._jets(values)
        dx, dv = self.integrand.jet_gradient(self.t, x, v)
        cells, q = self.weights.shape
        wx = dx.reshape(cells, q, -1) * self.weights[:, :, None]
        wv = (dv.reshape(cells, q, *dv.shape[1:]) * self.weights[:, :, None, None]).sum(axis=1)
        contrib = (np.einsum("qa,cqm->cam", self.rule.points, wx)
                   + np.einsum("cmn,can->cam", wv, self.mesh.basis_gradients))
        out = np.zeros_like(values)
        np.add.at(out, self.mesh.simplices, contrib)
        return out


def energy_gradient(mapping: PwAffineMap, integrand: IntegrandSpec, rule=None) -> np.ndarray:
    """Gradient of the discrete energy with respect to all nodal values, shape (V, m)."""
    return EnergyAssembler(mapping.mesh, integrand, rule).gradient(np.asarray(mapping.nodal_values))


@dataclass
class MinimizeOptions:
    tolerance: float = 1e-6
    max_iterations: int = 500
    armijo: float = 1e-4
    initial_step: float = 1.0
    max_step: float = 1e6
    quadrature_order: Optional[int] = None
    starts: int = 1
    perturbation: float = 0.05
    seed: int = 0
    threads: int = 1
    project_to_sphere: bool = False
    record_iterates: bool = False

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError(f"Tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 0:
            raise ValueError(f"max_iterations must be non-negative, got {self.max_iterations}")
        if not 0 < self.armijo < 1:
            raise ValueError(f"Armijo constant must lie in (0, 1), got {self.armijo}")
        if self.initial_step <= 0 or self.max_step < self.initial_step:
            raise ValueError("Need 0 < initial_step <= max_step")
        if self.starts < 1 or self.threads < 1:
            raise ValueError("starts and threads must be at least 1")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    energy: float
    grad_norm: float
    step: float
    degree_integral: float


REPORT_COLUMNS = ("iter", "energy", "grad_norm", "step", "degree_integral")


@dataclass
class MinimizeResult:
    map: PwAffineMap
    energy: float
    iterations: int
    status: str
    start: int
    report: List[IterationRecord]
    iterates: List[PwAffineMap] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def report_rows(self) -> List[Tuple]:
        return [(r.iteration, r.energy, r.grad_norm, r.step, r.degree_integral) for r in self.report]


def _project_rows(values: np.ndarray, rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(values[rows], axis=1, keepdims=True)
    if np.any(norms == 0):
        raise EvaluationError("Cannot project a zero nodal value to the sphere")
    values[rows] = values[rows] / norms
    return values


def _descend(assembler: EnergyAssembler, start_values: np.ndarray, options: MinimizeOptions,
             start: int) -> MinimizeResult:
    mesh = assembler.mesh
    interior = mesh.interior_nodes
    frozen = mesh.boundary_nodes
    planar = mesh.dim == 2 and start_values.shape[1] == 2
    values = start_values.copy()
    energy = assembler.energy(values)
    if not math.isfinite(energy):
        raise ValueError("The initial map has infinite energy")

    def degree(vals):
        return degree_integral(PwAffineMap(mesh, vals)) if planar else math.nan

    report, iterates = [], []
    step, taken = options.initial_step, 0.0
    status = "max-iterations"
    iteration = 0
    for iteration in range(options.max_iterations + 1):
        grad = assembler.gradient(values)
        grad[frozen] = 0.0
        if options.project_to_sphere:
            radial = np.sum(grad[interior] * values[interior], axis=1, keepdims=True)
            grad[interior] = grad[interior] - radial * values[interior]
        grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
        report.append(IterationRecord(iteration, energy, grad_norm, taken, degree(values)))
        if options.record_iterates:
            iterates.append(PwAffineMap(mesh, values))
        if grad_norm <= options.tolerance:
            status = "converged"
            break
        if iteration == options.max_iterations:
            break

        slope = float(np.sum(grad * grad))
        trial = min(2.0 * step, options.max_step) if iteration else step
        floor = 1e-16 * (1.0 + float(np.max(np.abs(values))))
        while True:
            candidate = values - trial * grad
            if options.project_to_sphere:
                candidate = _project_rows(candidate, interior)
            candidate_energy = assembler.energy(candidate)
            if candidate_energy <= energy - options.armijo * trial * slope:
                break
            trial /= 2.0
            if trial * grad_norm < floor:
                candidate = None
                break
        if candidate is None:
            status = "line-search"
            logger.info(f"Start {start}: line search stalled at iteration {iteration}")
            break
        if candidate_energy > energy:
            raise RuntimeError(f"Energy increased at iteration {iteration}")
        values, energy, step, taken = candidate, candidate_energy, trial, trial

    logger.info(f"Start {start}: {status} after {iteration} iterations, energy {energy:.12g}")
    return MinimizeResult(PwAffineMap(mesh, values), energy, iteration, status, start, report, iterates)


def minimize(mesh: SimplicialMesh, integrand: IntegrandSpec, boundary_map: PwAffineMap,
             options: Optional[MinimizeOptions] = None) -> MinimizeResult:
    """
    Gradient descent with Armijo backtracking on the interior nodal values.

    Boundary values are copied from boundary_map and never change. With
    several starts, each start perturbs the interior of boundary_map with
    seeded noise; the best result by (energy, start index) is returned.

    Raises:
        ValueError: If the boundary map lives on another mesh or has infinite energy
        EvaluationError: If the integrand returns NaN
    """
    options = options or MinimizeOptions()
    if boundary_map.mesh is not mesh and not np.array_equal(boundary_map.mesh.vertices, mesh.vertices):
        raise ValueError("The boundary map must be defined on the minimization mesh")
    assembler = EnergyAssembler(mesh, integrand, options.quadrature_order)
    base = np.array(boundary_map.nodal_values, dtype=float)
    if options.project_to_sphere:
        base = _project_rows(base, mesh.interior_nodes)

    starts = []
    for index in range(options.starts):
        values = base.copy()
        if index:
            rng = component_rng(options.seed, f"start-{index}")
            values[mesh.interior_nodes] += options.perturbation * rng.normal(
                size=(mesh.interior_nodes.size, values.shape[1]))
            if options.project_to_sphere:
                values = _project_rows(values, mesh.interior_nodes)
        starts.append(values)

    if options.threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=options.threads) as pool:
            results = list(pool.map(lambda item: _descend(assembler, item[1], options, item[0]),
                                    enumerate(starts)))
    else:
        results = [_descend(assembler, values, options, index) for index, values in enumerate(starts)]
    return min(results, key=lambda r: (r.energy, r.start))


def competitor_energy_semianalytic(eps: float = 1e-3, p: float = 1.5, delta: float = 0.25) -> float:
    """
    Energy of t/|t| on the unit disc for the example integrand.

    |d(t/|t|)| = 1/r and det = 0, so the density is eps (r^-p + 1). The annulus
    delta < r < 1 is integrated numerically; the inner disc in closed form.

    Raises:
        ValueError: If eps <= 0, p is not in (1, 2) or delta is not in (0, 1/2)
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not 1.0 < p < 2.0:
        raise ValueError(f"p must lie in (1, 2) for a finite competitor energy, got {p}")
    if not 0.0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 1/2), got {delta}")
    outer, _ = scipy_integrate.quad(lambda r: (r ** (-p) + 1.0) * 2.0 * math.pi * r, delta, 1.0,
                                    epsabs=1e-14, epsrel=1e-13)
    inner = 2.0 * math.pi * delta ** (2.0 - p) / (2.0 - p) + math.pi * delta ** 2
    return eps * (outer + inner)


def radial_map(mesh: SimplicialMesh):
    """t/|t| as a SmoothMap; the origin must not be a quadrature point."""

    def value(t):
        return t / np.linalg.norm(t, axis=1, keepdims=True)

    def jacobian(t):
        r = np.linalg.norm(t, axis=1)
        unit = t / r[:, None]
        eye = np.eye(t.shape[1])[None]
        return (eye - unit[:, :, None] * unit[:, None, :]) / r[:, None, None]

    return SmoothMap(mesh, mesh.dim, value, jacobian, name="radial")


def radial_retraction() -> TargetMap:
    """
    f(x) = x on the closed unit ball, x (1 + tanh(|x| - 1)) / |x| outside.

    C^2, and |df| < 1 outside the ball.
    """
    def scale(r):
        return np.where(r <= 1.0, 1.0, (1.0 + np.tanh(r - 1.0)) / np.where(r > 0, r, 1.0))

    def value(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x * scale(np.linalg.norm(x, axis=1))[:, None]

    def jacobian(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=1)
        s = scale(r)
        safe = np.where(r > 0, r, 1.0)
        g_prime = np.where(r <= 1.0, 1.0, 1.0 / np.cosh(r - 1.0) ** 2)
        ds = np.where(r <= 1.0, 0.0, (g_prime - s) / safe)
        unit = x / safe[:, None]
        eye = np.eye(x.shape[1])[None]
        return s[:, None, None] * eye + ds[:, None, None] * x[:, :, None] * unit[:, None, :]

    return TargetMap(value, jacobian, name="radial-retraction")


@dataclass
class GapReport:
    eps: float
    p: float
    h: float
    competitor_energy: float
    minimizer_energy: float
    identity_energy: float
    polygon_area: float
    degree: float
    lower_bound: float
    certified: bool
    gap_ratio: float
    blowup: List[Tuple[float, float]]
    blowup_exponent: float
    minimize_result: MinimizeResult


def det_energy(mapping: PwAffineMap) -> float:
    """Exact integral of det(du)^2 for a planar piecewise-affine map."""
    if mapping.source_dim != 2 or mapping.target_dim != 2:
        raise ValueError("det_energy needs n = m = 2")
    return tree_sum(batched_det(mapping.gradients) ** 2 * mapping.mesh.cell_volumes)


def gap_experiment(eps: float = 1e-3, p: float = 1.5, h: float = 0.05,
                   options: Optional[MinimizeOptions] = None,
                   levels: int = 3) -> GapReport:
    """
    Energy gap on the unit disc with identity boundary data.

    The minimizer over piecewise-affine maps is certified to cost at least
    (integral of det du)^2 / |B_h| = |B_h|, while t/|t| costs O(eps). The
    blow-up table records the det part of the interpolant of t/|t| on meshes
    h, h/2, h/4.
    """
    spec = example_lagrangian(eps, p)
    competitor = competitor_energy_semianalytic(eps, p)
    mesh = build_disc_mesh(h)
    start = identity_map(mesh)
    identity_energy = EnergyAssembler(mesh, spec, None if options is None else options.quadrature_order
                                      ).energy(np.asarray(start.nodal_values))
    result = minimize(mesh, spec, start, options)
    degree = degree_integral(result.map)
    area = mesh.total_volume
    lower = degree ** 2 / area
    certified = result.energy >= lower - 1e-8

    blowup = []
    for level in range(levels):
        size = h / 2 ** level
        fine = build_disc_mesh(size)
        ubar = interpolate(lambda t: t / np.linalg.norm(t, axis=1, keepdims=True), fine)
        blowup.append((size, det_energy(ubar)))
    exponent = fitted_order([b[0] for b in blowup], [b[1] for b in blowup])
    logger.info(f"Gap: competitor {competitor:.6g}, minimizer {result.energy:.6g}, "
                f"bound {lower:.6g}, blowup exponent {exponent:.3f}")
    return GapReport(eps, p, h, competitor, result.energy, identity_energy, area, degree, lower,
                     certified, lower / competitor, blowup, exponent, result)


@dataclass(frozen=True)
class WindowTestFunction:
    """
    psi(t) = ((s - s0)(s1 - s))^a ((w - w0)(w1 - w))^b on the rectangle
    [s0, s1] x [w0, w1] in the frame s = t . nu, w = t . nu_perp; zero outside.
    """
    direction: Tuple[float, float]
    s_range: Tuple[float, float]
    w_range: Tuple[float, float]
    s_power: int = 1
    w_power: int = 1
    name: str = "window"

    def __post_init__(self):
        nu = np.asarray(self.direction, dtype=float)
        if nu.shape != (2,) or abs(np.linalg.norm(nu) - 1.0) > 1e-12:
            raise ValueError("Window direction must be a unit vector in R^2")
        if self.s_range[0] >= self.s_range[1] or self.w_range[0] >= self.w_range[1]:
            raise ValueError("Window ranges must be non-empty intervals")

    @property
    def frame(self) -> Tuple[np.ndarray, np.ndarray]:
        nu = np.asarray(self.direction, dtype=float)
        return nu, np.array([-nu[1], nu[0]])

    def value(self, t) -> np.ndarray:
        nu, perp = self.frame
        t = np.atleast_2d(np.asarray(t, dtype=float))
        s, w = t @ nu, t @ perp
        (s0, s1), (w0, w1) = self.s_range, self.w_range
        inside = (s >= s0) & (s <= s1) & (w >= w0) & (w <= w1)
        profile = ((s - s0) * (s1 - s)) ** self.s_power * ((w - w0) * (w1 - w)) ** self.w_power
        return np.where(inside, profile, 0.0)


def lattice_window(direction, center, s_power: int = 1, w_power: int = 1,
                   width: float = 0.25, name: str = "window") -> WindowTestFunction:
    """A window whose s-edges sit on multiples of width, centred near center."""
    nu = np.asarray(direction, dtype=float)
    perp = np.array([-nu[1], nu[0]])
    c = np.asarray(center, dtype=float)
    s0 = round((c @ nu - width / 2) / width) * width
    w0 = c @ perp - width / 2
    return WindowTestFunction(tuple(nu), (s0, s0 + width), (w0, w0 + width), s_power, w_power, name)


def unit_square_window(direction) -> WindowTestFunction:
    """psi = 1 on the unit square; the direction must be a coordinate axis."""
    nu = np.asarray(direction, dtype=float)
    if not np.isclose(np.max(np.abs(nu)), 1.0, atol=1e-12):
        raise ValueError("psi = 1 on the unit square needs an axis-aligned stripe direction")
    perp = np.array([-nu[1], nu[0]])
    corners = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    s, w = corners @ nu, corners @ perp
    return WindowTestFunction(tuple(nu), (s.min(), s.max()), (w.min(), w.max()), 0, 0, "unit-square")


def _panel_rule(edges: np.ndarray, nodes: np.ndarray, weights: np.ndarray):
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    return (mid[:, None] + half[:, None] * nodes[None, :]).ravel(), (half[:, None] * weights[None, :]).ravel()


def stripe_pairing(sequence: StripeSequence, frequency: int, psi: WindowTestFunction,
                   points: int = 8, panels: int = 16) -> float:
    """
    <det du_i - det du_inf, psi> by tensor Gauss-Legendre on panels split at the stripe edges.
    """
    A, _ = sequence.matrices
    if A.shape != (2, 2):
        raise ValueError("Stripe pairings are defined for 2 x 2 gradients")
    _, nu = sequence.direction
    perp = np.array([-nu[1], nu[0]])
    (s0, s1), (w0, w1) = psi.s_range, psi.w_range
    k_lo, k_hi = math.floor(frequency * s0), math.ceil(frequency * s1)
    ks = np.arange(k_lo, k_hi + 1)
    breaks = np.concatenate([ks / frequency, (ks + sequence.weight) / frequency])
    edges_s = np.unique(np.concatenate([np.linspace(s0, s1, panels + 1),
                                        breaks[(breaks > s0) & (breaks < s1)]]))
    edges_w = np.linspace(w0, w1, panels + 1)
    nodes, weights = leggauss(points)
    s, ws = _panel_rule(edges_s, nodes, weights)
    w, ww = _panel_rule(edges_w, nodes, weights)
    t = (s[:, None, None] * nu + w[None, :, None] * perp).reshape(-1, 2)
    dets = batched_det(sequence.gradient(frequency, t))
    limit = float(batched_det(sequence.mean_gradient))
    integrand = ((dets - limit) * psi.value(t)).reshape(s.size, w.size)
    return float(ws @ integrand @ ww)


@dataclass
class WeakMinorRow:
    frequency: int
    pairings: Tuple[float, ...]
    sup_distance: float


@dataclass
class WeakMinorTable:
    sequence: StripeSequence
    test_functions: Tuple[WindowTestFunction, ...]
    rows: List[WeakMinorRow]

    def column(self, index: int) -> List[float]:
        return [abs(r.pairings[index]) for r in self.rows]

    def decreasing_beyond(self, frequency: int = 4, floor: float = PAIRING_FLOOR) -> bool:
        """Every |pairing| is non-increasing in i from the given frequency on, up to floor."""
        for j in range(len(self.test_functions)):
            tail = [abs(r.pairings[j]) for r in self.rows if r.frequency >= frequency]
            if any(b > a + floor for a, b in zip(tail, tail[1:])):
                return False
        return True

    def final_maximum(self) -> float:
        return max(abs(p) for p in self.rows[-1].pairings)


def weak_minor_convergence_experiment(A, B, weight: float, frequencies: Sequence[int],
                                      test_functions: Sequence[WindowTestFunction]) -> WeakMinorTable:
    """
    Pairings of det du_i - det du_inf with each test function for the stripe maps u_i.

    Raises:
        ValueError: If A - B is not rank one or the matrices are not 2 x 2
    """
    sequence = StripeSequence(A, B, weight)
    if np.asarray(A).shape != (2, 2):
        raise ValueError("The weak-minor experiment runs with 2 x 2 gradients")
    frequencies = sorted(int(i) for i in frequencies)
    if not frequencies or frequencies[0] < 1:
        raise ValueError("Frequencies must be positive integers")
    rows = []
    for i in frequencies:
        pairings = tuple(stripe_pairing(sequence, i, psi) for psi in test_functions)
        rows.append(WeakMinorRow(i, pairings, sequence.sup_distance(i)))
    return WeakMinorTable(sequence, tuple(test_functions), rows)


def random_rank_one_pair(rng: np.random.Generator, dim: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    B = rng.normal(size=(dim, dim))
    a = rng.normal(size=dim)
    nu = rng.normal(size=dim)
    nu /= np.linalg.norm(nu)
    return B + np.outer(a, nu), B
