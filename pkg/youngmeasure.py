"""
Atomic generalized Young measures over jets (t, x, v) and their diagnostics.

Weights are normalized by the volume of the source mesh, so the lift of a
map is a probability measure. Atoms are kept in a canonical order (cell, t,
x, v lexicographic) with exact duplicates merged; every reduction runs over
that order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import ot
from scipy.spatial.distance import cdist

from exterior import compound, r_k
from meshmaps import (PwAffineMap, SimplicialMesh, SmoothMap, evaluate_jets, interpolate,
                      quadrature_rule)
from nulllag import FormField, LVectorField, make_null_lagrangian
from numerics import EvaluationError, ResourceLimitError, integrate_samples, tree_sum

logger = logging.getLogger(__name__)

MAX_TRANSPORT_ATOMS = 10_000
FIBER_TOLERANCE = 1e-9
MASS_TOLERANCE = 1e-10


@dataclass(frozen=True)
class JetAtom:
    cell: int
    t: Tuple[float, ...]
    x: Tuple[float, ...]
    v: Tuple[Tuple[float, ...], ...]
    weight: float


@dataclass(frozen=True, eq=False)
class AtomicYoungMeasure:
    """
    Finite sum of weighted Dirac masses at jets (t, x, v).

    degree_bound is k, the minor degree used for growth weights.
    """
    cells: np.ndarray
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    weights: np.ndarray
    degree_bound: int
    mesh: Optional[SimplicialMesh] = None

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.intp).reshape(-1)
        count = cells.size
        t = np.asarray(self.t, dtype=float).reshape(count, -1)
        x = np.asarray(self.x, dtype=float).reshape(count, -1)
        v = np.asarray(self.v, dtype=float).reshape(count, x.shape[1], t.shape[1])
        weights = np.asarray(self.weights, dtype=float).reshape(count)
        if count == 0:
            raise ValueError("A Young measure needs at least one atom")
        if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
            raise ValueError("Atom weights must be positive and finite")
        for name, arr in (("t", t), ("x", x), ("v", v)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"Atom {name} entries must be finite")
        m, n = v.shape[1], v.shape[2]
        if not 1 <= self.degree_bound <= min(m, n):
            raise ValueError(f"Degree bound {self.degree_bound} outside 1..{min(m, n)}")
        if self.mesh is not None:
            self._check_cells(cells, t)

        keys = np.concatenate([cells[:, None].astype(float), t, x, v.reshape(count, -1)], axis=1)
        order = np.lexsort(keys.T[::-1])
        keys, weights = keys[order], weights[order]
        starts = np.concatenate([[True], np.any(keys[1:] != keys[:-1], axis=1)])
        first = np.flatnonzero(starts)
        merged = np.add.reduceat(weights, first)
        order = order[first]

        for name, arr in (("cells", cells[order]), ("t", t[order]), ("x", x[order]),
                          ("v", v[order]), ("weights", merged)):
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def _check_cells(self, cells: np.ndarray, t: np.ndarray) -> None:
        mesh = self.mesh
        if t.shape[1] != mesh.dim:
            raise ValueError(f"Atoms live in R^{t.shape[1]} but the mesh is {mesh.dim}-D")
        if cells.min() < 0 or cells.max() >= mesh.num_cells:
            raise ValueError("Atom references a cell outside the mesh")
        bary = mesh.barycentric(cells, t)
        if np.any(bary < -1e-9):
            bad = int(np.flatnonzero(np.any(bary < -1e-9, axis=1))[0])
            raise ValueError(f"Atom {bad} has t outside its cell {int(cells[bad])}")

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def source_dim(self) -> int:
        return self.t.shape[1]

    @property
    def target_dim(self) -> int:
        return self.x.shape[1]

    @property
    def total_mass(self) -> float:
        return tree_sum(self.weights)

    @property
    def atoms(self) -> List[JetAtom]:
        return [JetAtom(int(c), tuple(t), tuple(x), tuple(map(tuple, v)), float(w))
                for c, t, x, v, w in zip(self.cells, self.t, self.x, self.v, self.weights)]

    @classmethod
    def from_atoms(cls, atoms: Sequence[JetAtom], degree_bound: int,
                   mesh: Optional[SimplicialMesh] = None) -> AtomicYoungMeasure:
        if not atoms:
            raise ValueError("A Young measure needs at least one atom")
        return cls(np.array([a.cell for a in atoms]), np.array([a.t for a in atoms]),
                   np.array([a.x for a in atoms]), np.array([a.v for a in atoms]),
                   np.array([a.weight for a in atoms]), degree_bound, mesh)

    def with_weights(self, weights) -> AtomicYoungMeasure:
        return AtomicYoungMeasure(self.cells, self.t, self.x, self.v, weights,
                                  self.degree_bound, self.mesh)


def from_map(mapping, rule=None, degree_bound: Optional[int] = None) -> AtomicYoungMeasure:
    """
    Lift of a map: one atom per quadrature point, weight w_q vol(cell) / |N|.

    Args:
        mapping: PwAffineMap or SmoothMap
        rule: Quadrature rule or order (default for the dimension when None)
        degree_bound: k, defaults to min(n, m)
    """
    jets = mapping.quadrature_jets(rule)
    k = degree_bound or min(mapping.source_dim, mapping.target_dim)
    total = mapping.mesh.total_volume
    return AtomicYoungMeasure(jets.cells, jets.t, jets.x, jets.v, jets.weights / total, k,
                              mapping.mesh)


def integrate(measure: AtomicYoungMeasure, integrand) -> float:
    """
    Sum over atoms of w L(t, x, v).

    Raises:
        EvaluationError: If the integrand returns NaN
    """
    values = evaluate_jets(integrand, measure.t, measure.x, measure.v)
    return integrate_samples(values, measure.weights, what="Young measure integrand")


def growth_weights(measure: AtomicYoungMeasure) -> np.ndarray:
    return r_k(measure.v, measure.degree_bound)


def marginal_residual(measure: AtomicYoungMeasure) -> float:
    """Largest per-cell gap between the t-marginal and the normalized cell volume."""
    mesh = measure.mesh
    if mesh is None:
        raise ValueError("The marginal check needs the measure's mesh")
    mass = np.bincount(measure.cells, weights=measure.weights, minlength=mesh.num_cells)
    return float(np.max(np.abs(mass - mesh.cell_volumes / mesh.total_volume)))


def closedness_residual(measure: AtomicYoungMeasure, null_lagrangian) -> float:
    """|integral of F against the measure| for a compactly supported null Lagrangian F."""
    return abs(integrate(measure, null_lagrangian))


def anchoring_residual(measure: AtomicYoungMeasure, boundary_map, form: FormField,
                       field_: LVectorField, rule=None) -> float:
    """
    Boundary-datum check with a non-compact 1-vector field and a 0-form.

    Compares the measure's integral of F(chi, U) with the same integral along
    the lift of the boundary map.
    """
    if form.degree != 0 or field_.degree != 1:
        raise ValueError("Anchoring uses a 0-form chi and a 1-vector field U")
    spec = make_null_lagrangian(1, form, field_, require_compact=False)
    reference = from_map(boundary_map, rule, measure.degree_bound)
    return abs(integrate(measure, spec) - integrate(reference, spec))


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud with per-point growth values r."""
    points: np.ndarray
    weights: np.ndarray
    growth: np.ndarray

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        growth = np.asarray(self.growth, dtype=float).reshape(-1)
        if not (points.shape[0] == weights.size == growth.size):
            raise ValueError("Points, weights and growth values must have equal length")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("Weights must be non-negative and finite")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "growth", growth)

    @property
    def mass(self) -> float:
        return tree_sum(self.weights)


def as_discrete(measure: AtomicYoungMeasure, weighted: bool = True) -> DiscreteMeasure:
    points = np.concatenate([measure.t, measure.x, measure.v.reshape(measure.size, -1)], axis=1)
    growth = growth_weights(measure) if weighted else np.ones(measure.size)
    return DiscreteMeasure(points, measure.weights, growth)


def kr_distance(first: Union[AtomicYoungMeasure, DiscreteMeasure],
                second: Union[AtomicYoungMeasure, DiscreteMeasure],
                weighted: bool = True) -> float:
    """
    Kantorovich-Rubinstein distance for the cost min(|p - q|, 1) + |r_p - r_q|.

    Solved exactly as a transport problem with the network simplex.

    Raises:
        ValueError: If total masses differ by more than 1e-10 or dimensions differ
        ResourceLimitError: If either side has more than MAX_TRANSPORT_ATOMS atoms
        EvaluationError: If the network simplex stops before optimality
    """
    a = as_discrete(first, weighted) if isinstance(first, AtomicYoungMeasure) else first
    b = as_discrete(second, weighted) if isinstance(second, AtomicYoungMeasure) else second
    if a.points.shape[1] != b.points.shape[1]:
        raise ValueError(f"Measures live in different jet spaces ({a.points.shape[1]} vs "
                         f"{b.points.shape[1]} coordinates)")
    if max(a.points.shape[0], b.points.shape[0]) > MAX_TRANSPORT_ATOMS:
        raise ResourceLimitError(f"Transport between {a.points.shape[0]} and {b.points.shape[0]} "
                                 f"atoms exceeds the limit of {MAX_TRANSPORT_ATOMS}")
    mass_a, mass_b = a.mass, b.mass
    if abs(mass_a - mass_b) > MASS_TOLERANCE:
        raise ValueError(f"Total masses differ: {mass_a!r} vs {mass_b!r}")
    cost = np.minimum(cdist(a.points, b.points), 1.0) + np.abs(a.growth[:, None] - b.growth[None, :])
    source = a.weights / mass_a
    target = b.weights / mass_b
    value, log = ot.emd2(source, target, cost, numItermax=10_000_000, log=True)
    if log.get("warning"):
        raise EvaluationError(f"Transport solver stopped early: {log['warning']}")
    value = float(value) * mass_a
    return max(value, 0.0)


def tightness_profile(family: Sequence[AtomicYoungMeasure], radii: Sequence[float],
                      anchor=None) -> List[Tuple[float, float]]:
    """
    sup over the family of the mass outside Z(R) = {|x - x0| <= R, |v| <= R}, weighted by r_k.

    Returns:
        List of (R, value) pairs, non-increasing in R
    """
    if not family:
        raise ValueError("Tightness needs at least one measure")
    radii = sorted(float(r) for r in radii)
    profile = []
    cached = []
    for measure in family:
        x0 = np.zeros(measure.target_dim) if anchor is None else np.asarray(anchor, dtype=float)
        cached.append((np.linalg.norm(measure.x - x0, axis=1),
                       np.linalg.norm(measure.v.reshape(measure.size, -1), axis=1),
                       measure.weights * growth_weights(measure)))
    for radius in radii:
        worst = 0.0
        for dist, vnorm, mass in cached:
            outside = (dist > radius) | (vnorm > radius)
            worst = max(worst, tree_sum(np.where(outside, mass, 0.0)))
        profile.append((radius, worst))
    return profile


def tail_bound(energy_bound: float, witness: Callable[[np.ndarray], np.ndarray], radius: float,
               span: float = 1e3, samples: int = 2000) -> float:
    """
    Coercivity bound c / A(R) with A(R) = inf_{s >= R} witness(s) / (1 + s).

    The infimum is taken on a geometric grid of [R, span R]; returns inf when A(R) <= 0.
    """
    if radius <= 0:
        raise ValueError(f"Radius must be positive, got {radius}")
    s = np.geomspace(radius, radius * span, samples)
    ratio = float(np.min(np.asarray(witness(s), dtype=float) / (1.0 + s)))
    if ratio <= 0:
        return math.inf
    return energy_bound / ratio


@dataclass(frozen=True, eq=False)
class Fiber:
    """Normalized conditional measure over one (cell, t) with its minor moments."""
    cell: int
    t: np.ndarray
    x: np.ndarray
    mass: float
    matrices: np.ndarray
    probabilities: np.ndarray
    moments: Tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class Disintegration:
    fibers: Tuple[Fiber, ...]
    degree_bound: int


@dataclass(frozen=True)
class NonGraphReport:
    """The x-part of some fibre is not a single point."""
    cell: int
    t: Tuple[float, ...]
    spread: float

    @property
    def message(self) -> str:
        return (f"Measure is not graph-like: x varies by {self.spread:.3g} over the fibre "
                f"at cell {self.cell}")


def disintegrate(measure: AtomicYoungMeasure, tol: float = FIBER_TOLERANCE
                 ) -> Union[Disintegration, NonGraphReport]:
    """
    Split the measure into fibres over (cell, t) and compute g_i = E[wedge_i(v)].

    Returns:
        Disintegration, or NonGraphReport when x is not constant (within tol) on a fibre
    """
    keys = np.concatenate([measure.cells[:, None].astype(float), measure.t], axis=1)
    starts = np.flatnonzero(np.concatenate([[True], np.any(keys[1:] != keys[:-1], axis=1)]))
    ends = np.append(starts[1:], measure.size)
    k = measure.degree_bound
    lifted = [compound(measure.v, i) for i in range(1, k + 1)]
    fibers = []
    for lo, hi in zip(starts, ends):
        xs = measure.x[lo:hi]
        spread = float(np.max(xs.max(axis=0) - xs.min(axis=0)))
        if spread > tol:
            return NonGraphReport(int(measure.cells[lo]), tuple(measure.t[lo]), spread)
        w = measure.weights[lo:hi]
        mass = tree_sum(w)
        p = w / mass
        moments = tuple(np.einsum("a,aij->ij", p, lifted[i][lo:hi]) for i in range(k))
        fibers.append(Fiber(int(measure.cells[lo]), measure.t[lo].copy(), xs[0].copy(), mass,
                            measure.v[lo:hi].copy(), p, moments))
    return Disintegration(tuple(fibers), k)


def structure_residual(disintegration: Union[Disintegration, NonGraphReport]) -> float:
    """
    max over fibres and i = 2..k of ||g_i - wedge_i(g_1)||_F.

    Raises:
        ValueError: If the measure is not graph-like
    """
    if isinstance(disintegration, NonGraphReport):
        raise ValueError(disintegration.message)
    k = disintegration.degree_bound
    if k < 2:
        return 0.0
    first = np.stack([f.moments[0] for f in disintegration.fibers])
    worst = 0.0
    for i in range(2, k + 1):
        moment = np.stack([f.moments[i - 1] for f in disintegration.fibers])
        gap = np.linalg.norm(moment - compound(first, i), axis=(1, 2))
        worst = max(worst, float(gap.max()))
    return worst


def jensen_gap(measure: AtomicYoungMeasure, integrand, tol: float = FIBER_TOLERANCE) -> float:
    """
    Integral of L against the measure minus L along its barycentric map (t, x, g_1).

    Raises:
        ValueError: If the measure is not a generalized map
    """
    d = disintegrate(measure)
    residual = structure_residual(d)
    if residual > tol:
        raise ValueError(f"Measure is not a generalized map (structure residual {residual:.3g})")
    t = np.stack([f.t for f in d.fibers])
    x = np.stack([f.x for f in d.fibers])
    g = np.stack([f.moments[0] for f in d.fibers])
    mass = np.array([f.mass for f in d.fibers])
    barycentric = integrate_samples(evaluate_jets(integrand, t, x, g), mass,
                                    what="barycentric integrand")
    return integrate(measure, integrand) - barycentric


def laminate(first, second, weight: float, base, rule=None,
             degree_bound: Optional[int] = None) -> AtomicYoungMeasure:
    """
    Two-gradient laminate over a base map: atoms (t, x0(t), A) and (t, x0(t), B).

    Weights are weight and 1 - weight times the normalized quadrature weights;
    the default rule is the cell centroid.

    Raises:
        ValueError: If weight is not in (0, 1) or the matrices do not fit the base map
    """
    if not 0.0 < weight < 1.0:
        raise ValueError(f"Laminate weight must lie in (0, 1), got {weight}")
    A = np.asarray(first, dtype=float)
    B = np.asarray(second, dtype=float)
    shape = (base.target_dim, base.source_dim)
    if A.shape != shape or B.shape != shape:
        raise ValueError(f"Laminate matrices must have shape {shape}")
    rule = quadrature_rule(base.mesh.dim, 1) if rule is None else rule
    jets = base.quadrature_jets(rule)
    count = jets.size
    weights = jets.weights / base.mesh.total_volume
    k = degree_bound or min(shape)
    return AtomicYoungMeasure(
        np.concatenate([jets.cells, jets.cells]),
        np.concatenate([jets.t, jets.t]),
        np.concatenate([jets.x, jets.x]),
        np.concatenate([np.broadcast_to(A, (count,) + shape), np.broadcast_to(B, (count,) + shape)]),
        np.concatenate([weight * weights, (1.0 - weight) * weights]),
        k, base.mesh)


@dataclass(frozen=True, eq=False)
class TargetMap:
    """Smooth f: R^m -> R^p with Jacobian, used to push measures forward."""
    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    name: str = ""


def push_forward(measure: AtomicYoungMeasure, target: TargetMap,
                 degree_bound: Optional[int] = None) -> AtomicYoungMeasure:
    """(t, x, v) -> (t, f(x), df(x) v) atom by atom."""
    x = np.asarray(target.value(measure.x), dtype=float).reshape(measure.size, -1)
    df = np.asarray(target.jacobian(measure.x), dtype=float).reshape(measure.size, x.shape[1], -1)
    v = np.einsum("aij,ajk->aik", df, measure.v)
    k = degree_bound or min(measure.degree_bound, x.shape[1])
    return AtomicYoungMeasure(measure.cells, measure.t, x, v, measure.weights, k, measure.mesh)


def rank_one_decomposition(first, second, tol: float = 1e-12) -> Tuple[np.ndarray, np.ndarray]:
    """
    Write A - B = a (x) nu with |nu| = 1.

    The sign of nu is fixed so its first non-zero component is positive.

    Raises:
        ValueError: If A - B does not have rank one
    """
    diff = np.asarray(first, dtype=float) - np.asarray(second, dtype=float)
    u, s, vt = np.linalg.svd(diff)
    if s[0] <= tol or (s.size > 1 and s[1] > tol * max(1.0, s[0])):
        raise ValueError(f"A - B must have rank one, singular values {s.tolist()}")
    nu = vt[0]
    a = s[0] * u[:, 0]
    pivot = nu[np.flatnonzero(np.abs(nu) > tol)[0]]
    if pivot < 0:
        nu, a = -nu, -a
    return a, nu


@dataclass(frozen=True)
class StripeSequence:
    """
    Rank-one oscillation u_i(t) = B t + a h_i(t . nu).

    h_i(s) = (floor(i s) lam + min(frac(i s), lam)) / i has slope 1 on the
    A-phase frac(i s) < lam and 0 elsewhere, so du_i is A or B.
    """
    A: Tuple[Tuple[float, ...], ...]
    B: Tuple[Tuple[float, ...], ...]
    weight: float

    def __post_init__(self):
        if not 0.0 < self.weight < 1.0:
            raise ValueError(f"Stripe weight must lie in (0, 1), got {self.weight}")
        object.__setattr__(self, "A", tuple(map(tuple, np.asarray(self.A, dtype=float))))
        object.__setattr__(self, "B", tuple(map(tuple, np.asarray(self.B, dtype=float))))
        rank_one_decomposition(self.A, self.B)

    @property
    def matrices(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.array(self.A), np.array(self.B)

    @property
    def direction(self) -> Tuple[np.ndarray, np.ndarray]:
        return rank_one_decomposition(*self.matrices)

    @property
    def mean_gradient(self) -> np.ndarray:
        A, B = self.matrices
        return self.weight * A + (1.0 - self.weight) * B

    def phase(self, frequency: int, s) -> np.ndarray:
        """True on the A-phase."""
        frac = np.mod(frequency * np.asarray(s, dtype=float), 1.0)
        return frac < self.weight

    def value(self, frequency: int, t) -> np.ndarray:
        if frequency < 1:
            raise ValueError(f"Stripe frequency must be a positive integer, got {frequency}")
        A, B = self.matrices
        a, nu = self.direction
        t = np.atleast_2d(np.asarray(t, dtype=float))
        s = frequency * (t @ nu)
        h = (np.floor(s) * self.weight + np.minimum(np.mod(s, 1.0), self.weight)) / frequency
        return t @ B.T + h[:, None] * a[None, :]

    def gradient(self, frequency: int, t) -> np.ndarray:
        A, B = self.matrices
        _, nu = self.direction
        t = np.atleast_2d(np.asarray(t, dtype=float))
        on_a = self.phase(frequency, t @ nu)
        return np.where(on_a[:, None, None], A[None], B[None])

    def limit_value(self, t) -> np.ndarray:
        return np.atleast_2d(np.asarray(t, dtype=float)) @ self.mean_gradient.T

    def sup_distance(self, frequency: int) -> float:
        """sup |u_i - u_inf| = |a| lam (1 - lam) / i."""
        a, _ = self.direction
        return float(np.linalg.norm(a)) * self.weight * (1.0 - self.weight) / frequency

    def smooth_map(self, frequency: int, mesh: SimplicialMesh) -> SmoothMap:
        A, _ = self.matrices
        return SmoothMap(mesh, A.shape[0], lambda t: self.value(frequency, t),
                         lambda t: self.gradient(frequency, t), name=f"stripes-{frequency}")

    def interpolant(self, frequency: int, mesh: SimplicialMesh) -> PwAffineMap:
        return interpolate(lambda t: self.value(frequency, t), mesh)

    def limit_map(self, mesh: SimplicialMesh) -> PwAffineMap:
        return interpolate(self.limit_value, mesh)

    def limit_laminate(self, mesh: SimplicialMesh, rule=None) -> AtomicYoungMeasure:
        A, B = self.matrices
        return laminate(A, B, self.weight, self.limit_map(mesh), rule)
