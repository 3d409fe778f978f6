"""
Simplicial meshes, quadrature rules and maps on them.

Two map kinds share one interface: PwAffineMap (nodal values, constant
gradient per cell) and SmoothMap (closed-form value and Jacobian sampled at
quadrature points). Both expose quadrature_jets(rule).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import permutations
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import roots_jacobi

from exterior import compound
from nulllag import Domain, LVectorField, FormField, make_null_lagrangian, vanishing_residual
from numerics import EvaluationError, ResourceLimitError, tree_sum

logger = logging.getLogger(__name__)

MAX_CELLS = 200_000
DEFAULT_ORDER = {2: 4, 3: 3}


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """
    Conforming simplicial mesh of a domain in R^2 or R^3.

    Simplices are stored positively oriented. Boundary nodes are the vertices
    of facets that belong to exactly one simplex.
    """
    vertices: np.ndarray
    simplices: np.ndarray
    domain: Optional[Domain] = None
    boundary_nodes: Optional[np.ndarray] = None

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float)
        simplices = np.array(self.simplices, dtype=np.intp)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise ValueError(f"Vertices must have shape (V, 2) or (V, 3), got {vertices.shape}")
        n = vertices.shape[1]
        if simplices.ndim != 2 or simplices.shape[1] != n + 1:
            raise ValueError(f"Simplices must have shape (C, {n + 1}), got {simplices.shape}")
        if simplices.size and (simplices.min() < 0 or simplices.max() >= vertices.shape[0]):
            raise ValueError("Simplex references a vertex that does not exist")
        if not np.all(np.isfinite(vertices)):
            raise ValueError("Vertex coordinates must be finite")
        if simplices.shape[0] > MAX_CELLS:
            raise ResourceLimitError(f"Mesh has {simplices.shape[0]} cells, limit is {MAX_CELLS}")

        edges = vertices[simplices[:, 1:]] - vertices[simplices[:, :1]]
        dets = np.linalg.det(np.swapaxes(edges, 1, 2))
        scale = np.max(np.abs(edges), axis=(1, 2)) ** n if simplices.size else np.zeros(0)
        if np.any(np.abs(dets) <= 1e-12 * scale):
            bad = int(np.argmax(np.abs(dets) <= 1e-12 * scale))
            raise ValueError(f"Simplex {bad} is degenerate")
        flip = dets < 0
        simplices[flip, -2], simplices[flip, -1] = simplices[flip, -1], simplices[flip, -2].copy()

        boundary = _topological_boundary(simplices)
        if self.boundary_nodes is not None:
            given = np.unique(np.asarray(self.boundary_nodes, dtype=np.intp))
            if not np.array_equal(given, boundary):
                raise ValueError("Declared boundary nodes differ from the topological boundary")
        for arr in (vertices, simplices, boundary):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "simplices", simplices)
        object.__setattr__(self, "boundary_nodes", boundary)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.simplices.shape[0]

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.num_vertices, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def _edge_matrices(self) -> np.ndarray:
        edges = self.vertices[self.simplices[:, 1:]] - self.vertices[self.simplices[:, :1]]
        return np.swapaxes(edges, 1, 2)

    @cached_property
    def cell_volumes(self) -> np.ndarray:
        return np.abs(np.linalg.det(self._edge_matrices)) / math.factorial(self.dim)

    @cached_property
    def total_volume(self) -> float:
        return tree_sum(self.cell_volumes)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Gradients of the barycentric coordinates, shape (C, n+1, n)."""
        inv = np.linalg.inv(self._edge_matrices)
        return np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)

    def barycentric(self, cells, points) -> np.ndarray:
        """Barycentric coordinates of points inside the given cells, shape (P, n+1)."""
        cells = np.asarray(cells, dtype=np.intp)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        origin = self.vertices[self.simplices[cells, 0]]
        inv = np.linalg.inv(self._edge_matrices[cells])
        local = np.einsum("pij,pj->pi", inv, points - origin)
        return np.concatenate([1.0 - local.sum(axis=1, keepdims=True), local], axis=1)

    def cell_of(self, cell: int) -> np.ndarray:
        if not 0 <= cell < self.num_cells:
            raise ValueError(f"Cell {cell} outside 0..{self.num_cells - 1}")
        return self.vertices[self.simplices[cell]]


def _topological_boundary(simplices: np.ndarray) -> np.ndarray:
    n1 = simplices.shape[1]
    facets = np.concatenate([np.delete(simplices, i, axis=1) for i in range(n1)], axis=0)
    facets = np.sort(facets, axis=1)
    unique, counts = np.unique(facets, axis=0, return_counts=True)
    return np.unique(unique[counts == 1])


def build_box_mesh(dim: int, divisions: Union[int, Sequence[int]]) -> SimplicialMesh:
    """
    Structured mesh of the unit cube [0, 1]^dim.

    Squares split into two triangles along the main diagonal; cubes into the
    six Kuhn tetrahedra.

    Args:
        dim: 2 or 3
        divisions: Cells per axis, either one count or one per axis

    Raises:
        ValueError: For unsupported dimensions or non-positive divisions
        ResourceLimitError: If the mesh would exceed MAX_CELLS
    """
    if dim not in (2, 3):
        raise ValueError(f"Box meshes exist in dimension 2 or 3, got {dim}")
    counts = (divisions,) * dim if np.isscalar(divisions) else tuple(divisions)
    if len(counts) != dim or any(int(c) != c or c < 1 for c in counts):
        raise ValueError(f"Divisions must be {dim} positive integers, got {divisions}")
    counts = tuple(int(c) for c in counts)
    cells = math.factorial(dim) * math.prod(counts)
    if cells > MAX_CELLS:
        raise ResourceLimitError(f"Box mesh with divisions {counts} needs {cells} cells, "
                                 f"limit is {MAX_CELLS}")

    axes = [np.arange(c + 1) / c for c in counts]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    shape = tuple(c + 1 for c in counts)
    corner = np.stack(np.meshgrid(*[np.arange(c) for c in counts], indexing="ij"),
                      axis=-1).reshape(-1, dim)

    def node(offset):
        return np.ravel_multi_index(tuple((corner + offset).T), shape)

    simplices = []
    for order in permutations(range(dim)):
        path = [np.zeros(dim, dtype=int)]
        for axis in order:
            step = path[-1].copy()
            step[axis] = 1
            path.append(step)
        simplices.append(np.stack([node(p) for p in path], axis=1))
    simplices = np.concatenate(simplices, axis=0)
    logger.debug(f"Built box mesh {counts} with {simplices.shape[0]} cells")
    return SimplicialMesh(grid, simplices, Domain("box", dim, (0.5,) * dim, 1.0))


def _ring_counts(radii: np.ndarray, h: float) -> List[int]:
    return [max(5, int(round(2.0 * math.pi * r / h))) for r in radii]


def _zip_rings(inner: np.ndarray, outer: np.ndarray) -> List[Tuple[int, int, int]]:
    """Triangulate the band between two closed rings that both start at angle 0."""
    a, b = len(inner), len(outer)
    triangles = []
    i = j = 0
    while i < a or j < b:
        if j == b or (i < a and (i + 1) / a < (j + 1) / b):
            triangles.append((inner[i], inner[(i + 1) % a], outer[j % b]))
            i += 1
        else:
            triangles.append((inner[i % a], outer[(j + 1) % b], outer[j]))
            j += 1
    return triangles


def _ring_vertices(radius: float, count: int) -> np.ndarray:
    angles = 2.0 * math.pi * np.arange(count) / count
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _estimate_cells(counts: Sequence[int]) -> int:
    return sum(counts[j - 1] + counts[j] for j in range(1, len(counts)))


def build_disc_mesh(h: float) -> SimplicialMesh:
    """
    Ring mesh of the polygon B_h inscribed in the unit disc.

    Rings sit at radii j/R, R = ceil(1/h), with about 2 pi r/h vertices each.
    The innermost ring is a pentagon fanned from one of its vertices, so the
    origin lies strictly inside a cell and is never a vertex.

    Raises:
        ValueError: If h is not in (0, 1)
        ResourceLimitError: If h is too small for MAX_CELLS
    """
    if not 0.0 < h < 1.0:
        raise ValueError(f"Mesh size h must lie in (0, 1), got {h}")
    rings = math.ceil(1.0 / h)
    radii = np.arange(1, rings + 1) / rings
    counts = [5] + _ring_counts(radii[1:], h)
    estimate = 3 + _estimate_cells(counts)
    if estimate > MAX_CELLS:
        raise ResourceLimitError(f"Disc mesh with h={h} needs about {estimate} cells, "
                                 f"limit is {MAX_CELLS}")

    vertices, starts = [], []
    offset = 0
    for r, count in zip(radii, counts):
        vertices.append(_ring_vertices(r, count))
        starts.append(np.arange(offset, offset + count))
        offset += count
    triangles = [(0, 1, 2), (0, 2, 3), (0, 3, 4)]
    for inner, outer in zip(starts, starts[1:]):
        triangles.extend(_zip_rings(inner, outer))
    mesh = SimplicialMesh(np.concatenate(vertices), np.array(triangles),
                          Domain("ball", 2, (0.0, 0.0), 1.0))
    logger.debug(f"Built disc mesh h={h}: {mesh.num_cells} cells, area {mesh.total_volume:.12f}")
    return mesh


def build_annulus_mesh(h: float, inner_radius: float) -> SimplicialMesh:
    """Ring mesh of the annulus inner_radius < |t| < 1, both circles inscribed."""
    if not 0.0 < h < 1.0:
        raise ValueError(f"Mesh size h must lie in (0, 1), got {h}")
    if not 0.0 < inner_radius < 1.0:
        raise ValueError(f"Inner radius must lie in (0, 1), got {inner_radius}")
    bands = max(1, math.ceil((1.0 - inner_radius) / h))
    radii = inner_radius + (1.0 - inner_radius) * np.arange(bands + 1) / bands
    counts = _ring_counts(radii, h)
    estimate = _estimate_cells(counts)
    if estimate > MAX_CELLS:
        raise ResourceLimitError(f"Annulus mesh with h={h} needs about {estimate} cells, "
                                 f"limit is {MAX_CELLS}")
    vertices, starts = [], []
    offset = 0
    for r, count in zip(radii, counts):
        vertices.append(_ring_vertices(r, count))
        starts.append(np.arange(offset, offset + count))
        offset += count
    triangles = []
    for inner, outer in zip(starts, starts[1:]):
        triangles.extend(_zip_rings(inner, outer))
    return SimplicialMesh(np.concatenate(vertices), np.array(triangles),
                          Domain("annulus", 2, (0.0, 0.0), 1.0, inner_radius))


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Reference-simplex rule: barycentric points (Q, n+1) and weights summing to 1."""
    dim: int
    order: int
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if points.shape != (weights.size, self.dim + 1):
            raise ValueError(f"Rule points have shape {points.shape} for {weights.size} weights")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("Rule weights must be positive and sum to 1")
        if np.any(np.abs(points.sum(axis=1) - 1.0) > 1e-12) or np.any(points < -1e-14):
            raise ValueError("Rule points must be barycentric coordinates inside the simplex")
        points.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.weights.size


def _orbit_s21(a: float) -> List[Tuple[float, float, float]]:
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def _orbit_s111(a: float, b: float) -> List[Tuple[float, ...]]:
    c = 1.0 - a - b
    return sorted(set(permutations((a, b, c))))


# Symmetric triangle rules: lists of (orbit points, weight).
_TRIANGLE_RULES = {
    1: [([(1 / 3, 1 / 3, 1 / 3)], 1.0)],
    2: [(_orbit_s21(1 / 6), 1 / 3)],
    4: [(_orbit_s21(0.445948490915965), 0.223381589678011),
        (_orbit_s21(0.091576213509771), 0.109951743655322)],
    5: [([(1 / 3, 1 / 3, 1 / 3)], 0.225),
        (_orbit_s21(0.470142064105115), 0.132394152788506),
        (_orbit_s21(0.101286507323456), 0.125939180544827)],
    6: [(_orbit_s21(0.249286745170910), 0.116786275726379),
        (_orbit_s21(0.063089014491502), 0.050844906370207),
        (_orbit_s111(0.053145049844817, 0.310352451033784), 0.082851075618374)],
}

_TET_A = 0.1381966011250105
_TETRAHEDRON_RULES = {
    1: [([(0.25, 0.25, 0.25, 0.25)], 1.0)],
    2: [(sorted(set(permutations((1 - 3 * _TET_A, _TET_A, _TET_A, _TET_A)))), 0.25)],
}


def _from_orbits(dim: int, order: int, orbits) -> QuadratureRule:
    points, weights = [], []
    for orbit, weight in orbits:
        points.extend(orbit)
        weights.extend([weight] * len(orbit))
    weights = np.asarray(weights)
    return QuadratureRule(dim, order, np.asarray(points), weights / weights.sum())


def _conical_rule(dim: int, order: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi product rule, exact for polynomials of the given order."""
    q = max(1, math.ceil((order + 1) / 2))
    factors = []
    for level in range(dim):
        alpha = dim - 1 - level
        nodes, weights = roots_jacobi(q, alpha, 0.0)
        factors.append(((nodes + 1.0) / 2.0, weights))
    grids = np.meshgrid(*[f[0] for f in factors], indexing="ij")
    wgrids = np.meshgrid(*[f[1] for f in factors], indexing="ij")
    xi = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    coords = np.zeros((xi.shape[0], dim))
    remaining = np.ones(xi.shape[0])
    for level in range(dim):
        coords[:, level] = remaining * xi[:, level]
        remaining = remaining * (1.0 - xi[:, level])
    bary = np.concatenate([1.0 - coords.sum(axis=1, keepdims=True), coords], axis=1)
    bary[:, 0] = np.maximum(bary[:, 0], 0.0)
    return QuadratureRule(dim, order, bary, w / w.sum())


@lru_cache(maxsize=None)
def quadrature_rule(dim: int, order: Optional[int] = None) -> QuadratureRule:
    """
    Positive-weight rule on the reference simplex exact to the requested order.

    Tabulated symmetric rules are used where available (the next higher
    tabulated order when the exact one is missing); other orders fall back to
    a collapsed Gauss-Jacobi product rule.
    """
    if dim not in (2, 3):
        raise ValueError(f"Quadrature exists in dimension 2 or 3, got {dim}")
    if order is None:
        order = DEFAULT_ORDER[dim]
    if order < 1:
        raise ValueError(f"Quadrature order must be at least 1, got {order}")
    table = _TRIANGLE_RULES if dim == 2 else _TETRAHEDRON_RULES
    available = sorted(k for k in table if k >= order)
    if available:
        chosen = available[0]
        return _from_orbits(dim, order, table[chosen])
    return _conical_rule(dim, order)


@dataclass(frozen=True, eq=False)
class JetSample:
    """Jets (t, u(t), du(t)) at quadrature points with their physical weights."""
    cells: np.ndarray
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.size


def _physical_points(mesh: SimplicialMesh, rule: QuadratureRule):
    corners = mesh.vertices[mesh.simplices]
    t = np.einsum("qa,can->cqn", rule.points, corners)
    weights = mesh.cell_volumes[:, None] * rule.weights[None, :]
    cells = np.repeat(np.arange(mesh.num_cells), rule.size)
    return cells, t.reshape(-1, mesh.dim), weights.ravel()


def _resolve_rule(mesh: SimplicialMesh, rule) -> QuadratureRule:
    if rule is None:
        return quadrature_rule(mesh.dim)
    if isinstance(rule, (int, np.integer)):
        return quadrature_rule(mesh.dim, int(rule))
    if rule.dim != mesh.dim:
        raise ValueError(f"Rule of dimension {rule.dim} used on a {mesh.dim}-D mesh")
    return rule


@dataclass(frozen=True, eq=False)
class PwAffineMap:
    """Continuous piecewise-affine map given by its nodal values."""
    mesh: SimplicialMesh
    nodal_values: np.ndarray

    def __post_init__(self):
        values = np.array(self.nodal_values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.mesh.num_vertices:
            raise ValueError(f"Expected {self.mesh.num_vertices} nodal values, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise EvaluationError("Nodal values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "nodal_values", values)

    @property
    def source_dim(self) -> int:
        return self.mesh.dim

    @property
    def target_dim(self) -> int:
        return self.nodal_values.shape[1]

    @cached_property
    def gradients(self) -> np.ndarray:
        """Cell gradients, shape (C, m, n)."""
        return np.einsum("cam,can->cmn", self.nodal_values[self.mesh.simplices],
                         self.mesh.basis_gradients)

    def values_at(self, cells, bary) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.intp)
        return np.einsum("pa,pam->pm", np.atleast_2d(bary), self.nodal_values[self.mesh.simplices[cells]])

    def quadrature_jets(self, rule=None) -> JetSample:
        rule = _resolve_rule(self.mesh, rule)
        cells, t, weights = _physical_points(self.mesh, rule)
        x = np.einsum("qa,cam->cqm", rule.points, self.nodal_values[self.mesh.simplices])
        v = np.repeat(self.gradients, rule.size, axis=0)
        return JetSample(cells, t, x.reshape(-1, self.target_dim), v, weights)

    def with_nodal_values(self, values) -> PwAffineMap:
        return PwAffineMap(self.mesh, values)


@dataclass(frozen=True, eq=False)
class SmoothMap:
    """
    A map with closed-form value and Jacobian, sampled pointwise on a mesh.

    Used where the exact map is not piecewise affine, e.g. t/|t| or stripes
    that do not follow the mesh.
    """
    mesh: SimplicialMesh
    target_dim: int
    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    @property
    def source_dim(self) -> int:
        return self.mesh.dim

    def quadrature_jets(self, rule=None) -> JetSample:
        rule = _resolve_rule(self.mesh, rule)
        cells, t, weights = _physical_points(self.mesh, rule)
        x = np.asarray(self.value(t), dtype=float).reshape(t.shape[0], self.target_dim)
        v = np.asarray(self.jacobian(t), dtype=float).reshape(t.shape[0], self.target_dim, self.mesh.dim)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise EvaluationError(f"Map '{self.name}' is not finite at some quadrature point")
        return JetSample(cells, t, x, v, weights)


def interpolate(func: Callable[[np.ndarray], np.ndarray], mesh: SimplicialMesh) -> PwAffineMap:
    """
    Nodal interpolant of a vectorised function (V, n) -> (V, m).

    Raises:
        EvaluationError: If the function is not finite at some vertex
    """
    values = np.asarray(func(mesh.vertices), dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if not np.all(np.isfinite(values)):
        bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
        raise EvaluationError(f"Interpolated function is not finite at vertex {int(bad[0])}")
    return PwAffineMap(mesh, values)


def identity_map(mesh: SimplicialMesh) -> PwAffineMap:
    return interpolate(lambda t: t, mesh)


def cell_gradient(mapping: PwAffineMap, cell: int) -> np.ndarray:
    """Gradient of a piecewise-affine map on one cell."""
    if not 0 <= cell < mapping.mesh.num_cells:
        raise ValueError(f"Cell {cell} outside 0..{mapping.mesh.num_cells - 1}")
    return mapping.gradients[cell]


def evaluate_jets(integrand, t, x, v) -> np.ndarray:
    """Integrand values at jets; integrand is a callable or exposes evaluate()."""
    fn = integrand.evaluate if hasattr(integrand, "evaluate") else integrand
    return np.asarray(fn(t, x, v), dtype=float).reshape(-1)


def cell_energies(mapping, integrand, rule=None) -> np.ndarray:
    """
    Per-cell integrals of L(t, u, du), +inf where the integrand is +inf.

    Raises:
        EvaluationError: If the integrand returns NaN
    """
    rule = _resolve_rule(mapping.mesh, rule)
    jets = mapping.quadrature_jets(rule)
    values = evaluate_jets(integrand, jets.t, jets.x, jets.v)
    if np.isnan(values).any():
        raise EvaluationError("Integrand returned NaN")
    with np.errstate(invalid="ignore"):
        weighted = (values * jets.weights).reshape(mapping.mesh.num_cells, rule.size)
    return weighted.sum(axis=1)


def integrate_energy(mapping, integrand, rule=None) -> float:
    """
    E(u) = integral of L(t, u, du) by the quadrature rule, summed cellwise in fixed order.

    Returns math.inf when the integrand is +inf anywhere.
    """
    rule = _resolve_rule(mapping.mesh, rule)
    jets = mapping.quadrature_jets(rule)
    values = evaluate_jets(integrand, jets.t, jets.x, jets.v)
    if np.isnan(values).any() or np.isneginf(values).any():
        raise EvaluationError("Integrand returned NaN or -inf")
    if np.isposinf(values).any():
        return math.inf
    per_cell = (values * jets.weights).reshape(mapping.mesh.num_cells, rule.size).sum(axis=1)
    return tree_sum(per_cell)


@dataclass(frozen=True, eq=False)
class MinorField:
    """Cellwise wedge_l(du), entries of shape (C, C(m,l), C(n,l))."""
    degree: int
    source_dim: int
    target_dim: int
    entries: np.ndarray

    def __len__(self) -> int:
        return self.entries.shape[0]

    def __getitem__(self, cell: int) -> np.ndarray:
        return self.entries[cell]


def minor_field(mapping: PwAffineMap, degree: int) -> MinorField:
    n, m = mapping.source_dim, mapping.target_dim
    if degree < 1 or degree > min(n, m):
        raise ValueError(f"Minor degree {degree} outside 1..{min(n, m)}")
    return MinorField(degree, n, m, compound(mapping.gradients, degree))


def weak_minor_residual(mapping, degree: int, form: FormField, field_: LVectorField, rule=None) -> float:
    """
    Quadrature value of the integral of the null Lagrangian built from (chi, U) along u.

    Raises:
        ValueError: If the degree is unsupported or U does not vanish on the boundary
    """
    n, m = mapping.source_dim, mapping.target_dim
    if degree < 1 or degree > min(n, m):
        raise ValueError(f"Degree {degree} outside 1..min(n, m) = {min(n, m)}")
    mesh = mapping.mesh
    if np.any(field_.values(mesh.vertices[mesh.boundary_nodes]) != 0.0):
        raise ValueError(f"Field '{field_.name}' does not vanish on the mesh boundary")
    spec = make_null_lagrangian(degree, form, field_)
    return vanishing_residual(spec, mapping, rule)


def boundary_trace(mapping: PwAffineMap) -> np.ndarray:
    return mapping.nodal_values[mapping.mesh.boundary_nodes]


def same_trace(first: PwAffineMap, second: PwAffineMap, tol: float = 1e-12) -> bool:
    """True when both maps live on one mesh and agree at every boundary node."""
    if first.mesh is not second.mesh and not (
            np.array_equal(first.mesh.vertices, second.mesh.vertices)
            and np.array_equal(first.mesh.simplices, second.mesh.simplices)):
        return False
    return bool(np.all(np.abs(boundary_trace(first) - boundary_trace(second)) <= tol))
