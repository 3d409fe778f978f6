"""
Exact small-dimension exterior algebra.

Coordinates of l-vectors and l-forms live in the lexicographically ordered
basis e_I, I = (i_1 < ... < i_l) a subset of {1..n}. Every other module
inherits this convention, including the (C(m,l), C(n,l)) layout of minor
matrices, whose entry [J, I] is det a[J, I].
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

MAX_DIM = 8


def _check_dims(n: int, l: int) -> None:
    if not isinstance(n, (int, np.integer)) or not isinstance(l, (int, np.integer)):
        raise ValueError(f"Dimensions must be integers, got n={n!r}, l={l!r}")
    if n < 0 or n > MAX_DIM:
        raise ValueError(f"Ambient dimension {n} outside supported range 0..{MAX_DIM}")
    if l < 0 or l > n:
        raise ValueError(f"Degree {l} outside range 0..{n}")


@lru_cache(maxsize=None)
def _subsets(n: int, l: int) -> Tuple[Tuple[int, ...], ...]:
    return tuple(itertools.combinations(range(1, n + 1), l))


@lru_cache(maxsize=None)
def _subset_index(n: int, l: int) -> Dict[Tuple[int, ...], int]:
    return {s: i for i, s in enumerate(_subsets(n, l))}


@lru_cache(maxsize=None)
def _subset_array(n: int, l: int) -> np.ndarray:
    """Zero-based index array of shape (C(n,l), l)."""
    arr = np.array(_subsets(n, l), dtype=np.intp).reshape(math.comb(n, l), l) - 1
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class IndexSubset:
    """A strictly increasing subset of {1..ambient_dim}."""
    indices: Tuple[int, ...]
    ambient_dim: int

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError(f"Indices must be strictly increasing: {self.indices}")
        if self.indices and (self.indices[0] < 1 or self.indices[-1] > self.ambient_dim):
            raise ValueError(f"Indices {self.indices} not inside 1..{self.ambient_dim}")

    @property
    def cardinality(self) -> int:
        return len(self.indices)

    def complement(self) -> IndexSubset:
        members = set(self.indices)
        return IndexSubset(tuple(i for i in range(1, self.ambient_dim + 1) if i not in members),
                           self.ambient_dim)

    def position(self) -> int:
        """Position of e_I in the lexicographic basis of its degree."""
        return _subset_index(self.ambient_dim, self.cardinality)[self.indices]


def basis_subsets(n: int, l: int) -> List[IndexSubset]:
    """
    All l-subsets of {1..n} in lexicographic order.

    Raises:
        ValueError: If l < 0, l > n or n is outside the supported range
    """
    _check_dims(n, l)
    return [IndexSubset(s, n) for s in _subsets(n, l)]


def merge_sign(first: Sequence[int], second: Sequence[int]) -> int:
    """
    Sign of the permutation sorting the concatenation first + second.

    Both arguments are increasing index tuples; overlapping tuples give 0.
    """
    if set(first) & set(second):
        return 0
    inversions = sum(1 for i in first for j in second if i > j)
    return -1 if inversions % 2 else 1


def sigma_sign(subset: IndexSubset) -> int:
    """Sign of the permutation (I, I^c) of 1..n."""
    return merge_sign(subset.indices, subset.complement().indices)


class _Multi:
    """Shared storage for l-vectors and l-forms."""
    __slots__ = ("degree", "ambient_dim", "coords")

    def __init__(self, degree: int, ambient_dim: int, coords):
        _check_dims(ambient_dim, degree)
        coords = np.array(coords, dtype=float).reshape(-1)
        expected = math.comb(ambient_dim, degree)
        if coords.size != expected:
            raise ValueError(f"Degree-{degree} object in dimension {ambient_dim} needs "
                             f"{expected} coordinates, got {coords.size}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("Coordinates must be finite")
        coords.setflags(write=False)
        self.degree = int(degree)
        self.ambient_dim = int(ambient_dim)
        self.coords = coords

    def __getitem__(self, subset) -> float:
        key = subset.indices if isinstance(subset, IndexSubset) else tuple(subset)
        return float(self.coords[_subset_index(self.ambient_dim, self.degree)[key]])

    def __eq__(self, other) -> bool:
        return (type(self) is type(other) and self.degree == other.degree
                and self.ambient_dim == other.ambient_dim
                and np.array_equal(self.coords, other.coords))

    def __hash__(self):
        return hash((type(self).__name__, self.degree, self.ambient_dim, self.coords.tobytes()))

    def __add__(self, other):
        self._check_compatible(other)
        return type(self)(self.degree, self.ambient_dim, self.coords + other.coords)

    def __sub__(self, other):
        self._check_compatible(other)
        return type(self)(self.degree, self.ambient_dim, self.coords - other.coords)

    def __mul__(self, scalar: float):
        return type(self)(self.degree, self.ambient_dim, self.coords * float(scalar))

    __rmul__ = __mul__

    def _check_compatible(self, other) -> None:
        if type(self) is not type(other):
            raise ValueError(f"Cannot combine {type(self).__name__} with {type(other).__name__}")
        if (self.degree, self.ambient_dim) != (other.degree, other.ambient_dim):
            raise ValueError(f"Degree/dimension mismatch: ({self.degree}, {self.ambient_dim}) "
                             f"vs ({other.degree}, {other.ambient_dim})")

    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))

    def __repr__(self):
        return f"{type(self).__name__}(degree={self.degree}, n={self.ambient_dim}, coords={self.coords.tolist()})"


class WedgeVector(_Multi):
    """An l-vector on R^n."""
    __slots__ = ()


class WedgeForm(_Multi):
    """An l-form on R^n (same coordinates, dual basis)."""
    __slots__ = ()

    def pair(self, vector: WedgeVector) -> float:
        """Duality pairing <form, vector>."""
        if not isinstance(vector, WedgeVector):
            raise ValueError("A form pairs with a WedgeVector")
        if (vector.degree, vector.ambient_dim) != (self.degree, self.ambient_dim):
            raise ValueError("Pairing needs equal degree and dimension")
        return float(self.coords @ vector.coords)


def wedge_dot(a: WedgeVector, b: WedgeVector) -> float:
    """Euclidean inner product of two l-vectors in the orthonormal basis e_I."""
    if not isinstance(a, WedgeVector) or not isinstance(b, WedgeVector):
        raise ValueError("wedge_dot takes two WedgeVectors")
    a._check_compatible(b)
    return float(a.coords @ b.coords)


def wedge_inner(vs, ws) -> float:
    """
    <v_1 ^ ... ^ v_l, w_1 ^ ... ^ w_l> as the Gram determinant det(<v_i, w_j>).

    Args:
        vs: l vectors of R^n, as rows
        ws: l vectors of R^n, as rows

    Raises:
        ValueError: If the lists differ in length or dimension
    """
    vs = np.atleast_2d(np.asarray(vs, dtype=float))
    ws = np.atleast_2d(np.asarray(ws, dtype=float))
    if vs.shape != ws.shape:
        raise ValueError(f"wedge_inner needs equally many vectors of equal dimension, "
                         f"got {vs.shape} and {ws.shape}")
    _check_dims(vs.shape[1], vs.shape[0])
    return float(batched_det(vs @ ws.T))


def volume_vector(n: int) -> WedgeVector:
    return WedgeVector(n, n, [1.0])


def volume_form(n: int) -> WedgeForm:
    return WedgeForm(n, n, [1.0])


@lru_cache(maxsize=None)
def _wedge_table(n: int, p: int, q: int):
    rows_a, rows_b, rows_out, signs = [], [], [], []
    index_out = _subset_index(n, p + q)
    for ia, sa in enumerate(_subsets(n, p)):
        for ib, sb in enumerate(_subsets(n, q)):
            s = merge_sign(sa, sb)
            if s:
                rows_a.append(ia)
                rows_b.append(ib)
                rows_out.append(index_out[tuple(sorted(sa + sb))])
                signs.append(float(s))
    return (np.array(rows_a, dtype=np.intp), np.array(rows_b, dtype=np.intp),
            np.array(rows_out, dtype=np.intp), np.array(signs))


def wedge(a: _Multi, b: _Multi) -> _Multi:
    """
    Exterior product of two l-vectors (or two forms) on the same space.

    Raises:
        ValueError: On mixed kinds, mismatched dimensions or degree sum > n
    """
    if type(a) is not type(b):
        raise ValueError("wedge needs two objects of the same kind")
    if a.ambient_dim != b.ambient_dim:
        raise ValueError(f"Dimension mismatch {a.ambient_dim} vs {b.ambient_dim}")
    n, p, q = a.ambient_dim, a.degree, b.degree
    if p + q > n:
        raise ValueError(f"Degree {p}+{q} exceeds dimension {n}")
    ia, ib, iout, signs = _wedge_table(n, p, q)
    out = np.zeros(math.comb(n, p + q))
    np.add.at(out, iout, signs * a.coords[ia] * b.coords[ib])
    return type(a)(p + q, n, out)


def batched_det(mats: np.ndarray) -> np.ndarray:
    """
    Determinants of a stack of square matrices, shape (..., l, l) -> (...).

    Closed forms up to l = 3, LU with partial pivoting beyond.
    """
    mats = np.asarray(mats, dtype=float)
    l = mats.shape[-1]
    if l == 0:
        return np.ones(mats.shape[:-2])
    if l == 1:
        return mats[..., 0, 0].copy()
    if l == 2:
        return mats[..., 0, 0] * mats[..., 1, 1] - mats[..., 0, 1] * mats[..., 1, 0]
    if l == 3:
        a = mats
        return (a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
                - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
                + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]))
    return np.linalg.det(mats)


def compound(a, l: int) -> np.ndarray:
    """
    l-th compound matrices of a stack of linear maps.

    Args:
        a: Array of shape (..., m, n), a map R^n -> R^m per leading index
        l: Degree, 0 <= l <= min(m, n)

    Returns:
        Array of shape (..., C(m,l), C(n,l)) with entry [J, I] = det a[J, I]
    """
    a = np.asarray(a, dtype=float)
    m, n = a.shape[-2], a.shape[-1]
    if l < 0 or l > min(m, n):
        raise ValueError(f"Degree {l} outside 0..min({m}, {n})")
    _check_dims(max(m, n), l)
    if l == 0:
        return np.ones(a.shape[:-2] + (1, 1))
    rows = _subset_array(m, l)
    cols = _subset_array(n, l)
    sub = a[..., rows[:, None, :, None], cols[None, :, None, :]]
    return batched_det(sub)


@dataclass(frozen=True, eq=False)
class MinorMatrix:
    """
    The induced map on l-vectors of a linear map R^n -> R^m.

    entries has shape (C(m,l), C(n,l)); entry [J, I] = det a[J, I].
    """
    source_dim: int
    target_dim: int
    degree: int
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        shape = (math.comb(self.target_dim, self.degree), math.comb(self.source_dim, self.degree))
        if entries.shape != shape:
            raise ValueError(f"Minor matrix needs shape {shape}, got {entries.shape}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def apply(self, vector: WedgeVector) -> WedgeVector:
        if not isinstance(vector, WedgeVector):
            raise ValueError("Minor matrices act on WedgeVectors")
        if (vector.degree, vector.ambient_dim) != (self.degree, self.source_dim):
            raise ValueError(f"Expected a {self.degree}-vector on R^{self.source_dim}")
        return WedgeVector(self.degree, self.target_dim, self.entries @ vector.coords)

    def compose(self, inner: MinorMatrix) -> MinorMatrix:
        """self after inner."""
        if inner.degree != self.degree or inner.target_dim != self.source_dim:
            raise ValueError("Incompatible minor matrices")
        return MinorMatrix(inner.source_dim, self.target_dim, self.degree,
                           self.entries @ inner.entries)

    def __eq__(self, other) -> bool:
        return (isinstance(other, MinorMatrix)
                and (self.source_dim, self.target_dim, self.degree)
                == (other.source_dim, other.target_dim, other.degree)
                and np.array_equal(self.entries, other.entries))

    __hash__ = None


def lift_minors(a, l: int) -> MinorMatrix:
    """
    Wedge_l(a) for a single m x n matrix.

    Raises:
        ValueError: If a is not 2-D, l < 1 or l > min(n, m)
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"Expected a matrix, got shape {a.shape}")
    m, n = a.shape
    if l < 1 or l > min(m, n):
        raise ValueError(f"Degree {l} outside 1..min({n}, {m})")
    return MinorMatrix(n, m, l, compound(a, l))


def wedge_of(vectors) -> WedgeVector:
    """v_1 ^ ... ^ v_l for l vectors of R^n, given as rows."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    l, n = vectors.shape
    _check_dims(n, l)
    return WedgeVector(l, n, compound(vectors.T, l)[:, 0])


def r_k(v, k: int) -> np.ndarray:
    """
    Growth weight 1 + sum_{i=1..k} ||wedge_i(v)||_F for a stack of matrices.

    Args:
        v: Array (..., m, n)
        k: Minor degree bound, 1 <= k <= min(m, n)
    """
    v = np.asarray(v, dtype=float)
    if k < 1 or k > min(v.shape[-2], v.shape[-1]):
        raise ValueError(f"r_k needs 1 <= k <= min(m, n), got k={k}")
    total = np.ones(v.shape[:-2])
    for i in range(1, k + 1):
        total = total + np.linalg.norm(compound(v, i), axis=(-2, -1))
    return total


@lru_cache(maxsize=None)
def _interior_table(n: int, l: int, k: int):
    rows_u, rows_w, rows_out, signs = [], [], [], []
    index_w = _subset_index(n, k)
    for iu, su in enumerate(_subsets(n, l)):
        for iout, sk in enumerate(_subsets(n, k - l)):
            s = merge_sign(su, sk)
            if s:
                rows_u.append(iu)
                rows_w.append(index_w[tuple(sorted(su + sk))])
                rows_out.append(iout)
                signs.append(float(s))
    return (np.array(rows_u, dtype=np.intp), np.array(rows_w, dtype=np.intp),
            np.array(rows_out, dtype=np.intp), np.array(signs))


def interior_product(vector: WedgeVector, form: WedgeForm) -> WedgeForm:
    """
    i_U(omega), the (k-l)-form with (i_U omega) . V = omega . (U ^ V).

    Raises:
        ValueError: If l > k or the spaces differ
    """
    if not isinstance(vector, WedgeVector) or not isinstance(form, WedgeForm):
        raise ValueError("interior_product takes a WedgeVector and a WedgeForm")
    if vector.ambient_dim != form.ambient_dim:
        raise ValueError("interior_product needs a common space")
    n, l, k = vector.ambient_dim, vector.degree, form.degree
    if l > k:
        raise ValueError(f"Cannot contract a {l}-vector into a {k}-form")
    iu, iw, iout, signs = _interior_table(n, l, k)
    out = np.zeros(math.comb(n, k - l))
    np.add.at(out, iout, signs * vector.coords[iu] * form.coords[iw])
    return WedgeForm(k - l, n, out)


@lru_cache(maxsize=None)
def volume_contraction_matrix(n: int, l: int) -> np.ndarray:
    """
    Signed permutation M with coords(i_U Omega) = M @ coords(U) for U of degree l.

    Entry [I^c, I] is sigma(I).
    """
    _check_dims(n, l)
    out = np.zeros((math.comb(n, n - l), math.comb(n, l)))
    index_c = _subset_index(n, n - l)
    for i, s in enumerate(_subsets(n, l)):
        subset = IndexSubset(s, n)
        out[index_c[subset.complement().indices], i] = sigma_sign(subset)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def exterior_derivative_matrices(n: int, p: int) -> np.ndarray:
    """
    D with (d omega)_K = sum_j sum_J D[j, K, J] d_j omega_J for p-forms on R^n.

    Shape (n, C(n, p+1), C(n, p)).
    """
    _check_dims(n, p)
    if p + 1 > n:
        raise ValueError(f"d of a {p}-form on R^{n} is zero-dimensional")
    out = np.zeros((n, math.comb(n, p + 1), math.comb(n, p)))
    index_k = _subset_index(n, p + 1)
    for jj, s in enumerate(_subsets(n, p)):
        for j in range(1, n + 1):
            sign = merge_sign((j,), s)
            if sign:
                out[j - 1, index_k[tuple(sorted((j,) + s))], jj] = sign
    out.setflags(write=False)
    return out


def graph_identity_sides(a, vector: WedgeVector, form: WedgeForm) -> Tuple[float, float]:
    """
    Both sides of the graph identity for a linear map a: R^n -> R^m.

    lhs = (i_U Omega_n ^ chi) . wedge_n(Id (+) a) lambda_n, computed in R^{n+m};
    rhs = (-1)^{k(n-k)} chi . wedge_k(a) U. The two are evaluated independently.

    Args:
        a: m x n matrix
        vector: k-vector U on R^n
        form: k-form chi on R^m

    Returns:
        Tuple (lhs, rhs)
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"Expected a matrix, got shape {a.shape}")
    m, n = a.shape
    if not isinstance(vector, WedgeVector) or not isinstance(form, WedgeForm):
        raise ValueError("graph_identity_sides takes a WedgeVector and a WedgeForm")
    if vector.ambient_dim != n or form.ambient_dim != m:
        raise ValueError(f"U must live on R^{n} and chi on R^{m}")
    k = vector.degree
    if form.degree != k:
        raise ValueError(f"Degrees differ: U has {k}, chi has {form.degree}")

    contracted = interior_product(vector, volume_form(n))
    graph = np.vstack([np.eye(n), a])
    lower = _subset_array(n, n - k)
    upper = _subset_array(m, k) + n
    # every basis pair (I, J) is already in increasing order inside R^{n+m}
    rows = np.concatenate([np.repeat(lower, upper.shape[0], axis=0),
                           np.tile(upper, (lower.shape[0], 1))], axis=1)
    minors = batched_det(graph[rows])
    coefficients = np.outer(contracted.coords, form.coords).ravel()
    lhs = float(coefficients @ minors)

    rhs = (-1) ** (k * (n - k)) * float(form.coords @ (compound(a, k) @ vector.coords))
    return lhs, rhs


@lru_cache(maxsize=None)
def _cofactor_scatter(m: int, n: int, l: int) -> np.ndarray:
    rows = _subset_array(m, l)
    cols = _subset_array(n, l)
    size = rows.shape[0] * cols.shape[0] * l * l
    scatter = np.zeros((size, m * n))
    pos = 0
    for J in range(rows.shape[0]):
        for I in range(cols.shape[0]):
            for p in range(l):
                for q in range(l):
                    scatter[pos, rows[J, p] * n + cols[I, q]] = 1.0
                    pos += 1
    scatter.setflags(write=False)
    return scatter


def compound_gradient(v, l: int, weights) -> np.ndarray:
    """
    Chain rule through the l-minors: sum_{J,I} weights[J,I] d(det v[J,I])/dv.

    Args:
        v: Stack of matrices (..., m, n)
        l: Minor degree
        weights: Same leading shape, (..., C(m,l), C(n,l))

    Returns:
        Array (..., m, n)
    """
    v = np.asarray(v, dtype=float)
    weights = np.asarray(weights, dtype=float)
    m, n = v.shape[-2], v.shape[-1]
    lead = v.shape[:-2]
    if l == 0:
        return np.zeros_like(v)
    rows = _subset_array(m, l)
    cols = _subset_array(n, l)
    sub = v[..., rows[:, None, :, None], cols[None, :, None, :]]
    # cofactor [p, q] = (-1)^(p+q) * minor omitting row p and column q
    cof_minors = compound(sub, l - 1)[..., ::-1, ::-1]
    signs = (-1.0) ** np.add.outer(np.arange(l), np.arange(l))
    contributions = weights[..., None, None] * cof_minors * signs
    flat = contributions.reshape(lead + (-1,)) @ _cofactor_scatter(m, n, l)
    return flat.reshape(lead + (m, n))
