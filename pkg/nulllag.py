"""
Compactly supported null Lagrangians built from an (l-1)-form chi on the target
and an l-vector field U on the source:

    F(t, x, v) = chi(x) . wedge_{l-1}(v) U_dot(t) + d chi(x) . wedge_l(v) U(t)

with U_dot defined through (-1)^(l+1) i_{U_dot} Omega = d(i_U Omega). The map
module stays out of this file: residuals only need an object exposing
quadrature_jets(rule).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from exterior import (_check_dims, _subset_index, compound, exterior_derivative_matrices,
                      volume_contraction_matrix)
from numerics import (UnsupportedDomainError, component_rng, finite_difference_error,
                      integrate_samples)

logger = logging.getLogger(__name__)

FD_TOLERANCE = 1e-6
VALIDATION_POINTS = 16
DOMAIN_KINDS = ("ball", "box", "annulus")


@dataclass(frozen=True)
class Domain:
    """
    Descriptor of a bounded Lipschitz source domain.

    ball: center and radius. box: axis-aligned cube [center - side/2, center + side/2]
    with side stored in radius. annulus: inner_radius < |t - center| < radius.
    """
    kind: str
    dim: int
    center: Tuple[float, ...]
    radius: float = 1.0
    inner_radius: float = 0.0

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise ValueError(f"Unknown domain kind '{self.kind}'. Valid kinds: {', '.join(DOMAIN_KINDS)}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != self.dim:
            raise ValueError(f"Center {self.center} does not match dimension {self.dim}")
        if self.radius <= 0:
            raise ValueError(f"Radius must be positive, got {self.radius}")
        if self.kind == "annulus" and not 0 < self.inner_radius < self.radius:
            raise ValueError(f"Annulus needs 0 < inner_radius < radius, got {self.inner_radius}")

    @property
    def star_shaped(self) -> bool:
        return self.kind in ("ball", "box")

    @property
    def diameter(self) -> float:
        if self.kind == "box":
            return self.radius * math.sqrt(self.dim)
        return 2.0 * self.radius

    def contains(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        offset = points - np.asarray(self.center)
        if self.kind == "box":
            return np.all(np.abs(offset) < self.radius / 2.0, axis=1)
        dist = np.linalg.norm(offset, axis=1)
        if self.kind == "annulus":
            return (dist > self.inner_radius) & (dist < self.radius)
        return dist < self.radius


def unit_disc() -> Domain:
    return Domain("ball", 2, (0.0, 0.0), 1.0)


def unit_square() -> Domain:
    return Domain("box", 2, (0.5, 0.5), 1.0)


def clamp(s) -> np.ndarray:
    """Identity on [-2, 2], C^2 extension with values in (-3, 3) beyond."""
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    return np.where(a <= 2.0, s, np.sign(s) * (2.0 + np.tanh(a - 2.0)))


def clamp_derivative(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    with np.errstate(over="ignore"):
        return np.where(a <= 2.0, 1.0, 1.0 / np.cosh(a - 2.0) ** 2)


def bump(points, center, radius) -> Tuple[np.ndarray, np.ndarray]:
    """
    Smooth bump exp(1 - 1/(1 - s^2)), s = |t - c| / radius, and its gradient.

    Returns:
        Tuple (values (P,), gradients (P, n)); both exactly zero for s >= 1
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    offset = points - np.asarray(center, dtype=float)
    s2 = np.sum(offset * offset, axis=1) / radius ** 2
    inside = s2 < 1.0
    values = np.zeros(points.shape[0])
    gradients = np.zeros_like(points)
    if inside.any():
        q = 1.0 - s2[inside]
        phi = np.exp(1.0 - 1.0 / q)
        values[inside] = phi
        gradients[inside] = (phi * (-2.0 / q ** 2) / radius ** 2)[:, None] * offset[inside]
    return values, gradients


@dataclass(frozen=True, eq=False)
class LVectorField:
    """
    Smooth l-vector field U on R^n with an analytic Jacobian.

    values maps (P, n) points to (P, C(n,l)); jacobian maps them to
    (P, C(n,l), n). When support_radius is set, U vanishes outside the closed
    ball of that radius around support_center.
    """
    degree: int
    dim: int
    values: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    support_center: Optional[Tuple[float, ...]] = None
    support_radius: Optional[float] = None
    name: str = ""
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        _check_dims(self.dim, self.degree)
        if (self.support_center is None) != (self.support_radius is None):
            raise ValueError("support_center and support_radius go together")
        if self.validate:
            self._check()

    @property
    def compact(self) -> bool:
        return self.support_radius is not None

    def sample_points(self, count: int = VALIDATION_POINTS) -> np.ndarray:
        rng = component_rng(0, f"field-check:{self.name}")
        if self.compact:
            direction = rng.normal(size=(count, self.dim))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            radii = self.support_radius * rng.uniform(0.0, 0.95, size=count) ** (1.0 / self.dim)
            return np.asarray(self.support_center) + radii[:, None] * direction
        return rng.uniform(-1.0, 1.0, size=(count, self.dim))

    def _check(self) -> None:
        points = self.sample_points()
        vals = np.asarray(self.values(points), dtype=float)
        if vals.shape != (points.shape[0], math.comb(self.dim, self.degree)):
            raise ValueError(f"Field '{self.name}' returned shape {vals.shape}")
        error = finite_difference_error(self.values, self.jacobian, points)
        if error > FD_TOLERANCE:
            raise ValueError(f"Field '{self.name}': Jacobian disagrees with finite differences "
                             f"(relative error {error:.3g})")
        if self.compact:
            rng = component_rng(0, f"field-outside:{self.name}")
            direction = rng.normal(size=(VALIDATION_POINTS, self.dim))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            outside = np.asarray(self.support_center) + self.support_radius * (
                1.0 + rng.uniform(0.0, 1.0, size=VALIDATION_POINTS))[:, None] * direction
            if np.any(np.asarray(self.values(outside)) != 0.0):
                raise ValueError(f"Field '{self.name}' does not vanish outside its support")


@dataclass(frozen=True, eq=False)
class UDotField:
    """The (l-1)-vector field U_dot, linear in the Jacobian of U."""
    source: LVectorField
    operator: np.ndarray

    @property
    def degree(self) -> int:
        return self.source.degree - 1

    def __call__(self, points) -> np.ndarray:
        jac = np.asarray(self.source.jacobian(np.atleast_2d(points)), dtype=float)
        return np.einsum("kij,pij->pk", self.operator, jac)


@dataclass(frozen=True, eq=False)
class FormField:
    """
    Smooth (l-1)-form chi on R^m with bounded values and differential.

    sup_value and sup_differential bound the Euclidean norms of the
    coordinates of chi and d chi everywhere.
    """
    degree: int
    target_dim: int
    values: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    sup_value: float
    sup_differential: float
    name: str = ""
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        _check_dims(self.target_dim, self.degree)
        if self.validate:
            self._check()

    def differential(self, points) -> np.ndarray:
        """Coordinates of d chi, shape (P, C(m, degree+1))."""
        points = np.atleast_2d(points)
        jac = np.asarray(self.jacobian(points), dtype=float)
        if self.degree + 1 > self.target_dim:
            return np.zeros((points.shape[0], 0))
        D = exterior_derivative_matrices(self.target_dim, self.degree)
        return np.einsum("jkJ,pJj->pk", D, jac)

    def _check(self) -> None:
        rng = component_rng(0, f"form-check:{self.name}")
        points = rng.uniform(-4.0, 4.0, size=(VALIDATION_POINTS, self.target_dim))
        error = finite_difference_error(self.values, self.jacobian, points)
        if error > FD_TOLERANCE:
            raise ValueError(f"Form '{self.name}': Jacobian disagrees with finite differences "
                             f"(relative error {error:.3g})")
        vals = np.linalg.norm(np.asarray(self.values(points)), axis=1)
        diffs = np.linalg.norm(self.differential(points), axis=1) if self.degree < self.target_dim \
            else np.zeros(points.shape[0])
        if np.any(vals > self.sup_value * (1 + 1e-12)) or np.any(diffs > self.sup_differential * (1 + 1e-12)):
            raise ValueError(f"Form '{self.name}' exceeds its declared bounds")


def u_dot(field_: LVectorField) -> UDotField:
    """
    U_dot for an l-vector field, l >= 1.

    For l = 1 this is div U.
    """
    n, l = field_.dim, field_.degree
    if l < 1:
        raise ValueError("U_dot needs a field of degree at least 1")
    contract_l = volume_contraction_matrix(n, l)
    contract_lower = volume_contraction_matrix(n, l - 1)
    D = exterior_derivative_matrices(n, n - l)
    operator = (-1.0) ** (l + 1) * np.einsum("ak,jaJ,Ji->kij", contract_lower, D, contract_l)
    return UDotField(field_, operator)


@dataclass(frozen=True, eq=False)
class NullLagrangianSpec:
    degree: int
    form: FormField
    field: LVectorField
    u_dot: UDotField

    @property
    def source_dim(self) -> int:
        return self.field.dim

    @property
    def target_dim(self) -> int:
        return self.form.target_dim

    def evaluate(self, t, x, v) -> np.ndarray:
        """F at jets (t, x, v) given as arrays (P, n), (P, m), (P, m, n)."""
        v = np.asarray(v, dtype=float)
        l = self.degree
        minors = [compound(v, i) for i in range(1, l + 1)]
        return self.evaluate_lifted(t, x, minors)

    def evaluate_lifted(self, t, x, minors: Sequence[np.ndarray]) -> np.ndarray:
        """F through precomputed minors; minors[i-1] is wedge_i(v), at least up to degree."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        l = self.degree
        lower = np.ones((t.shape[0], 1, 1)) if l == 1 else minors[l - 2]
        upper = minors[l - 1]
        term = np.einsum("pa,pab,pb->p", self.form.values(x), lower, self.u_dot(t))
        if l <= self.target_dim:
            term = term + np.einsum("pa,pab,pb->p", self.form.differential(x), upper,
                                    self.field.values(t))
        return term

    __call__ = evaluate


def make_null_lagrangian(degree: int, form: FormField, field_: LVectorField,
                         require_compact: bool = True) -> NullLagrangianSpec:
    """
    Assemble F from chi and U.

    Raises:
        ValueError: If degrees disagree or U lacks compact support when required
    """
    if degree < 1:
        raise ValueError(f"Null Lagrangian degree must be at least 1, got {degree}")
    if field_.degree != degree:
        raise ValueError(f"U must be a {degree}-vector field, got degree {field_.degree}")
    if form.degree != degree - 1:
        raise ValueError(f"chi must be a {degree - 1}-form, got degree {form.degree}")
    if degree > min(field_.dim, form.target_dim):
        raise ValueError(f"Degree {degree} exceeds min(n, m) = {min(field_.dim, form.target_dim)}")
    if require_compact and not field_.compact:
        raise ValueError(f"Field '{field_.name}' has no compact support")
    return NullLagrangianSpec(degree, form, field_, u_dot(field_))


def bound_constant(spec: NullLagrangianSpec, samples: int = 4096) -> float:
    """
    Sampled constant C with |F(t, x, v)| <= C r_l(v).

    sup|chi| sup|U_dot| + sup|d chi| sup|U|, the field sups estimated on the support.
    """
    rng = component_rng(0, f"bound:{spec.field.name}")
    if spec.field.compact:
        points = spec.field.support_center + spec.field.support_radius * rng.uniform(
            -1.0, 1.0, size=(samples, spec.source_dim))
    else:
        points = rng.uniform(-1.0, 1.0, size=(samples, spec.source_dim))
    sup_u = float(np.max(np.linalg.norm(spec.field.values(points), axis=1)))
    sup_dot = float(np.max(np.linalg.norm(spec.u_dot(points), axis=1)))
    return spec.form.sup_value * sup_dot + spec.form.sup_differential * sup_u


def vanishing_residual(spec: NullLagrangianSpec, mapping, rule=None) -> float:
    """
    Quadrature value of the integral of F(t, u, du) over the mesh of mapping.

    mapping is any object with quadrature_jets(rule) returning cells, t, x, v
    and weights; the exact value is zero.
    """
    jets = mapping.quadrature_jets(rule)
    values = spec.evaluate(jets.t, jets.x, jets.v)
    return integrate_samples(values, jets.weights, what="null Lagrangian")


def bump_field(dim: int, degree: int, center, radius: float, coefficients=None, slopes=None,
               name: str = "bump") -> LVectorField:
    """
    U_I(t) = phi(t) (a_I + b_I . (t - c)) for the bump phi of given center and radius.

    Args:
        dim: Source dimension n
        degree: l
        center: Bump center
        radius: Bump radius
        coefficients: a, shape (C(n,l),), defaults to all ones
        slopes: b, shape (C(n,l), n), defaults to zero
    """
    size = math.comb(dim, degree)
    a = np.ones(size) if coefficients is None else np.asarray(coefficients, dtype=float).reshape(size)
    b = np.zeros((size, dim)) if slopes is None else np.asarray(slopes, dtype=float).reshape(size, dim)
    c = np.asarray(center, dtype=float)

    def values(points):
        phi, _ = bump(points, c, radius)
        poly = a + (np.atleast_2d(points) - c) @ b.T
        return phi[:, None] * poly

    def jacobian(points):
        phi, grad = bump(points, c, radius)
        poly = a + (np.atleast_2d(points) - c) @ b.T
        return poly[:, :, None] * grad[:, None, :] + phi[:, None, None] * b[None, :, :]

    return LVectorField(degree, dim, values, jacobian, tuple(c), float(radius), name)


def random_bump_field(rng: np.random.Generator, dim: int, degree: int, domain: Domain,
                      name: str = "random-bump") -> LVectorField:
    """A bump field with random polynomial modulation supported inside domain."""
    if domain.kind == "box":
        half = domain.radius / 2.0
        radius = rng.uniform(0.3, 0.45) * half * 2.0 * 0.9
        center = np.asarray(domain.center) + rng.uniform(-1, 1, size=dim) * max(half - radius, 0.0)
    else:
        outer = domain.radius
        radius = rng.uniform(0.25, 0.45) * outer
        if domain.kind == "annulus":
            mid = (domain.inner_radius + domain.radius) / 2.0
            radius = min(radius, 0.9 * (domain.radius - domain.inner_radius) / 2.0)
            direction = rng.normal(size=dim)
            center = np.asarray(domain.center) + mid * direction / np.linalg.norm(direction)
        else:
            direction = rng.normal(size=dim)
            shift = rng.uniform(0.0, 0.9) * (outer - radius)
            center = np.asarray(domain.center) + shift * direction / np.linalg.norm(direction)
    size = math.comb(dim, degree)
    return bump_field(dim, degree, center, radius, rng.normal(size=size),
                      rng.normal(scale=0.5, size=(size, dim)), name)


def affine_field(matrix, offset, name: str = "affine") -> LVectorField:
    """Non-compact 1-vector field U(t) = A t + b."""
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    b = np.asarray(offset, dtype=float)
    dim = A.shape[1]

    def values(points):
        return np.atleast_2d(points) @ A.T + b

    def jacobian(points):
        return np.broadcast_to(A, (np.atleast_2d(points).shape[0],) + A.shape).copy()

    return LVectorField(1, dim, values, jacobian, name=name)


def divergence_one_field(domain: Domain) -> LVectorField:
    """
    U(t) = (t - c)/n with div U = 1 and sup |U| <= diam/n.

    Raises:
        UnsupportedDomainError: If the domain is not star-shaped about its center
    """
    if not domain.star_shaped:
        raise UnsupportedDomainError(f"No divergence-one field for a {domain.kind} domain; "
                                     f"it is not star-shaped")
    n = domain.dim
    return affine_field(np.eye(n) / n, -np.asarray(domain.center) / n, name=f"div1-{domain.kind}")


def constant_form(target_dim: int, value: float, name: str = "constant") -> FormField:
    """The 0-form chi = value."""
    value = float(value)

    def values(points):
        return np.full((np.atleast_2d(points).shape[0], 1), value)

    def jacobian(points):
        return np.zeros((np.atleast_2d(points).shape[0], 1, target_dim))

    return FormField(0, target_dim, values, jacobian, abs(value), 0.0, name)


def clamp_form(target_dim: int, coordinate: int, subset: Sequence[int] = (),
               name: str = "clamp") -> FormField:
    """
    chi = clamp(x^coordinate) dx^J, a |J|-form with |chi| < 3 and |d chi| <= 1.

    Args:
        target_dim: m
        coordinate: 1-based coordinate fed to the clamp
        subset: Increasing 1-based indices J (empty for a 0-form)
    """
    subset = tuple(subset)
    p = len(subset)
    _check_dims(target_dim, p)
    if not 1 <= coordinate <= target_dim:
        raise ValueError(f"Coordinate {coordinate} outside 1..{target_dim}")
    size = math.comb(target_dim, p)
    slot = _subset_index(target_dim, p)[subset]

    def values(points):
        points = np.atleast_2d(points)
        out = np.zeros((points.shape[0], size))
        out[:, slot] = clamp(points[:, coordinate - 1])
        return out

    def jacobian(points):
        points = np.atleast_2d(points)
        out = np.zeros((points.shape[0], size, target_dim))
        out[:, slot, coordinate - 1] = clamp_derivative(points[:, coordinate - 1])
        return out

    return FormField(p, target_dim, values, jacobian, 3.0, 1.0, name)


def sine_form(target_dim: int, degree: int, amplitudes, frequencies, phases,
              name: str = "sine") -> FormField:
    """
    chi_J(x) = a_J sin(w_J . x + phi_J).

    Args:
        amplitudes: (C(m,p),)
        frequencies: (C(m,p), m)
        phases: (C(m,p),)
    """
    size = math.comb(target_dim, degree)
    a = np.asarray(amplitudes, dtype=float).reshape(size)
    w = np.asarray(frequencies, dtype=float).reshape(size, target_dim)
    ph = np.asarray(phases, dtype=float).reshape(size)

    def values(points):
        return a * np.sin(np.atleast_2d(points) @ w.T + ph)

    def jacobian(points):
        c = a * np.cos(np.atleast_2d(points) @ w.T + ph)
        return c[:, :, None] * w[None, :, :]

    sup_value = float(np.linalg.norm(a))
    sup_differential = float(np.sum(np.abs(a) * np.linalg.norm(w, axis=1)))
    return FormField(degree, target_dim, values, jacobian, sup_value, sup_differential, name)


def random_sine_form(rng: np.random.Generator, target_dim: int, degree: int,
                     name: str = "random-sine") -> FormField:
    size = math.comb(target_dim, degree)
    return sine_form(target_dim, degree, rng.normal(size=size),
                     rng.normal(scale=1.5, size=(size, target_dim)),
                     rng.uniform(0.0, 2 * np.pi, size=size), name)
