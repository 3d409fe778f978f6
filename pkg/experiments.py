"""
Experiment definitions for the polyvar command line.

Each experiment is a named function with a parameter schema. It returns an
ExperimentResult made of scalar results, tables for CSV output, optional
maps and measures to serialize, and named numerical assertions.
"""

import asyncio
import inspect
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from exterior import (WedgeForm, WedgeVector, basis_subsets, graph_identity_sides, lift_minors,
                      sigma_sign, wedge_dot, wedge_inner, wedge_of)
from meshmaps import (PwAffineMap, build_box_mesh, build_disc_mesh, identity_map, interpolate,
                      quadrature_rule, same_trace)
from nulllag import (clamp_form, divergence_one_field, make_null_lagrangian, random_bump_field,
                     random_sine_form, unit_square, vanishing_residual)
from numerics import component_rng, fitted_order
from presets import PresetRegistry
from serialization import read_measure
from variational import (INTEGRANDS, REPORT_COLUMNS, MinimizeOptions, degree_integral,
                         gap_experiment, get_integrand, kconvexity_sample_check, lattice_window,
                         minimize, negative_abs_det, radial_retraction, random_polyconvex,
                         random_rank_one_pair, superlinearity_check,
                         weak_minor_convergence_experiment)
from youngmeasure import (AtomicYoungMeasure, DiscreteMeasure, StripeSequence, anchoring_residual,
                          disintegrate, from_map, integrate, jensen_gap, kr_distance, laminate,
                          marginal_residual, push_forward, rank_one_decomposition,
                          structure_residual, tail_bound, tightness_profile)

logger = logging.getLogger(__name__)

IDENTITY_TOLERANCE = 1e-10
NULLLAG_TOLERANCE = 1e-6
ANCHORING_TOLERANCE = 1e-8
STRUCTURE_TOLERANCE = 1e-12
JENSEN_TOLERANCE = 1e-10
TRIANGLE_TOLERANCE = 1e-9


@dataclass
class Table:
    columns: Tuple[str, ...]
    rows: List[Tuple[Any, ...]] = field(default_factory=list)

    def add(self, *row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"Row has {len(row)} values, table has {len(self.columns)} columns")
        self.rows.append(tuple(row))


@dataclass
class ExperimentResult:
    results: Dict[str, Any] = field(default_factory=dict)
    tables: Dict[str, Table] = field(default_factory=dict)
    assertions: Dict[str, bool] = field(default_factory=dict)
    maps: Dict[str, PwAffineMap] = field(default_factory=dict)
    measures: Dict[str, AtomicYoungMeasure] = field(default_factory=dict)
    headline: Optional[str] = None

    @property
    def passed(self) -> bool:
        return all(self.assertions.values())


class Experiment:
    """A named experiment the command line can run."""

    def __init__(self, name: str, description: str, parameters: Dict, function: Callable):
        """
        Initialize an experiment.

        Args:
            name: Subcommand name
            description: One-line help text
            parameters: JSON-schema style description of the keyword arguments
            function: Plain or async function returning an ExperimentResult
        """
        self.name = name
        self.description = description
        self.parameters = parameters
        self.function = function

    def defaults(self) -> Dict[str, Any]:
        return {key: spec.get("default") for key, spec in self.parameters["properties"].items()}

    async def execute(self, arguments: Dict[str, Any]) -> ExperimentResult:
        """
        Run the experiment; synchronous functions run in a worker thread.

        Raises:
            Whatever the experiment raises, after logging it.
        """
        try:
            if inspect.iscoroutinefunction(self.function):
                return await self.function(**arguments)
            return await asyncio.to_thread(self.function, **arguments)
        except Exception as e:
            logger.error(f"Experiment {self.name} failed: {e}", exc_info=True)
            raise


def _rng(seed: int, label: str) -> np.random.Generator:
    return component_rng(seed, label)


def _relative(a: float, b: float) -> float:
    return abs(a - b) / (1.0 + abs(b))


def _map_jobs(function: Callable, jobs: Sequence, threads: int = 1) -> List:
    """
    function over pre-drawn jobs, in job order.

    Random inputs are drawn before this call, so results do not depend on threads.
    """
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(function, jobs))
    return [function(job) for job in jobs]


# verify-algebra

def _graph_residual(case) -> float:
    a, vector, form = case
    lhs, rhs = graph_identity_sides(a, vector, form)
    return _relative(lhs, rhs)


def _gram_residual(case) -> float:
    vs, ws = case
    return _relative(wedge_inner(vs, ws), wedge_dot(wedge_of(vs), wedge_of(ws)))


def _cauchy_binet_residuals(case) -> List[float]:
    a, b = case
    residuals = []
    for l in range(1, min(a.shape[0], a.shape[1], b.shape[1]) + 1):
        direct = lift_minors(a @ b, l).entries
        composed = lift_minors(a, l).compose(lift_minors(b, l)).entries
        scale = 1.0 + float(np.max(np.abs(direct)))
        residuals.append(float(np.max(np.abs(direct - composed))) / scale)
    return residuals


def verify_algebra(trials: int = 1000, max_dim: int = 4, seed: int = 0, threads: int = 1) -> ExperimentResult:
    """Graph identity, Gram inner products, complement sign law and Cauchy-Binet."""
    out = ExperimentResult()
    table = Table(("check", "cases", "max_residual"))

    rng = _rng(seed, "graph-identity")
    cases = []
    for _ in range(trials):
        n, m = rng.integers(1, max_dim + 1, size=2)
        k = int(rng.integers(1, min(n, m) + 1))
        a = rng.normal(size=(m, n))
        vector = WedgeVector(k, int(n), rng.normal(size=math.comb(n, k)))
        form = WedgeForm(k, int(m), rng.normal(size=math.comb(m, k)))
        cases.append((a, vector, form))
    worst_graph = max(_map_jobs(_graph_residual, cases, threads), default=0.0)
    table.add("graph_identity", trials, worst_graph)

    rng = _rng(seed, "gram")
    cases = []
    for _ in range(trials):
        n = int(rng.integers(1, max_dim + 1))
        l = int(rng.integers(1, n + 1))
        vs, ws = rng.normal(size=(2, l, n))
        cases.append((vs, ws))
    worst_gram = max(_map_jobs(_gram_residual, cases, threads), default=0.0)
    table.add("gram_inner_product", trials, worst_gram)

    sign_cases, sign_violations = 0, 0
    for n in range(1, 7):
        for k in range(n + 1):
            for subset in basis_subsets(n, k):
                sign_cases += 1
                if sigma_sign(subset.complement()) != (-1) ** (k * (n - k)) * sigma_sign(subset):
                    sign_violations += 1
    table.add("complement_sign", sign_cases, float(sign_violations))

    rng = _rng(seed, "cauchy-binet")
    cases = []
    for _ in range(max(trials // 2, 1)):
        p, n, m = (int(d) for d in rng.integers(1, max_dim + 1, size=3))
        cases.append((rng.normal(size=(m, n)), rng.normal(size=(n, p))))
    residuals = [r for rs in _map_jobs(_cauchy_binet_residuals, cases, threads) for r in rs]
    worst_cb, cb_cases = max(residuals, default=0.0), len(residuals)
    table.add("cauchy_binet", cb_cases, worst_cb)

    out.tables["identity_residuals"] = table
    out.results.update(graph_identity_residual=worst_graph, gram_residual=worst_gram,
                       sign_law_cases=sign_cases,
                       sign_law_violations=sign_violations, cauchy_binet_residual=worst_cb)
    out.assertions.update(graph_identity=worst_graph <= IDENTITY_TOLERANCE,
                          gram_inner_product=worst_gram <= IDENTITY_TOLERANCE,
                          sign_law=sign_violations == 0,
                          cauchy_binet=worst_cb <= IDENTITY_TOLERANCE)
    logger.info(f"verify-algebra: graph {worst_graph:.3g}, sign violations {sign_violations}, "
                f"Cauchy-Binet {worst_cb:.3g}")
    return out


# verify-nulllag

def _smooth_map(rng: np.random.Generator):
    M = rng.normal(size=(2, 2))
    b = rng.normal(size=2)
    c = 0.3 * rng.normal(size=2)
    W = rng.normal(scale=2.0, size=(2, 2))
    phase = rng.uniform(0.0, 2 * math.pi, size=2)
    return lambda t: t @ M.T + b + c * np.sin(t @ W.T + phase)


def _nulllag_case(index: int, spec, func, divisions: Sequence[int], order: int):
    rule = quadrature_rule(2, order)
    residuals = []
    for d in divisions:
        mesh = build_box_mesh(2, d)
        residuals.append(abs(vanishing_residual(spec, interpolate(func, mesh), rule)))
    sizes = [1.0 / d for d in divisions]
    rate = fitted_order(sizes, residuals)
    logger.debug(f"Null Lagrangian case {index}: residuals {residuals}, order {rate:.3f}")
    return residuals, rate


def verify_nulllag(cases: int = 50, divisions: Sequence[int] = (8, 16, 32), quadrature_order: int = 4,
                   presets: str = "", seed: int = 0, threads: int = 1) -> ExperimentResult:
    """
    Vanishing of generated null Lagrangians along interpolated smooth maps, plus anchoring.

    A case passes when the finest residual is below 1e-6 and the residuals either
    converge at order at least 1.9 or already sit at rounding level.
    """
    out = ExperimentResult()
    divisions = sorted(int(d) for d in divisions)
    jobs = []
    for c in range(cases):
        rng = _rng(seed, f"nulllag-{c}")
        degree = 1 + c % 2
        form = random_sine_form(rng, 2, degree - 1, name=f"chi-{c}")
        field_ = random_bump_field(rng, 2, degree, unit_square(), name=f"U-{c}")
        jobs.append((f"random-{c}", make_null_lagrangian(degree, form, field_), _smooth_map(rng)))
    registry = PresetRegistry(presets or None).load()
    for name, preset in registry.null_lagrangians.items():
        jobs.append((f"preset-{name}", preset.build(), _smooth_map(_rng(seed, f"preset-{name}"))))

    def run(item):
        index, (_, spec, func) = item
        return _nulllag_case(index, spec, func, divisions, quadrature_order)

    outcomes = _map_jobs(run, list(enumerate(jobs)), threads)

    columns = ("case", "degree") + tuple(f"residual_{d}" for d in divisions) + ("order",)
    table = Table(columns)
    failures = 0
    worst = 0.0
    for (name, spec, _), (residuals, rate) in zip(jobs, outcomes):
        table.add(name, spec.degree, *residuals, rate)
        finest = residuals[-1]
        worst = max(worst, finest)
        if not (finest <= NULLLAG_TOLERANCE and (rate >= 1.9 or finest <= 1e-12)):
            failures += 1
    out.tables["vanishing"] = table

    # anchoring on the unit square with identity boundary data
    mesh = build_box_mesh(2, divisions[-1])
    base = identity_map(mesh)
    chi = clamp_form(2, 1, name="clamp-x1")
    U = divergence_one_field(unit_square())
    perturbed = interpolate(lambda t: t + 0.1 * (np.sin(np.pi * t[:, 0]) * np.sin(np.pi * t[:, 1]))[:, None],
                            mesh)
    doubled = interpolate(lambda t: 2.0 * t, mesh)
    anchoring = Table(("case", "same_trace", "residual"))
    trace_residual = anchoring_residual(from_map(perturbed), base, chi, U)
    violation_residual = anchoring_residual(from_map(doubled), base, chi, U)
    anchoring.add("interior-perturbation", same_trace(perturbed, base, 1e-14), trace_residual)
    anchoring.add("doubled", same_trace(doubled, base, 1e-14), violation_residual)
    out.tables["anchoring"] = anchoring

    out.results.update(cases=len(jobs), failures=failures, finest_residual_max=worst,
                       anchoring_trace_residual=trace_residual,
                       anchoring_violation_residual=violation_residual)
    out.assertions.update(vanishing=failures == 0,
                          anchoring_trace=trace_residual <= ANCHORING_TOLERANCE,
                          anchoring_violation=violation_residual > 10 * ANCHORING_TOLERANCE)
    return out


# structure

def structure(laminate_name: str = "rank1", pairs: int = 100, divisions: int = 8, presets: str = "",
              seed: int = 0, threads: int = 1) -> ExperimentResult:
    """
    Structure residual of laminate measures over the identity map of the unit square.

    laminate_name is a preset name or 'random' for random rank-one pairs.
    """
    out = ExperimentResult()
    base = identity_map(build_box_mesh(2, divisions))
    table = Table(("case", "weight", "rank_one", "marginal_residual", "structure_residual"))

    if laminate_name == "random":
        rng = _rng(seed, "structure")
        jobs = []
        for _ in range(pairs):
            A, B = random_rank_one_pair(rng)
            jobs.append((A, B, float(rng.uniform(0.2, 0.8))))

        def run(job):
            measure = laminate(*job, base)
            return marginal_residual(measure), structure_residual(disintegrate(measure))

        outcomes = _map_jobs(run, jobs, threads)
        worst, worst_marginal = 0.0, 0.0
        for j, ((_, _, weight), (marginal, residual)) in enumerate(zip(jobs, outcomes)):
            table.add(j, weight, True, marginal, residual)
            worst, worst_marginal = max(worst, residual), max(worst_marginal, marginal)
        out.results.update(laminate="random", pairs=pairs, structure_residual=worst,
                           marginal_residual=worst_marginal)
        out.assertions["rank_one_structure"] = worst <= STRUCTURE_TOLERANCE
        out.assertions["marginal"] = worst_marginal <= STRUCTURE_TOLERANCE
    else:
        preset = PresetRegistry(presets or None).load().laminate(laminate_name)
        measure = preset.build(base)
        residual = structure_residual(disintegrate(measure))
        marginal = marginal_residual(measure)
        rank_one = _is_rank_one(preset.first, preset.second)
        table.add(laminate_name, preset.weight, rank_one, marginal, residual)
        out.results.update(laminate=laminate_name, rank_one=rank_one, structure_residual=residual,
                           marginal_residual=marginal)
        if preset.expected_residual is not None:
            out.assertions["expected_residual"] = (abs(residual - preset.expected_residual)
                                                   <= STRUCTURE_TOLERANCE)
        elif rank_one:
            out.assertions["rank_one_structure"] = residual <= STRUCTURE_TOLERANCE
        out.assertions["marginal"] = marginal <= STRUCTURE_TOLERANCE
        out.measures[f"laminate-{laminate_name}"] = measure
        out.headline = f"structure residual {residual:.17g}"
    out.tables["structure"] = table
    return out


def _is_rank_one(A, B) -> bool:
    try:
        rank_one_decomposition(A, B)
    except ValueError:
        return False
    return True


# jensen

def jensen(integrand: str = "example", trials: int = 100, divisions: int = 4, seed: int = 0,
           threads: int = 1) -> ExperimentResult:
    """
    Jensen gaps of rank-one laminates for a named integrand, plus the -|det| counterexample.

    With integrand 'random' every trial draws its own random polyconvex integrand.
    """
    out = ExperimentResult()
    base = identity_map(build_box_mesh(2, divisions))
    rng = _rng(seed, "jensen")
    fixed = None if integrand == "random" else get_integrand(integrand, seed=seed)
    table = Table(("trial", "integrand", "weight", "gap"))
    jobs = []
    for j in range(trials):
        spec = fixed or random_polyconvex(_rng(seed, f"jensen-integrand-{j}"))
        A, B = random_rank_one_pair(rng)
        jobs.append((spec, A, B, float(rng.uniform(0.1, 0.9))))

    def run(job):
        spec, A, B, weight = job
        return jensen_gap(laminate(A, B, weight, base), spec)

    gaps = []
    skipped = 0
    polyconvex = all(spec.polyconvex for spec, *_ in jobs)
    for j, ((spec, _, _, weight), gap) in enumerate(zip(jobs, _map_jobs(run, jobs, threads))):
        if math.isnan(gap) or math.isinf(gap):
            skipped += 1
        else:
            gaps.append(gap)
        table.add(j, spec.name, weight, gap)
    out.tables["gaps"] = table
    min_gap = min(gaps) if gaps else math.nan

    counter_base = identity_map(build_box_mesh(2, 2))
    counter = jensen_gap(laminate(np.eye(2), np.diag([1.0, -1.0]), 0.5, counter_base),
                         negative_abs_det())

    out.results.update(integrand=integrand, trials=trials, skipped=skipped, min_gap=min_gap,
                       counterexample_gap=counter)
    if fixed is not None:
        convexity = kconvexity_sample_check(fixed, _rng(seed, "kconvexity"))
        out.results["kconvexity_violations"] = convexity.violations
        growth = superlinearity_check(fixed, _rng(seed, "superlinearity"))
        out.results["superlinear"] = growth.superlinear
        if growth.witness_consistent is not None:
            out.results["witness_consistent"] = growth.witness_consistent
    if polyconvex and gaps:
        out.assertions["jensen"] = min_gap >= -JENSEN_TOLERANCE
    out.assertions["counterexample"] = abs(counter + 1.0) <= STRUCTURE_TOLERANCE
    return out


# kr

def _random_discrete(rng: np.random.Generator, atoms: int, dim: int) -> DiscreteMeasure:
    weights = rng.dirichlet(np.ones(atoms))
    return DiscreteMeasure(rng.uniform(0.0, 1.5, size=(atoms, dim)), weights,
                           rng.uniform(1.0, 3.0, size=atoms))


def _single_atom(v) -> AtomicYoungMeasure:
    return AtomicYoungMeasure([0], [[0.0, 0.0]], [[0.0, 0.0]], [v], [1.0], 2)


def kr_checks(triples: int = 1000, divisions: int = 128, frequencies: Sequence[int] = (2, 4, 8, 16, 32, 64),
              seed: int = 0, threads: int = 1) -> ExperimentResult:
    """Metric checks for the transport distance and convergence of stripe measures to their laminate."""
    out = ExperimentResult()
    rng = _rng(seed, "kr-triangle")
    jobs = [tuple(_random_discrete(rng, int(rng.integers(1, 5)), 3) for _ in range(3))
            for _ in range(triples)]

    def triangle_excess(job):
        x, y, z = job
        return kr_distance(x, z) - kr_distance(x, y) - kr_distance(y, z)

    worst_triangle = max(_map_jobs(triangle_excess, jobs, threads), default=-math.inf)

    rng = _rng(seed, "kr-two-atom")
    worst_pair = 0.0
    for _ in range(100):
        p, q = rng.uniform(0.0, 1.0, size=(2, 3))
        rp, rq = rng.uniform(1.0, 3.0, size=2)
        expected = min(float(np.linalg.norm(p - q)), 1.0) + abs(rp - rq)
        got = kr_distance(DiscreteMeasure([p], [1.0], [rp]), DiscreteMeasure([q], [1.0], [rq]))
        worst_pair = max(worst_pair, abs(got - expected))
    scaled = kr_distance(_single_atom(np.eye(2)), _single_atom(2.0 * np.eye(2)))

    sequence = StripeSequence(np.eye(2), np.diag([0.0, 1.0]), 0.5)
    mesh = build_box_mesh(2, (divisions, 1))
    limit = sequence.limit_laminate(mesh)
    table = Table(("frequency", "kr_distance", "sup_distance"))
    ordered = sorted(int(f) for f in frequencies)
    distances = _map_jobs(lambda i: kr_distance(from_map(sequence.smooth_map(i, mesh), 1), limit),
                          ordered, threads)
    for i, d in zip(ordered, distances):
        table.add(i, d, sequence.sup_distance(i))
    out.tables["stripe_convergence"] = table
    decreasing = all(b < a for a, b in zip(distances, distances[1:]))

    out.results.update(triangle_excess=worst_triangle, two_atom_error=worst_pair,
                       identity_double_distance=scaled, stripe_final_distance=distances[-1])
    out.assertions.update(triangle=worst_triangle <= TRIANGLE_TOLERANCE,
                          two_atom=worst_pair <= 1e-12,
                          identity_double=abs(scaled - (4.0 + math.sqrt(2.0))) <= 1e-12,
                          stripe_decreasing=decreasing)
    return out


async def kr(a: str = "", b: str = "", weighted: bool = True, triples: int = 1000, divisions: int = 128,
             frequencies: Sequence[int] = (2, 4, 8, 16, 32, 64), seed: int = 0,
             threads: int = 1) -> ExperimentResult:
    """Distance between two measure files, or the metric checks when no files are given."""
    if bool(a) != bool(b):
        raise ValueError("Pass both --a and --b, or neither")
    if not a:
        return await asyncio.to_thread(kr_checks, triples, divisions, frequencies, seed, threads)
    first, second = await asyncio.gather(read_measure(a), read_measure(b))
    distance = await asyncio.to_thread(kr_distance, first, second, weighted)
    out = ExperimentResult(results={"distance": distance, "atoms_a": first.size,
                                    "atoms_b": second.size})
    out.headline = "%.17g" % distance
    return out


# tightness

def tightness(h: float = 0.1, eps: float = 1e-3, p: float = 1.5, iterations: int = 60, stride: int = 10,
              radii: Sequence[float] = (1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024),
              seed: int = 0, threads: int = 1) -> ExperimentResult:
    """
    r_k-tightness of the lifts of minimization iterates and the coercivity tail bound.

    The bound uses sqrt(k) times the largest energy, since r_k <= sqrt(k)(1 + |minors|).
    It is only compared for radii beyond the largest |x| in the family.
    """
    out = ExperimentResult()
    spec = get_integrand("example", eps=eps, p=p)
    mesh = build_disc_mesh(h)
    options = MinimizeOptions(max_iterations=iterations, tolerance=1e-12, record_iterates=True,
                              seed=seed, threads=threads)
    result = minimize(mesh, spec, identity_map(mesh), options)
    family = [from_map(m, None, spec.degree_bound) for m in result.iterates[::stride]]
    energies = [integrate(measure, spec) for measure in family]
    bound_energy = math.sqrt(spec.degree_bound) * max(energies)
    reach = max(float(np.max(np.linalg.norm(m.x, axis=1))) for m in family)
    profile = tightness_profile(family, radii, np.zeros(2))

    table = Table(("radius", "tail", "coercivity_bound"))
    respected = True
    for radius, tail in profile:
        bound = tail_bound(bound_energy, spec.witness, radius)
        table.add(radius, tail, bound)
        if radius > reach and tail > bound + 1e-12:
            respected = False
    out.tables["tightness"] = table
    tails = [t for _, t in profile]
    out.results.update(family_size=len(family), max_energy=max(energies), x_reach=reach,
                       final_tail=tails[-1])
    out.assertions.update(nonincreasing=all(b <= a for a, b in zip(tails, tails[1:])),
                          coercivity_bound=respected)
    return out


# minimize

def minimize_experiment(integrand: str = "det-square", h: float = 0.1, iterations: int = 200,
                        tolerance: float = 1e-6, starts: int = 1, perturbation: float = 0.05,
                        project: bool = False, quadrature_order: int = 0, seed: int = 0,
                        threads: int = 1) -> ExperimentResult:
    """Minimize a named integrand on the disc mesh with identity boundary values."""
    out = ExperimentResult()
    spec = get_integrand(integrand, seed=seed)
    mesh = build_disc_mesh(h)
    start = identity_map(mesh)
    options = MinimizeOptions(tolerance=tolerance, max_iterations=iterations, starts=starts,
                              perturbation=perturbation, quadrature_order=quadrature_order or None,
                              seed=seed, threads=threads, project_to_sphere=project)
    result = minimize(mesh, spec, start, options)
    out.tables["convergence"] = Table(REPORT_COLUMNS, result.report_rows())
    energies = [r.energy for r in result.report]
    out.results.update(integrand=spec.name, energy=result.energy, iterations=result.iterations,
                       status=result.status, start=result.start, vertices=mesh.num_vertices,
                       cells=mesh.num_cells, area=mesh.total_volume)
    out.assertions["monotone"] = all(b <= a for a, b in zip(energies, energies[1:]))
    out.assertions["boundary_fixed"] = same_trace(result.map, start)
    if not project:
        degree = degree_integral(result.map)
        out.results["degree_integral"] = degree
        out.assertions["degree_law"] = abs(degree - mesh.total_volume) <= IDENTITY_TOLERANCE
    out.maps["minimizer"] = result.map
    return out


# gap

def _degree_law(h: float, samples: int, seed: int) -> Tuple[Table, Dict[str, Any]]:
    mesh = build_disc_mesh(h)
    area = mesh.total_volume
    rng = _rng(seed, "degree-law")
    table = Table(("sample", "degree_integral", "polygon_area"))
    worst = 0.0
    for j in range(samples):
        values = np.array(mesh.vertices, dtype=float)
        values[mesh.interior_nodes] += 0.1 * rng.normal(size=(mesh.interior_nodes.size, 2))
        degree = degree_integral(PwAffineMap(mesh, values))
        worst = max(worst, abs(degree - area))
        table.add(j, degree, area)
    finer = build_disc_mesh(h / 2).total_volume
    extrapolated = (4.0 * finer - area) / 3.0
    return table, {"degree_law_error": worst, "area_error": abs(area - math.pi) / math.pi,
                   "extrapolated_area_error": abs(extrapolated - math.pi) / math.pi}


def gap(eps: float = 1e-3, p: float = 1.5, h: float = 0.05, iterations: int = 300, levels: int = 3,
        degree_samples: int = 5, quadrature_order: int = 0, seed: int = 0,
        threads: int = 1) -> ExperimentResult:
    """Energy gap between t/|t| and piecewise-affine maps on the unit disc."""
    out = ExperimentResult()
    options = MinimizeOptions(max_iterations=iterations, quadrature_order=quadrature_order or None,
                              seed=seed, threads=threads)
    report = gap_experiment(eps, p, h, options, levels)
    closed_form = eps * (2.0 * math.pi / (2.0 - p) + math.pi)

    spec = get_integrand("example", eps=eps, p=p)
    lifted = from_map(report.minimize_result.map, options.quadrature_order)
    retracted = push_forward(lifted, radial_retraction())
    before, after = integrate(lifted, spec), integrate(retracted, spec)

    out.results.update(competitor_energy=report.competitor_energy,
                       minimizer_energy=report.minimizer_energy,
                       identity_energy=report.identity_energy,
                       lower_bound=report.lower_bound, polygon_area=report.polygon_area,
                       degree_integral=report.degree, gap_ratio=report.gap_ratio,
                       blowup_exponent=report.blowup_exponent,
                       retracted_energy=after * report.polygon_area)
    out.tables["blowup"] = Table(("h", "det_energy"), list(report.blowup))
    out.tables["convergence"] = Table(REPORT_COLUMNS, report.minimize_result.report_rows())
    degree_table, degree_results = _degree_law(h, degree_samples, seed)
    out.tables["degree_law"] = degree_table
    out.results.update(degree_results)
    out.maps["minimizer"] = report.minimize_result.map

    out.assertions.update(
        competitor_closed_form=abs(report.competitor_energy - closed_form) <= 1e-6,
        certified_lower_bound=report.certified,
        gap_ratio=report.gap_ratio > 100.0,
        blowup_exponent=-2.5 <= report.blowup_exponent <= -1.5,
        degree_law=degree_results["degree_law_error"] <= IDENTITY_TOLERANCE,
        retraction=after <= before * (1.0 + 1e-12) + 1e-15,
    )
    return out


# weak-minors

WINDOW_POWERS = ((1, 1), (2, 1), (3, 2))


def weak_minors(pairs: int = 5, frequencies: Sequence[int] = (2, 4, 8, 16, 32, 64), seed: int = 0,
                threads: int = 1) -> ExperimentResult:
    """Pairings of det du_i - det du_inf with window test functions along rank-one stripes."""
    out = ExperimentResult()
    table = Table(("pair", "frequency", "window", "pairing", "sup_distance"))
    jobs = []
    for j in range(pairs):
        rng = _rng(seed, f"weak-minors-{j}")
        A, B = random_rank_one_pair(rng)
        weight = float(rng.uniform(0.2, 0.8))
        _, nu = rank_one_decomposition(A, B)
        windows = [lattice_window(nu, 0.5 + rng.uniform(-0.1, 0.1, size=2), a, b, name=f"w{a}{b}")
                   for a, b in WINDOW_POWERS]
        jobs.append((A, B, weight, windows))

    results = _map_jobs(lambda job: weak_minor_convergence_experiment(*job[:3], frequencies, job[3]),
                        jobs, threads)
    decreasing, worst_final = True, 0.0
    for j, result in enumerate(results):
        for row in result.rows:
            for w, value in enumerate(row.pairings):
                table.add(j, row.frequency, w, value, row.sup_distance)
        decreasing = decreasing and result.decreasing_beyond(4)
        worst_final = max(worst_final, result.final_maximum())
    out.tables["pairings"] = table
    out.results.update(pairs=pairs, final_max_pairing=worst_final)
    out.assertions.update(decreasing_beyond_4=decreasing, final_small=worst_final < 1e-3)
    return out


def _schema(properties: Dict[str, Dict], required: Sequence[str] = ()) -> Dict:
    common = {
        "seed": {"type": "integer", "description": "64-bit seed for every random component",
                 "default": 0, "minimum": 0, "maximum": 2 ** 64 - 1},
        "threads": {"type": "integer", "description": "Worker threads", "default": 1,
                    "minimum": 1, "maximum": 256},
    }
    return {"type": "object", "properties": {**properties, **common}, "required": list(required)}


def _int_list(description: str, default: Sequence[int], minimum: int = 1) -> Dict:
    return {"type": "array", "items": {"type": "integer", "minimum": minimum},
            "description": description, "default": list(default)}


def create_experiment_registry() -> Dict[str, Experiment]:
    """
    Create and return the registry of experiments.

    Returns:
        Dictionary mapping subcommand names to Experiment instances
    """
    experiments = [
        Experiment(
            name="verify-algebra",
            description="Graph identity, complement sign law and Cauchy-Binet for minors",
            parameters=_schema({
                "trials": {"type": "integer", "description": "Random instances", "default": 1000,
                           "minimum": 1, "maximum": 1_000_000},
                "max_dim": {"type": "integer", "description": "Largest n and m", "default": 4,
                            "minimum": 1, "maximum": 6},
            }),
            function=verify_algebra,
        ),
        Experiment(
            name="verify-nulllag",
            description="Vanishing of null Lagrangians under refinement, and anchoring",
            parameters=_schema({
                "cases": {"type": "integer", "description": "Random (l, chi, U, u) cases",
                          "default": 50, "minimum": 0, "maximum": 10_000},
                "divisions": _int_list("Box mesh divisions per refinement", (8, 16, 32)),
                "quadrature_order": {"type": "integer", "description": "Quadrature order",
                                     "default": 4, "minimum": 1, "maximum": 12},
                "presets": {"type": "string", "description": "Preset YAML file", "default": ""},
            }),
            function=verify_nulllag,
        ),
        Experiment(
            name="structure",
            description="Structure residual of a laminate measure",
            parameters=_schema({
                "laminate_name": {"type": "string", "description": "Preset name or 'random'",
                                  "default": "rank1", "flag": "laminate"},
                "pairs": {"type": "integer", "description": "Random pairs for 'random'",
                          "default": 100, "minimum": 1, "maximum": 100_000},
                "divisions": {"type": "integer", "description": "Box mesh divisions", "default": 8,
                              "minimum": 1, "maximum": 256},
                "presets": {"type": "string", "description": "Preset YAML file", "default": ""},
            }),
            function=structure,
        ),
        Experiment(
            name="jensen",
            description="Jensen gaps of rank-one laminates",
            parameters=_schema({
                "integrand": {"type": "string", "description": "Integrand name",
                              "default": "example", "enum": list(INTEGRANDS), "flag": "L"},
                "trials": {"type": "integer", "description": "Random laminates", "default": 100,
                           "minimum": 1, "maximum": 100_000},
                "divisions": {"type": "integer", "description": "Box mesh divisions", "default": 4,
                              "minimum": 1, "maximum": 256},
            }),
            function=jensen,
        ),
        Experiment(
            name="kr",
            description="Kantorovich-Rubinstein distance between measure files, or metric checks",
            parameters=_schema({
                "a": {"type": "string", "description": "First measure file", "default": ""},
                "b": {"type": "string", "description": "Second measure file", "default": ""},
                "weighted": {"type": "boolean", "description": "Use r_k growth weights",
                             "default": True},
                "triples": {"type": "integer", "description": "Random triangle triples",
                            "default": 1000, "minimum": 1, "maximum": 1_000_000},
                "divisions": {"type": "integer", "description": "Stripe mesh divisions",
                              "default": 128, "minimum": 1, "maximum": 4096},
                "frequencies": _int_list("Stripe frequencies", (2, 4, 8, 16, 32, 64)),
            }),
            function=kr,
        ),
        Experiment(
            name="tightness",
            description="Tightness profile of minimization iterates and the coercivity bound",
            parameters=_schema({
                "h": {"type": "number", "description": "Disc mesh size", "default": 0.1,
                      "exclusiveMinimum": 0.0, "maximum": 1.0},
                "eps": {"type": "number", "description": "Integrand epsilon", "default": 1e-3,
                        "exclusiveMinimum": 0.0},
                "p": {"type": "number", "description": "Integrand exponent", "default": 1.5,
                      "exclusiveMinimum": 1.0, "exclusiveMaximum": 2.0},
                "iterations": {"type": "integer", "description": "Descent iterations",
                               "default": 60, "minimum": 1, "maximum": 100_000},
                "stride": {"type": "integer", "description": "Keep every stride-th iterate",
                           "default": 10, "minimum": 1},
                "radii": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0.0},
                          "description": "Radii R", "default": [1, 2, 4, 8, 16, 32, 64, 128, 256,
                                                                 512, 1024]},
            }),
            function=tightness,
        ),
        Experiment(
            name="minimize",
            description="Minimize a named integrand on the disc with identity boundary values",
            parameters=_schema({
                "integrand": {"type": "string", "description": "Integrand name",
                              "default": "det-square", "enum": list(INTEGRANDS), "flag": "L"},
                "h": {"type": "number", "description": "Disc mesh size", "default": 0.1,
                      "exclusiveMinimum": 0.0, "maximum": 1.0},
                "iterations": {"type": "integer", "description": "Maximum iterations",
                               "default": 200, "minimum": 0, "maximum": 1_000_000},
                "tolerance": {"type": "number", "description": "Gradient tolerance",
                              "default": 1e-6, "exclusiveMinimum": 0.0},
                "starts": {"type": "integer", "description": "Multi-start count", "default": 1,
                           "minimum": 1, "maximum": 1024},
                "perturbation": {"type": "number", "description": "Start perturbation size",
                                 "default": 0.05, "minimum": 0.0},
                "project": {"type": "boolean", "description": "Project values to the unit sphere",
                            "default": False},
                "quadrature_order": {"type": "integer", "description": "0 for the default order",
                                     "default": 0, "minimum": 0, "maximum": 12},
            }),
            function=minimize_experiment,
        ),
        Experiment(
            name="gap",
            description="Energy gap between t/|t| and piecewise-affine minimizers on the disc",
            parameters=_schema({
                "eps": {"type": "number", "description": "Integrand epsilon", "default": 1e-3,
                        "exclusiveMinimum": 0.0},
                "p": {"type": "number", "description": "Integrand exponent", "default": 1.5,
                      "exclusiveMinimum": 1.0, "exclusiveMaximum": 2.0},
                "h": {"type": "number", "description": "Disc mesh size", "default": 0.05,
                      "exclusiveMinimum": 0.0, "maximum": 1.0},
                "iterations": {"type": "integer", "description": "Maximum descent iterations",
                               "default": 300, "minimum": 0, "maximum": 1_000_000},
                "levels": {"type": "integer", "description": "Blow-up refinement levels",
                           "default": 3, "minimum": 2, "maximum": 6},
                "degree_samples": {"type": "integer", "description": "Random degree-law maps",
                                   "default": 5, "minimum": 1, "maximum": 1000},
                "quadrature_order": {"type": "integer", "description": "0 for the default order",
                                     "default": 0, "minimum": 0, "maximum": 12},
            }),
            function=gap,
        ),
        Experiment(
            name="weak-minors",
            description="Weak convergence of determinants along rank-one stripe sequences",
            parameters=_schema({
                "pairs": {"type": "integer", "description": "Random rank-one pairs", "default": 5,
                          "minimum": 1, "maximum": 1000},
                "frequencies": _int_list("Stripe frequencies", (2, 4, 8, 16, 32, 64)),
            }),
            function=weak_minors,
        ),
    ]
    return {experiment.name: experiment for experiment in experiments}
