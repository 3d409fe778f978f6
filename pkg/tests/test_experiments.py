"""
Small-scale runs of every experiment.

Sizes are cut down so the suite stays fast; the assertions checked here are
the ones that hold at any resolution.
"""

import math

import numpy as np
import pytest

from experiments import (Experiment, ExperimentResult, Table, create_experiment_registry, gap,
                         jensen, kr, kr_checks, minimize_experiment, structure, tightness,
                         verify_algebra, verify_nulllag, weak_minors)
from meshmaps import build_box_mesh, identity_map
from serialization import write_measure
from youngmeasure import laminate


# ============================================================================
# Registry and plumbing
# ============================================================================

def test_registry_names():
    """Every experiment is registered with the common seed and threads parameters."""
    registry = create_experiment_registry()
    assert list(registry) == ["verify-algebra", "verify-nulllag", "structure", "jensen", "kr",
                              "tightness", "minimize", "gap", "weak-minors"]
    for experiment in registry.values():
        properties = experiment.parameters["properties"]
        assert "seed" in properties and "threads" in properties
        assert experiment.defaults()["seed"] == 0


def test_table_row_width_checked():
    """Rows must match the column count."""
    table = Table(("a", "b"))
    table.add(1, 2)
    with pytest.raises(ValueError, match="2 columns"):
        table.add(1)


def test_result_passed_requires_every_assertion():
    """A result passes only when every assertion holds."""
    assert ExperimentResult().passed
    assert not ExperimentResult(assertions={"a": True, "b": False}).passed


async def test_execute_runs_sync_and_async_functions():
    """execute awaits coroutines and runs plain functions in a thread."""
    def sync_function(value: int = 1):
        return ExperimentResult(results={"value": value})

    async def async_function(value: int = 1):
        return ExperimentResult(results={"value": value * 2})

    parameters = {"type": "object", "properties": {"value": {"type": "integer", "default": 1}}}
    first = await Experiment("sync", "", parameters, sync_function).execute({"value": 3})
    second = await Experiment("async", "", parameters, async_function).execute({"value": 3})
    assert first.results["value"] == 3
    assert second.results["value"] == 6


async def test_execute_propagates_errors():
    """Experiment errors propagate to the caller."""
    def broken():
        raise ValueError("broken input")

    experiment = Experiment("broken", "", {"type": "object", "properties": {}}, broken)
    with pytest.raises(ValueError, match="broken input"):
        await experiment.execute({})


# ============================================================================
# Experiments
# ============================================================================

def test_verify_algebra_small():
    """Small verify-algebra run passes every identity check."""
    out = verify_algebra(trials=40, max_dim=3)
    assert out.passed
    assert len(out.tables["identity_residuals"].rows) == 4
    assert out.results["sign_law_violations"] == 0


def test_verify_nulllag_small(tmp_path):
    """Small verify-nulllag run reports per-case residuals and both anchoring checks."""
    out = verify_nulllag(cases=2, divisions=(8, 16), presets=str(tmp_path / "none.yaml"))
    assert out.results["cases"] == 2
    assert out.tables["vanishing"].columns == ("case", "degree", "residual_8", "residual_16", "order")
    assert out.assertions["anchoring_trace"]
    assert out.assertions["anchoring_violation"]


def test_verify_nulllag_threads_match_serial(tmp_path):
    """Threaded null-Lagrangian cases give the serial table."""
    presets = str(tmp_path / "none.yaml")
    serial = verify_nulllag(cases=3, divisions=(4, 8), presets=presets)
    threaded = verify_nulllag(cases=3, divisions=(4, 8), presets=presets, threads=3)
    assert serial.tables["vanishing"].rows == threaded.tables["vanishing"].rows


@pytest.mark.parametrize("function, arguments", [
    (verify_algebra, {"trials": 30, "max_dim": 3}),
    (structure, {"laminate_name": "random", "pairs": 4, "divisions": 2}),
    (jensen, {"integrand": "det-square", "trials": 4, "divisions": 2}),
    (kr_checks, {"triples": 6, "divisions": 4, "frequencies": (2, 4)}),
    (weak_minors, {"pairs": 2, "frequencies": (4, 8)}),
])
def test_threads_match_serial(function, arguments):
    """Worker threads change neither tables nor assertions."""
    serial = function(**arguments)
    threaded = function(**arguments, threads=3)
    assert list(serial.tables) == list(threaded.tables)
    for name, table in serial.tables.items():
        assert table.rows == threaded.tables[name].rows, name
    assert serial.assertions == threaded.assertions


def test_structure_preset_pm_identity():
    """The +-Id laminate has structure residual 1 and is not rank one."""
    out = structure(laminate_name="pmId", divisions=4)
    assert out.passed
    assert out.results["structure_residual"] == pytest.approx(1.0)
    assert out.results["rank_one"] is False
    assert "laminate-pmId" in out.measures


def test_structure_random_pairs():
    """Random rank-one laminates pass the structure check."""
    out = structure(laminate_name="random", pairs=5, divisions=4)
    assert out.passed
    assert len(out.tables["structure"].rows) == 5


def test_structure_unknown_preset():
    """Unknown laminate presets get a suggestion."""
    with pytest.raises(ValueError, match="Did you mean 'rank1'"):
        structure(laminate_name="rank", divisions=2)


def test_jensen_example_integrand():
    """The example integrand has no negative Jensen gap and no convexity violation."""
    out = jensen(integrand="example", trials=5, divisions=2)
    assert out.passed
    assert out.results["counterexample_gap"] == pytest.approx(-1.0)
    assert out.results["kconvexity_violations"] == 0


def test_kr_checks_small():
    """Transport metric checks pass and the Id vs 2 Id distance is 4 + sqrt 2."""
    out = kr_checks(triples=20, divisions=8, frequencies=(2, 4))
    for key in ("triangle", "two_atom", "identity_double"):
        assert out.assertions[key]
    assert out.results["identity_double_distance"] == pytest.approx(4.0 + math.sqrt(2.0))
    assert len(out.tables["stripe_convergence"].rows) == 2


async def test_kr_between_files(tmp_path):
    """Distance between measure files, with a headline."""
    base = identity_map(build_box_mesh(2, 2))
    path = str(tmp_path / "a.measure")
    await write_measure(path, laminate(np.eye(2), np.diag([0.0, 1.0]), 0.5, base))
    out = await kr(a=path, b=path)
    assert out.results["distance"] == pytest.approx(0.0, abs=1e-12)
    assert out.headline is not None


async def test_kr_needs_both_files(tmp_path):
    """A single measure file is rejected."""
    with pytest.raises(ValueError, match="both"):
        await kr(a=str(tmp_path / "a.measure"))


def test_tightness_small():
    """The tail profile is non-increasing over a short run."""
    out = tightness(h=0.5, iterations=5, stride=1, radii=(0.5, 1.0, 4.0, 64.0))
    assert out.assertions["nonincreasing"]
    assert out.results["family_size"] >= 1
    assert len(out.tables["tightness"].rows) == 4


def test_minimize_experiment_small():
    """A short minimization is monotone and keeps boundary and degree."""
    out = minimize_experiment(h=0.5, iterations=5)
    assert out.assertions["monotone"]
    assert out.assertions["boundary_fixed"]
    assert out.assertions["degree_law"]
    assert "minimizer" in out.maps


def test_gap_small():
    """Closed-form competitor, certified lower bound, gap ratio and degree law on a coarse disc."""
    out = gap(h=0.25, iterations=20, levels=2, degree_samples=2)
    for key in ("competitor_closed_form", "certified_lower_bound", "gap_ratio", "degree_law"):
        assert out.assertions[key], key
    assert len(out.tables["blowup"].rows) == 2


def test_weak_minors_small():
    """One stripe pair yields a pairing row per frequency and window."""
    out = weak_minors(pairs=1, frequencies=(4, 8))
    assert len(out.tables["pairings"].rows) == 2 * 3
    assert math.isfinite(out.results["final_max_pairing"])
