import io
import json
import math
import os

import numpy as np
import pytest
from rich.console import Console

from experiments import Experiment, ExperimentResult, Table
from meshmaps import build_box_mesh, identity_map
from run_config import RunConfig
from runner import (EXIT_ASSERTION, EXIT_INVALID, EXIT_OK, Runner, format_cell, render_csv,
                    to_jsonable)

SCHEMA = {"type": "object", "properties": {"seed": {"type": "integer", "default": 0},
                                           "threads": {"type": "integer", "default": 1}}}


def passing(seed: int = 0, threads: int = 1) -> ExperimentResult:
    out = ExperimentResult(results={"value": 0.1, "nothing": math.inf},
                           assertions={"ok": True}, headline="0.10000000000000001")
    out.tables["rows"] = Table(("i", "x"), [(0, 0.5), (1, 1.0 / 3.0)])
    out.maps["identity"] = identity_map(build_box_mesh(2, 1))
    return out


def failing(seed: int = 0, threads: int = 1) -> ExperimentResult:
    return ExperimentResult(assertions={"ok": True, "bad": False})


def invalid(seed: int = 0, threads: int = 1) -> ExperimentResult:
    raise ValueError("bad parameter")


@pytest.fixture
def runner():
    registry = {name: Experiment(name, "", SCHEMA, function)
                for name, function in (("passing", passing), ("failing", failing), ("invalid", invalid))}
    return Runner(console=Console(file=io.StringIO()), registry=registry)


def run_config(name, tmp_path):
    return RunConfig(name, {"seed": 0, "threads": 1}, str(tmp_path / name))


# ============================================================================
# Formatting
# ============================================================================

def test_format_cell():
    """CSV cells use 17 significant digits and lowercase booleans."""
    assert format_cell(True) == "true"
    assert format_cell(np.int64(3)) == "3"
    assert format_cell(0.1) == "0.10000000000000001"
    assert format_cell("rank1") == "rank1"


def test_to_jsonable():
    """numpy scalars, inf and nan become JSON-safe values."""
    value = {"a": np.float64(math.inf), "b": [np.int32(1), np.nan], "c": (True, None)}
    assert to_jsonable(value) == {"a": "inf", "b": [1, "nan"], "c": [True, None]}


def test_render_csv():
    """Header row then one line per table row."""
    table = Table(("frequency", "value"), [(2, 0.5), (4, 0.25)])
    assert render_csv(table) == "frequency,value\n2,0.5\n4,0.25\n"


# ============================================================================
# Runs
# ============================================================================

async def test_run_writes_artifacts(runner, tmp_path):
    """A passing run writes summary.json, the CSV tables and the map files."""
    config = run_config("passing", tmp_path)
    assert await runner.run(config) == EXIT_OK
    out = tmp_path / "passing"
    assert sorted(os.listdir(out)) == ["identity.map", "rows.csv", "summary.json"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["experiment"] == "passing"
    assert summary["assertions_passed"] is True
    assert summary["results"]["nothing"] == "inf"
    assert summary["artifacts"] == ["identity.map", "rows.csv"]
    assert (out / "rows.csv").read_text().splitlines()[2] == "1,0.33333333333333331"


async def test_failed_assertion_exit_code(runner, tmp_path):
    """A failed assertion gives exit code 3 and is recorded in the summary."""
    assert await runner.run(run_config("failing", tmp_path)) == EXIT_ASSERTION
    summary = json.loads((tmp_path / "failing" / "summary.json").read_text())
    assert summary["assertions"] == {"ok": True, "bad": False}


async def test_invalid_run_exit_code(runner, tmp_path):
    """A ValueError from the experiment gives exit code 2 and is printed."""
    assert await runner.run(run_config("invalid", tmp_path)) == EXIT_INVALID
    assert "bad parameter" in runner.console.file.getvalue()


async def test_unknown_experiment_exit_code(runner, tmp_path):
    """Unregistered experiments give exit code 2."""
    assert await runner.run(run_config("missing", tmp_path)) == EXIT_INVALID


async def test_unwritable_output_dir(runner, tmp_path):
    """An output path under a regular file gives exit code 2."""
    blocker = tmp_path / "file"
    blocker.write_text("")
    config = RunConfig("passing", {"seed": 0, "threads": 1}, str(blocker / "out"))
    assert await runner.run(config) == EXIT_INVALID
