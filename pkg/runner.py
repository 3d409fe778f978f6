"""
Runs one experiment from a RunConfig and writes its artifacts.

Artifacts go to the output directory: summary.json, one CSV per result
table, and text files for any maps or measures the experiment returns.
"""

import asyncio
import csv
import io
import json
import logging
import math
import os
import time
from typing import Any, Dict, List, Optional

import numpy as np
from rich.console import Console
from rich.table import Table as RichTable

from experiments import Experiment, ExperimentResult, Table, create_experiment_registry
from run_config import RunConfig, unknown_experiment
from serialization import write_map, write_measure, write_text

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ASSERTION = 3


def format_cell(value: Any) -> str:
    """CSV text for one value; floats keep 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf' and 'nan'."""
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [to_jsonable(v) for v in value]
    return value if value is None or isinstance(value, str) else str(value)


def render_csv(table: Table) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([format_cell(v) for v in row])
    return buffer.getvalue()


def render_summary(config: RunConfig, result: ExperimentResult, wall_time: float,
                   artifacts: List[str]) -> str:
    summary = {
        "schema_version": SCHEMA_VERSION,
        "experiment": config.experiment,
        "parameters": config.parameters,
        "results": result.results,
        "assertions": result.assertions,
        "assertions_passed": result.passed,
        "wall_time_seconds": wall_time,
        "artifacts": sorted(artifacts),
    }
    return json.dumps(to_jsonable(summary), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _prepare_output_dir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ValueError(f"Cannot create output directory {path}: {e}")
    if not os.access(path, os.W_OK):
        raise ValueError(f"Output directory is not writable: {path}")


class Runner:
    def __init__(self, console: Optional[Console] = None,
                 registry: Optional[Dict[str, Experiment]] = None):
        self.console = console or Console()
        self.registry = registry or create_experiment_registry()
        self.logger = logging.getLogger(__name__)

    def print_status(self, message: str, add_newline: bool = False):
        """Print a status message, every line prefixed with '│'."""
        for line in message.strip("\n").splitlines():
            if line.startswith("ℹ"):
                label, _, rest = line.partition(":")
                self.console.print(f"[dim]│[/dim] [yellow]{label}:[/yellow]{rest}")
            else:
                self.console.print(f"[dim]│[/dim] {line}")
        if add_newline:
            self.console.print()

    def print_results(self, config: RunConfig, result: ExperimentResult) -> None:
        table = RichTable(title=config.experiment, show_header=True, header_style="bold")
        table.add_column("result", style="cyan")
        table.add_column("value")
        for key in sorted(result.results):
            table.add_row(key, format_cell(result.results[key]))
        for key in sorted(result.assertions):
            ok = result.assertions[key]
            table.add_row(f"assert {key}", "[green]pass[/green]" if ok else "[bold red]FAIL[/bold red]")
        self.console.print(table)

    async def write_artifacts(self, config: RunConfig, result: ExperimentResult,
                              wall_time: float) -> List[str]:
        out = config.output_dir
        written = []
        for name, table in result.tables.items():
            path = os.path.join(out, f"{name}.csv")
            await write_text(path, render_csv(table))
            written.append(path)
        for name, mapping in result.maps.items():
            path = os.path.join(out, f"{name}.map")
            await write_map(path, mapping)
            written.append(path)
        for name, measure in result.measures.items():
            path = os.path.join(out, f"{name}.measure")
            await write_measure(path, measure)
            written.append(path)
        summary_path = os.path.join(out, "summary.json")
        names = [os.path.basename(p) for p in written]
        await write_text(summary_path, render_summary(config, result, wall_time, names))
        written.append(summary_path)
        return written

    async def run(self, config: RunConfig) -> int:
        """
        Run the configured experiment and write its artifacts.

        Returns:
            0 on success, 2 for invalid input, 3 when a numerical assertion fails
        """
        try:
            experiment = self.registry.get(config.experiment)
            if experiment is None:
                raise unknown_experiment(config.experiment, list(self.registry))
            await asyncio.to_thread(_prepare_output_dir, config.output_dir)
            self.print_status(f"ℹ Running: {config.experiment} (seed {config.seed}, "
                              f"{config.threads} thread{'s' if config.threads != 1 else ''})")
            started = time.perf_counter()
            result = await experiment.execute(dict(config.parameters))
            wall_time = time.perf_counter() - started
        except (ValueError, FileNotFoundError) as e:
            self.logger.error(f"Invalid run of {config.experiment}: {e}", exc_info=True)
            self.console.print(f"[bold red]✖ Error:[/bold red] {e}")
            return EXIT_INVALID

        written = await self.write_artifacts(config, result, wall_time)
        self.logger.info(f"{config.experiment} finished in {wall_time:.3f}s, "
                         f"assertions passed: {result.passed}")
        if result.headline is not None:
            self.console.print(result.headline)
        self.print_results(config, result)
        self.print_status(f"Wrote {len(written)} files to {config.output_dir} in {wall_time:.2f}s")
        if not result.passed:
            failed = [k for k, ok in result.assertions.items() if not ok]
            self.print_status(f"ℹ Failed assertions: {', '.join(failed)}")
            return EXIT_ASSERTION
        return EXIT_OK
