"""
Line-oriented text formats for piecewise-affine maps and atomic Young measures.

Map file:
    n m #vertices #cells
    one vertex per line (n numbers)
    one simplex per line (n+1 vertex indices)
    one line with the boundary node indices (may be empty)
    one nodal value per line (m numbers)

Measure file:
    k n m #atoms
    one atom per line: cell, t (n), x (m), v flattened row-major (m*n), weight

Floats are printed with 17 significant digits, so reading back what was
written reproduces every value bit for bit.
"""

import asyncio
import logging
import os
from typing import Iterable, List

import numpy as np

from meshmaps import PwAffineMap, SimplicialMesh
from youngmeasure import AtomicYoungMeasure

logger = logging.getLogger(__name__)

MAX_FILE_SIZE = 200_000_000


def _fmt(values: Iterable[float]) -> str:
    return " ".join("%.17g" % float(v) for v in values)


def _ints(values: Iterable[int]) -> str:
    return " ".join(str(int(v)) for v in values)


def dump_map(mapping: PwAffineMap) -> str:
    """Render a piecewise-affine map (with its mesh) in the map text format."""
    mesh = mapping.mesh
    lines = [f"{mesh.dim} {mapping.target_dim} {mesh.num_vertices} {mesh.num_cells}"]
    lines.extend(_fmt(row) for row in mesh.vertices)
    lines.extend(_ints(row) for row in mesh.simplices)
    lines.append(_ints(mesh.boundary_nodes))
    lines.extend(_fmt(row) for row in mapping.nodal_values)
    return "\n".join(lines) + "\n"


def _header(line: str, count: int, what: str) -> List[int]:
    try:
        fields = [int(tok) for tok in line.split()]
    except ValueError:
        raise ValueError(f"Malformed {what} header: {line!r}")
    if len(fields) != count or min(fields) < 0:
        raise ValueError(f"{what.capitalize()} header needs {count} non-negative integers, got {line!r}")
    return fields


def _rows(lines: List[str], start: int, count: int, width: int, dtype, what: str) -> np.ndarray:
    if start + count > len(lines):
        raise ValueError(f"Truncated file: expected {count} {what} lines")
    out = np.empty((count, width), dtype=dtype)
    for i in range(count):
        tokens = lines[start + i].split()
        if len(tokens) != width:
            raise ValueError(f"{what.capitalize()} line {i} has {len(tokens)} entries, expected {width}")
        try:
            out[i] = [dtype(tok) for tok in tokens]
        except ValueError:
            raise ValueError(f"{what.capitalize()} line {i} is not numeric: {lines[start + i]!r}")
    return out


def parse_map(text: str) -> PwAffineMap:
    """
    Parse the map text format.

    Raises:
        ValueError: If the text is malformed or describes an invalid mesh.
    """
    lines = text.splitlines()
    if not lines:
        raise ValueError("Empty map file")
    n, m, num_vertices, num_cells = _header(lines[0], 4, "map")
    if n not in (2, 3) or m < 1:
        raise ValueError(f"Map header has n={n}, m={m}; need n in (2, 3) and m >= 1")
    cursor = 1
    vertices = _rows(lines, cursor, num_vertices, n, float, "vertex")
    cursor += num_vertices
    simplices = _rows(lines, cursor, num_cells, n + 1, int, "simplex")
    cursor += num_cells
    if cursor >= len(lines):
        raise ValueError("Truncated file: missing boundary node line")
    try:
        boundary = np.array([int(tok) for tok in lines[cursor].split()], dtype=np.intp)
    except ValueError:
        raise ValueError(f"Boundary node line is not integer: {lines[cursor]!r}")
    cursor += 1
    values = _rows(lines, cursor, num_vertices, m, float, "nodal value")
    cursor += num_vertices
    if any(line.strip() for line in lines[cursor:]):
        raise ValueError("Trailing content after nodal values")
    mesh = SimplicialMesh(vertices, simplices, boundary_nodes=boundary)
    return PwAffineMap(mesh, values)


def dump_measure(measure: AtomicYoungMeasure) -> str:
    """Render an atomic Young measure in the measure text format."""
    n, m = measure.source_dim, measure.target_dim
    lines = [f"{measure.degree_bound} {n} {m} {measure.size}"]
    for cell, t, x, v, w in zip(measure.cells, measure.t, measure.x, measure.v, measure.weights):
        lines.append(f"{int(cell)} {_fmt(t)} {_fmt(x)} {_fmt(v.reshape(-1))} {_fmt([w])}")
    return "\n".join(lines) + "\n"


def parse_measure(text: str) -> AtomicYoungMeasure:
    """
    Parse the measure text format.

    Raises:
        ValueError: If the text is malformed or the atoms are invalid.
    """
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ValueError("Empty measure file")
    k, n, m, count = _header(lines[0], 4, "measure")
    width = 1 + n + m + m * n + 1
    table = _rows(lines, 1, count, width, float, "atom")
    if len(lines) > count + 1:
        raise ValueError("Trailing content after atoms")
    cells = table[:, 0]
    if np.any(cells != np.round(cells)):
        raise ValueError("Atom cell indices must be integers")
    t = table[:, 1:1 + n]
    x = table[:, 1 + n:1 + n + m]
    v = table[:, 1 + n + m:1 + n + m + m * n].reshape(count, m, n)
    return AtomicYoungMeasure(cells.astype(np.intp), t, x, v, table[:, -1], k)


def _read_text_sync(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except UnicodeDecodeError:
        raise ValueError(f"Binary file not supported: {path}")


def _write_text_sync(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


async def _read_checked(path: str) -> str:
    abs_path = os.path.abspath(path)
    exists = await asyncio.to_thread(os.path.exists, abs_path)
    if not exists:
        raise FileNotFoundError(f"File not found: {path}")
    is_file = await asyncio.to_thread(os.path.isfile, abs_path)
    if not is_file:
        raise ValueError(f"Not a file: {path}")
    size = await asyncio.to_thread(os.path.getsize, abs_path)
    if size > MAX_FILE_SIZE:
        raise ValueError(f"File too large: {path} ({size} bytes > {MAX_FILE_SIZE} bytes)")
    return await asyncio.to_thread(_read_text_sync, abs_path)


async def read_map(path: str) -> PwAffineMap:
    """
    Read a map file without blocking the event loop.

    Raises:
        FileNotFoundError: If the file doesn't exist.
        ValueError: If the file is not a valid map file.
    """
    text = await _read_checked(path)
    mapping = parse_map(text)
    logger.debug(f"Read map from {path}: {mapping.mesh.num_cells} cells")
    return mapping


async def write_map(path: str, mapping: PwAffineMap) -> None:
    await asyncio.to_thread(_write_text_sync, path, dump_map(mapping))
    logger.debug(f"Wrote map to {path}")


async def read_measure(path: str) -> AtomicYoungMeasure:
    """
    Read a measure file without blocking the event loop.

    Raises:
        FileNotFoundError: If the file doesn't exist.
        ValueError: If the file is not a valid measure file.
    """
    text = await _read_checked(path)
    measure = parse_measure(text)
    logger.debug(f"Read measure from {path}: {measure.size} atoms")
    return measure


async def write_measure(path: str, measure: AtomicYoungMeasure) -> None:
    await asyncio.to_thread(_write_text_sync, path, dump_measure(measure))
    logger.debug(f"Wrote measure to {path}")


async def write_text(path: str, text: str) -> None:
    """Write UTF-8 text with Unix newlines without blocking the event loop."""
    await asyncio.to_thread(_write_text_sync, path, text)
