import numpy as np
import pytest

from meshmaps import build_box_mesh, build_disc_mesh, identity_map, interpolate
from serialization import (dump_map, dump_measure, parse_map, parse_measure, read_map,
                           read_measure, write_map, write_measure, write_text)
from youngmeasure import laminate


# ============================================================================
# Map files
# ============================================================================

def test_map_text_round_trip_is_exact():
    """Dumping and parsing a map keeps every bit."""
    mesh = build_disc_mesh(0.4)
    mapping = interpolate(lambda t: np.stack([np.sin(t[:, 0]), t[:, 1] / 3.0], axis=1), mesh)
    parsed = parse_map(dump_map(mapping))
    assert np.array_equal(parsed.mesh.vertices, mesh.vertices)
    assert np.array_equal(parsed.mesh.simplices, mesh.simplices)
    assert np.array_equal(parsed.nodal_values, mapping.nodal_values)
    assert sorted(parsed.mesh.boundary_nodes.tolist()) == sorted(mesh.boundary_nodes.tolist())


def test_map_header_line():
    """The header line is n, m, vertex count and cell count."""
    mapping = identity_map(build_box_mesh(2, 1))
    first = dump_map(mapping).splitlines()[0]
    assert first == "2 2 4 2"


@pytest.mark.parametrize("text,message", [
    ("", "Empty"),
    ("2 2 x 1\n", "Malformed"),
    ("4 2 1 1\n", "n in"),
    ("2 2 3 1\n0 0\n1 0\n", "Truncated"),
    ("2 1 3 1\n0 0\n1 0\n0 1 2\n0 1 2\n", "Vertex line 2"),
])
def test_parse_map_rejects_malformed(text, message):
    """Malformed map files name the offending part."""
    with pytest.raises(ValueError, match=message):
        parse_map(text)


def test_parse_map_rejects_trailing_content():
    """Extra lines after the cells are rejected."""
    text = dump_map(identity_map(build_box_mesh(2, 1))) + "1 2\n"
    with pytest.raises(ValueError, match="Trailing"):
        parse_map(text)


# ============================================================================
# Measure files
# ============================================================================

def test_measure_text_round_trip_is_exact():
    """Dumping and parsing a measure keeps weights and jets exactly."""
    base = identity_map(build_box_mesh(2, 2))
    measure = laminate(np.eye(2), np.diag([1.0 / 3.0, 1.0]), 0.3, base)
    parsed = parse_measure(dump_measure(measure))
    assert parsed.size == measure.size
    assert parsed.degree_bound == measure.degree_bound
    assert np.array_equal(parsed.weights, measure.weights)
    assert np.array_equal(parsed.v, measure.v)


def test_parse_measure_errors():
    """Empty, truncated and non-integer measure files are rejected."""
    with pytest.raises(ValueError, match="Empty"):
        parse_measure("\n")
    with pytest.raises(ValueError, match="Truncated"):
        parse_measure("2 2 2 1\n")
    with pytest.raises(ValueError, match="integers"):
        parse_measure("2 2 2 1\n0.5 0.5 0.5 0 0 1 0 0 1 1\n")


# ============================================================================
# Async file access
# ============================================================================

async def test_write_and_read_map(tmp_path):
    """Async write then read returns the same nodal values."""
    mapping = identity_map(build_box_mesh(2, 3))
    path = str(tmp_path / "identity.map")
    await write_map(path, mapping)
    loaded = await read_map(path)
    assert np.array_equal(loaded.nodal_values, mapping.nodal_values)


async def test_write_and_read_measure(tmp_path):
    """Async write then read returns the same atoms."""
    measure = laminate(np.eye(2), np.diag([0.0, 1.0]), 0.5, identity_map(build_box_mesh(2, 2)))
    path = str(tmp_path / "laminate.measure")
    await write_measure(path, measure)
    loaded = await read_measure(path)
    assert np.array_equal(loaded.x, measure.x)


async def test_read_missing_file(tmp_path):
    """Missing files raise FileNotFoundError."""
    with pytest.raises(FileNotFoundError):
        await read_measure(str(tmp_path / "missing.measure"))


async def test_read_directory_rejected(tmp_path):
    """Directories are not read as files."""
    with pytest.raises(ValueError, match="Not a file"):
        await read_map(str(tmp_path))


async def test_write_text_uses_unix_newlines(tmp_path):
    """Text is written with bare newlines."""
    path = tmp_path / "out.txt"
    await write_text(str(path), "a\nb\n")
    assert path.read_bytes() == b"a\nb\n"
