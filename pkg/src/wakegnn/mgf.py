"""MGF1 binary container for mesh graphs and flow samples.

Layout, all little-endian:

    magic           4 bytes, b"MGF1"
    version         u32, currently 1
    n_vertices      u64
    n_edges         u64 (directed edge count)
    coordinates     n_vertices * 3 * f64
    boundary_tags   n_vertices * u8
    edges           n_edges * 2 * u64 (source, target)
    n_field_blocks  u32
    per block:      32-byte name (ASCII, zero padded) + n_vertices * f64
    trailer         3 * f64 (u_inf, ti_inf, yaw_deg), samples only

A bare graph file has n_field_blocks = 0 and no trailer. A sample file
carries the four field blocks "u", "v", "w", "tke" plus the trailer.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import (FormatError, MagicMismatchError, TruncationError,
                     VersionMismatchError)
from .meshgraph import (FieldSnapshot, GlobalConditions, Graph, Sample,
                        mesh_to_graph, validate_graph)

MAGIC = b"MGF1"
VERSION = 1
_NAME_BYTES = 32


def _read_exact(f, n: int, section: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncationError(section, n, len(buf))
    return buf


def _read_array(f, dtype, count: int, section: str) -> np.ndarray:
    raw = _read_exact(f, np.dtype(dtype).itemsize * count, section)
    return np.frombuffer(raw, dtype=dtype, count=count)


def _write_header(f, graph: Graph) -> None:
    f.write(MAGIC)
    f.write(struct.pack("<I", VERSION))
    f.write(struct.pack("<QQ", graph.n_vertices, graph.n_directed_edges))
    f.write(np.ascontiguousarray(graph.positions, dtype="<f8").tobytes())
    f.write(np.ascontiguousarray(graph.boundary_tags, dtype=np.uint8).tobytes())
    f.write(np.ascontiguousarray(graph.edges, dtype="<u8").tobytes())


def _write_blocks(f, n: int, blocks: list[tuple[str, np.ndarray]]) -> None:
    f.write(struct.pack("<I", len(blocks)))
    for name, values in blocks:
        encoded = name.encode("ascii")
        if len(encoded) > _NAME_BYTES:
            raise FormatError(f"field name '{name}' exceeds {_NAME_BYTES} bytes")
        f.write(encoded.ljust(_NAME_BYTES, b"\x00"))
        values = np.ascontiguousarray(values, dtype="<f8")
        if values.shape != (n,):
            raise FormatError(f"field '{name}' must have one value per vertex")
        f.write(values.tobytes())


def _read_header(f) -> Graph:
    magic = _read_exact(f, 4, "magic")
    if magic != MAGIC:
        raise MagicMismatchError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}")
    n, m = struct.unpack("<QQ", _read_exact(f, 16, "counts"))
    positions = _read_array(f, "<f8", n * 3, "coordinates").reshape(n, 3)
    tags = _read_array(f, np.uint8, n, "boundary_tags")
    edges = _read_array(f, "<u8", m * 2, "edges").reshape(m, 2)
    if m and edges.max() >= n:
        raise FormatError("edge endpoint out of range")
    undirected = edges[edges[:, 0] < edges[:, 1]].astype(np.int64)
    graph = mesh_to_graph(positions, undirected, tags)
    if graph.n_directed_edges != m:
        raise FormatError("edge list is not a canonical symmetric set")
    return graph


def _read_blocks(f, n: int) -> dict[str, np.ndarray]:
    (n_blocks,) = struct.unpack("<I", _read_exact(f, 4, "n_field_blocks"))
    blocks: dict[str, np.ndarray] = {}
    for i in range(n_blocks):
        raw = _read_exact(f, _NAME_BYTES, f"field_name[{i}]")
        name = raw.rstrip(b"\x00").decode("ascii")
        if not name:
            raise FormatError(f"field block {i} has an empty name")
        if name in blocks:
            raise FormatError(f"duplicate field block '{name}'")
        blocks[name] = _read_array(f, "<f8", n, f"field[{name}]").copy()
    return blocks


def write_graph(path: str | Path, graph: Graph) -> None:
    """Serialize a bare graph (no fields, no trailer)."""
    validate_graph(graph)
    with open(path, "wb") as f:
        _write_header(f, graph)
        _write_blocks(f, graph.n_vertices, [])


def read_graph(path: str | Path) -> Graph:
    with open(path, "rb") as f:
        graph = _read_header(f)
        blocks = _read_blocks(f, graph.n_vertices)
        if blocks:
            raise FormatError("graph file unexpectedly carries field blocks")
        trailing = f.read(1)
        if trailing:
            raise FormatError("trailing bytes after graph payload")
    return graph


def write_sample(path: str | Path, sample: Sample) -> None:
    """Serialize a full flow sample (graph + fields + conditions trailer)."""
    validate_graph(sample.graph)
    fs = sample.fields
    with open(path, "wb") as f:
        _write_header(f, sample.graph)
        _write_blocks(f, sample.graph.n_vertices,
                      [("u", fs.u), ("v", fs.v), ("w", fs.w), ("tke", fs.tke)])
        f.write(np.asarray(sample.conditions.as_array(), dtype="<f8").tobytes())


def read_sample(path: str | Path) -> Sample:
    with open(path, "rb") as f:
        graph = _read_header(f)
        blocks = _read_blocks(f, graph.n_vertices)
        missing = {"u", "v", "w", "tke"} - blocks.keys()
        if missing:
            raise FormatError(f"sample file missing field(s): {sorted(missing)}")
        trailer = _read_array(f, "<f8", 3, "conditions")
        trailing = f.read(1)
        if trailing:
            raise FormatError("trailing bytes after sample payload")
    cond = GlobalConditions(u_inf=float(trailer[0]), ti_inf=float(trailer[1]),
                            yaw_deg=float(trailer[2]))
    fields = FieldSnapshot(u=blocks["u"], v=blocks["v"], w=blocks["w"],
                           tke=blocks["tke"])
    return Sample(graph=graph, conditions=cond, fields=fields)


def graph_to_bytes(graph: Graph) -> bytes:
    buf = io.BytesIO()
    _write_header(buf, graph)
    _write_blocks(buf, graph.n_vertices, [])
    return buf.getvalue()
