"""Legacy-ASCII VTK unstructured-grid export of graph fields.

Edges become VTK_LINE cells so the mesh wireframe renders; purely point-
based exports (slices) use VTK_VERTEX cells instead.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .meshgraph import FieldSnapshot, Graph

_VTK_LINE = 3
_VTK_VERTEX = 1


def _format_rows(arr: np.ndarray) -> str:
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in arr)


def write_vtk(path: str | Path, positions: np.ndarray,
              edges: np.ndarray | None = None,
              point_scalars: dict[str, np.ndarray] | None = None,
              point_vectors: dict[str, np.ndarray] | None = None,
              title: str = "wakegnn field") -> Path:
    """Write points plus optional line cells and per-point data."""
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise DataError("positions must have shape (n, 3)")
    n = len(positions)
    if "\n" in title:
        raise ConfigError("vtk title must be a single line")
    lines = ["# vtk DataFile Version 3.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double",
             _format_rows(positions)]
    if edges is not None and len(edges):
        edges = np.asarray(edges)
        if np.any(edges < 0) or np.any(edges >= n):
            raise DataError("edge endpoint out of range")
        m = len(edges)
        lines.append(f"CELLS {m} {3 * m}")
        lines.append("\n".join(f"2 {a} {b}" for a, b in edges))
        lines.append(f"CELL_TYPES {m}")
        lines.append("\n".join([str(_VTK_LINE)] * m))
    else:
        lines.append(f"CELLS {n} {2 * n}")
        lines.append("\n".join(f"1 {i}" for i in range(n)))
        lines.append(f"CELL_TYPES {n}")
        lines.append("\n".join([str(_VTK_VERTEX)] * n))
    blocks = []
    for name, vals in (point_scalars or {}).items():
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (n,):
            raise DataError(f"scalar '{name}' must have shape ({n},)")
        blocks.append(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n"
                      + "\n".join(repr(float(v)) for v in vals))
    for name, vals in (point_vectors or {}).items():
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (n, 3):
            raise DataError(f"vector '{name}' must have shape ({n}, 3)")
        blocks.append(f"VECTORS {name} double\n" + _format_rows(vals))
    if blocks:
        lines.append(f"POINT_DATA {n}")
        lines.extend(blocks)
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    return out


def _undirected_edges(g: Graph) -> np.ndarray:
    e = g.edges
    return e[e[:, 0] < e[:, 1]]


def write_field_vtk(path: str | Path, g: Graph, fields: FieldSnapshot,
                    title: str = "flow field") -> Path:
    """Velocity vector, speed, and TKE over the full graph."""
    vel = np.column_stack([fields.u, fields.v, fields.w])
    return write_vtk(path, g.positions, edges=_undirected_edges(g),
                     point_scalars={"speed": fields.speed(),
                                    "tke": fields.tke},
                     point_vectors={"velocity": vel}, title=title)


def write_error_vtk(path: str | Path, g: Graph, pred: FieldSnapshot,
                    truth: FieldSnapshot,
                    title: str = "prediction error") -> Path:
    """Prediction, truth, and signed difference maps in one file."""
    if pred.n_vertices != g.n_vertices or truth.n_vertices != g.n_vertices:
        raise DataError("field length does not match vertex count")
    scalars = {
        "speed_pred": pred.speed(),
        "speed_true": truth.speed(),
        "speed_diff": pred.speed() - truth.speed(),
        "tke_pred": pred.tke,
        "tke_true": truth.tke,
        "tke_diff": pred.tke - truth.tke,
    }
    return write_vtk(path, g.positions, edges=_undirected_edges(g),
                     point_scalars=scalars, title=title)


_AXES = {"x": 0, "y": 1, "z": 2}


def slice_mask(g: Graph, axis: str, value: float,
               thickness: float | None = None) -> np.ndarray:
    """Vertices within half a local spacing of the plane axis=value.

    Default thickness is the median edge length, so one vertex layer is
    captured on lattice-like meshes.
    """
    try:
        ax = _AXES[axis]
    except KeyError:
        raise ConfigError(f"axis must be one of x, y, z; got '{axis}'") \
            from None
    if thickness is None:
        e = _undirected_edges(g)
        if len(e) == 0:
            raise DataError("cannot infer slice thickness without edges")
        lengths = np.linalg.norm(g.positions[e[:, 0]] - g.positions[e[:, 1]],
                                 axis=1)
        thickness = float(np.median(lengths))
    mask = np.abs(g.positions[:, ax] - value) <= thickness / 2.0
    if not np.any(mask):
        raise DataError(f"slice {axis}={value} captures no vertices")
    return mask


def write_slice_vtk(path: str | Path, g: Graph, fields: FieldSnapshot,
                    axis: str, value: float,
                    thickness: float | None = None) -> Path:
    """Point-cloud export of one plane of the field."""
    mask = slice_mask(g, axis, value, thickness)
    vel = np.column_stack([fields.u, fields.v, fields.w])[mask]
    return write_vtk(path, g.positions[mask],
                     point_scalars={"speed": fields.speed()[mask],
                                    "tke": fields.tke[mask]},
                     point_vectors={"velocity": vel},
                     title=f"slice {axis}={value}")


def fields_to_csv(path: str | Path, g: Graph,
                  fields: FieldSnapshot | None = None) -> Path:
    """Vertex table: position, boundary tag, and fields when present."""
    import csv

    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["x", "y", "z", "boundary_tag"]
        if fields is not None:
            header += ["u", "v", "w", "tke"]
        w.writerow(header)
        for i in range(g.n_vertices):
            row = [repr(float(c)) for c in g.positions[i]]
            row.append(int(g.boundary_tags[i]))
            if fields is not None:
                row += [repr(float(fields.u[i])), repr(float(fields.v[i])),
                        repr(float(fields.w[i])),
                        repr(float(fields.tke[i]))]
            w.writerow(row)
    return out
