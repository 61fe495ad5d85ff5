"""Graded box meshes, mesh-to-graph conversion and vertex feature assembly.

Vertices are mesh points. Connectivity is stored twice: as a directed edge
list (every undirected mesh edge appears in both directions) and as a CSR
adjacency (offsets + neighbor array, neighbors sorted ascending per vertex).
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


class BoundaryTag(enum.IntEnum):
    """Vertex boundary categories for a box domain with ABL inflow.

    Values double as one-hot feature slots.
    """

    INLET = 0
    OUTLET = 1
    LATERAL = 2
    GROUND = 3
    TOP = 4
    INTERIOR = 5


N_BOUNDARY_TYPES = len(BoundaryTag)

# Tag priority on box corners/edges where several faces meet.
_TAG_PRIORITY = (
    BoundaryTag.INLET,
    BoundaryTag.OUTLET,
    BoundaryTag.GROUND,
    BoundaryTag.TOP,
    BoundaryTag.LATERAL,
)


class SelfLoopWarning(UserWarning):
    """Issued when self-loop edges are stripped from input connectivity."""

    def __init__(self, count: int):
        self.count = count
        super().__init__(f"stripped {count} self-loop edge(s)")


@dataclass(frozen=True)
class Graph:
    """Immutable unstructured-mesh graph.

    positions : (n, 3) float64, vertex coordinates in meters
    boundary_tags : (n,) uint8, BoundaryTag values
    edges : (m, 2) int64 directed pairs, symmetric, no self-loops/duplicates
    csr_offsets : (n + 1,) int64
    csr_neighbors : (m,) int64, sorted ascending within each vertex segment
    """

    positions: np.ndarray
    boundary_tags: np.ndarray
    edges: np.ndarray
    csr_offsets: np.ndarray
    csr_neighbors: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.positions.shape[0]

    @property
    def n_directed_edges(self) -> int:
        return self.edges.shape[0]

    def neighbors(self, v: int) -> np.ndarray:
        return self.csr_neighbors[self.csr_offsets[v]:self.csr_offsets[v + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.positions.min(axis=0), self.positions.max(axis=0)


@dataclass(frozen=True)
class GlobalConditions:
    """Inflow conditions shared by every vertex of one sample."""

    u_inf: float
    ti_inf: float
    yaw_deg: float

    def __post_init__(self):
        if not self.u_inf > 0:
            raise DataError(f"u_inf must be > 0, got {self.u_inf}")
        if not 0 <= self.ti_inf < 1:
            raise DataError(f"ti_inf must be in [0, 1), got {self.ti_inf}")
        if not -90 < self.yaw_deg < 90:
            raise DataError(f"yaw_deg must be in (-90, 90), got {self.yaw_deg}")

    def as_array(self) -> np.ndarray:
        return np.array([self.u_inf, self.ti_inf, self.yaw_deg])


@dataclass(frozen=True)
class FieldSnapshot:
    """Per-vertex target fields: velocity components (m/s) and TKE (m^2/s^2)."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    tke: np.ndarray

    def __post_init__(self):
        n = self.u.shape[0]
        for name in ("v", "w", "tke"):
            if getattr(self, name).shape != (n,):
                raise DataError(f"field '{name}' length mismatch")
        if np.any(self.tke < 0):
            raise DataError("tke must be non-negative at every vertex")

    @property
    def n_vertices(self) -> int:
        return self.u.shape[0]

    def as_matrix(self) -> np.ndarray:
        """Stack fields into an (n, 4) matrix, columns (u, v, w, tke)."""
        return np.stack([self.u, self.v, self.w, self.tke], axis=1)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "FieldSnapshot":
        return cls(u=m[:, 0].copy(), v=m[:, 1].copy(), w=m[:, 2].copy(),
                   tke=m[:, 3].copy())

    def speed(self) -> np.ndarray:
        """Velocity magnitude |U| per vertex."""
        return np.sqrt(self.u**2 + self.v**2 + self.w**2)


@dataclass(frozen=True)
class Sample:
    """One dataset record: a graph, its inflow conditions, target fields."""

    graph: Graph
    conditions: GlobalConditions
    fields: FieldSnapshot

    def __post_init__(self):
        if self.fields.n_vertices != self.graph.n_vertices:
            raise DataError("field length does not match vertex count")


@dataclass(frozen=True)
class MeshSpec:
    """Graded hexahedral box mesh description.

    The refinement sphere (center, diameter) is meshed at `refined_spacing`;
    a transition shell grows cell size geometrically by `grading_ratio` per
    cell until `base_spacing` is reached.
    """

    box_min: tuple[float, float, float]
    box_max: tuple[float, float, float]
    base_spacing: float
    sphere_center: tuple[float, float, float] | None = None
    sphere_diameter: float = 0.0
    refined_spacing: float = 0.0
    grading_ratio: float = 1.3
    vertex_budget: int = 200_000

    def __post_init__(self):
        lo = np.asarray(self.box_min, dtype=float)
        hi = np.asarray(self.box_max, dtype=float)
        if np.any(hi <= lo):
            raise ConfigError("box_max must exceed box_min on every axis")
        if self.base_spacing <= 0:
            raise ConfigError("base_spacing must be positive")
        if self.sphere_center is not None:
            if not 0 < self.refined_spacing < self.base_spacing:
                raise ConfigError(
                    "refined_spacing must satisfy 0 < refined < base")
            if self.sphere_diameter <= 0:
                raise ConfigError("sphere_diameter must be positive")
            c = np.asarray(self.sphere_center, dtype=float)
            # the refined region is clipped to the box; only the center
            # must lie inside it
            if np.any(c < lo) or np.any(c > hi):
                raise ConfigError(
                    "refinement sphere center must lie inside the box")
            if self.grading_ratio <= 1.0:
                raise ConfigError("grading_ratio must be > 1")


@dataclass(frozen=True)
class NormalizationStats:
    """Standardization statistics, computed on the training split only.

    pos_* standardize vertex coordinates, glob_* the three global inflow
    values (u_inf, ti_inf, yaw_deg), field_* the four target fields.
    """

    pos_mean: np.ndarray
    pos_scale: np.ndarray
    glob_mean: np.ndarray
    glob_scale: np.ndarray
    field_mean: np.ndarray = field(default_factory=lambda: np.zeros(4))
    field_scale: np.ndarray = field(default_factory=lambda: np.ones(4))

    def __post_init__(self):
        for name in ("pos_mean", "pos_scale", "glob_mean", "glob_scale",
                     "field_mean", "field_scale"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"normalization stats '{name}' not finite")
        for name in ("pos_scale", "glob_scale", "field_scale"):
            if np.any(getattr(self, name) == 0):
                raise DataError(f"normalization scale '{name}' contains zero")

    def to_dict(self) -> dict:
        return {
            "pos_mean": self.pos_mean.tolist(),
            "pos_scale": self.pos_scale.tolist(),
            "glob_mean": self.glob_mean.tolist(),
            "glob_scale": self.glob_scale.tolist(),
            "field_mean": self.field_mean.tolist(),
            "field_scale": self.field_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in d.items()})


N_FEATURES = 3 + N_BOUNDARY_TYPES + 3


def _build_csr(n_vertices: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """CSR offsets/neighbors from a directed edge list, neighbors sorted."""
    if edges.shape[0] == 0:
        return np.zeros(n_vertices + 1, dtype=np.int64), np.empty(0, dtype=np.int64)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    sorted_edges = edges[order]
    counts = np.bincount(sorted_edges[:, 0], minlength=n_vertices)
    offsets = np.zeros(n_vertices + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, sorted_edges[:, 1].copy()


def _make_graph(positions: np.ndarray, boundary_tags: np.ndarray,
                directed_edges: np.ndarray) -> Graph:
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    boundary_tags = np.ascontiguousarray(boundary_tags, dtype=np.uint8)
    directed_edges = np.ascontiguousarray(directed_edges, dtype=np.int64).reshape(-1, 2)
    offsets, neighbors = _build_csr(positions.shape[0], directed_edges)
    # keep the stored edge list in CSR order so round-trips are canonical
    canonical = np.column_stack([
        np.repeat(np.arange(positions.shape[0], dtype=np.int64),
                  np.diff(offsets)),
        neighbors,
    ])
    return Graph(positions=positions, boundary_tags=boundary_tags,
                 edges=canonical, csr_offsets=offsets, csr_neighbors=neighbors)


def validate_graph(g: Graph) -> None:
    """Check every Graph invariant; raise DataError on the first violation."""
    n, m = g.n_vertices, g.n_directed_edges
    if g.positions.shape != (n, 3):
        raise DataError("positions must be (n, 3)")
    if g.boundary_tags.shape != (n,):
        raise DataError("boundary_tags must be (n,)")
    if np.any(g.boundary_tags >= N_BOUNDARY_TYPES):
        raise DataError("boundary_tags contain unknown categories")
    if m and (g.edges.min() < 0 or g.edges.max() >= n):
        raise DataError("edge endpoints out of range")
    if np.any(g.edges[:, 0] == g.edges[:, 1]):
        raise DataError("self-loop present")
    if g.csr_offsets.shape != (n + 1,) or g.csr_offsets[0] != 0 \
            or g.csr_offsets[-1] != m:
        raise DataError("CSR offsets inconsistent with edge count")
    if np.any(np.diff(g.csr_offsets) < 0):
        raise DataError("CSR offsets not monotone")
    # sorted, duplicate-free neighbor segments
    for v in range(n):
        nb = g.neighbors(v)
        if nb.size > 1 and np.any(np.diff(nb) <= 0):
            raise DataError(f"neighbors of vertex {v} not strictly increasing")
    # symmetry: the set of reversed pairs equals the set of pairs
    fwd = g.edges[:, 0] * np.int64(n) + g.edges[:, 1]
    rev = g.edges[:, 1] * np.int64(n) + g.edges[:, 0]
    if not np.array_equal(np.sort(fwd), np.sort(rev)):
        raise DataError("edge list is not symmetric")


def mesh_to_graph(points: np.ndarray, element_edge_list: np.ndarray,
                  boundary_tags: np.ndarray) -> Graph:
    """Convert raw mesh connectivity to a Graph.

    Duplicate undirected edges collapse to one, self-loops are stripped
    (with a SelfLoopWarning carrying the count), and the surviving edges are
    symmetrized.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tags = np.asarray(boundary_tags, dtype=np.uint8).reshape(-1)
    n = points.shape[0]
    if tags.shape[0] != n:
        raise DataError("boundary_tags length must match point count")
    raw = np.asarray(element_edge_list, dtype=np.int64).reshape(-1, 2)
    if raw.size and (raw.min() < 0 or raw.max() >= n):
        raise DataError("edge references a point outside the mesh")
    loops = raw[:, 0] == raw[:, 1]
    n_loops = int(loops.sum())
    if n_loops:
        warnings.warn(SelfLoopWarning(n_loops), stacklevel=2)
        raw = raw[~loops]
    if raw.shape[0]:
        undirected = np.sort(raw, axis=1)
        undirected = np.unique(undirected, axis=0)
        directed = np.concatenate([undirected, undirected[:, ::-1]], axis=0)
    else:
        directed = np.empty((0, 2), dtype=np.int64)
    return _make_graph(points, tags, directed)


def _uniform_axis(lo: float, hi: float, spacing: float) -> np.ndarray:
    n_cells = max(1, int(round((hi - lo) / spacing)))
    return np.linspace(lo, hi, n_cells + 1)


def _transition_steps(length: float, fine: float, base: float,
                      ratio: float) -> np.ndarray:
    """Cell sizes growing geometrically from `fine` to `base` over `length`.

    Steps are rescaled to tile the segment exactly; the rescale factor is
    <= 1 so spacing near the fine end never exceeds `fine` * ratio.
    """
    if length <= 0:
        return np.empty(0)
    steps = []
    h = fine
    total = 0.0
    while total < length:
        h = min(h * ratio, base)
        steps.append(h)
        total += h
    steps = np.asarray(steps)
    return steps * (length / total)


def _graded_axis(lo: float, hi: float, base: float, fine: float,
                 interval: tuple[float, float] | None,
                 ratio: float) -> np.ndarray:
    """1-D coordinates: fine inside `interval`, base outside, graded between."""
    if interval is None:
        return _uniform_axis(lo, hi, base)
    a = max(lo, interval[0])
    b = min(hi, interval[1])
    if b <= a:
        return _uniform_axis(lo, hi, base)
    n_fine = max(1, int(np.ceil((b - a) / fine)))
    mid = np.linspace(a, b, n_fine + 1)
    left = _transition_steps(a - lo, fine, base, ratio)
    right = _transition_steps(hi - b, fine, base, ratio)
    coords = np.concatenate([
        (a - np.cumsum(left))[::-1] if left.size else np.empty(0),
        mid,
        b + np.cumsum(right) if right.size else np.empty(0),
    ])
    coords[0] = lo
    coords[-1] = hi
    return coords


def _lattice_edges(nx: int, ny: int, nz: int) -> np.ndarray:
    """Directed 6-neighborhood edges of an (nx, ny, nz) lattice."""
    idx = np.arange(nx * ny * nz, dtype=np.int64).reshape(nx, ny, nz)
    pairs = []
    if nx > 1:
        pairs.append(np.stack([idx[:-1].ravel(), idx[1:].ravel()], axis=1))
    if ny > 1:
        pairs.append(np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1))
    if nz > 1:
        pairs.append(np.stack([idx[:, :, :-1].ravel(), idx[:, :, 1:].ravel()],
                              axis=1))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    undirected = np.concatenate(pairs, axis=0)
    return np.concatenate([undirected, undirected[:, ::-1]], axis=0)


def _lattice_tags(nx: int, ny: int, nz: int) -> np.ndarray:
    tags = np.full((nx, ny, nz), int(BoundaryTag.INTERIOR), dtype=np.uint8)
    # reverse priority so higher-priority faces overwrite lower ones
    tags[:, 0, :] = BoundaryTag.LATERAL
    tags[:, -1, :] = BoundaryTag.LATERAL
    tags[:, :, -1] = BoundaryTag.TOP
    tags[:, :, 0] = BoundaryTag.GROUND
    tags[-1, :, :] = BoundaryTag.OUTLET
    tags[0, :, :] = BoundaryTag.INLET
    return tags.ravel()


def build_graded_mesh(spec: MeshSpec, seed: int = 0,
                      jitter: float = 0.0) -> Graph:
    """Build a deterministic graded hexahedral lattice graph.

    Spacing equals `refined_spacing` inside the refinement sphere's bounding
    intervals, grading geometrically out to `base_spacing`. Boundary tags
    come from face membership (priority: inlet, outlet, ground, top,
    lateral). `jitter` (fraction of local spacing, < 0.5) optionally
    displaces interior vertices, seeded by `seed`.
    """
    lo = np.asarray(spec.box_min, dtype=float)
    hi = np.asarray(spec.box_max, dtype=float)
    axes = []
    for d in range(3):
        interval = None
        if spec.sphere_center is not None:
            c = spec.sphere_center[d]
            r = 0.5 * spec.sphere_diameter
            interval = (c - r, c + r)
        axes.append(_graded_axis(lo[d], hi[d], spec.base_spacing,
                                 spec.refined_spacing, interval,
                                 spec.grading_ratio))
    nx, ny, nz = (a.size for a in axes)
    n = nx * ny * nz
    if n > spec.vertex_budget:
        raise ConfigError(
            f"mesh would have {n} vertices, exceeding the budget of "
            f"{spec.vertex_budget}")
    xs, ys, zs = np.meshgrid(*axes, indexing="ij")
    positions = np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)
    tags = _lattice_tags(nx, ny, nz)
    if jitter > 0.0:
        if jitter >= 0.5:
            raise ConfigError("jitter must be < 0.5 to keep the lattice valid")
        rng = np.random.default_rng(seed)
        spacings = [np.minimum(np.diff(a, prepend=a[0] - (a[1] - a[0])),
                               np.diff(a, append=a[-1] + (a[-1] - a[-2])))
                    for a in axes]
        local = np.stack(np.meshgrid(*spacings, indexing="ij"),
                         axis=-1).reshape(-1, 3)
        interior = tags == BoundaryTag.INTERIOR
        noise = rng.uniform(-jitter, jitter, size=(n, 3)) * local
        positions[interior] += noise[interior]
    return _make_graph(positions, tags, _lattice_edges(nx, ny, nz))


def one_hot_boundary(tags: np.ndarray) -> np.ndarray:
    """(n, 6) one-hot encoding of boundary tags."""
    tags = np.asarray(tags)
    if np.any(tags >= N_BOUNDARY_TYPES):
        raise DataError("unknown boundary tag in input")
    out = np.zeros((tags.shape[0], N_BOUNDARY_TYPES))
    out[np.arange(tags.shape[0]), tags] = 1.0
    return out


def assemble_features(g: Graph, cond: GlobalConditions,
                      norm: NormalizationStats) -> np.ndarray:
    """Per-vertex feature matrix, shape (n, 12).

    Columns: standardized (x, y, z), one-hot boundary type (6), standardized
    (u_inf, ti_inf, yaw_deg) repeated on every vertex.
    """
    n = g.n_vertices
    out = np.empty((n, N_FEATURES))
    out[:, 0:3] = (g.positions - norm.pos_mean) / norm.pos_scale
    out[:, 3:9] = one_hot_boundary(g.boundary_tags)
    out[:, 9:12] = (cond.as_array() - norm.glob_mean) / norm.glob_scale
    return out
