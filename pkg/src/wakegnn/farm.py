"""Multi-turbine evaluation: wake superposition and per-turbine power.

Superposition acts on velocity magnitudes. Each upstream turbine's wake is
predicted on a single-turbine graph in its own frame (rotor at the origin,
+x downwind); the downstream turbine's inflow is extracted at its offset in
that frame, normalized by the unwaked speed sampled upstream of the rotor,
and the resulting deficits are combined.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .checkpoint import Checkpoint, load_checkpoint
from .errors import ConfigError, DataError, DomainError
from .gad import PowerCurve, RotorSpec, abl_reference_tke, power_from_curve
from .meshgraph import FieldSnapshot, GlobalConditions, Graph
from .train import model_from_checkpoint, predict_fields
from .wakesynth import WakeParams, synth_wake_field

_DEFICIT_TOL = 1e-9
_RING_FRACTIONS = (0.5, 0.9)
_RING_POINTS = 10


class ExtrapolationWarning(UserWarning):
    """A turbine lies beyond the wake field's downstream extent."""


@dataclass(frozen=True)
class Turbine:
    id: str
    x: float
    y: float
    rotor: RotorSpec
    curve: PowerCurve
    yaw_deg: float = 0.0


@dataclass(frozen=True)
class FarmLayout:
    """Turbine positions in meters, +x aligned with the dominant wind."""

    turbines: tuple[Turbine, ...]

    def __post_init__(self):
        object.__setattr__(self, "turbines", tuple(self.turbines))
        if not self.turbines:
            raise ConfigError("layout needs at least one turbine")
        ids = [t.id for t in self.turbines]
        if len(set(ids)) != len(ids):
            raise ConfigError("turbine ids must be unique")
        pos = np.array([(t.x, t.y) for t in self.turbines])
        diam = np.array([2.0 * t.rotor.radius for t in self.turbines])
        for i in range(len(pos)):
            d = np.hypot(*(pos[i + 1:] - pos[i]).T)
            limit = np.maximum(diam[i + 1:], diam[i])
            close = d < limit
            if np.any(close):
                j = i + 1 + int(np.argmax(close))
                raise ConfigError(
                    f"turbines '{ids[i]}' and '{ids[j]}' are closer than "
                    "one rotor diameter")

    def ordered_downwind(self) -> list[Turbine]:
        return sorted(self.turbines, key=lambda t: t.x)


def load_farm_layout(path: str | Path) -> FarmLayout:
    """Read a layout document (JSON).

    Keys: rotors {name: {radius, hub_height, ...}}, curves {name: {u, cp,
    cut_in, cut_out}}, turbines [{id, x, y, rotor, curve, yaw_deg?}].
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"layout file is not valid JSON: {e}") from e
    try:
        rotors = {name: RotorSpec(**body)
                  for name, body in doc["rotors"].items()}
        curves = {name: PowerCurve(u=body["u"], cp=body["cp"],
                                   cut_in=body["cut_in"],
                                   cut_out=body["cut_out"])
                  for name, body in doc["curves"].items()}
        turbines = []
        for row in doc["turbines"]:
            if row["rotor"] not in rotors:
                raise ConfigError(f"unknown rotor ref '{row['rotor']}'")
            if row["curve"] not in curves:
                raise ConfigError(f"unknown curve ref '{row['curve']}'")
            turbines.append(Turbine(
                id=str(row["id"]), x=float(row["x"]), y=float(row["y"]),
                rotor=rotors[row["rotor"]], curve=curves[row["curve"]],
                yaw_deg=float(row.get("yaw_deg", 0.0))))
    except KeyError as e:
        raise ConfigError(f"layout file missing key {e}") from e
    except TypeError as e:
        raise ConfigError(f"malformed layout entry: {e}") from e
    return FarmLayout(turbines=tuple(turbines))


def bundled_layout_path() -> Path:
    return Path(__file__).parent / "data" / "farm_layout.json"


def _deficits(u_wakes, u_inlets) -> np.ndarray:
    uw = np.atleast_1d(np.asarray(u_wakes, dtype=float))
    ui = np.atleast_1d(np.asarray(u_inlets, dtype=float))
    if ui.size == 1 and uw.size > 1:
        ui = np.full_like(uw, ui[0])
    if uw.shape != ui.shape:
        raise DataError("wake velocities and inlets must align")
    if np.any(ui <= 0):
        raise DomainError("wake inlet speeds must be positive")
    d = 1.0 - uw / ui
    if np.any(d < -_DEFICIT_TOL) or np.any(d > 1.0 + _DEFICIT_TOL):
        bad = d[(d < -_DEFICIT_TOL) | (d > 1.0 + _DEFICIT_TOL)][0]
        raise DomainError(f"wake deficit {bad:.6g} outside [0, 1]")
    return np.clip(d, 0.0, 1.0)


def sos_superpose(u_inf: float, u_wakes, u_inlets) -> float:
    """Combined speed via the root of summed squared deficits, floored at 0."""
    if u_inf <= 0:
        raise DomainError("freestream speed must be positive")
    d = _deficits(u_wakes, u_inlets)
    return max(0.0, (1.0 - math.sqrt(float(np.sum(d * d)))) * u_inf)


def linear_superpose(u_inf: float, u_wakes, u_inlets) -> float:
    """Deficits add directly."""
    if u_inf <= 0:
        raise DomainError("freestream speed must be positive")
    d = _deficits(u_wakes, u_inlets)
    return max(0.0, (1.0 - float(np.sum(d))) * u_inf)


def max_deficit_superpose(u_inf: float, u_wakes, u_inlets) -> float:
    """Only the largest single deficit applies."""
    if u_inf <= 0:
        raise DomainError("freestream speed must be positive")
    d = _deficits(u_wakes, u_inlets)
    worst = float(d.max()) if d.size else 0.0
    return max(0.0, (1.0 - worst) * u_inf)


SUPERPOSITION_METHODS = {"sos": sos_superpose, "linear": linear_superpose,
                         "max": max_deficit_superpose}


def rotor_disk_points(center, radius: float) -> np.ndarray:
    """Disk center plus rings at 0.5R and 0.9R, 10 points each (disk in
    the y-z plane, normal +x)."""
    c = np.asarray(center, dtype=float)
    pts = [c]
    ang = 2.0 * np.pi * np.arange(_RING_POINTS) / _RING_POINTS
    for frac in _RING_FRACTIONS:
        ring = np.tile(c, (_RING_POINTS, 1))
        ring[:, 1] += frac * radius * np.cos(ang)
        ring[:, 2] += frac * radius * np.sin(ang)
        pts.append(ring)
    return np.vstack([pts[0][None, :], pts[1], pts[2]])


def idw_interpolate(positions: np.ndarray, values: np.ndarray,
                    points: np.ndarray, k: int = 8) -> np.ndarray:
    """Inverse-distance-squared interpolation from the k nearest vertices."""
    tree = cKDTree(positions)
    k = min(k, len(positions))
    dist, idx = tree.query(points, k=k)
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)
    exact = dist[:, 0] < 1e-12
    dist = np.maximum(dist, 1e-12)
    w = 1.0 / (dist * dist)
    out = np.sum(w * values[idx], axis=1) / np.sum(w, axis=1)
    out[exact] = values[idx[exact, 0]]
    return out


def _require_inside(points: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                    what: str) -> None:
    tol = 1e-9 * np.maximum(1.0, np.abs(hi - lo))
    if np.any(points < lo - tol) or np.any(points > hi + tol):
        raise DomainError(f"{what} outside field domain "
                          f"[{lo.tolist()}, {hi.tolist()}]")


def rotor_averaged_velocity(graph: Graph, fields: FieldSnapshot, center,
                            radius: float, k: int = 8) -> float:
    """Mean |U| over the 21-point rotor disk, IDW from graph vertices."""
    lo, hi = graph.bounding_box()
    pts = rotor_disk_points(center, radius)
    _require_inside(pts, lo, hi, "turbine rotor disk")
    return float(idw_interpolate(graph.positions, fields.speed(), pts,
                                 k=k).mean())


def hub_point_velocity(graph: Graph, fields: FieldSnapshot, center,
                       k: int = 8) -> float:
    """|U| interpolated at the hub point alone."""
    lo, hi = graph.bounding_box()
    pt = np.asarray(center, dtype=float)[None, :]
    _require_inside(pt, lo, hi, "turbine hub point")
    return float(idw_interpolate(graph.positions, fields.speed(), pt, k=k)[0])


@dataclass
class AnalyticWakePredictor:
    """Closed-form wake evaluated on the single-turbine graph."""

    graph: Graph
    rotor: RotorSpec
    params: WakeParams | None = None

    def predict(self, cond: GlobalConditions) -> FieldSnapshot:
        return synth_wake_field(self.graph, cond, self.rotor, self.params)


class GnnWakePredictor:
    """Model checkpoint evaluated on the single-turbine graph."""

    def __init__(self, checkpoint: Checkpoint | str | Path, graph: Graph):
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = load_checkpoint(checkpoint)
        self.model, self.norm = model_from_checkpoint(checkpoint)
        self.graph = graph

    def predict(self, cond: GlobalConditions) -> FieldSnapshot:
        return predict_fields(self.model, self.norm, self.graph, cond)


@dataclass(frozen=True)
class TurbineResult:
    id: str
    x: float
    y: float
    u_eff: float
    power: float


class _FieldCache:
    def __init__(self, predictor):
        self.predictor = predictor
        self._cache: dict[tuple, FieldSnapshot] = {}

    def get(self, cond: GlobalConditions) -> FieldSnapshot:
        key = (cond.u_inf, cond.ti_inf, cond.yaw_deg)
        if key not in self._cache:
            self._cache[key] = self.predictor.predict(cond)
        return self._cache[key]


def _extract(graph, fields, center, radius, extraction):
    if extraction == "rotor":
        return rotor_averaged_velocity(graph, fields, center, radius)
    return hub_point_velocity(graph, fields, center)


def farm_power(layout: FarmLayout, predictor, cond: GlobalConditions,
               method: str = "sos", extraction: str = "rotor",
               out_csv: str | Path | None = None) -> list[TurbineResult]:
    """Per-turbine effective speed and power, upstream to downstream.

    For each pair (upstream j, target i) the wake field of j is sampled at
    i's offset; the inlet used for the deficit is the unwaked speed sampled
    at the same lateral/vertical offset upstream of the rotor, so shear does
    not register as a deficit. Offsets beyond the downstream extent reuse
    the farthest slice (with a warning); offsets that leave the frame
    laterally or vertically contribute no deficit, which keeps rows
    independent of one another.
    """
    if method not in SUPERPOSITION_METHODS:
        raise ConfigError(f"unknown superposition method '{method}'")
    if extraction not in ("rotor", "hub"):
        raise ConfigError(f"unknown extraction mode '{extraction}'")
    superpose = SUPERPOSITION_METHODS[method]
    cache = _FieldCache(predictor)
    g = predictor.graph
    lo, hi = g.bounding_box()
    x_ref = lo[0] / 2.0 if lo[0] < 0 else lo[0]
    ordered = layout.ordered_downwind()
    results = []
    for i, t in enumerate(ordered):
        u_wakes, u_inlets = [], []
        for j in ordered[:i]:
            if j.x >= t.x:
                continue
            dx = t.x - j.x
            dy = t.y - j.y
            z = t.rotor.hub_height
            half = t.rotor.radius
            if not (lo[1] + half <= dy <= hi[1] - half
                    and lo[2] + half <= z <= hi[2] - half):
                continue  # offset leaves the wake frame: no deficit
            if dx > hi[0]:
                warnings.warn(ExtrapolationWarning(
                    f"turbine '{t.id}' sits {dx:.0f} m downwind of "
                    f"'{j.id}' but the wake field covers only "
                    f"{hi[0]:.0f} m; reusing the farthest slice"))
                dx = hi[0]
            cond_j = GlobalConditions(u_inf=cond.u_inf, ti_inf=cond.ti_inf,
                                      yaw_deg=j.yaw_deg)
            fields = cache.get(cond_j)
            u_ij = _extract(g, fields, (dx, dy, z), half, extraction)
            u_ref = _extract(g, fields, (x_ref, dy, z), half, extraction)
            u_wakes.append(u_ij)
            u_inlets.append(u_ref)
        u_eff = superpose(cond.u_inf, u_wakes, u_inlets)
        results.append(TurbineResult(
            id=t.id, x=t.x, y=t.y, u_eff=u_eff,
            power=power_from_curve(t.curve, u_eff, t.rotor.radius,
                                   t.rotor.rho)))
    if out_csv is not None:
        path = Path(out_csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "u_i", "p_i"])
            for r in results:
                w.writerow([r.id, repr(r.u_eff), repr(r.power)])
    return results


def superposed_farm_field(farm_graph: Graph, layout: FarmLayout, predictor,
                          cond: GlobalConditions,
                          method: str = "sos") -> FieldSnapshot:
    """Combined speed/TKE field over a farm-level graph, for export.

    Vertices outside every wake frame keep the sheared inflow magnitude and
    freestream TKE.
    """
    if method not in SUPERPOSITION_METHODS:
        raise ConfigError(f"unknown superposition method '{method}'")
    g = predictor.graph
    lo, hi = g.bounding_box()
    x_ref = lo[0] / 2.0 if lo[0] < 0 else lo[0]
    cache = _FieldCache(predictor)
    pos = farm_graph.positions
    n = len(pos)
    sq_sum = np.zeros(n)
    lin_sum = np.zeros(n)
    max_d = np.zeros(n)
    baseline = np.zeros(n)
    have_base = np.zeros(n, dtype=bool)
    tke = np.full(n, abl_reference_tke(cond.u_inf, cond.ti_inf))
    for t in layout.turbines:
        off = pos - np.array([t.x, t.y, 0.0])
        inside = np.all((off >= lo) & (off <= hi), axis=1)
        if not np.any(inside):
            continue
        cond_t = GlobalConditions(u_inf=cond.u_inf, ti_inf=cond.ti_inf,
                                  yaw_deg=t.yaw_deg)
        fields = cache.get(cond_t)
        speed = idw_interpolate(g.positions, fields.speed(), off[inside])
        ref_pts = off[inside].copy()
        ref_pts[:, 0] = x_ref
        ref = idw_interpolate(g.positions, fields.speed(), ref_pts)
        d = np.clip(1.0 - speed / np.maximum(ref, 1e-12), 0.0, 1.0)
        sq_sum[inside] += d * d
        lin_sum[inside] += d
        max_d[inside] = np.maximum(max_d[inside], d)
        baseline[inside] = np.where(have_base[inside], baseline[inside], ref)
        have_base[inside] = True
        tke[inside] = np.maximum(
            tke[inside], idw_interpolate(g.positions, fields.tke,
                                         off[inside]))
    if method == "sos":
        combined = np.sqrt(sq_sum)
    elif method == "linear":
        combined = lin_sum
    else:
        combined = max_d
    from .wakesynth import shear_profile

    p = WakeParams()
    hub = layout.turbines[0].rotor.hub_height
    free = shear_profile(pos[:, 2], cond.u_inf, hub, p.shear)
    base = np.where(have_base, baseline, free)
    u = np.maximum(0.0, (1.0 - np.minimum(combined, 1.0)) * base)
    zeros = np.zeros(n)
    return FieldSnapshot(u=u, v=zeros, w=zeros.copy(), tke=tke)
