"""Analytic Gaussian-wake ground-truth generator.

Produces deterministic velocity/TKE fields on mesh graphs for a single
rotor at the origin (hub at (0, 0, hub_height), inflow along +x):

    base profile   U(z) = u_inf * (z / z_hub)^shear
    wake width     sigma(x) = sigma0 * D + k_w * x
    peak deficit   C(x) = 1 - sqrt(1 - C_T cos^2(yaw) / (8 (sigma/D)^2))
    deflection     delta(x) = k_def * sin(yaw) * x * D / (D + x)
    deficit        f = C * exp(-((y-delta)^2 + (z-z_hub)^2) / (2 sigma^2))
    fields         u = U(z)(1-f), v = w = 0,
                   tke = 1.5 (I u_inf)^2 + k_I * f * u_inf^2 * I

Upstream of the rotor (x <= 0) the deficit is zero. Positive yaw deflects
the wake toward +y.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .gad import RotorSpec, abl_reference_tke
from .meshgraph import FieldSnapshot, GlobalConditions, Graph, Sample
from .mgf import write_sample

# below this radicand the near-wake clamp takes over; keeps f < 1 strictly
_RADICAND_FLOOR = 1e-12
# ground vertices see the profile evaluated at this fraction of hub height
_Z_FLOOR_FRACTION = 0.01


class WakeParameterError(ConfigError):
    """Wake-model parameters outside their admissible region."""


@dataclass(frozen=True)
class WakeParams:
    """Generator constants.

    k_w = None selects the turbulence-dependent default
    0.035 + 0.35 * ti_inf at evaluation time. With clamp_near_wake the
    deficit amplitude is capped where the Gaussian model's radicand would
    turn negative (very near the rotor); in strict mode that condition
    raises WakeParameterError instead.
    """

    c_t: float = 0.8
    k_w: float | None = None
    sigma0: float = 0.25
    k_def: float = 0.3
    k_i: float = 0.6
    shear: float = 0.14
    clamp_near_wake: bool = True

    def __post_init__(self):
        if not 0 < self.c_t < 1:
            raise WakeParameterError(f"c_t must be in (0, 1), got {self.c_t}")
        if self.k_w is not None and self.k_w <= 0:
            raise WakeParameterError(f"k_w must be positive, got {self.k_w}")
        if self.sigma0 <= 0:
            raise WakeParameterError("sigma0 must be positive")
        if self.k_def < 0 or self.k_i < 0 or self.shear < 0:
            raise WakeParameterError("k_def, k_i and shear must be >= 0")

    def growth_rate(self, ti_inf: float) -> float:
        if self.k_w is not None:
            return self.k_w
        return 0.035 + 0.35 * ti_inf


@dataclass(frozen=True)
class ConditionRanges:
    """Sampling intervals for the generated inflow conditions."""

    u_inf: tuple[float, float] = (5.0, 10.0)
    ti_inf: tuple[float, float] = (0.05, 0.15)
    yaw_deg: tuple[float, float] = (-30.0, 30.0)

    def __post_init__(self):
        for name in ("u_inf", "ti_inf", "yaw_deg"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"range {name} has lo > hi")


def shear_profile(z: np.ndarray, u_inf: float, z_hub: float,
                  shear: float) -> np.ndarray:
    """Power-law inflow speed, floored near the ground to stay positive."""
    z_eff = np.maximum(z, _Z_FLOOR_FRACTION * z_hub)
    return u_inf * (z_eff / z_hub) ** shear


def synth_wake_field(g: Graph, cond: GlobalConditions, rotor: RotorSpec,
                     p: WakeParams | None = None) -> FieldSnapshot:
    """Evaluate the analytic wake on every vertex of the graph."""
    if p is None:
        p = WakeParams()
    d = 2.0 * rotor.radius
    z_hub = rotor.hub_height
    yaw = np.deg2rad(cond.yaw_deg)
    k_w = p.growth_rate(cond.ti_inf)
    x = g.positions[:, 0]
    y = g.positions[:, 1]
    z = g.positions[:, 2]
    base = shear_profile(z, cond.u_inf, z_hub, p.shear)
    f = np.zeros(g.n_vertices)
    wake = x > 0
    if np.any(wake):
        xw = x[wake]
        sigma = p.sigma0 * d + k_w * xw
        radicand = 1.0 - p.c_t * np.cos(yaw) ** 2 / (8.0 * (sigma / d) ** 2)
        if not p.clamp_near_wake and np.any(radicand < 0):
            raise WakeParameterError(
                "deficit radicand negative: c_t too large or sigma too "
                "small for this mesh; enable clamp_near_wake or adjust")
        amplitude = 1.0 - np.sqrt(np.maximum(radicand, _RADICAND_FLOOR))
        delta = p.k_def * np.sin(yaw) * xw * d / (d + xw)
        r2 = (y[wake] - delta) ** 2 + (z[wake] - z_hub) ** 2
        f[wake] = amplitude * np.exp(-r2 / (2.0 * sigma ** 2))
    u = base * (1.0 - f)
    tke = abl_reference_tke(cond.u_inf, cond.ti_inf) \
        + p.k_i * f * cond.u_inf ** 2 * cond.ti_inf
    zeros = np.zeros_like(u)
    return FieldSnapshot(u=u, v=zeros, w=zeros.copy(), tke=tke)


def gen_dataset(g: Graph, n_samples: int, ranges: ConditionRanges,
                rotor: RotorSpec, seed: int, out_dir: str | Path,
                params: WakeParams | None = None) -> list[Path]:
    """Write n_samples MGF1 sample files plus manifest.csv and params.json.

    Conditions are drawn uniformly from `ranges`; each sample uses its own
    child seed so generation order (or parallel generation) cannot change
    the results.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    if params is None:
        params = WakeParams()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(n_samples)
    width = max(4, len(str(n_samples - 1)))
    paths = []
    rows = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        cond = GlobalConditions(
            u_inf=float(rng.uniform(*ranges.u_inf)),
            ti_inf=float(rng.uniform(*ranges.ti_inf)),
            yaw_deg=float(rng.uniform(*ranges.yaw_deg)))
        fields = synth_wake_field(g, cond, rotor, params)
        path = out / f"sample_{i:0{width}d}.mgf"
        write_sample(path, Sample(graph=g, conditions=cond, fields=fields))
        paths.append(path)
        rows.append((path.name, cond.u_inf, cond.ti_inf, cond.yaw_deg))
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "u_inf", "ti_inf", "yaw_deg"])
        writer.writerows(rows)
    meta = {"seed": seed, "n_samples": n_samples,
            "ranges": {"u_inf": list(ranges.u_inf),
                       "ti_inf": list(ranges.ti_inf),
                       "yaw_deg": list(ranges.yaw_deg)},
            "wake_params": {k: getattr(params, k) for k in
                            ("c_t", "k_w", "sigma0", "k_def", "k_i",
                             "shear", "clamp_near_wake")},
            "rotor": {"radius": rotor.radius,
                      "hub_height": rotor.hub_height}}
    (out / "params.json").write_text(json.dumps(meta, indent=2))
    return paths


def default_mesh_spec(rotor: RotorSpec,
                      extent_diameters=(2.0, 8.0, 2.5, 2.0),
                      base_spacing_fraction: float = 0.5,
                      refined_spacing_fraction: float = 0.25,
                      vertex_budget: int = 200_000):
    """Convenience mesh box around a rotor at the origin.

    extent_diameters = (upstream, downstream, lateral per side, above hub),
    in rotor diameters; spacings as fractions of D. Refinement sphere covers
    the rotor and near wake.
    """
    from .meshgraph import MeshSpec

    d = 2.0 * rotor.radius
    up, down, lat, top = extent_diameters
    box_min = (-up * d, -lat * d, 0.0)
    box_max = (down * d, lat * d, rotor.hub_height + top * d)
    return MeshSpec(
        box_min=box_min, box_max=box_max,
        base_spacing=base_spacing_fraction * d,
        sphere_center=(0.0, 0.0, rotor.hub_height),
        sphere_diameter=1.5 * d,
        refined_spacing=refined_spacing_fraction * d,
        vertex_budget=vertex_budget)
