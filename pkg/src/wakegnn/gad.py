"""Actuator-disk rotor physics.

Blade-element forces from tabulated airfoil polars, momentum source terms,
thrust/torque/power integration over disk cells, and power-curve evaluation.
The rotor is evaluated in the disk-normal frame; yaw enters the pipeline
upstream, through the wake model, not here.

Angle conventions (radians): the inflow angle phi is measured from the rotor
plane toward the disk normal, phi = atan2(omega*r - U_theta, U_n), and the
angle of attack is alpha = phi - twist - pitch.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError, DomainError

BETZ_LIMIT = 16.0 / 27.0


class PolarRangeWarning(UserWarning):
    """Issued when an airfoil polar query is clamped to the table bounds."""


@dataclass(frozen=True)
class BladeElement:
    """Annular blade strip at radius r (m) spanning dr, with chord c (m).

    twist and pitch are in radians.
    """

    r: float
    dr: float
    chord: float
    twist: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        if self.r < 0:
            raise ConfigError("element radius must be non-negative")
        if self.dr <= 0:
            raise ConfigError("element span dr must be positive")
        if self.chord <= 0:
            raise ConfigError("element chord must be positive")


@dataclass(frozen=True)
class AirfoilPolar:
    """Bilinear (alpha, Re) -> (C_L, C_D) lookup tables.

    alpha is in radians, strictly increasing; re may be a single value for
    Reynolds-independent polars. cl/cd have shape (len(alpha), len(re)).
    """

    alpha: np.ndarray
    re: np.ndarray
    cl: np.ndarray
    cd: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "re", "cl", "cd"):
            object.__setattr__(self, name,
                               np.atleast_1d(np.asarray(getattr(self, name),
                                                        dtype=float)))
        if self.alpha.size == 0 or self.re.size == 0:
            raise DataError("polar table must not be empty")
        if np.any(np.diff(self.alpha) <= 0):
            raise DataError("polar alpha grid must be strictly increasing")
        if self.re.size > 1 and np.any(np.diff(self.re) <= 0):
            raise DataError("polar Re grid must be strictly increasing")
        shape = (self.alpha.size, self.re.size)
        cl = self.cl.reshape(shape)
        cd = self.cd.reshape(shape)
        object.__setattr__(self, "cl", cl)
        object.__setattr__(self, "cd", cd)
        if np.any(cd < 0):
            raise DataError("polar C_D must be non-negative")

    @classmethod
    def constant(cls, c_l: float, c_d: float) -> "AirfoilPolar":
        """Angle-independent polar (e.g. the nacelle's C_D=1, C_L=0)."""
        return cls(alpha=np.array([-math.pi, math.pi]), re=np.array([1.0]),
                   cl=np.full((2, 1), c_l), cd=np.full((2, 1), c_d))


@dataclass(frozen=True)
class FlowSample:
    """Local rotor-frame velocities at one element: disk-normal U_n and
    tangential U_theta, in m/s."""

    u_n: float
    u_theta: float

    def __post_init__(self):
        if not (math.isfinite(self.u_n) and math.isfinite(self.u_theta)):
            raise DataError("flow sample velocities must be finite")

    def u_rel(self, omega: float, r: float) -> float:
        """Relative speed seen by the element rotating at omega (rad/s)."""
        return math.hypot(self.u_n, omega * r - self.u_theta)


@dataclass(frozen=True)
class PowerCurve:
    """C_p(U) lookup with cut-in/cut-out speeds; C_p below the Betz limit."""

    u: np.ndarray
    cp: np.ndarray
    cut_in: float
    cut_out: float

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "cp", np.asarray(self.cp, dtype=float))
        if self.u.size == 0 or self.u.shape != self.cp.shape:
            raise DataError("power curve tables must be non-empty, equal length")
        if np.any(np.diff(self.u) <= 0):
            raise DataError("power curve U grid must be strictly increasing")
        if np.any(self.cp < 0) or np.any(self.cp >= BETZ_LIMIT):
            raise DataError("C_p must satisfy 0 <= C_p < 16/27")
        if not 0 <= self.cut_in < self.cut_out:
            raise DataError("need 0 <= cut_in < cut_out")


@dataclass(frozen=True)
class RotorSpec:
    """Rotor geometry and operating point."""

    radius: float = 46.5
    hub_height: float = 65.0
    n_blades: int = 3
    omega: float = 1.56
    rho: float = 1.225
    nacelle_cd: float = 1.0
    nacelle_cl: float = 0.0
    elements: tuple[BladeElement, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.n_blades < 1:
            raise ConfigError("n_blades must be >= 1")
        if self.radius <= 0 or self.rho <= 0:
            raise ConfigError("radius and rho must be positive")
        object.__setattr__(self, "elements", tuple(self.elements))
        if self.elements:
            edges = [self.elements[0].r - self.elements[0].dr / 2]
            for e in self.elements:
                edges.append(e.r + e.dr / 2)
            edges = np.asarray(edges)
            inner = np.array([e.r - e.dr / 2 for e in self.elements])
            if not np.allclose(inner, edges[:-1], atol=1e-9 * self.radius):
                raise ConfigError("elements must tile the span contiguously")
            if edges[0] < -1e-9 or edges[-1] > self.radius * (1 + 1e-9):
                raise ConfigError("elements must lie within (0, R]")

    def nacelle_polar(self) -> AirfoilPolar:
        return AirfoilPolar.constant(self.nacelle_cl, self.nacelle_cd)


def omega_from_tsr(tsr: float, u_inf: float, radius: float) -> float:
    """Rotor speed (rad/s) from tip-speed ratio at inflow speed u_inf."""
    if radius <= 0:
        raise ConfigError("radius must be positive")
    return tsr * u_inf / radius


def inflow_angle(omega: float, r: float, u_theta: float,
                 u_n: float) -> float:
    """Flow inclination angle phi = atan2(omega*r - u_theta, u_n)."""
    num = omega * r - u_theta
    if num == 0.0 and u_n == 0.0:
        raise DomainError("inflow angle undefined: zero relative velocity")
    return math.atan2(num, u_n)


def attack_angle(phi: float, twist: float, pitch: float) -> float:
    """Angle of attack alpha = phi - twist - pitch (all radians)."""
    return phi - twist - pitch


def interpolate_polar(polar: AirfoilPolar, alpha: float, re: float = 0.0
                      ) -> tuple[float, float, bool]:
    """Bilinear (C_L, C_D) lookup; queries outside the table are clamped.

    Returns (c_l, c_d, clamped) where clamped flags an out-of-range query.
    """
    if not math.isfinite(alpha):
        raise DataError("alpha must be finite")
    clamped = bool(alpha < polar.alpha[0] or alpha > polar.alpha[-1])
    a = min(max(alpha, polar.alpha[0]), polar.alpha[-1])
    if polar.re.size == 1:
        c_l = float(np.interp(a, polar.alpha, polar.cl[:, 0]))
        c_d = float(np.interp(a, polar.alpha, polar.cd[:, 0]))
        return c_l, c_d, clamped
    clamped = clamped or re < polar.re[0] or re > polar.re[-1]
    rr = min(max(re, polar.re[0]), polar.re[-1])
    ia = min(int(np.searchsorted(polar.alpha, a, side="right")) - 1,
             polar.alpha.size - 2)
    ir = min(int(np.searchsorted(polar.re, rr, side="right")) - 1,
             polar.re.size - 2)
    ia = max(ia, 0)
    ir = max(ir, 0)
    ta = (a - polar.alpha[ia]) / (polar.alpha[ia + 1] - polar.alpha[ia])
    tr = (rr - polar.re[ir]) / (polar.re[ir + 1] - polar.re[ir])

    def blend(tab):
        return float((1 - ta) * (1 - tr) * tab[ia, ir]
                     + ta * (1 - tr) * tab[ia + 1, ir]
                     + (1 - ta) * tr * tab[ia, ir + 1]
                     + ta * tr * tab[ia + 1, ir + 1])

    return blend(polar.cl), blend(polar.cd), clamped


class ElementForces(NamedTuple):
    """Per-element force differentials, in newtons."""

    df_l: float
    df_d: float
    df_n: float
    df_theta: float


def element_forces(e: BladeElement, flow: FlowSample, polar: AirfoilPolar,
                   rho: float, omega: float, re: float = 0.0
                   ) -> ElementForces:
    """Lift/drag and their normal/tangential projections on one element.

    dF_L = 1/2 rho c |U_rel|^2 C_L dr, dF_D likewise with C_D;
    dF_n = dF_L cos(phi) + dF_D sin(phi);
    dF_theta = dF_L sin(phi) - dF_D cos(phi).
    A PolarRangeWarning is issued when alpha falls outside the polar table.
    """
    if not all(math.isfinite(v) for v in (rho, omega, re)):
        raise DataError("element force inputs must be finite")
    u_rel = flow.u_rel(omega, e.r)
    if u_rel == 0.0:
        return ElementForces(0.0, 0.0, 0.0, 0.0)
    phi = inflow_angle(omega, e.r, flow.u_theta, flow.u_n)
    alpha = attack_angle(phi, e.twist, e.pitch)
    c_l, c_d, clamped = interpolate_polar(polar, alpha, re)
    if clamped:
        warnings.warn(PolarRangeWarning(
            f"alpha={alpha:.4f} rad outside polar table; value clamped"),
            stacklevel=2)
    q = 0.5 * rho * e.chord * u_rel * u_rel * e.dr
    df_l = q * c_l
    df_d = q * c_d
    df_n = df_l * math.cos(phi) + df_d * math.sin(phi)
    df_theta = df_l * math.sin(phi) - df_d * math.cos(phi)
    return ElementForces(df_l, df_d, df_n, df_theta)


class SourceTerms(NamedTuple):
    """Momentum sources for one element, with their direction tags."""

    s_n: float
    s_theta: float
    n_direction: str = "v_n"
    theta_direction: str = "v_theta"


def source_terms(e: BladeElement, flow: FlowSample, polar: AirfoilPolar,
                 spec: RotorSpec, re: float = 0.0) -> SourceTerms:
    """All-blade momentum sources: N times the single-element forces.

    S_n acts along the disk normal, S_theta along the local tangential
    direction (the returned tags name the unit vectors).
    """
    f = element_forces(e, flow, polar, spec.rho, spec.omega, re=re)
    return SourceTerms(s_n=spec.n_blades * f.df_n,
                       s_theta=spec.n_blades * f.df_theta)


def rotor_integrate(spec: RotorSpec, volumes: np.ndarray, radii: np.ndarray,
                    s_n: np.ndarray, s_theta: np.ndarray
                    ) -> tuple[float, float, float]:
    """Thrust, torque and power from per-cell sources.

    T = sum(rho V_i S_n_i), Q = sum(rho V_i r_i S_theta_i), P = omega Q.
    """
    volumes = np.asarray(volumes, dtype=float)
    radii = np.asarray(radii, dtype=float)
    s_n = np.asarray(s_n, dtype=float)
    s_theta = np.asarray(s_theta, dtype=float)
    if volumes.size == 0:
        raise DataError("rotor_integrate needs at least one cell")
    if not (volumes.shape == radii.shape == s_n.shape == s_theta.shape):
        raise DataError("cell arrays must share a shape")
    if np.any(volumes <= 0):
        raise DataError("cell volumes must be positive")
    thrust = float(np.sum(spec.rho * volumes * s_n))
    torque = float(np.sum(spec.rho * volumes * radii * s_theta))
    power = spec.omega * torque
    return thrust, torque, power


def power_from_curve(curve: PowerCurve, u: float, radius: float,
                     rho: float = 1.225) -> float:
    """P = 1/2 rho C_p(U) pi R^2 U^3, zero outside [cut_in, cut_out]."""
    if u < 0:
        raise DomainError(f"wind speed must be non-negative, got {u}")
    if u < curve.cut_in or u > curve.cut_out:
        return 0.0
    cp = float(np.interp(u, curve.u, curve.cp))
    return 0.5 * rho * cp * math.pi * radius * radius * u ** 3


def abl_reference_tke(u_hub: float, i_hub: float) -> float:
    """Freestream turbulent kinetic energy 3/2 (I U)^2 at hub height."""
    return 1.5 * (i_hub * u_hub) ** 2


def load_rotor_file(path: str | Path
                    ) -> tuple[RotorSpec, AirfoilPolar, PowerCurve]:
    """Read a rotor definition document (JSON).

    Keys: radius, hub_height, n_blades, omega OR tsr_design (+u_design),
    rho, nacelle_cd, nacelle_cl, elements [{r, dr, chord, twist, pitch}],
    polar {alpha_deg, re?, cl, cd}, power_curve {u, cp, cut_in, cut_out}.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"rotor file is not valid JSON: {e}") from e
    try:
        elements = tuple(BladeElement(r=el["r"], dr=el["dr"],
                                      chord=el["chord"],
                                      twist=el.get("twist", 0.0),
                                      pitch=el.get("pitch", 0.0))
                         for el in doc["elements"])
        omega = doc.get("omega")
        if omega is None:
            omega = omega_from_tsr(doc["tsr_design"], doc["u_design"],
                                   doc["radius"])
        spec = RotorSpec(radius=doc["radius"], hub_height=doc["hub_height"],
                         n_blades=doc["n_blades"], omega=omega,
                         rho=doc.get("rho", 1.225),
                         nacelle_cd=doc.get("nacelle_cd", 1.0),
                         nacelle_cl=doc.get("nacelle_cl", 0.0),
                         elements=elements)
        pd = doc["polar"]
        polar = AirfoilPolar(alpha=np.deg2rad(pd["alpha_deg"]),
                             re=pd.get("re", [1.0]),
                             cl=np.asarray(pd["cl"]),
                             cd=np.asarray(pd["cd"]))
        cd = doc["power_curve"]
        curve = PowerCurve(u=cd["u"], cp=cd["cp"], cut_in=cd["cut_in"],
                           cut_out=cd["cut_out"])
    except KeyError as e:
        raise ConfigError(f"rotor file missing key {e}") from e
    return spec, polar, curve
