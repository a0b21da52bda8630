"""Felting operations: punch stations, counts and approach directions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kinematics import StewartGeometry, felt_reach_check
from .mesh import RadialProfile, WorkEnvelope
from .process import DensityCurve, NeedleSpec, punches_for_density

COUPON_AREA_MM2 = 625.0  # 2.5 x 2.5 cm test column the density curve was measured on
MODES = ("around_circle", "vertical_side", "spot")


class FeltPlanError(ValueError):
    pass


class UnreachableStationError(FeltPlanError):
    def __init__(self, angles, z=None):
        self.angles = list(angles)
        self.z = z
        where = f" at z={z:.3f}" if z is not None else ""
        super().__init__(f"felting station(s) unreachable{where}: axle angles "
                         + ", ".join(f"{a:.2f}" for a in self.angles))


class CannotAddMaterialError(FeltPlanError):
    def __init__(self, slabs):
        self.slabs = list(slabs)
        super().__init__("target exceeds current profile in slab(s) "
                         + ", ".join(map(str, self.slabs)) + "; coil more material first")


@dataclass(frozen=True)
class FeltOp:
    """One felting station.

    ``target`` and ``approach`` are in the tool frame: the axle has turned the
    workpiece to ``axle_angle`` so the point being felted faces the needle at
    azimuth 0. ``after_pass`` is the index of the coil block the op follows
    (None: after all coiling).
    """

    target: tuple
    approach: tuple
    punches: int
    needle: NeedleSpec
    mode: str = "around_circle"
    axle_angle: float = 0.0
    after_pass: int | None = None

    def __post_init__(self):
        if self.punches < 1:
            raise ValueError("felt op needs at least one punch")
        if self.mode not in MODES:
            raise ValueError(f"unknown felt mode {self.mode!r}")
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))
        object.__setattr__(self, "approach", tuple(float(v) for v in self.approach))

    @property
    def z(self) -> float:
        return self.target[2]

    @property
    def radius(self) -> float:
        return math.hypot(self.target[0], self.target[1])


def inward_approach(elevation_deg: float = 0.0) -> tuple:
    e = math.radians(elevation_deg)
    return (-math.cos(e), 0.0, math.sin(e))


def surface_elevation(dr_dz: float, max_tilt_deg: float = 10.0) -> float:
    """Elevation of the inward surface normal, clamped to what the platform can tilt.

    The needle cannot point downward, so faces looking up are felted level.
    """
    return min(max(math.degrees(math.atan(dr_dz)), 0.0), max_tilt_deg)


def _check(ops, env, geom, z=None):
    bad = [op.axle_angle for op in ops if not felt_reach_check(op.target, op.approach, env, geom)]
    if bad:
        raise UnreachableStationError(bad, z if z is not None else ops[0].z)
    return ops


def felt_around(z: float, stations: int, punches_per_station: int, needle: NeedleSpec,
                radius: float = 10.0, elevation_deg: float = 0.0,
                env: WorkEnvelope | None = None, geom: StewartGeometry | None = None,
                after_pass: int | None = None) -> list[FeltOp]:
    """Stations evenly spaced around a ring at height z and surface radius ``radius``."""
    if stations < 1:
        raise FeltPlanError("stations must be >= 1")
    env = env or WorkEnvelope()
    if not 0 <= z <= env.cyl_height:
        raise FeltPlanError(f"z={z:.3f} lies outside the workpiece extent")
    approach = inward_approach(elevation_deg)
    ops = [FeltOp((radius, 0.0, z), approach, punches_per_station, needle,
                  "around_circle", k * 360.0 / stations, after_pass)
           for k in range(stations)]
    return _check(ops, env, geom or StewartGeometry(), z)


def felt_vertical(side_angle: float, z_start: float, z_end: float, step: float,
                  punches_per_stop: int, needle: NeedleSpec, radius: float = 10.0,
                  env: WorkEnvelope | None = None, geom: StewartGeometry | None = None,
                  after_pass: int | None = None) -> list[FeltOp]:
    """Stops climbing one side of the workpiece at a fixed axle angle."""
    if not z_end > z_start:
        raise FeltPlanError("z_end must exceed z_start")
    if not step > 0:
        raise FeltPlanError("step must be > 0")
    env = env or WorkEnvelope()
    geom = geom or StewartGeometry()
    n = int(math.floor((z_end - z_start) / step + 1e-9)) + 1
    ops = []
    for k in range(n):
        z = z_start + k * step
        op = FeltOp((radius, 0.0, z), inward_approach(0.0), punches_per_stop, needle,
                    "vertical_side", side_angle, after_pass)
        _check([op], env, geom, z)
        ops.append(op)
    return ops


def stations_for_ring(radius: float, footprint: float = 3.0) -> int:
    """Fewest stations whose footprints tile the circumference."""
    return max(1, math.ceil(2 * math.pi * radius / footprint - 1e-9))


def punches_per_station(n_equiv: float, arc_spacing: float, band_height: float) -> int:
    """Punches at one station so its share of surface sees ``n_equiv`` coupon punches."""
    return max(1, math.ceil(n_equiv * arc_spacing * band_height / COUPON_AREA_MM2 - 1e-9))


def required_density(d_current: float, r_current: float, r_target: float,
                     core_radius: float = 0.0) -> float:
    """Density that squeezes the annulus (core, r_current] down to (core, r_target]."""
    c2 = core_radius * core_radius
    return d_current * (r_current ** 2 - c2) / (r_target ** 2 - c2)


def compression_plan(profile_current: RadialProfile, profile_target: RadialProfile,
                     needle: NeedleSpec, curve: DensityCurve, d_current: float | None = None,
                     core_radius: float = 0.0, footprint: float = 3.0,
                     tolerance: float = 1e-9, max_tilt_deg: float = 10.0,
                     saturation: float = 0.999, env: WorkEnvelope | None = None,
                     geom: StewartGeometry | None = None,
                     after_pass: int | None = None) -> list[FeltOp]:
    """Felting rings that compress each slab from the current to the target radius.

    Slabs whose excess radius is within ``tolerance`` are left alone. Demand
    beyond ``saturation`` of the needle's maximum density is clamped there;
    the residual shows up in simulation rather than as an error.
    """
    cur = profile_current.r_max
    tgt = profile_target.r_max
    if cur.shape != tgt.shape or not np.allclose(profile_current.z_samples,
                                                 profile_target.z_samples):
        raise FeltPlanError("profiles must share z sampling")
    over = [i for i in range(len(cur)) if tgt[i] > cur[i] + 1e-9]
    if over:
        raise CannotAddMaterialError(over)
    d_cur = curve.d0 if d_current is None else d_current
    d_cap = saturation * curve.d_max[needle]
    env = env or WorkEnvelope()
    geom = geom or StewartGeometry()
    h = profile_target.slab_height
    dr_dz = np.gradient(tgt, profile_target.z_samples) if len(tgt) > 1 else np.zeros_like(tgt)
    ops = []
    for i in range(len(cur)):
        if cur[i] - tgt[i] <= tolerance:
            continue
        r_t = max(tgt[i], core_radius + 1e-3)
        d_req = min(required_density(d_cur, cur[i], r_t, core_radius), d_cap)
        n_eq = punches_for_density(d_req, needle, curve)
        if n_eq == 0:
            continue
        stations = stations_for_ring(cur[i], footprint)
        p = punches_per_station(n_eq, 2 * math.pi * cur[i] / stations, h)
        z = float(profile_target.z_samples[i])
        ops.extend(felt_around(z, stations, p, needle, float(cur[i]),
                               surface_elevation(float(dr_dz[i]), max_tilt_deg),
                               env, geom, after_pass))
    return ops


def total_punches(ops) -> int:
    return sum(op.punches for op in ops)
