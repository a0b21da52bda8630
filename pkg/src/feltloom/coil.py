"""Coiling passes: horizontal (spring-like) and crossed (platform-tilted)."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .kinematics import StewartGeometry, UnreachableError, reachable, work_pose
from .mesh import WorkEnvelope

AXLE_STEPS = 200
MAX_SLOPE_DEG = 60.0
SUPPORTED_RATIOS = (0, 25, 50, 75, 100)
BLOCK_CYCLES = 20
WAYPOINTS_PER_CYCLE = 20


class CoilError(ValueError):
    pass


@dataclass(frozen=True)
class TensionLevel:
    level: str
    nominal_force: float  # N
    jitter_sigma: float  # mm, radial deposition noise
    slack_factor: float  # feeder surplus over the take-up length

    def __post_init__(self):
        if self.level not in ("none", "low", "high", "custom"):
            raise ValueError(f"unknown tension level {self.level!r}")
        if self.nominal_force < 0 or self.jitter_sigma < 0 or self.slack_factor <= 0:
            raise ValueError("tension parameters must be non-negative")


NONE = TensionLevel("none", 0.0, 1.0, 1.10)
LOW = TensionLevel("low", 0.05, 0.3, 1.02)
HIGH = TensionLevel("high", 0.1, 0.05, 1.00)
TENSIONS = {"none": NONE, "low": LOW, "high": HIGH}


def check_tension_levels(levels: dict[str, TensionLevel]) -> None:
    n, lo, hi = levels["none"], levels["low"], levels["high"]
    if not (n.nominal_force == 0 < lo.nominal_force < hi.nominal_force):
        raise ValueError("tension forces must satisfy none = 0 < low < high")
    if not (n.jitter_sigma > lo.jitter_sigma > hi.jitter_sigma):
        raise ValueError("jitter must strictly decrease with tension")
    if not (n.slack_factor >= lo.slack_factor >= hi.slack_factor):
        raise ValueError("slack factors must not increase with tension")


@dataclass(frozen=True)
class CoilPass:
    """One coiling pass.

    Horizontal passes lay ``cycles`` spring-like turns at ``pitch`` and sweep
    up (``direction`` = +1) or down; more cycles than fit in the region wrap
    into further sweeps. Crossed passes run ``cycles`` up-and-down traverses
    at ``slope_deg``. ``span_deg`` < 360 marks an embroidery stroke stack:
    ``cycles`` back-and-forth strokes over ``span_deg`` starting at material
    angle ``theta_start_deg``, at a fixed height ``z_start``.
    """

    kind: str
    z_start: float
    z_end: float
    radius_at_start: float
    cycles: int
    pitch: float
    slope_deg: float = 0.0
    material_id: str = "wool"
    tension: TensionLevel = LOW
    direction: int = 1
    span_deg: float = 360.0
    theta_start_deg: float = 0.0

    def __post_init__(self):
        if self.kind not in ("horizontal", "crossed"):
            raise ValueError(f"unknown pass kind {self.kind!r}")
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")
        if not 0.0 <= self.slope_deg <= MAX_SLOPE_DEG:
            raise ValueError("slope must be within [0, 60] degrees")
        if not self.pitch > 0:
            raise ValueError("pitch must be > 0")
        if self.kind == "horizontal" and self.slope_deg != 0:
            raise ValueError("horizontal passes have zero slope")
        if self.kind == "crossed" and self.slope_deg <= 0:
            raise ValueError("crossed passes need a positive slope")
        if not 0 < self.span_deg <= 360.0:
            raise ValueError("span must be within (0, 360]")
        if self.span_deg < 360.0 and self.kind != "horizontal":
            raise ValueError("embroidery strokes are horizontal")

    @property
    def height(self) -> float:
        return self.z_end - self.z_start

    @property
    def is_stroke(self) -> bool:
        return self.span_deg < 360.0

    @property
    def cycles_per_sweep(self) -> int:
        return max(1, int(math.floor(self.height / self.pitch + 1e-9)))


@dataclass(frozen=True)
class CoilSchedule:
    blocks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def total_cycles(self) -> int:
        return sum(b.cycles for b in self.blocks)

    @property
    def crossed_cycles(self) -> int:
        return sum(b.cycles for b in self.blocks if b.kind == "crossed")

    @property
    def horizontal_cycles(self) -> int:
        return sum(b.cycles for b in self.blocks if b.kind == "horizontal")

    def __add__(self, other: "CoilSchedule") -> "CoilSchedule":
        return CoilSchedule(self.blocks + other.blocks)

    def __len__(self):
        return len(self.blocks)


@dataclass(frozen=True)
class GearRatio:
    feeder_steps_per_axle_cycle: int
    axle_steps_per_cycle: int = AXLE_STEPS

    def __post_init__(self):
        if self.feeder_steps_per_axle_cycle < 1 or self.axle_steps_per_cycle < 1:
            raise ValueError("gear ratio counts must be >= 1")


def helix_length(radius: float, pitch: float, turns: float) -> float:
    return turns * math.hypot(2 * math.pi * radius, pitch)


def horizontal_coil(z_start: float, z_end: float, radius: float, line_width: float,
                    layers: int = 1, tension: TensionLevel = LOW, packing: float = 1.0,
                    material_id: str = "wool", first_direction: int = 1) -> CoilSchedule:
    """Spring-like layers over [z_start, z_end], alternating sweep direction."""
    if layers < 1:
        raise CoilError("layers must be >= 1")
    if z_end - z_start < line_width - 1e-9 or line_width <= 0:
        raise CoilError(f"region {z_start}..{z_end} is shorter than one line width")
    cycles = int(math.floor((z_end - z_start) / line_width + 1e-9))
    blocks = []
    for k in range(layers):
        direction = first_direction if k % 2 == 0 else -first_direction
        blocks.append(CoilPass("horizontal", z_start, z_end, radius + k * line_width * packing,
                               cycles, line_width, 0.0, material_id, tension, direction))
    return CoilSchedule(blocks)


def crossed_tilt(slope_deg: float, max_tilt_deg: float = 10.0) -> float:
    """Platform pitch used while traversing at ``slope_deg``."""
    return max_tilt_deg * slope_deg / MAX_SLOPE_DEG


def crossed_leg_steps(p: CoilPass, radius: float | None = None) -> int:
    """Axle steps for one traverse so the yarn climbs at the pass slope."""
    r = p.radius_at_start if radius is None else radius
    travel = max(p.height - p.pitch, 1e-9)
    revs = travel / (2 * math.pi * max(r, 1e-9) * math.tan(math.radians(p.slope_deg)))
    return max(WAYPOINTS_PER_CYCLE // 2, int(round(revs * AXLE_STEPS)))


def spread_leg_steps(nominal: int, cycles: int, tolerance: float = 0.1) -> int:
    """Leg length near ``nominal`` whose cycle starts spread evenly around the axle.

    A cycle that is close to a whole revolution would lay every cycle on top of
    the previous one; nudging the leg by up to ``tolerance`` (at least one
    step) picks the length whose ``cycles`` start angles have the widest
    smallest gap.
    """
    if cycles <= 1:
        return nominal
    delta = max(1, int(round(nominal * tolerance)))
    lo = max(WAYPOINTS_PER_CYCLE // 2, nominal - delta)
    best, best_key = nominal, None
    for leg in range(lo, nominal + delta + 1):
        starts = sorted((k * 2 * leg) % AXLE_STEPS for k in range(cycles))
        gaps = [b - a for a, b in zip(starts, starts[1:])] + [starts[0] + AXLE_STEPS - starts[-1]]
        key = (min(gaps), -abs(leg - nominal))
        if best_key is None or key > best_key:
            best, best_key = leg, key
    return best


def split_steps(total: int, parts: int) -> list[int]:
    return [round((k + 1) * total / parts) - round(k * total / parts) for k in range(parts)]


def crossed_pose_targets(p: CoilPass, max_tilt_deg: float = 10.0) -> list[tuple]:
    """Work-frame pose targets (x, y, z, roll, pitch, yaw) for every waypoint.

    Each cycle climbs through 10 waypoints tilted up, then descends through
    10 tilted down. The yarn centre stays half a line width inside the region.
    """
    tilt = crossed_tilt(p.slope_deg, max_tilt_deg)
    lo = p.z_start + p.pitch / 2
    hi = p.z_end - p.pitch / 2
    half = WAYPOINTS_PER_CYCLE // 2
    poses = []
    for _ in range(p.cycles):
        for k in range(1, half + 1):
            poses.append((0.0, 0.0, lo + (hi - lo) * k / half, 0.0, tilt, 0.0))
        for k in range(1, half + 1):
            poses.append((0.0, 0.0, hi - (hi - lo) * k / half, 0.0, -tilt, 0.0))
    return poses


def tilt_reversals(poses, initial_sign: int = -1) -> int:
    """Count changes of tilt direction; the platform rests tilted down at the start."""
    sign = initial_sign
    count = 0
    for pose in poses:
        pitch = pose[4]
        if pitch == 0:
            continue
        s = 1 if pitch > 0 else -1
        if s != sign:
            count += 1
            sign = s
    return count


def check_crossed_reach(p: CoilPass, env: WorkEnvelope, geom: StewartGeometry,
                        max_tilt_deg: float = 10.0) -> None:
    tilt = crossed_tilt(p.slope_deg, max_tilt_deg)
    lo = p.z_start + p.pitch / 2
    hi = p.z_end - p.pitch / 2
    # extremes bound the linear waypoint path
    for z in (lo, hi):
        for pitch in (tilt, -tilt):
            pose = work_pose(0.0, 0.0, z, 0.0, pitch, 0.0, env, geom)
            if not reachable(pose, geom):
                raise UnreachableError(range(6), f"crossed pass pose z={z:.3f} pitch={pitch:.2f}")


def crossed_coil(z_start: float, z_end: float, radius: float, line_width: float, cycles: int,
                 slope_deg: float, tension: TensionLevel = LOW, material_id: str = "wool",
                 env: WorkEnvelope | None = None, geom: StewartGeometry | None = None,
                 max_tilt_deg: float = 10.0) -> CoilSchedule:
    if not 0 < slope_deg <= MAX_SLOPE_DEG:
        raise CoilError(f"slope {slope_deg} deg exceeds the {MAX_SLOPE_DEG:g} deg limit"
                        if slope_deg > 0 else "slope must be positive")
    if z_end - z_start < line_width - 1e-9:
        raise CoilError(f"region {z_start}..{z_end} is shorter than one line width")
    p = CoilPass("crossed", z_start, z_end, radius, cycles, line_width, slope_deg,
                 material_id, tension)
    check_crossed_reach(p, env or WorkEnvelope(), geom or StewartGeometry(), max_tilt_deg)
    return CoilSchedule([p])


def ratio_schedule(total_cycles: int = 200, crossed_ratio: int = 25, z_start: float = 0.0,
                   z_end: float = 40.0, radius: float = 10.0, line_width: float = 2.5,
                   tension: TensionLevel = LOW, slope_deg: float = MAX_SLOPE_DEG,
                   material_id: str = "wool") -> CoilSchedule:
    """Test-coupon schedule: 10 repeats of a block of crossed then horizontal cycles."""
    if crossed_ratio not in SUPPORTED_RATIOS:
        raise CoilError(f"unsupported crossed ratio {crossed_ratio}%; "
                        f"supported: {', '.join(map(str, SUPPORTED_RATIOS))}")
    if total_cycles % BLOCK_CYCLES != 0 or total_cycles <= 0:
        raise CoilError("total cycles must be a positive multiple of 20")
    per_block = total_cycles // 10
    n_crossed = per_block * crossed_ratio // 100
    blocks = []
    for _ in range(10):
        if n_crossed:
            blocks.append(CoilPass("crossed", z_start, z_end, radius, n_crossed, line_width,
                                   slope_deg, material_id, tension))
        if per_block - n_crossed:
            blocks.append(CoilPass("horizontal", z_start, z_end, radius, per_block - n_crossed,
                                   line_width, 0.0, material_id, tension))
    return CoilSchedule(blocks)


def tension_to_gear_ratio(tension: TensionLevel, line_width: float, current_radius: float,
                          feeder_wheel_circumference: float = 50.0) -> GearRatio:
    """Feeder steps per axle revolution.

    ``current_radius`` is the radius of the yarn centreline being laid; the
    feed matches its circumference, times the tension's slack surplus.
    """
    if current_radius <= 0:
        raise CoilError("current radius must be > 0")
    if line_width <= 0:
        raise CoilError("line width must be > 0")
    factor = 2 * math.pi * current_radius / feeder_wheel_circumference * tension.slack_factor
    return GearRatio(max(1, int(round(AXLE_STEPS * factor))), AXLE_STEPS)


def with_radius(p: CoilPass, radius: float) -> CoilPass:
    return replace(p, radius_at_start=radius)
