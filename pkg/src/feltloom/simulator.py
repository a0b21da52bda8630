"""Cylindrical voxel simulation of coiling and felting.

The field holds, for each (radius, sector, z) cell, the fibre mass and the
volume it occupies. Each (sector, z) column fills contiguously outward from
the core, so its outer radius is the surface the next yarn turn lands on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coil import AXLE_STEPS
from .felt import COUPON_AREA_MM2
from .kinematics import rotation_matrix
from .mesh import RadialProfile, WorkEnvelope
from .process import (MaterialSpec, NeedleSpec, ProcessModels, density_after, estimate_time,
                      needle_strength, ratio_tensile)
from .program import (FEEDER_AZIMUTH, Dwell, Feed, Felt, MachineProgram, Mat, Pose, Rot,
                      material_angle, program_counts)

G_PER_MM3 = 1e-3  # 1 g/cm^3 in g/mm^3


class SimulationError(ValueError):
    pass


class EnvelopeOverflowError(SimulationError):
    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(f"instruction {index}: {message}")


class NeedleProtectionError(SimulationError):
    pass


@dataclass(frozen=True)
class SimParams:
    line_width: float = 2.5
    packing: float = 1.0
    feeder_wheel_circumference: float = 50.0
    core_radius: float = 3.0
    stick_radius: float = 1.0
    dr: float = 1.0
    dz: float = 1.0
    n_theta: int = 24
    margin: float = 5.0
    needle: NeedleSpec = NeedleSpec("triangle", "thick")
    min_thickness_fraction: float = 0.2
    max_band_factor: float = 4.0
    scan_step: float = 0.1

    def __post_init__(self):
        if not (self.dr > 0 and self.dz > 0 and self.n_theta >= 8):
            raise ValueError("simulator resolution must be positive with >= 8 sectors")
        if not 0 < self.stick_radius < self.core_radius:
            raise ValueError("stick radius must be within (0, core radius)")


class DensityField:
    """Mass and occupied volume per annular-sector cell."""

    def __init__(self, env: WorkEnvelope | None = None, params: SimParams | None = None,
                 radius: float | None = None, z_range: tuple | None = None):
        self.env = env or WorkEnvelope()
        self.p = params or SimParams()
        p = self.p
        r_top = (radius if radius is not None else self.env.cyl_radius) + p.margin
        self.n_r = int(math.ceil(r_top / p.dr))
        lo, hi = z_range if z_range is not None else (-p.margin, self.env.cyl_height + p.margin)
        self.z0 = lo
        self.n_z = int(math.ceil((hi - lo) / p.dz))
        self.n_theta = p.n_theta
        self.core_radius = p.core_radius
        edges = np.arange(self.n_r + 1) * p.dr
        self.r_lo = np.maximum(edges[:-1], p.core_radius)
        self.r_hi = np.maximum(edges[1:], p.core_radius)
        self.cap = math.pi * (self.r_hi ** 2 - self.r_lo ** 2) * p.dz / self.n_theta
        self.mass = np.zeros((self.n_r, self.n_theta, self.n_z))
        self.vol = np.zeros((self.n_r, self.n_theta, self.n_z))
        self.n_eq = np.zeros((self.n_theta, self.n_z))  # coupon-equivalent punches per column
        self.felted = np.zeros((self.n_theta, self.n_z), dtype=bool)
        self.first_cell = int(np.argmax(self.cap > 0))

    # geometry

    @property
    def dtheta(self) -> float:
        return 2 * math.pi / self.n_theta

    def sector_of(self, theta_deg: float) -> int:
        return int(math.floor((theta_deg % 360.0) / 360.0 * self.n_theta)) % self.n_theta

    def z_index(self, z: float) -> int:
        return int(math.floor((z - self.z0) / self.p.dz))

    def z_center(self, k: int) -> float:
        return self.z0 + (k + 0.5) * self.p.dz

    def column_radius(self, j: int, k: int) -> float:
        v = self.vol[:, j, k]
        filled = np.nonzero(v > 0)[0]
        if len(filled) == 0:
            return self.core_radius
        i = filled[-1]
        f = min(1.0, v[i] / self.cap[i])
        return math.sqrt(self.r_lo[i] ** 2 + f * (self.r_hi[i] ** 2 - self.r_lo[i] ** 2))

    def surface(self) -> np.ndarray:
        """(n_theta, n_z) outer radius of every column."""
        full = self.vol >= self.cap[:, None, None] * (1 - 1e-12)
        out = np.full((self.n_theta, self.n_z), self.core_radius)
        any_fill = self.vol > 0
        idx = np.where(any_fill.any(axis=0), self.n_r - 1 - np.argmax(any_fill[::-1], axis=0), -1)
        for j, k in zip(*np.nonzero(idx >= 0)):
            i = idx[j, k]
            f = 1.0 if full[i, j, k] else self.vol[i, j, k] / self.cap[i]
            out[j, k] = math.sqrt(self.r_lo[i] ** 2 + f * (self.r_hi[i] ** 2 - self.r_lo[i] ** 2))
        return out

    def mean_radius(self, z_lo: float, z_hi: float) -> float:
        """Mean surface radius over all sectors for z cells touching [z_lo, z_hi]."""
        k0 = min(max(self.z_index(z_lo), 0), self.n_z - 1)
        k1 = min(max(self.z_index(z_hi), 0), self.n_z - 1)
        return float(np.mean([self.column_radius(j, k) for j in range(self.n_theta)
                              for k in range(k0, k1 + 1)]))

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    # deposition

    def add_to_column(self, j: int, k: int, m: float, v: float, index: int = -1) -> None:
        """Fill (mass m, volume v) outward from the column surface."""
        if v <= 0:
            return
        vol = self.vol[:, j, k]
        mass = self.mass[:, j, k]
        filled = np.nonzero(vol > 0)[0]
        i = filled[-1] if len(filled) else self.first_cell
        rho = m / v
        remaining = v
        while remaining > 1e-15:
            if i >= self.n_r:
                raise EnvelopeOverflowError(index, "deposit exceeds the field radius")
            room = self.cap[i] - vol[i]
            if room <= 1e-15:
                i += 1
                continue
            take = min(room, remaining)
            vol[i] += take
            mass[i] += take * rho
            remaining -= take
            if remaining > 1e-15:
                i += 1
        # keep exact mass bookkeeping against rounding
        return None

    def deposit_chunk(self, theta_deg: float, z: float, m: float, v: float, band: float,
                      index: int = -1, arc_deg: float = 0.0) -> None:
        """Spread one yarn chunk over the axial band [z - band/2, z + band/2].

        With ``arc_deg`` > 0 the chunk covers [theta, theta + arc] and is split
        between sectors by overlap.
        """
        lo, hi = z - band / 2, z + band / 2
        k0 = self.z_index(lo)
        k1 = self.z_index(hi - 1e-12)
        if k0 < 0 or k1 >= self.n_z:
            raise EnvelopeOverflowError(index, f"deposit at z={z:.3f} leaves the field")
        if arc_deg > 0:
            width = 360.0 / self.n_theta
            t0 = theta_deg % 360.0
            parts = []
            a = t0
            end = t0 + arc_deg
            while a < end - 1e-12:
                j = int(math.floor(a / width))
                b = min(end, (j + 1) * width)
                parts.append((j % self.n_theta, (b - a) / arc_deg))
                a = b
        else:
            parts = [(self.sector_of(theta_deg), 1.0)]
        dz = self.p.dz
        for k in range(k0, k1 + 1):
            a = max(lo, self.z0 + k * dz)
            b = min(hi, self.z0 + (k + 1) * dz)
            share = (b - a) / band
            if share > 0:
                for j, f in parts:
                    self.add_to_column(j, k, m * share * f, v * share * f, index)

    # felting

    def repack_column(self, j: int, k: int, rho_target: float) -> None:
        """Compress a column so no cell is below ``rho_target`` (g/mm^3); mass conserved."""
        vol = self.vol[:, j, k]
        mass = self.mass[:, j, k]
        filled = np.nonzero(vol > 0)[0]
        if len(filled) == 0:
            return
        parcels_m = mass[filled].copy()
        dens = parcels_m / vol[filled]
        parcels_v = parcels_m / np.maximum(dens, rho_target)
        vol[:] = 0.0
        mass[:] = 0.0
        i = self.first_cell
        for pm, pv in zip(parcels_m, parcels_v):
            rho = pm / pv
            remaining = pv
            while remaining > 1e-15 * max(1.0, pv):
                room = self.cap[i] - vol[i]
                if room <= 1e-15:
                    i += 1
                    continue
                take = min(room, remaining)
                vol[i] += take
                mass[i] += take * rho
                remaining -= take
                if remaining > 1e-15 * max(1.0, pv):
                    i += 1
        # restore any rounding drift so total mass is exactly unchanged
        drift = parcels_m.sum() - mass.sum()
        if drift != 0.0:
            last = np.nonzero(vol > 0)[0][-1]
            mass[last] += drift

    def felt_columns(self, columns: dict, needle: NeedleSpec, curve) -> None:
        for (j, k), n in columns.items():
            if n <= 0:
                continue
            self.n_eq[j, k] += n
            self.felted[j, k] = True
            rho = density_after(self.n_eq[j, k], needle, curve) * G_PER_MM3
            self.repack_column(j, k, rho)

    # reductions

    def occupied_mask(self, threshold_g_cm3: float) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.where(self.vol > 0, self.mass / self.vol, 0.0) / G_PER_MM3
        return (self.vol > 0) & (dens >= threshold_g_cm3)

    def profile(self, z_min: float, z_max: float, n_slabs: int) -> RadialProfile:
        """Slab-max surface radius over the given slabs."""
        surf = self.surface()
        h = (z_max - z_min) / n_slabs
        sectors = np.zeros((n_slabs, self.n_theta))
        for s in range(n_slabs):
            a, b = z_min + s * h, z_min + (s + 1) * h
            ks = [k for k in range(self.n_z)
                  if self.z0 + k * self.p.dz < b - 1e-9 and self.z0 + (k + 1) * self.p.dz > a + 1e-9]
            if ks:
                sectors[s] = surf[:, ks].max(axis=1)
        z = z_min + h * (np.arange(n_slabs) + 0.5)
        return RadialProfile(z, sectors.max(axis=1), z_min, z_max, sectors)

    def dump(self) -> str:
        """Dense density slice rows: z r theta mass."""
        lines = ["# z_mm r_mm theta_deg mass_g"]
        rc = (self.r_lo + self.r_hi) / 2
        for k in range(self.n_z):
            for i in range(self.n_r):
                for j in range(self.n_theta):
                    m = self.mass[i, j, k]
                    if m > 0:
                        lines.append(f"{self.z_center(k):.3f} {rc[i]:.3f} "
                                     f"{(j + 0.5) * 360.0 / self.n_theta:.3f} {m:.9e}")
        return "\n".join(lines) + "\n"


def sigma_for_slack(slack: float, tensions: dict) -> float:
    """Jitter for the feed surplus the program asks for, interpolated between levels."""
    pts = sorted((t.slack_factor, t.jitter_sigma) for t in tensions.values())
    xs = [x for x, _ in pts]
    ys = [y for _, y in pts]
    return float(np.interp(slack, xs, ys))


def deposit_coil(fld: DensityField, z_from: float, z_to: float, axle_from: int, steps: int,
                 material: MaterialSpec, sigma: float, rng: np.random.Generator,
                 index: int = -1) -> float:
    """Lay yarn while the axle turns ``steps`` and the platform moves z_from -> z_to.

    Returns the path length laid (mm). Thickness noise is drawn once per turn.
    """
    p = fld.p
    w = p.line_width
    lam = material.linear_density * 1e-3  # g/mm
    n = abs(steps)
    if n == 0:
        return 0.0
    sign = 1 if steps > 0 else -1
    dphi = 2 * math.pi / AXLE_STEPS
    dz_step = (z_to - z_from) / n
    n_turns = (n + AXLE_STEPS - 1) // AXLE_STEPS
    eps = rng.standard_normal(n_turns) * sigma if sigma > 0 else np.zeros(n_turns)
    t_min = p.min_thickness_fraction * w
    length = 0.0
    seen: dict = {}  # surface under the yarn as the current turn began
    for s in range(n):
        if s % AXLE_STEPS == 0:
            seen.clear()
        z = z_from + (s + 0.5) * dz_step
        if not 0.0 - 1e-9 <= z <= fld.env.cyl_height + 1e-9:
            raise EnvelopeOverflowError(index, f"laydown z={z:.3f} outside the envelope")
        axle = axle_from + sign * (s + 0.5)
        theta = material_angle(axle * 360.0 / AXLE_STEPS, FEEDER_AZIMUTH)
        arc_deg = 360.0 / AXLE_STEPS
        t = max(t_min, w * p.packing + eps[s // AXLE_STEPS])
        j = fld.sector_of(theta)
        k = min(max(fld.z_index(z), 0), fld.n_z - 1)
        if (j, k) not in seen:
            seen[(j, k)] = fld.column_radius(j, k)
        r = seen[(j, k)] + t / 2
        arc = r * dphi
        seg = math.hypot(arc, dz_step)
        band = min(w * seg / arc, p.max_band_factor * w)
        fld.deposit_chunk(theta - arc_deg / 2, z, lam * seg, seg * w * t, band, index, arc_deg)
        length += seg
    return length


def _footprint_offsets(diameter: float, n: int = 9) -> np.ndarray:
    g = (np.arange(n) + 0.5) / n * diameter - diameter / 2
    u, v = np.meshgrid(g, g)
    keep = u ** 2 + v ** 2 <= (diameter / 2) ** 2
    return np.stack([u[keep], v[keep]], axis=1)


def apply_felt(fld: DensityField, target, approach, punches: float, needle: NeedleSpec,
               curve, axle_deg: float = 0.0, footprint: float = 3.0, index: int = -1) -> dict:
    """Punch ``punches`` times along ``approach`` towards the tool-frame point ``target``.

    The needle enters from the reach side and stops at the first fibre it meets;
    the footprint disk there raises each column's equivalent punch count.
    Returns the per-column increments.
    """
    if punches <= 0:
        return {}
    t = np.asarray(target, dtype=float)
    a = np.asarray(approach, dtype=float)
    a = a / np.linalg.norm(a)
    hit = _scan(fld, t - a * fld.env.felt_reach, a, 2 * fld.env.felt_reach, axle_deg)
    if hit is None:
        raise NeedleProtectionError(
            f"instruction {index}: needle meets no fibre before the core; punching would "
            "hit the rigid stick")
    theta_h, z_h, r_h = hit
    offs = _footprint_offsets(footprint)
    area_cell = r_h * fld.dtheta * fld.p.dz
    counts: dict = {}
    for u, v in offs:
        j = fld.sector_of(theta_h + math.degrees(u / r_h))
        k = fld.z_index(z_h + v)
        if 0 <= k < fld.n_z:
            counts[(j, k)] = counts.get((j, k), 0) + 1
    cols = {c: punches * COUPON_AREA_MM2 * cnt / len(offs) / area_cell
            for c, cnt in counts.items()}
    fld.felt_columns(cols, needle, curve)
    return cols


def _scan(fld: DensityField, start, direction, length: float, axle_deg: float):
    """First point with fibre along a tool-frame line; (material angle, z, surface r)."""
    step = fld.p.scan_step
    n = int(length / step) + 1
    for s in range(n):
        pt = start + direction * (s * step)
        r = math.hypot(pt[0], pt[1])
        k = fld.z_index(pt[2])
        if r <= fld.p.stick_radius:
            return None
        if not 0 <= k < fld.n_z:
            continue
        theta = material_angle(axle_deg, math.degrees(math.atan2(pt[1], pt[0])))
        j = fld.sector_of(theta)
        surf = fld.column_radius(j, k)
        if surf > fld.core_radius + 1e-9 and r <= surf:
            return theta, pt[2], surf
    return None


def felt_region(fld: DensityField, z_lo: float, z_hi: float, punches: float,
                needle: NeedleSpec, curve) -> None:
    """Felt every column in a z band uniformly to ``punches`` coupon punches."""
    cols = {}
    for k in range(fld.n_z):
        zc = fld.z_center(k)
        if z_lo <= zc <= z_hi:
            for j in range(fld.n_theta):
                cols[(j, k)] = punches
    fld.felt_columns(cols, needle, curve)


def coupon_field(mass: float = 1.0, side: float = 25.0, d0: float = 0.075,
                 params: SimParams | None = None) -> tuple[DensityField, tuple]:
    """Uniform loose-fibre block of ``mass`` g over a ``side`` mm tall band at density d0."""
    p = params or SimParams()
    volume = mass / (d0 * G_PER_MM3)
    r_out = math.sqrt(p.core_radius ** 2 + volume / (math.pi * side))
    env = WorkEnvelope(r_out + 1.0, side, 40.0)
    fld = DensityField(env, p, radius=r_out + 1.0, z_range=(0.0, side))
    per_col_v = volume / (fld.n_theta * fld.n_z)
    per_col_m = mass / (fld.n_theta * fld.n_z)
    for j in range(fld.n_theta):
        for k in range(fld.n_z):
            fld.add_to_column(j, k, per_col_m, per_col_v)
    return fld, (0.0, side)


def region_mean_density(fld: DensityField, z_lo: float, z_hi: float) -> float:
    ks = [k for k in range(fld.n_z) if z_lo <= fld.z_center(k) <= z_hi]
    m = fld.mass[:, :, ks].sum()
    v = fld.vol[:, :, ks].sum()
    return float(m / v / G_PER_MM3) if v > 0 else 0.0


def predicted_strength(fld: DensityField, region: tuple, models: ProcessModels,
                       needle: NeedleSpec | None = None, crossed_ratio: int = 0) -> tuple:
    """(tensile N, compressive N) for a z band, scaled by its density fraction.

    Felted bands use the needle maxima; coil-only bands use the crossed-ratio
    tensile table and the sub-1 N compressive cap.
    """
    z_lo, z_hi = region
    if not z_hi > z_lo:
        raise SimulationError("region must be nonempty")
    needle = needle or fld.p.needle
    rho = region_mean_density(fld, z_lo, z_hi)
    frac = rho / models.curve.d_max[needle]
    ks = [k for k in range(fld.n_z) if z_lo <= fld.z_center(k) <= z_hi]
    if not ks:
        raise SimulationError("region holds no cells")
    if fld.felted[:, ks].any():
        tensile, compressive = needle_strength(needle, models.strength)
        return tensile * frac, compressive * frac
    tensile = ratio_tensile(crossed_ratio, 50.0, models.strength) * min(frac, 1.0)
    cap = models.strength.coil_compressive_cap
    return tensile, min(cap * frac, cap * (1 - 1e-9))


@dataclass(frozen=True)
class SimReport:
    total_mass: float
    volume_cm3: float
    mean_density: float
    max_density: float
    profile: RadialProfile | None
    tensile: float
    compressive: float
    times: tuple
    seed: int
    path_length: float = 0.0
    deposited_mass: float = 0.0
    counts: object = None
    extra: dict = field(default_factory=dict)

    def to_text(self) -> str:
        c, f, s = self.times
        lines = [
            f"seed {self.seed}",
            f"total_mass_g {self.total_mass:.6f}",
            f"path_length_mm {self.path_length:.3f}",
            f"volume_cm3 {self.volume_cm3:.6f}",
            f"mean_density_g_cm3 {self.mean_density:.6f}",
            f"max_density_g_cm3 {self.max_density:.6f}",
            f"tensile_N {self.tensile:.3f}",
            f"compressive_N {self.compressive:.3f}",
            f"coil_s {c:.3f}",
            f"felt_s {f:.3f}",
            f"system_s {s:.3f}",
        ]
        if self.profile is not None:
            for z, r in zip(self.profile.z_samples, self.profile.r_max):
                lines.append(f"profile z={z:.3f} r={r:.3f}")
        return "\n".join(lines) + "\n"


def _seed_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def simulate(program: MachineProgram, material: MaterialSpec, models: ProcessModels | None = None,
             seed: int = 1, params: SimParams | None = None,
             profile_slabs: tuple | None = None, return_field: bool = False):
    """Run a program; deterministic for a given (program, material, models, seed).

    ``profile_slabs`` = (z_min, z_max, n) selects the slabs of the reported
    profile; by default one slab per line width over the envelope height.
    """
    if seed < 1:
        raise SimulationError("seed must be positive")
    models = models or ProcessModels()
    p = params or SimParams()
    r_env, h_env, reach = program.envelope
    env = WorkEnvelope(r_env, h_env, reach)
    fld = DensityField(env, p)
    cmds = program.commands
    pose = None
    axle = 0
    feed = None
    path = 0.0
    deposited = 0.0
    for idx, ins in enumerate(cmds):
        if isinstance(ins, Pose):
            nxt = cmds[idx + 1] if idx + 1 < len(cmds) else None
            if not isinstance(nxt, Rot):
                pose = ins
            else:
                start = pose if pose is not None else ins
                # coordinated move consumed by the next ROT
                pose = _Move(start, ins)
        elif isinstance(ins, Rot):
            if isinstance(pose, _Move):
                z_from, z_to = pose.start.z, pose.end.z
                end = pose.end
            else:
                z_from = z_to = pose.z
                end = pose
            if feed is not None:
                f, a = feed
                rc = fld.mean_radius(min(z_from, z_to), max(z_from, z_to)) \
                    + p.line_width * p.packing / 2
                take_up = a * 2 * math.pi * rc / p.feeder_wheel_circumference
                sigma = sigma_for_slack(f / take_up, models.tensions)
                before = fld.total_mass
                path += deposit_coil(fld, z_from, z_to, axle, ins.steps, material, sigma,
                                     _seed_rng(seed, idx), idx)
                deposited += fld.total_mass - before
            axle += ins.steps
            pose = end
        elif isinstance(ins, Feed):
            feed = (ins.feeder_steps, ins.axle_steps)
        elif isinstance(ins, Dwell):
            feed = None
        elif isinstance(ins, Felt):
            if pose is None:
                raise SimulationError(f"instruction {idx}: FELT before any POSE")
            rot = rotation_matrix(pose.roll, pose.pitch, pose.yaw)
            a = rot @ np.array([-1.0, 0.0, 0.0])
            centre = np.array([pose.x, pose.y, pose.z])
            apply_felt(fld, centre, a, ins.punches, p.needle,
                       models.curve, axle * 360.0 / AXLE_STEPS,
                       models.footprint_diameter, idx)
        elif isinstance(ins, Mat):
            pass
    counts = program_counts(program)
    times = estimate_time(counts_for_time(counts), models.time)
    occupied = fld.occupied_mask(models.curve.d0 / 2)
    vol = float(fld.vol[occupied].sum())
    mass_occ = float(fld.mass[occupied].sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(occupied, fld.mass / np.where(fld.vol > 0, fld.vol, 1.0), 0.0)
    max_d = float(dens.max() / G_PER_MM3) if occupied.any() else 0.0
    mean_d = mass_occ / vol / G_PER_MM3 if vol > 0 else 0.0
    if profile_slabs is None:
        n = max(2, int(math.floor(h_env / p.line_width)))
        profile_slabs = (0.0, h_env, n)
    prof = fld.profile(*profile_slabs) if fld.total_mass > 0 else None
    ratio = _crossed_ratio(counts)
    if fld.total_mass > 0:
        tensile, compressive = predicted_strength(fld, (0.0, h_env), models, p.needle, ratio)
    else:
        tensile = compressive = 0.0
    report = SimReport(fld.total_mass, vol * 1e-3, mean_d, max_d, prof, tensile, compressive,
                       times, seed, path, deposited, counts)
    return (report, fld) if return_field else report


@dataclass(frozen=True)
class _Move:
    start: Pose
    end: Pose


def counts_for_time(c):
    from .process import PlanCounts

    return PlanCounts(c.horizontal_cycles, c.crossed_cycles, c.punches, c.repositions,
                      c.commands)


def _crossed_ratio(c) -> int:
    total = c.horizontal_cycles + c.crossed_cycles
    if total <= 0:
        return 0
    frac = 100.0 * c.crossed_cycles / total
    return min((0, 25, 50, 75, 100), key=lambda r: abs(r - frac))


def volume_spread(program: MachineProgram, material: MaterialSpec, models: ProcessModels,
                  seeds, params: SimParams | None = None) -> tuple[float, list]:
    vols = [simulate(program, material, models, s, params).volume_cm3 for s in seeds]
    return max(vols) - min(vols), vols
