"""Model-to-fabrication methods: regular, fit and embroidered."""
from __future__ import annotations

import math

import numpy as np

from .coil import CoilPass, CoilSchedule, check_crossed_reach
from .felt import (FeltOp, compression_plan, felt_around, inward_approach, punches_per_station,
                   required_density, stations_for_ring)
from .kinematics import StewartGeometry, felt_reach_check
from .felt import UnreachableStationError
from .mesh import RadialProfile, TriMesh, WorkEnvelope, validate_envelope
from .plan import FabricationPlan, PlanParams
from .process import ProcessModels, punches_between, punches_for_density

SECTORS = 24


class PlanningError(ValueError):
    pass


class EnvelopeViolationError(PlanningError):
    def __init__(self, report):
        self.report = report
        super().__init__("model exceeds the work envelope:\n" + report.to_text().rstrip())


class InfeasibleBaseError(PlanningError):
    pass


def _prepare(profile: RadialProfile, env: WorkEnvelope) -> RadialProfile:
    profile = profile.shifted(-profile.z_min)
    report = validate_envelope(profile, env)
    if not report.accepted:
        raise EnvelopeViolationError(report)
    return profile


def coiled_density(params: PlanParams, models: ProcessModels) -> float:
    """As-coiled density in g/cm^3: linear density over the laid cross-section."""
    lam = models.material(params.material).linear_density  # g/m == mg/mm
    return lam / (params.line_width ** 2 * params.packing)


def _crossed_layers(n_layers: int, ratio: int) -> list[bool]:
    """Spread ``ratio`` percent crossed layers evenly through the stack."""
    return [(k + 1) * ratio // 100 > k * ratio // 100 for k in range(n_layers)]


def _runs(mask) -> list[tuple[int, int]]:
    """Half-open index runs of True values in a 1-D mask."""
    runs, start = [], None
    for i, m in enumerate(list(mask) + [False]):
        if m and start is None:
            start = i
        elif not m and start is not None:
            runs.append((start, i))
            start = None
    return runs


def _circular_runs(mask) -> list[tuple[int, int]]:
    """Runs on a ring as (start, length); a full ring is (0, n)."""
    n = len(mask)
    if all(mask):
        return [(0, n)]
    if not any(mask):
        return []
    first_gap = list(mask).index(False)
    rolled = [mask[(first_gap + i) % n] for i in range(n)]
    return [((first_gap + a) % n, b - a) for a, b in _runs(rolled)]


class _Builder:
    """Accumulates coil blocks and felting ops, tracking the pass index."""

    def __init__(self, params: PlanParams, models: ProcessModels, env, geom):
        self.p = params
        self.models = models
        self.env = env
        self.geom = geom
        self.tension = models.tension(params.tension)
        self.blocks: list[CoilPass] = []
        self.felts: list[FeltOp] = []

    @property
    def layer_step(self) -> float:
        return self.p.line_width * self.p.packing

    def layer(self, k: int, z_lo: float, z_hi: float, crossed: bool, direction: int) -> int:
        p = self.p
        r0 = p.core.core_radius + k * self.layer_step
        if crossed and z_hi - z_lo >= 2 * p.line_width - 1e-9:
            rc = r0 + self.layer_step / 2
            cycles = max(1, int(round(math.pi * rc * math.sin(math.radians(p.slope_deg))
                                      / p.line_width)))
            block = CoilPass("crossed", z_lo, z_hi, r0, cycles, p.line_width, p.slope_deg,
                             p.material, self.tension)
            check_crossed_reach(block, self.env, self.geom, p.max_tilt_deg)
        else:
            cycles = max(1, int(math.floor((z_hi - z_lo) / p.line_width + 1e-9)))
            block = CoilPass("horizontal", z_lo, z_hi, r0, cycles, p.line_width, 0.0,
                             p.material, self.tension, direction)
        self.blocks.append(block)
        return len(self.blocks) - 1

    def stroke(self, z_lo, z_hi, r0, layers, start_sector, n_sectors, direction):
        p = self.p
        width = 360.0 / SECTORS
        if n_sectors >= SECTORS:
            block = CoilPass("horizontal", z_lo, z_hi, r0, layers, p.line_width, 0.0,
                             p.material, self.tension, direction)
        else:
            block = CoilPass("horizontal", z_lo, z_hi, r0, layers, p.line_width, 0.0,
                             p.material, self.tension, direction,
                             span_deg=n_sectors * width, theta_start_deg=start_sector * width)
        self.blocks.append(block)
        return len(self.blocks) - 1

    def fixation_ring(self, z: float, radius: float, after: int):
        p = self.p
        self.felts.extend(felt_around(z, p.fix_stations, p.fix_punches, p.needle, radius, 0.0,
                                      self.env, self.geom, after))

    def plan(self, method: str, core_length: float) -> FabricationPlan:
        from dataclasses import replace

        from .program import finalize

        if not self.blocks:
            raise PlanningError("plan has no coil passes")
        core = replace(self.p.core, core_length=core_length)
        plan = FabricationPlan(method, CoilSchedule(self.blocks), tuple(self.felts),
                               self.models.material(self.p.material), core, self.p)
        return finalize(plan, self.env, self.geom)


def _layer_stack(b: _Builder, layers_per_slab: np.ndarray, profile: RadialProfile,
                 ratio: int) -> np.ndarray:
    """Coil layer by layer over the slabs still short of their layer count."""
    p = b.p
    n_layers = int(layers_per_slab.max()) if len(layers_per_slab) else 0
    crossed = _crossed_layers(n_layers, ratio)
    n_flat = 0
    for k in range(n_layers):
        runs = _runs(layers_per_slab > k)
        # alternate among horizontal layers so both region ends get their flat turns
        direction = 1 if (k if crossed[k] else n_flat) % 2 == 0 else -1
        n_flat += 0 if crossed[k] else 1
        if direction < 0:
            runs = runs[::-1]
        fix = (k + 1) % p.fix_every_layers == 0
        for a, e in runs:
            z_lo, _ = profile.slab_bounds(a)
            _, z_hi = profile.slab_bounds(e - 1)
            idx = b.layer(k, z_lo, z_hi, crossed[k], direction)
            if fix:
                b.fixation_ring((z_lo + z_hi) / 2, p.core.core_radius + (k + 1) * b.layer_step,
                                idx)
    return p.core.core_radius + layers_per_slab * b.layer_step


def simulated_coil_profile(b: _Builder, profile: RadialProfile) -> np.ndarray:
    """Slab-max radius of the passes built so far, as the simulator lays them."""
    from .program import emit
    from .simulator import SimParams, simulate

    p = b.p
    plan = FabricationPlan("custom", CoilSchedule(b.blocks), tuple(b.felts),
                           b.models.material(p.material), p.core, p)
    sim = SimParams(line_width=p.line_width, packing=p.packing,
                    feeder_wheel_circumference=p.feeder_wheel_circumference,
                    core_radius=p.core.core_radius, stick_radius=p.core.stick_radius,
                    needle=p.needle)
    report = simulate(emit(plan, b.geom, b.env), plan.material, b.models, p.estimate_seed, sim,
                      profile_slabs=(profile.z_min, profile.z_max, profile.n))
    return report.profile.r_max


def _compress(b: _Builder, coiled: np.ndarray, profile: RadialProfile):
    p = b.p
    if p.coil_estimate == "simulated":
        coiled = simulated_coil_profile(b, profile)
    # slabs that came out short cannot gain material by felting
    coiled = np.maximum(coiled, profile.r_max)
    current = profile.with_radii(coiled)
    target = profile.with_radii(np.maximum(profile.r_max, p.core.core_radius))
    b.felts.extend(compression_plan(
        current, target, p.needle, b.models.curve, coiled_density(p, b.models),
        p.core.core_radius, p.footprint, p.slack, 0.0,
        env=b.env, geom=b.geom))
    if p.shape_sectors:
        _shape_sectors(b, coiled, profile)


def _stretches(row: np.ndarray, run: tuple[int, int], tol: float):
    """Split a circular run into stretches whose radii stay within ``tol``."""
    start, length = run
    s = start
    while s < start + length:
        e = s + 1
        while e < start + length and abs(row[e % SECTORS] - row[s % SECTORS]) <= tol:
            e += 1
        yield s % SECTORS, e - s, float(max(row[k % SECTORS] for k in range(s, e)))
        s = e


def _shape_sectors(b: _Builder, coiled: np.ndarray, profile: RadialProfile):
    """Spot felting that presses the flatter sides of a slab below its ring radius."""
    p = b.p
    curve = b.models.curve
    core = p.core.core_radius
    d_coil = coiled_density(p, b.models)
    d_cap = 0.999 * curve.d_max[p.needle]
    radii = sector_radii(profile)
    h = profile.slab_height
    for i in range(profile.n):
        tgt = max(float(profile.r_max[i]), core + 1e-3)
        if coiled[i] - tgt <= p.slack:
            r_now, d_now = float(coiled[i]), d_coil
        else:
            r_now = tgt
            d_now = min(required_density(d_coil, float(coiled[i]), tgt, core), d_cap)
        row = np.maximum(radii[i], core + 1e-3)
        z = float(profile.z_samples[i])
        for run in _circular_runs(row < r_now - p.slack):
            for start, length, r_s in _stretches(row, run, p.slack):
                d_req = min(required_density(d_now, r_now, r_s, core), d_cap)
                n_eq = punches_between(d_now, d_req, p.needle, curve)
                if n_eq <= 0:
                    continue
                arc_len = 2 * math.pi * r_now * length / SECTORS
                stations = max(1, math.ceil(arc_len / p.footprint - 1e-9))
                per = punches_per_station(n_eq, arc_len / stations, h)
                b.felts.extend(_arc_stations(b, z, r_now, start, length, per, None))


def _setup(profile, params, models, env, geom):
    params = params or PlanParams()
    models = models or ProcessModels()
    env = env or WorkEnvelope()
    geom = geom or StewartGeometry()
    profile = _prepare(profile, env)
    if profile.slab_height < params.line_width - 1e-9:
        raise PlanningError(f"slab height {profile.slab_height:.3f} mm is below the "
                            f"line width {params.line_width:.3f} mm; use fewer slabs")
    return profile, _Builder(params, models, env, geom)


def plan_regular(profile: RadialProfile, params: PlanParams | None = None,
                 models: ProcessModels | None = None, env: WorkEnvelope | None = None,
                 geom: StewartGeometry | None = None) -> FabricationPlan:
    """Coil the bounding cylinder, then felt everything down to the target."""
    profile, b = _setup(profile, params, models, env, geom)
    p = b.p
    r_big = float(profile.r_max.max())
    n = max(1, math.ceil((r_big - p.core.core_radius) / b.layer_step - 1e-9))
    layers = np.full(profile.n, n)
    coiled = _layer_stack(b, layers, profile, p.ratio_for("regular"))
    _compress(b, coiled, profile)
    return b.plan("regular", profile.z_max)


def fit_layers(profile: RadialProfile, core_radius: float, layer_step: float) -> np.ndarray:
    """Per-slab layer count: the fewest layers reaching the slab's radius."""
    need = (profile.r_max - core_radius) / layer_step
    return np.maximum(0, np.ceil(need - 1e-9)).astype(int)


def plan_fit(profile: RadialProfile, params: PlanParams | None = None,
             models: ProcessModels | None = None, env: WorkEnvelope | None = None,
             geom: StewartGeometry | None = None) -> FabricationPlan:
    """Vary the layer count per slab to follow the profile; felt only the residual."""
    profile, b = _setup(profile, params, models, env, geom)
    p = b.p
    layers = fit_layers(profile, p.core.core_radius, b.layer_step)
    if not layers.any():
        raise PlanningError("profile lies inside the core; nothing to coil")
    coiled = _layer_stack(b, layers, profile, p.ratio_for("fit"))
    _compress(b, coiled, profile)
    return b.plan("fit", profile.z_max)


def sector_radii(profile: RadialProfile) -> np.ndarray:
    if profile.sectors is not None:
        return np.asarray(profile.sectors, dtype=float)
    return np.repeat(profile.r_max[:, None], SECTORS, axis=1)


def classify_cells(profile: RadialProfile, base_radius: float, slack: float) -> np.ndarray:
    """(slab, sector) cells where the model stands out more than ``slack`` past the base."""
    return sector_radii(profile) > base_radius + slack


def embroidery_layers(profile: RadialProfile, base_radius: float, layer_step: float,
                      slack: float, inflate: float = 1.0, core_radius: float = 0.0) -> np.ndarray:
    """Stroke layers per (slab, sector).

    Felting packs the whole column from the core out, so a cell that ends at
    radius r must be coiled out to sqrt(c^2 + (r^2 - c^2) * inflate), where
    ``inflate`` is the bonded over the as-coiled density.
    """
    s = sector_radii(profile)
    c2 = core_radius ** 2
    coiled = np.sqrt(c2 + np.maximum(s ** 2 - c2, 0.0) * max(inflate, 1.0))
    k = np.rint((coiled - base_radius) / layer_step).astype(int)
    k[~classify_cells(profile, base_radius, slack)] = 0
    return np.maximum(k, 0)


def plan_embroidered(mesh: TriMesh | None, profile: RadialProfile,
                     params: PlanParams | None = None, models: ProcessModels | None = None,
                     env: WorkEnvelope | None = None,
                     geom: StewartGeometry | None = None) -> FabricationPlan:
    """Coil a thin base cylinder, then embroider stroke stacks where the model protrudes.

    ``mesh`` is only used to recover per-sector radii when ``profile`` lacks them.
    """
    if profile.sectors is None and mesh is not None:
        from .mesh import radial_profile

        profile = radial_profile(mesh, profile.n, SECTORS)
    profile, b = _setup(profile, params, models, env, geom)
    p = b.p
    core = p.core.core_radius
    base = p.base_fraction * float(profile.r_max.min())
    if base <= core:
        raise InfeasibleBaseError(f"base radius {base:.3f} mm is not above the core radius "
                                  f"{core:.3f} mm")
    n_base = int(math.floor((base - core) / b.layer_step + 1e-9))
    if n_base < 1:
        raise InfeasibleBaseError(f"base radius {base:.3f} mm leaves no room for one layer "
                                  f"above the {core:.3f} mm core")
    r_base = float(_layer_stack(b, np.full(profile.n, n_base), profile,
                                p.ratio_for("embroidered"))[0])
    d_bond = p.embroidery_bond_fraction * b.models.curve.d_max[p.needle]
    stacks = embroidery_layers(profile, r_base, b.layer_step, p.slack,
                               d_bond / coiled_density(p, b.models), core)
    for i in range(profile.n):
        z_lo, z_hi = profile.slab_bounds(i)
        z_c = (z_lo + z_hi) / 2
        row = stacks[i]
        k = 0
        direction = 1
        while k < row.max():
            runs = _circular_runs(row > k)
            k_end = k + 1
            while k_end < row.max() and _circular_runs(row > k_end) == runs:
                k_end += 1
            for start, length in runs:
                idx = b.stroke(z_lo, z_hi, r_base + k * b.layer_step, k_end - k, start,
                               length, direction)
                if length < SECTORS:
                    # a partial stroke has no wrap to hold it; tack it down as laid
                    b.felts.extend(_tack_stroke(b, z_c, r_base + k_end * b.layer_step,
                                                start, length, idx))
            if (k_end - k) % 2:
                direction = -direction
            k = k_end
        # bond the slab's strokes once, each stretch of equal stack height at its own top
        if row.max() > 0:
            for start, length in _circular_runs(row > 0):
                s = start
                while s < start + length:
                    e = s + 1
                    while e < start + length and row[e % SECTORS] == row[s % SECTORS]:
                        e += 1
                    r_top = r_base + int(row[s % SECTORS]) * b.layer_step
                    b.felts.extend(_bond_stack(b, z_c, z_hi - z_lo, r_top, s % SECTORS, e - s,
                                               len(b.blocks) - 1))
                    s = e
    return b.plan("embroidered", profile.z_max)


def _arc_stations(b: _Builder, z: float, radius: float, start: int, length: int,
                  punches: int, after: int, spacing: float | None = None) -> list[FeltOp]:
    p = b.p
    arc_deg = length * 360.0 / SECTORS
    arc_len = 2 * math.pi * radius * arc_deg / 360.0
    stations = max(1, math.ceil(arc_len / (spacing or p.footprint) - 1e-9))
    ops = []
    for s in range(stations):
        angle = start * 360.0 / SECTORS + (s + 0.5) * arc_deg / stations
        op = FeltOp((radius, 0.0, z), inward_approach(0.0), punches, p.needle, "spot",
                    round(angle % 360.0, 6), after)
        if not felt_reach_check(op.target, op.approach, b.env, b.geom):
            raise UnreachableStationError([op.axle_angle], z)
        ops.append(op)
    return ops


def _tack_stroke(b: _Builder, z: float, radius: float, start: int, length: int,
                 after: int) -> list[FeltOp]:
    """Sparse anchor punches along a freshly laid partial stroke."""
    return _arc_stations(b, z, radius, start, length, b.p.tack_punches, after,
                         b.p.tack_spacing)


def _bond_stack(b: _Builder, z: float, height: float, radius: float, start: int, length: int,
                after: int) -> list[FeltOp]:
    """Stations tiling a stroke stack, felted until the strokes bond to the base.

    Strokes are only held by felting, so the whole stack is punched to
    ``embroidery_bond_fraction`` of the needle's maximum density.
    """
    p = b.p
    curve = b.models.curve
    n_eq = punches_for_density(p.embroidery_bond_fraction * curve.d_max[p.needle], p.needle,
                               curve)
    if length >= SECTORS:
        stations = stations_for_ring(radius, p.footprint)
        per = punches_per_station(n_eq, 2 * math.pi * radius / stations, height)
        return felt_around(z, stations, per, p.needle, radius, 0.0, b.env, b.geom, after)
    arc_len = 2 * math.pi * radius * length / SECTORS
    stations = max(1, math.ceil(arc_len / p.footprint - 1e-9))
    per = punches_per_station(n_eq, arc_len / stations, height)
    return _arc_stations(b, z, radius, start, length, per, after)


def plan_method(method: str, mesh: TriMesh | None, profile: RadialProfile, **kw) -> FabricationPlan:
    if method == "regular":
        return plan_regular(profile, **kw)
    if method == "fit":
        return plan_fit(profile, **kw)
    if method == "embroidered":
        return plan_embroidered(mesh, profile, **kw)
    raise PlanningError(f"unknown method {method!r}; expected regular, fit or embroidered")


def profile_for(mesh: TriMesh, line_width: float = 2.5, n_theta: int = SECTORS) -> RadialProfile:
    """Profile with slabs as close to one line width as possible (never thinner)."""
    from .mesh import radial_profile

    z = mesh.vertices[:, 2]
    n_z = max(2, int(math.floor((z.max() - z.min()) / line_width + 1e-9)))
    return radial_profile(mesh, n_z, n_theta)
