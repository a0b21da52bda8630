"""FabricationPlan: coil schedule plus felting operations for one workpiece."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .coil import AXLE_STEPS, CoilSchedule
from .felt import FeltOp
from .process import MATERIALS, MaterialSpec, NeedleSpec, PlanCounts

METHODS = ("regular", "fit", "embroidered")
DEFAULT_CROSSED_RATIO = {"regular": 25, "fit": 50, "embroidered": 0}


@dataclass(frozen=True)
class CoreSpec:
    core_radius: float = 3.0  # outer radius of the cushion
    core_length: float = 75.0
    detachable: bool = True
    stick_radius: float = 1.0  # rigid stick inside the cushion

    def __post_init__(self):
        if not 0 < self.stick_radius < self.core_radius:
            raise ValueError("stick radius must be within (0, core radius)")
        if not self.core_length > 0:
            raise ValueError("core length must be > 0")


@dataclass(frozen=True)
class PlanParams:
    line_width: float = 2.5
    packing: float = 1.0
    crossed_ratio: int | None = None  # None: per-method default
    slope_deg: float = 60.0
    tension: str = "low"
    material: str = "wool"
    needle: NeedleSpec = NeedleSpec("triangle", "thick")
    core: CoreSpec = field(default_factory=CoreSpec)
    fix_every_layers: int = 2
    fix_stations: int = 8
    fix_punches: int = 10
    embroidery_bond_fraction: float = 0.5  # of d_max, for felting stroke stacks
    tack_spacing: float = 10.0  # mm between anchor punches along a partial stroke
    tack_punches: int = 1
    footprint: float = 3.0
    felt_hz: float = 10.0
    rot_speed: float = 400.0
    max_tilt_deg: float = 10.0
    feeder_wheel_circumference: float = 50.0
    base_fraction: float = 1.0
    fidelity_slack: float | None = None  # residual left uncompressed; None: line_width / 2
    coil_estimate: str = "simulated"  # as-coiled profile for compression: simulated | nominal
    estimate_seed: int = 1
    shape_sectors: bool = False  # spot-felt sides that sit below the slab's ring radius

    def __post_init__(self):
        if not self.line_width > 0 or not self.packing > 0:
            raise ValueError("line width and packing must be > 0")
        if self.crossed_ratio is not None and self.crossed_ratio not in (0, 25, 50, 75, 100):
            raise ValueError("crossed ratio must be one of 0, 25, 50, 75, 100")
        if self.fix_every_layers < 1 or self.fix_stations < 1 or self.fix_punches < 1:
            raise ValueError("fixation cadence, stations and punches must be >= 1")
        if not self.tack_spacing > 0 or self.tack_punches < 1:
            raise ValueError("tack spacing must be > 0 and tack punches >= 1")
        if self.coil_estimate not in ("simulated", "nominal"):
            raise ValueError("coil estimate must be 'simulated' or 'nominal'")
        if not 0 < self.embroidery_bond_fraction < 1.0:
            raise ValueError("embroidery bond fraction must be within (0, 1)")
        if not 0 < self.base_fraction <= 1.0:
            raise ValueError("base fraction must be within (0, 1]")

    def ratio_for(self, method: str) -> int:
        return DEFAULT_CROSSED_RATIO[method] if self.crossed_ratio is None else self.crossed_ratio

    @property
    def slack(self) -> float:
        return self.line_width / 2 if self.fidelity_slack is None else self.fidelity_slack


def stroke_steps(span_deg: float) -> int:
    return max(1, int(round(span_deg / 360.0 * AXLE_STEPS)))


@dataclass(frozen=True)
class FabricationPlan:
    method: str
    coil: CoilSchedule
    felts: tuple = ()
    material: MaterialSpec = MATERIALS["wool"]
    core: CoreSpec = field(default_factory=CoreSpec)
    params: PlanParams = field(default_factory=PlanParams)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS and self.method != "custom":
            raise ValueError(f"unknown method {self.method!r}")
        object.__setattr__(self, "felts", tuple(self.felts))
        for b in self.coil.blocks:
            if b.radius_at_start <= self.core.core_radius - 1e-9:
                raise ValueError("every coil radius must exceed the core radius")
        for op in self.felts:
            if not isinstance(op, FeltOp):
                raise TypeError("felts must be FeltOp instances")

    def counts(self) -> PlanCounts:
        horizontal = 0.0
        crossed = 0.0
        for b in self.coil.blocks:
            if b.kind == "crossed":
                crossed += b.cycles
            elif b.is_stroke:
                horizontal += b.cycles * stroke_steps(b.span_deg) / AXLE_STEPS
            else:
                horizontal += b.cycles
        return PlanCounts(
            horizontal_cycles=horizontal,
            crossed_cycles=crossed,
            punches=float(sum(op.punches for op in self.felts)),
            repositions=float(len(self.felts)),
            commands=float(self.metadata.get("commands", 0)),
        )

    def with_metadata(self, **kv) -> "FabricationPlan":
        meta = dict(self.metadata)
        meta.update(kv)
        return replace(self, metadata=meta)

    def summary(self) -> dict:
        c = self.counts()
        return {
            "method": self.method,
            "blocks": len(self.coil.blocks),
            "horizontal_cycles": round(c.horizontal_cycles, 6),
            "crossed_cycles": round(c.crossed_cycles, 6),
            "punches": int(c.punches),
            "repositions": int(c.repositions),
            "commands": int(c.commands),
        }
