"""Line-oriented machine program (.frp): emission from plans, text round-trip.

Grammar, one instruction per line::

    FRP 1
    ENV r h reach
    # geometry <hash>
    POSE x y z roll pitch yaw     work-frame platform centre, mm / deg
    ROT steps speed               axle steps (signed), steps/s
    FEED feeder_steps axle_steps  engage the feeder at this ratio
    FELT duration_ms freq_hz
    DWELL ms                      pause; disengages the feeder
    MAT name
    # comment

A POSE immediately followed by ROT is a coordinated move: the platform
travels from its previous pose to the new one while the axle turns.
"""
from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field

from .coil import (AXLE_STEPS, WAYPOINTS_PER_CYCLE, crossed_leg_steps, crossed_tilt, spread_leg_steps,
                   split_steps, tension_to_gear_ratio)
from .kinematics import StewartGeometry, UnreachableError, felt_pose, reachable, work_pose
from .mesh import WorkEnvelope
from .plan import FabricationPlan, stroke_steps

FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)
HZ_BAND = (1, 20)
FEEDER_AZIMUTH = 180.0


def _mm(v: float) -> float:
    return round(float(v), 3) + 0.0


def _deg(v: float) -> float:
    v = round(float(v), 2) + 0.0
    if v <= -180.0:
        v += 360.0
    elif v > 180.0:
        v -= 360.0
    return v


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.roll, self.pitch, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("pose values must be finite")
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, _mm(getattr(self, name)))
        for name in ("roll", "pitch", "yaw"):
            object.__setattr__(self, name, _deg(getattr(self, name)))

    def as_tuple(self):
        return (self.x, self.y, self.z, self.roll, self.pitch, self.yaw)

    def text(self) -> str:
        return "POSE %.3f %.3f %.3f %.2f %.2f %.2f" % self.as_tuple()


@dataclass(frozen=True)
class Rot:
    steps: int
    speed: int = 400

    def __post_init__(self):
        if self.speed <= 0:
            raise ValueError("ROT speed must be > 0")

    def text(self) -> str:
        return f"ROT {self.steps} {self.speed}"


@dataclass(frozen=True)
class Feed:
    feeder_steps: int
    axle_steps: int = AXLE_STEPS

    def __post_init__(self):
        if self.feeder_steps < 1 or self.axle_steps < 1:
            raise ValueError("FEED counts must be >= 1")

    def text(self) -> str:
        return f"FEED {self.feeder_steps} {self.axle_steps}"


@dataclass(frozen=True)
class Felt:
    duration_ms: int
    freq_hz: int

    def __post_init__(self):
        if self.duration_ms < 1 or self.freq_hz < 1:
            raise ValueError("FELT duration and frequency must be >= 1")

    @property
    def punches(self) -> float:
        return self.duration_ms * self.freq_hz / 1000.0

    def text(self) -> str:
        return f"FELT {self.duration_ms} {self.freq_hz}"


@dataclass(frozen=True)
class Dwell:
    ms: int = 0

    def __post_init__(self):
        if self.ms < 0:
            raise ValueError("DWELL must be >= 0 ms")

    def text(self) -> str:
        return f"DWELL {self.ms}"


_NAME = re.compile(r"[A-Za-z0-9_.-]+\Z")


@dataclass(frozen=True)
class Mat:
    name: str

    def __post_init__(self):
        if not _NAME.match(self.name):
            raise ValueError(f"invalid material name {self.name!r}")

    def text(self) -> str:
        return f"MAT {self.name}"


@dataclass(frozen=True)
class Comment:
    body: str

    def __post_init__(self):
        if "\n" in self.body or "\r" in self.body:
            raise ValueError("comments are single-line")

    def text(self) -> str:
        return "#" + (" " + self.body if self.body else "")


INSTRUCTION_TYPES = (Pose, Rot, Feed, Felt, Dwell, Mat, Comment)


@dataclass(frozen=True)
class MachineProgram:
    envelope: tuple = (25.0, 75.0, 40.0)  # radius, height, felting reach
    geometry_hash: str = ""
    instructions: tuple = ()
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.version not in SUPPORTED_VERSIONS:
            raise ValueError(f"unsupported program version {self.version}")
        object.__setattr__(self, "envelope", tuple(_mm(v) for v in self.envelope))
        object.__setattr__(self, "instructions", tuple(self.instructions))
        if self.geometry_hash and not re.fullmatch(r"[0-9a-f]+", self.geometry_hash):
            raise ValueError("geometry hash must be lowercase hex")
        seen_pose = False
        for k, ins in enumerate(self.instructions):
            if not isinstance(ins, INSTRUCTION_TYPES):
                raise TypeError(f"instruction {k} has unknown type {type(ins).__name__}")
            if isinstance(ins, Pose):
                seen_pose = True
            elif isinstance(ins, Rot) and not seen_pose:
                raise ValueError(f"instruction {k}: ROT before the first POSE")

    @property
    def commands(self) -> tuple:
        return tuple(i for i in self.instructions if not isinstance(i, Comment))

    def header_lines(self) -> list[str]:
        r, h, reach = self.envelope
        lines = [f"FRP {self.version}", f"ENV {r:.3f} {h:.3f} {reach:.3f}"]
        if self.geometry_hash:
            lines.append(f"# geometry {self.geometry_hash}")
        return lines

    def serialize(self) -> str:
        return "\n".join(self.header_lines() + [i.text() for i in self.instructions]) + "\n"


def serialize(program: MachineProgram) -> str:
    return program.serialize()


def geometry_hash(geom: StewartGeometry) -> str:
    return hashlib.sha256(repr(geom.key()).encode()).hexdigest()[:16]


# parsing ---------------------------------------------------------------------

class ParseError(ValueError):
    def __init__(self, line: int, col: int, message: str):
        self.line = line
        self.col = col
        self.message = message
        super().__init__(f"line {line}, col {col}: {message}")


_INT = re.compile(r"[+-]?\d+\Z")
_DEC = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)\Z")
_ARITY = {"POSE": 6, "ROT": 2, "FEED": 2, "FELT": 2, "DWELL": 1, "MAT": 1, "ENV": 3, "FRP": 1}


def _tokens(line: str):
    return [(m.group(), m.start() + 1) for m in re.finditer(r"\S+", line)]


def _num(tok, lineno, integer=False):
    text, col = tok
    if integer:
        if not _INT.match(text):
            raise ParseError(lineno, col, f"expected an integer, got {text!r}")
        if len(text.lstrip("+-")) > 12:
            raise ParseError(lineno, col, f"integer {text!r} out of range")
        return int(text)
    if not _DEC.match(text):
        raise ParseError(lineno, col, f"expected a number, got {text!r}")
    if len(text) > 24:
        raise ParseError(lineno, col, f"number {text!r} out of range")
    return float(text)


def parse(text, hz_band=HZ_BAND) -> MachineProgram:
    """Parse program text (str or UTF-8 bytes) into a validated MachineProgram."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            head = bytes(text)[:exc.start]
            line = head.count(b"\n") + 1
            col = exc.start - (head.rfind(b"\n") + 1) + 1
            raise ParseError(line, col, "invalid UTF-8") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    version = None
    envelope = None
    ghash = ""
    body = []
    seen_pose = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if "\r" in line:
            raise ParseError(lineno, line.index("\r") + 1, "stray carriage return")
        stripped = line.strip()
        if version is None:
            toks = _tokens(line)
            if not toks:
                continue
            if toks[0][0] != "FRP":
                raise ParseError(lineno, toks[0][1], "missing 'FRP <version>' header")
            if len(toks) != 2:
                raise ParseError(lineno, toks[0][1], "FRP takes 1 argument")
            version = _num(toks[1], lineno, integer=True)
            if version not in SUPPORTED_VERSIONS:
                raise ParseError(lineno, toks[1][1], f"unsupported version {version}")
            continue
        if envelope is None:
            toks = _tokens(line)
            if not toks:
                continue
            if toks[0][0] != "ENV":
                raise ParseError(lineno, toks[0][1], "expected 'ENV r h reach' after header")
            if len(toks) != 4:
                raise ParseError(lineno, toks[0][1], "ENV takes 3 arguments")
            # check at the stored precision so the value survives re-serialization
            envelope = tuple(_mm(_num(t, lineno)) for t in toks[1:])
            for t, v in zip(toks[1:], envelope):
                if not v > 0:
                    raise ParseError(lineno, t[1], "envelope values must be > 0 at 0.001 mm")
            continue
        if stripped.startswith("#"):
            comment = stripped[1:]
            comment = comment[1:] if comment.startswith(" ") else comment
            if not ghash and not body and comment.startswith("geometry "):
                h = comment[len("geometry "):]
                if not re.fullmatch(r"[0-9a-f]+", h):
                    raise ParseError(lineno, line.index("#") + 1, "malformed geometry hash")
                ghash = h
                continue
            if stripped != line:
                raise ParseError(lineno, 1, "comment lines must not be indented")
            body.append(Comment(comment))
            continue
        toks = _tokens(line)
        if not toks:
            raise ParseError(lineno, 1, "blank line inside program body")
        if toks[0][1] != 1 or line != line.strip():
            raise ParseError(lineno, toks[0][1], "unexpected whitespace")
        op, col = toks[0]
        if op not in _ARITY or op in ("ENV", "FRP"):
            raise ParseError(lineno, col, f"unknown mnemonic {op!r}")
        args = toks[1:]
        if len(args) != _ARITY[op]:
            raise ParseError(lineno, col, f"{op} takes {_ARITY[op]} argument(s), got {len(args)}")
        try:
            if op == "POSE":
                vals = [_num(t, lineno) for t in args]
                for t, v in zip(args[3:], vals[3:]):
                    if not -180.0 < v <= 180.0:
                        raise ParseError(lineno, t[1], "angle must be within (-180, 180]")
                ins = Pose(*vals)
                seen_pose = True
            elif op == "ROT":
                steps = _num(args[0], lineno, integer=True)
                speed = _num(args[1], lineno, integer=True)
                if speed <= 0:
                    raise ParseError(lineno, args[1][1], "ROT speed must be > 0")
                if not seen_pose:
                    raise ParseError(lineno, col, "ROT before the first POSE")
                ins = Rot(steps, speed)
            elif op == "FEED":
                f, a = (_num(t, lineno, integer=True) for t in args)
                for t, v in zip(args, (f, a)):
                    if v < 1:
                        raise ParseError(lineno, t[1], "FEED counts must be >= 1")
                ins = Feed(f, a)
            elif op == "FELT":
                ms = _num(args[0], lineno, integer=True)
                hz = _num(args[1], lineno, integer=True)
                if ms < 1:
                    raise ParseError(lineno, args[0][1], "FELT duration must be >= 1 ms")
                if not hz_band[0] <= hz <= hz_band[1]:
                    raise ParseError(lineno, args[1][1],
                                     f"FELT frequency {hz} Hz outside {hz_band[0]}-{hz_band[1]} Hz")
                ins = Felt(ms, hz)
            elif op == "DWELL":
                ms = _num(args[0], lineno, integer=True)
                if ms < 0:
                    raise ParseError(lineno, args[0][1], "DWELL must be >= 0 ms")
                ins = Dwell(ms)
            else:
                name = args[0][0]
                if not _NAME.match(name):
                    raise ParseError(lineno, args[0][1], f"invalid material name {name!r}")
                ins = Mat(name)
        except ParseError:
            raise
        except ValueError as exc:
            raise ParseError(lineno, col, str(exc)) from None
        body.append(ins)
    if version is None:
        raise ParseError(1, 1, "missing 'FRP <version>' header")
    if envelope is None:
        raise ParseError(len(lines) + 1, 1, "missing ENV line")
    return MachineProgram(envelope, ghash, tuple(body), version)


# emission --------------------------------------------------------------------

class EmitError(ValueError):
    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(f"instruction {index}: {message}")


def material_angle(axle_deg: float, tool_azimuth: float) -> float:
    """Workpiece-frame angle of the material facing ``tool_azimuth`` after the axle turned."""
    return (tool_azimuth - axle_deg) % 360.0


def _axle_steps_for(material_deg: float, tool_azimuth: float) -> int:
    return int(round((tool_azimuth - material_deg) / 360.0 * AXLE_STEPS))


@dataclass
class _Emitter:
    plan: FabricationPlan
    env: WorkEnvelope
    geom: StewartGeometry
    hz_band: tuple = HZ_BAND
    out: list = field(default_factory=list)
    pose: tuple | None = None
    axle: int = 0
    feed_on: bool = False
    feed: tuple | None = None

    @property
    def p(self):
        return self.plan.params

    def add(self, ins):
        self.out.append(ins)

    def move(self, x, y, z, roll=0.0, pitch=0.0, yaw=0.0, force=False):
        pose = Pose(x, y, z, roll, pitch, yaw)
        if pose.as_tuple() == self.pose and not force:
            return
        base = work_pose(*pose.as_tuple(), self.env, self.geom)
        if not reachable(base, self.geom):
            raise EmitError(len(self.out), f"unreachable pose {pose.text()}")
        self.add(pose)
        self.pose = pose.as_tuple()

    def rot(self, steps: int):
        if steps == 0:
            return
        if self.pose is None:
            self.move(0.0, 0.0, self.env.cyl_height / 2)
        self.add(Rot(int(steps), int(self.p.rot_speed)))
        self.axle += int(steps)

    def disengage(self):
        if self.feed_on:
            self.add(Dwell(0))
            self.feed_on = False

    def engage(self, centre_radius: float, tension):
        g = tension_to_gear_ratio(tension, self.p.line_width, centre_radius,
                                  self.p.feeder_wheel_circumference)
        ratio = (g.feeder_steps_per_axle_cycle, g.axle_steps_per_cycle)
        if not self.feed_on or ratio != self.feed:
            self.add(Feed(*ratio))
            self.feed_on = True
            self.feed = ratio

    def position(self, z, pitch=0.0):
        """Plain platform move (no deposit) to the start of a pass."""
        target = Pose(0.0, 0.0, z, 0.0, pitch, 0.0).as_tuple()
        if target != self.pose:
            self.disengage()
            self.move(*target)

    # coil passes

    def horizontal(self, b):
        w = b.pitch
        step = w * self.p.packing
        lo, hi = b.z_start + w / 2, b.z_end - w / 2
        per = b.cycles_per_sweep
        remaining = b.cycles
        s = 0
        while remaining > 0:
            n = min(per, remaining)
            d = b.direction if s % 2 == 0 else -b.direction
            # one flat turn at the start edge, the rest climbing: the region
            # ends then fill evenly over two sweeps
            travel = (hi - lo) * (n - 1) / (per - 1) if per > 1 else 0.0
            start = lo if d > 0 else hi
            end = start + d * travel
            self.position(start)
            self.engage(b.radius_at_start + s * step + step / 2, b.tension)
            self.rot(AXLE_STEPS)
            if n > 1:
                self.move(0.0, 0.0, end)
                self.rot((n - 1) * AXLE_STEPS)
            remaining -= n
            s += 1

    def crossed(self, b):
        w = b.pitch
        lo, hi = b.z_start + w / 2, b.z_end - w / 2
        centre = b.radius_at_start + w * self.p.packing / 2
        tilt = crossed_tilt(b.slope_deg, self.p.max_tilt_deg)
        half = WAYPOINTS_PER_CYCLE // 2
        legs = split_steps(spread_leg_steps(crossed_leg_steps(b, centre), b.cycles), half)
        self.position(lo)
        self.engage(centre, b.tension)
        for _ in range(b.cycles):
            for k in range(1, half + 1):
                self.move(0.0, 0.0, lo + (hi - lo) * k / half, 0.0, tilt, 0.0, force=True)
                self.rot(legs[k - 1])
            for k in range(1, half + 1):
                self.move(0.0, 0.0, hi - (hi - lo) * k / half, 0.0, -tilt, 0.0, force=True)
                self.rot(legs[k - 1])

    def strokes(self, b):
        z = (b.z_start + b.z_end) / 2
        steps = stroke_steps(b.span_deg)
        first = b.theta_start_deg if b.direction > 0 else b.theta_start_deg + b.span_deg
        self.disengage()
        self.move(0.0, 0.0, z)
        target = _axle_steps_for(first, FEEDER_AZIMUTH)
        self.rot(_shortest(target - self.axle))
        self.engage(b.radius_at_start + b.pitch * self.p.packing / 2, b.tension)
        # material angle rises as the axle turns negative
        sign = -1 if b.direction > 0 else 1
        for _ in range(b.cycles):
            self.rot(sign * steps)
            sign = -sign

    # felting

    def felt_ops(self, ops):
        ops = list(ops)
        if not ops:
            return
        self.disengage()
        ring_base = None
        for k, op in enumerate(ops):
            pose, _ = felt_pose(op.target, op.approach, self.env, self.geom)
            if op.mode == "around_circle":
                if ring_base is None or op.axle_angle == 0.0:
                    ring_base = self.axle
                target = ring_base + int(round(op.axle_angle / 360.0 * AXLE_STEPS))
                self.move(*pose)
                self.rot(target - self.axle)
            else:
                ring_base = None
                target = _axle_steps_for(op.axle_angle, 0.0)
                self.move(*pose)
                self.rot(_shortest(target - self.axle))
            self.felt(op.punches)
            nxt = ops[k + 1] if k + 1 < len(ops) else None
            if op.mode == "around_circle" and not _same_ring(op, nxt):
                self.rot(ring_base + AXLE_STEPS - self.axle)
                ring_base = None

    def felt(self, punches: int):
        hz = int(self.p.felt_hz)
        if hz != self.p.felt_hz or not self.hz_band[0] <= hz <= self.hz_band[1]:
            raise EmitError(len(self.out), f"felting frequency {self.p.felt_hz} Hz is not an "
                            f"integer within {self.hz_band[0]}-{self.hz_band[1]} Hz")
        ms = punches * 1000 // hz
        if ms * hz != punches * 1000:
            raise EmitError(len(self.out), f"{punches} punches at {hz} Hz is not a whole "
                            "number of milliseconds")
        self.add(Felt(ms, hz))


def _same_ring(op, nxt) -> bool:
    return (nxt is not None and nxt.mode == "around_circle" and nxt.axle_angle > op.axle_angle
            and nxt.z == op.z and nxt.after_pass == op.after_pass and nxt.radius == op.radius)


def _shortest(delta: int) -> int:
    return (delta + AXLE_STEPS // 2) % AXLE_STEPS - AXLE_STEPS // 2


def emit(plan: FabricationPlan, geom: StewartGeometry | None = None,
         env: WorkEnvelope | None = None, hz_band=HZ_BAND) -> MachineProgram:
    """Expand a plan into machine instructions. Deterministic."""
    geom = geom or StewartGeometry()
    env = env or WorkEnvelope()
    e = _Emitter(plan, env, geom, hz_band)
    blocks = plan.coil.blocks
    if blocks or plan.felts:
        e.add(Mat(plan.material.name))
    by_pass: dict = {}
    for op in plan.felts:
        by_pass.setdefault(op.after_pass, []).append(op)
    for i, b in enumerate(blocks):
        if b.kind == "crossed":
            e.crossed(b)
        elif b.is_stroke:
            e.strokes(b)
        else:
            e.horizontal(b)
        e.felt_ops(by_pass.get(i, ()))
    e.felt_ops(by_pass.get(None, ()))
    return MachineProgram((env.cyl_radius, env.cyl_height, env.felt_reach),
                          geometry_hash(geom), tuple(e.out))


def finalize(plan: FabricationPlan, env: WorkEnvelope | None = None,
             geom: StewartGeometry | None = None) -> FabricationPlan:
    """Emit once and record the instruction count and work counts in the metadata."""
    program = emit(plan, geom, env)
    plan = plan.with_metadata(commands=len(program.commands))
    c = plan.counts()
    return plan.with_metadata(horizontal_cycles=c.horizontal_cycles,
                              crossed_cycles=c.crossed_cycles,
                              cycles=c.horizontal_cycles + c.crossed_cycles,
                              punches=int(c.punches), repositions=int(c.repositions))


# program analysis ------------------------------------------------------------

@dataclass(frozen=True)
class ProgramCounts:
    horizontal_cycles: float
    crossed_cycles: float
    punches: float
    repositions: float
    commands: float
    tilt_reversals: int
    rot_steps: int


def program_counts(program: MachineProgram) -> ProgramCounts:
    """Work counts read off the instruction stream alone."""
    feed = False
    pitch = 0.0
    up = False
    horizontal_steps = 0
    crossed = 0
    punches = 0.0
    felts = 0
    reversals = 0
    sign = -1
    total_rot = 0
    for ins in program.commands:
        if isinstance(ins, Pose):
            pitch = ins.pitch
            if not feed:
                continue  # felting poses tilt too, but lay no yarn
            if pitch > 0 and not up:
                crossed += 1
                up = True
            elif pitch <= 0:
                up = False
            if pitch != 0:
                s = 1 if pitch > 0 else -1
                if s != sign:
                    reversals += 1
                    sign = s
        elif isinstance(ins, Rot):
            total_rot += abs(ins.steps)
            if feed and pitch == 0:
                horizontal_steps += abs(ins.steps)
        elif isinstance(ins, Feed):
            feed = True
        elif isinstance(ins, Dwell):
            feed = False
        elif isinstance(ins, Felt):
            punches += ins.punches
            felts += 1
    return ProgramCounts(horizontal_steps / AXLE_STEPS, float(crossed), punches, float(felts),
                         float(len(program.commands)), reversals, total_rot)
