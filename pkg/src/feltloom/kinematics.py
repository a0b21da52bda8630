"""Rotary-servo Stewart platform: closed-form inverse kinematics and reach.

Frames
------
*Base frame*: origin at the base centre, z up along the reel axis. IK works
here. *Work frame*: same axes, origin at the bottom of the working cylinder.
At the home pose the platform centre sits at the cylinder's mid-height, so a
work-frame height ``zw`` maps to base height ``home_height + zw - H/2``.

Tool layout: the felting needle lies in the platform plane on the +x rim and
points at the axis (platform-frame direction -x); the thread feeder eyelet is
on the opposite rim and lays yarn at the platform-centre height.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .mesh import WorkEnvelope

IK_TOL_MM = 1e-9
LIMIT_MARGIN_DEG = 1e-6
FEEDER_AZIMUTH_DEG = 180.0
FELT_AZIMUTH_DEG = 0.0


class UnreachableError(ValueError):
    """Pose outside the platform workspace; ``legs`` lists offending legs."""

    def __init__(self, legs, reason: str = ""):
        self.legs = tuple(legs)
        msg = f"unreachable pose: legs {list(self.legs)}"
        super().__init__(msg + (f" ({reason})" if reason else ""))


def _wrap_deg(a: float) -> float:
    """Normalise to (-180, 180]."""
    a = math.fmod(a, 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


@dataclass(frozen=True)
class PlatformPose:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.roll, self.pitch, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("pose components must be finite")
        for name in ("roll", "pitch", "yaw"):
            object.__setattr__(self, name, _wrap_deg(float(getattr(self, name))))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def orientation(self) -> tuple[float, float, float]:
        return self.roll, self.pitch, self.yaw


def rotation_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Extrinsic x-y-z rotation, i.e. R = Rz(yaw) @ Ry(pitch) @ Rx(roll). Degrees."""
    r, p, w = np.deg2rad([roll, pitch, yaw])
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cw, sw = math.cos(w), math.sin(w)
    return np.array([
        [cw * cp, cw * sp * sr - sw * cr, cw * sp * cr + sw * sr],
        [sw * cp, sw * sp * sr + cw * cr, sw * sp * cr - cw * sr],
        [-sp, cp * sr, cp * cr],
    ])


def pose_to_transform(pose: PlatformPose) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = rotation_matrix(pose.roll, pose.pitch, pose.yaw)
    T[:3, 3] = pose.position
    return T


def _default_base_angles():
    return (-10.0, 10.0, 110.0, 130.0, 230.0, 250.0)


def _default_platform_angles():
    return (-30.0, 30.0, 90.0, 150.0, 210.0, 270.0)


@dataclass(frozen=True)
class StewartGeometry:
    """Six-leg rotary-servo platform.

    Legs come in mirrored pairs; even legs have horns swinging clockwise
    (tangent direction base_angle - 90 deg), odd legs counter-clockwise.
    Servo angle 0 means the horn is horizontal. ``home_height`` defaults to
    the height at which all horns are horizontal.
    """

    base_anchor_radius: float = 90.0
    base_anchor_angles: tuple = field(default_factory=_default_base_angles)
    platform_anchor_radius: float = 70.0
    platform_anchor_angles: tuple = field(default_factory=_default_platform_angles)
    horn_length: float = 55.0
    rod_length: float = 220.0
    home_height: float | None = None
    servo_min: float = -85.0
    servo_max: float = 85.0

    def __post_init__(self):
        object.__setattr__(self, "base_anchor_angles", tuple(float(a) for a in self.base_anchor_angles))
        object.__setattr__(self, "platform_anchor_angles",
                           tuple(float(a) for a in self.platform_anchor_angles))
        if len(self.base_anchor_angles) != 6 or len(self.platform_anchor_angles) != 6:
            raise ValueError("geometry needs six base and six platform anchors")
        if not (self.rod_length > self.horn_length > 0):
            raise ValueError("need rod_length > horn_length > 0")
        if not (self.base_anchor_radius > 0 and self.platform_anchor_radius > 0):
            raise ValueError("anchor radii must be > 0")
        if not self.servo_min < self.servo_max:
            raise ValueError("servo_min must be < servo_max")
        if self.home_height is None:
            object.__setattr__(self, "home_height", self._horizontal_horn_height())
        if not self.home_height > 0:
            raise ValueError("home_height must be > 0")

    @property
    def base_anchors(self) -> np.ndarray:
        a = np.deg2rad(self.base_anchor_angles)
        return np.stack([self.base_anchor_radius * np.cos(a),
                         self.base_anchor_radius * np.sin(a), np.zeros(6)], axis=1)

    @property
    def platform_anchors(self) -> np.ndarray:
        a = np.deg2rad(self.platform_anchor_angles)
        return np.stack([self.platform_anchor_radius * np.cos(a),
                         self.platform_anchor_radius * np.sin(a), np.zeros(6)], axis=1)

    @property
    def horn_directions(self) -> np.ndarray:
        """Horizontal unit vectors of each horn's swing plane (beta angles)."""
        sign = np.array([-1.0, 1.0, -1.0, 1.0, -1.0, 1.0])
        beta = np.deg2rad(np.asarray(self.base_anchor_angles) + 90.0 * sign)
        return np.stack([np.cos(beta), np.sin(beta)], axis=1)

    def horn_tips(self, angles_deg) -> np.ndarray:
        a = np.deg2rad(np.asarray(angles_deg, dtype=float))
        d = self.horn_directions
        h = self.horn_length
        return self.base_anchors + np.stack(
            [h * np.cos(a) * d[:, 0], h * np.cos(a) * d[:, 1], h * np.sin(a)], axis=1)

    def _horizontal_horn_height(self) -> float:
        tips = self.horn_tips(np.zeros(6))
        d = np.linalg.norm(self.platform_anchors[:, :2] - tips[:, :2], axis=1)
        if np.any(d >= self.rod_length):
            raise ValueError("rods too short for the anchor layout")
        heights = np.sqrt(self.rod_length ** 2 - d ** 2)
        return float(heights.max())

    def key(self) -> tuple:
        return (self.base_anchor_radius, self.base_anchor_angles, self.platform_anchor_radius,
                self.platform_anchor_angles, self.horn_length, self.rod_length,
                self.home_height, self.servo_min, self.servo_max)

    @property
    def home_pose(self) -> PlatformPose:
        return PlatformPose(0.0, 0.0, self.home_height)


@dataclass(frozen=True)
class ServoAngles:
    angles: tuple

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if len(self.angles) != 6:
            raise ValueError("need six servo angles")

    def __iter__(self):
        return iter(self.angles)

    def as_array(self) -> np.ndarray:
        return np.array(self.angles)


def _solve_legs(pose: PlatformPose, geom: StewartGeometry):
    """Raw closed form; returns (angles_deg, ok_mask, reason_per_leg)."""
    R = rotation_matrix(pose.roll, pose.pitch, pose.yaw)
    q = pose.position + geom.platform_anchors @ R.T
    leg = q - geom.base_anchors
    d = geom.horn_directions
    h, s = geom.horn_length, geom.rod_length
    e = 2.0 * h * leg[:, 2]
    f = 2.0 * h * (d[:, 0] * leg[:, 0] + d[:, 1] * leg[:, 1])
    g = np.einsum("ij,ij->i", leg, leg) + h * h - s * s
    norm = np.hypot(e, f)
    ratio = np.divide(g, norm, out=np.full(6, np.inf), where=norm > 0)
    ok = np.abs(ratio) <= 1.0 + 1e-12
    ratio = np.clip(ratio, -1.0, 1.0)
    alpha = np.rad2deg(np.arcsin(ratio) - np.arctan2(f, e))
    alpha = (alpha + 180.0) % 360.0 - 180.0
    reasons = ["" if k else "no closure" for k in ok]
    lo, hi = geom.servo_min + LIMIT_MARGIN_DEG, geom.servo_max - LIMIT_MARGIN_DEG
    for i in range(6):
        if ok[i] and not (lo <= alpha[i] <= hi):
            ok[i] = False
            reasons[i] = f"servo {alpha[i]:.3f} deg outside limits"
    return alpha, ok, reasons, q


def inverse_kinematics(pose: PlatformPose, geom: StewartGeometry) -> ServoAngles:
    """Servo angles placing the platform at ``pose`` (base frame).

    Each leg solves e*sin(a) + f*cos(a) = g, the closure condition that the
    horn tip and platform anchor are exactly one rod length apart.
    """
    alpha, ok, reasons, q = _solve_legs(pose, geom)
    if not ok.all():
        bad = [i for i in range(6) if not ok[i]]
        raise UnreachableError(bad, "; ".join(f"leg {i}: {reasons[i]}" for i in bad))
    tips = geom.horn_tips(alpha)
    closure = np.abs(np.linalg.norm(q - tips, axis=1) - geom.rod_length)
    if closure.max() > IK_TOL_MM:
        bad = [i for i in range(6) if closure[i] > IK_TOL_MM]
        raise UnreachableError(bad, f"closure error {closure.max():.2e} mm")
    return ServoAngles(alpha)


def reachable(pose: PlatformPose, geom: StewartGeometry) -> bool:
    try:
        inverse_kinematics(pose, geom)
    except UnreachableError:
        return False
    return True


# work frame <-> base frame ---------------------------------------------------

def work_pose(x: float, y: float, zw: float, roll: float, pitch: float, yaw: float,
              env: WorkEnvelope, geom: StewartGeometry) -> PlatformPose:
    """Base-frame pose for a platform centre at work-frame (x, y, zw)."""
    return PlatformPose(x, y, geom.home_height + zw - env.cyl_height / 2.0, roll, pitch, yaw)


def to_work_z(pose: PlatformPose, env: WorkEnvelope, geom: StewartGeometry) -> float:
    return pose.z - geom.home_height + env.cyl_height / 2.0


# felting reach ---------------------------------------------------------------

def needle_orientation(approach) -> tuple[float, float]:
    """(pitch, yaw) turning the platform needle direction (-1, 0, 0) onto ``approach``."""
    a = np.asarray(approach, dtype=float)
    pitch = math.degrees(math.asin(max(-1.0, min(1.0, a[2]))))
    yaw = math.degrees(math.atan2(-a[1], -a[0])) if math.hypot(a[0], a[1]) > 1e-12 else 0.0
    return pitch, yaw


def felt_pose(target, approach, env: WorkEnvelope, geom: StewartGeometry):
    """Platform pose (work frame) putting the needle line through ``target``.

    ``target`` and ``approach`` are given in the tool frame (the felting side
    at azimuth 0). The platform centre is placed on the needle line as close
    to the reel axis as possible. Returns (pose_work, tip_distance) where
    ``tip_distance`` is the target's distance from the hemisphere centre along
    the needle (>= 0 means on the tool side).
    """
    t = np.asarray(target, dtype=float)
    a = np.asarray(approach, dtype=float)
    pitch, yaw = needle_orientation(a)
    a_xy = a[:2]
    denom = float(a_xy @ a_xy)
    # centre C = t + x_t * a ; target = C - x_t * a
    x_t = -float(t[:2] @ a_xy) / denom if denom > 1e-12 else 0.0
    c = t + x_t * a
    return (c[0], c[1], c[2], 0.0, pitch, yaw), x_t


def felt_reach_check(target, approach, env: WorkEnvelope = WorkEnvelope(),
                     geom: StewartGeometry | None = None) -> bool:
    """True iff the felting needle can punch ``target`` along ``approach``.

    The target must sit in the reach hemisphere in front of the tool (within
    ``env.felt_reach`` of the platform centre, in the platform's upper
    half-space) and the resulting pose must pass inverse kinematics.
    """
    geom = geom or StewartGeometry()
    a = np.asarray(approach, dtype=float)
    if abs(np.linalg.norm(a) - 1.0) > 1e-6:
        raise ValueError("approach must be a unit vector")
    t = np.asarray(target, dtype=float)
    return _reach_cached(tuple(np.round(t, 9)), tuple(np.round(a, 12)), env, geom.key())


@lru_cache(maxsize=65536)
def _reach_cached(t, a, env, geom_key) -> bool:
    geom = _geom_from_key(geom_key)
    if a[2] < -1e-9:
        return False  # needle would point down into the lower half-space
    (x, y, zw, roll, pitch, yaw), x_t = felt_pose(t, a, env, geom)
    if x_t < -1e-9 or x_t > env.felt_reach + 1e-9:
        return False
    pose = work_pose(x, y, zw, roll, pitch, yaw, env, geom)
    rel = np.asarray(t) - np.array([x, y, zw])
    local = rotation_matrix(roll, pitch, yaw).T @ rel
    if local[2] < -1e-6 or np.linalg.norm(local) > env.felt_reach + 1e-9:
        return False
    return reachable(pose, geom)


@lru_cache(maxsize=64)
def _geom_from_key(key) -> StewartGeometry:
    (br, ba, pr, pa, h, s, hh, lo, hi) = key
    return StewartGeometry(br, ba, pr, pa, h, s, hh, lo, hi)
