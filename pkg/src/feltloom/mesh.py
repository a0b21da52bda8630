"""Triangle mesh ingest, rotational profiles and working-envelope validation.

Meshes are in millimetres and the reel axis is the mesh z axis.
"""
from __future__ import annotations

import io
import math
import re
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

DEDUP_TOL = 1e-6


class MeshError(ValueError):
    """Malformed mesh stream. ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class EmptyModelError(ValueError):
    pass


class DegenerateProfileError(ValueError):
    pass


@dataclass(frozen=True)
class WorkEnvelope:
    cyl_radius: float = 25.0
    cyl_height: float = 75.0
    felt_reach: float = 40.0

    def __post_init__(self):
        for name in ("cyl_radius", "cyl_height", "felt_reach"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"envelope {name} must be > 0, got {value}")


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray  # (n, 3) float64
    triangles: np.ndarray  # (m, 3) int64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh has non-finite coordinates")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self) -> np.ndarray:
        """(m, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.triangles]

    def translated(self, offset) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(offset, dtype=float), self.triangles)

    @staticmethod
    def concatenate(meshes) -> "TriMesh":
        verts, tris, base = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + base)
            base += len(m.vertices)
        return TriMesh(np.vstack(verts), np.vstack(tris))


def _from_triangle_soup(soup: np.ndarray) -> TriMesh:
    """Dedup vertices within DEDUP_TOL and drop zero-area triangles."""
    soup = np.asarray(soup, dtype=float).reshape(-1, 3, 3)
    if len(soup) == 0:
        raise EmptyModelError("mesh contains no triangles")
    points = soup.reshape(-1, 3)
    keys = np.round(points / DEDUP_TOL).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # keep first-seen order so vertex numbering is stable
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    vertices = points[first[order]]
    tris = rank[inverse].reshape(-1, 3)
    a, b, c = (vertices[tris[:, k]] for k in range(3))
    area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
    distinct = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    keep = distinct & (area2 > 1e-12)
    tris = tris[keep]
    if len(tris) == 0:
        raise EmptyModelError("mesh has only degenerate triangles")
    used = np.unique(tris)
    remap = -np.ones(len(vertices), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(vertices[used], remap[tris])


_FLOAT = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_VERTEX_RE = re.compile(rb"vertex\s+(" + _FLOAT.encode() + rb")\s+(" + _FLOAT.encode()
                        + rb")\s+(" + _FLOAT.encode() + rb")")


def _parse_ascii(data: bytes) -> np.ndarray:
    text_start = data.lstrip()
    if not text_start.startswith(b"solid"):
        raise MeshError("ASCII mesh must start with 'solid'", 0)
    tokens = list(re.finditer(rb"\S+", data))
    soup = []
    facet = None
    i = 1  # skip 'solid'
    # name tokens until first 'facet' or 'endsolid'
    while i < len(tokens) and tokens[i].group() not in (b"facet", b"endsolid"):
        i += 1
    ended = False
    while i < len(tokens):
        tok = tokens[i]
        word = tok.group()
        if word == b"facet":
            if facet is not None:
                raise MeshError("nested facet", tok.start())
            facet = []
            i += 1
            if i < len(tokens) and tokens[i].group() == b"normal":
                if i + 3 >= len(tokens):
                    raise MeshError("truncated normal", tok.start())
                for k in range(1, 4):
                    _ascii_float(tokens[i + k])
                i += 4
        elif word == b"outer":
            if i + 1 >= len(tokens) or tokens[i + 1].group() != b"loop":
                raise MeshError("expected 'loop'", tok.start())
            i += 2
        elif word == b"vertex":
            if facet is None:
                raise MeshError("vertex outside facet", tok.start())
            if i + 3 >= len(tokens):
                raise MeshError("truncated vertex", tok.start())
            facet.append([_ascii_float(tokens[i + k]) for k in range(1, 4)])
            i += 4
        elif word == b"endloop":
            i += 1
        elif word == b"endfacet":
            if facet is None or len(facet) != 3:
                raise MeshError("facet must have exactly 3 vertices", tok.start())
            soup.append(facet)
            facet = None
            i += 1
        elif word == b"endsolid":
            if facet is not None:
                raise MeshError("unterminated facet", tok.start())
            ended = True
            break
        else:
            raise MeshError(f"unexpected token {word[:20]!r}", tok.start())
    if not ended:
        raise MeshError("missing 'endsolid'", len(data))
    return np.array(soup, dtype=float).reshape(-1, 3, 3)


def _ascii_float(tok: re.Match) -> float:
    try:
        value = float(tok.group())
    except ValueError:
        raise MeshError(f"bad number {tok.group()[:20]!r}", tok.start()) from None
    if not math.isfinite(value):
        raise MeshError("non-finite coordinate", tok.start())
    return value


def _parse_binary(data: bytes) -> np.ndarray:
    if len(data) < 84:
        raise MeshError("truncated binary header", len(data))
    (count,) = struct.unpack_from("<I", data, 80)
    need = 84 + 50 * count
    if len(data) < need:
        done = (len(data) - 84) // 50
        raise MeshError(f"truncated binary body: {count} records declared, {done} present",
                        84 + 50 * done)
    record = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    recs = np.frombuffer(data, dtype=record, count=count, offset=84)
    soup = recs["v"].astype(float)
    bad = ~np.isfinite(soup).all(axis=(1, 2))
    if bad.any():
        idx = int(np.argmax(bad))
        raise MeshError("non-finite coordinate", 84 + 50 * idx + 12)
    return soup


def load_mesh(source: bytes | BinaryIO, format: str = "auto") -> TriMesh:
    """Read an ASCII or binary STL-style stream.

    ``format`` is ``"ascii"``, ``"binary"`` or ``"auto"``.
    """
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    data = bytes(data)
    if format == "auto":
        format = _sniff(data)
    if format == "ascii":
        soup = _parse_ascii(data)
    elif format == "binary":
        soup = _parse_binary(data)
    else:
        raise ValueError(f"unknown mesh format {format!r}")
    return _from_triangle_soup(soup)


def _sniff(data: bytes) -> str:
    if data.lstrip().startswith(b"solid"):
        if len(data) >= 84:
            (count,) = struct.unpack_from("<I", data, 80)
            if 84 + 50 * count == len(data):
                return "binary"
        return "ascii"
    return "binary"


def to_ascii_stl(mesh: TriMesh, name: str = "model") -> bytes:
    out = io.StringIO()
    out.write(f"solid {name}\n")
    for a, b, c in mesh.corners():
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n)
        n = n / norm if norm > 0 else n
        out.write(f"  facet normal {n[0]:.6e} {n[1]:.6e} {n[2]:.6e}\n    outer loop\n")
        for p in (a, b, c):
            out.write(f"      vertex {p[0]:.9e} {p[1]:.9e} {p[2]:.9e}\n")
        out.write("    endloop\n  endfacet\n")
    out.write(f"endsolid {name}\n")
    return out.getvalue().encode()


def to_binary_stl(mesh: TriMesh) -> bytes:
    corners = mesh.corners()
    header = b"feltloom binary mesh".ljust(80, b" ")
    parts = [header, struct.pack("<I", len(corners))]
    for a, b, c in corners:
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n)
        n = n / norm if norm > 0 else n
        parts.append(struct.pack("<12fH", *n, *a, *b, *c, 0))
    return b"".join(parts)


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Slab-wise maximum radial distance from the reel axis.

    Slab ``i`` covers ``[z_min + i*h, z_min + (i+1)*h]``; ``z_samples`` are
    the slab centres. ``sectors`` optionally holds the per-sector maxima
    (n_z, n_theta) the profile was reduced from.
    """

    z_samples: np.ndarray
    r_max: np.ndarray
    z_min: float
    z_max: float
    sectors: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        z = np.asarray(self.z_samples, dtype=float)
        r = np.asarray(self.r_max, dtype=float)
        if z.shape != r.shape or z.ndim != 1:
            raise ValueError("z_samples and r_max must be matching 1-D arrays")
        if len(r) < 2:
            raise ValueError("profile needs at least 2 samples")
        if not self.z_max > self.z_min:
            raise ValueError("profile z_max must exceed z_min")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("profile radii must be finite and >= 0")
        object.__setattr__(self, "z_samples", z)
        object.__setattr__(self, "r_max", r)

    @property
    def n(self) -> int:
        return len(self.r_max)

    @property
    def slab_height(self) -> float:
        return (self.z_max - self.z_min) / self.n

    def slab_bounds(self, i: int) -> tuple[float, float]:
        h = self.slab_height
        return self.z_min + i * h, self.z_min + (i + 1) * h

    def shifted(self, dz: float) -> "RadialProfile":
        return RadialProfile(self.z_samples + dz, self.r_max, self.z_min + dz,
                             self.z_max + dz, self.sectors)

    def with_radii(self, r_max) -> "RadialProfile":
        return RadialProfile(self.z_samples, np.asarray(r_max, dtype=float),
                             self.z_min, self.z_max)

    @classmethod
    def uniform(cls, z_min: float, z_max: float, radii) -> "RadialProfile":
        radii = np.asarray(radii, dtype=float)
        h = (z_max - z_min) / len(radii)
        z = z_min + h * (np.arange(len(radii)) + 0.5)
        return cls(z, radii, z_min, z_max)


def sample_surface(mesh: TriMesh, step: float = 1.0) -> np.ndarray:
    """Vertices plus edge and face points so no sample gap exceeds ``step``."""
    corners = mesh.corners()
    edges = np.stack([corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0],
                      corners[:, 2] - corners[:, 1]], axis=1)
    longest = np.linalg.norm(edges, axis=2).max(axis=1)
    subdiv = np.maximum(1, np.ceil(longest / step)).astype(int)
    chunks = [mesh.vertices]
    for n in np.unique(subdiv):
        sel = corners[subdiv == n]
        # barycentric lattice with n divisions per edge
        ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        mask = ii + jj <= n
        u = ii[mask] / n
        v = jj[mask] / n
        w = 1.0 - u - v
        pts = (w[None, :, None] * sel[:, None, 0] + u[None, :, None] * sel[:, None, 1]
               + v[None, :, None] * sel[:, None, 2])
        chunks.append(pts.reshape(-1, 3))
    return np.vstack(chunks)


def _plane_sections(mesh: TriMesh, planes: np.ndarray) -> np.ndarray:
    """Points where triangle edges cross the given z planes."""
    corners = mesh.corners()
    starts = corners[:, [0, 1, 2]].reshape(-1, 3)
    ends = corners[:, [1, 2, 0]].reshape(-1, 3)
    out = []
    for z in planes:
        za, zb = starts[:, 2] - z, ends[:, 2] - z
        cross = (za * zb <= 0) & (za != zb)
        if not cross.any():
            continue
        t = za[cross] / (za[cross] - zb[cross])
        out.append(starts[cross] + t[:, None] * (ends[cross] - starts[cross]))
    return np.vstack(out) if out else np.empty((0, 3))


def radial_profile(mesh: TriMesh, n_z: int, n_theta: int = 24, step: float = 1.0) -> RadialProfile:
    """Slab-max radial envelope about the z axis.

    Samples every vertex, edge and face at spacing <= ``step`` and the exact
    crossings of each slab boundary plane. Points on a boundary count for both
    neighbouring slabs.
    """
    if mesh.n_triangles == 0:
        raise EmptyModelError("empty mesh")
    if n_z < 2:
        raise ValueError("n_z must be >= 2")
    if n_theta < 8:
        raise ValueError("n_theta must be >= 8")
    z_min = float(mesh.vertices[:, 2].min())
    z_max = float(mesh.vertices[:, 2].max())
    if not z_max > z_min:
        raise DegenerateProfileError("mesh has no extent along the reel axis")
    h = (z_max - z_min) / n_z
    planes = z_min + h * np.arange(n_z + 1)
    pts = np.vstack([sample_surface(mesh, step), _plane_sections(mesh, planes)])
    r = np.hypot(pts[:, 0], pts[:, 1])
    if r.max() <= 1e-9:
        raise DegenerateProfileError("mesh lies entirely on the reel axis")
    theta = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi)
    sector = np.minimum((theta / (2 * np.pi) * n_theta).astype(int), n_theta - 1)
    pos = (pts[:, 2] - z_min) / h
    lo = np.clip(np.floor(pos).astype(int), 0, n_z - 1)
    sectors = np.zeros((n_z, n_theta))
    np.maximum.at(sectors, (lo, sector), r)
    # boundary points also belong to the slab below
    on_edge = np.isclose(pos, np.round(pos), atol=1e-9) & (np.round(pos) >= 1)
    below = np.clip(np.round(pos[on_edge]).astype(int) - 1, 0, n_z - 1)
    np.maximum.at(sectors, (below, sector[on_edge]), r[on_edge])
    z_samples = z_min + h * (np.arange(n_z) + 0.5)
    return RadialProfile(z_samples, sectors.max(axis=1), z_min, z_max, sectors)


def bounding_cylinder(profile: RadialProfile) -> tuple[float, float]:
    return float(profile.r_max.max()), float(profile.z_max - profile.z_min)


@dataclass(frozen=True)
class Violation:
    kind: str  # "radius" or "height"
    z: float
    r: float

    def line(self) -> str:
        return f"VIOLATION {self.kind} z={self.z:.3f} r={self.r:.3f}"


@dataclass(frozen=True)
class EnvelopeReport:
    accepted: bool
    violations: tuple[Violation, ...]

    def to_text(self) -> str:
        lines = [v.line() for v in self.violations]
        lines.append("ACCEPTED" if self.accepted else "REJECTED")
        return "\n".join(lines) + "\n"


def validate_envelope(profile: RadialProfile, env: WorkEnvelope = WorkEnvelope(),
                      tol: float = 1e-9) -> EnvelopeReport:
    """Check the profile fits the coiling cylinder; both bounds inclusive."""
    violations = []
    radius, height = bounding_cylinder(profile)
    if height > env.cyl_height + tol:
        violations.append(Violation("height", height, radius))
    for z, r in zip(profile.z_samples, profile.r_max):
        if r > env.cyl_radius + tol:
            violations.append(Violation("radius", float(z), float(r)))
    return EnvelopeReport(not violations, tuple(violations))
