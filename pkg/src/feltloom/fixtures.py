"""Parametric test models: primitives plus the phone and fish workpieces.

All models stand on z = 0 with the reel axis along z, in millimetres.
Composite models are plain concatenations of closed primitives, which is
enough for profile extraction.
"""
from __future__ import annotations

import numpy as np

from .mesh import TriMesh


def _grid_surface(points: np.ndarray, closed_u: bool = True) -> np.ndarray:
    """Triangulate an (nv, nu, 3) grid of points."""
    nv, nu, _ = points.shape
    tris = []
    cols = nu if closed_u else nu - 1
    for i in range(nv - 1):
        for j in range(cols):
            a = points[i, j]
            b = points[i, (j + 1) % nu]
            c = points[i + 1, (j + 1) % nu]
            d = points[i + 1, j]
            tris.append((a, b, c))
            tris.append((a, c, d))
    return np.array(tris)


def _soup_to_mesh(soup: np.ndarray) -> TriMesh:
    from .mesh import _from_triangle_soup

    return _from_triangle_soup(soup)


def revolve(z: np.ndarray, r: np.ndarray, segments: int = 64, cap: bool = True) -> TriMesh:
    """Surface of revolution through (r[i], z[i]); closed with flat caps."""
    theta = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    ring = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    pts = np.empty((len(z), segments, 3))
    pts[..., 0] = r[:, None] * ring[None, :, 0]
    pts[..., 1] = r[:, None] * ring[None, :, 1]
    pts[..., 2] = z[:, None]
    soup = [_grid_surface(pts)]
    if cap:
        for k in (0, -1):
            if r[k] > 0:
                centre = np.array([0.0, 0.0, z[k]])
                ring_pts = pts[k]
                soup.append(np.array([(centre, ring_pts[j], ring_pts[(j + 1) % segments])
                                      for j in range(segments)]))
    soup = np.vstack(soup)
    return _soup_to_mesh(soup)


def cylinder(radius: float, height: float, segments: int = 64, z0: float = 0.0) -> TriMesh:
    z = np.linspace(z0, z0 + height, max(2, int(np.ceil(height / 2.0)) + 1))
    return revolve(z, np.full(len(z), radius), segments)


def sphere(radius: float, center=(0.0, 0.0, 0.0), n_lat: int = 48, n_lon: int = 64) -> TriMesh:
    phi = np.linspace(0, np.pi, n_lat + 1)
    z = -radius * np.cos(phi)
    r = radius * np.sin(phi)
    r[0] = r[-1] = 0.0
    mesh = revolve(z, r, n_lon, cap=False)
    return mesh.translated(center)


def box(size, center=(0.0, 0.0, 0.0)) -> TriMesh:
    sx, sy, sz = (s / 2.0 for s in size)
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    v = v + np.asarray(center, dtype=float)
    faces = [(0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5), (0, 4, 5), (0, 5, 1),
             (2, 3, 7), (2, 7, 6), (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3)]
    return TriMesh(v, np.array(faces))


def unit_cube_soup() -> np.ndarray:
    """12 triangles of the unit cube as an unshared triangle soup."""
    cube = box((1.0, 1.0, 1.0), (0.5, 0.5, 0.5))
    return cube.corners()


def ellipsoid(semi_axes, center=(0.0, 0.0, 0.0), n_lat: int = 48, n_lon: int = 64,
              z_clip: tuple[float, float] | None = None) -> TriMesh:
    """Ellipsoid, optionally truncated to a z window (cut faces are capped)."""
    a, b, c = semi_axes
    phi = np.linspace(0, np.pi, n_lat + 1)
    zs = -c * np.cos(phi)
    if z_clip is not None:
        lo, hi = (zc - center[2] for zc in z_clip)
        zs = np.unique(np.clip(zs, max(lo, -c), min(hi, c)))
    s = np.sqrt(np.clip(1.0 - (zs / c) ** 2, 0.0, None))
    theta = np.linspace(0, 2 * np.pi, n_lon, endpoint=False)
    pts = np.empty((len(zs), n_lon, 3))
    pts[..., 0] = a * s[:, None] * np.cos(theta)[None, :]
    pts[..., 1] = b * s[:, None] * np.sin(theta)[None, :]
    pts[..., 2] = zs[:, None]
    soup = [_grid_surface(pts)]
    for k in (0, -1):
        if s[k] > 1e-9:
            centre = np.array([0.0, 0.0, zs[k]])
            soup.append(np.array([(centre, pts[k, j], pts[k, (j + 1) % n_lon])
                                  for j in range(n_lon)]))
    mesh = _soup_to_mesh(np.vstack(soup))
    return mesh.translated(center)


# Workpieces ---------------------------------------------------------------

def sphere_model(radius: float = 20.0) -> TriMesh:
    return sphere(radius, center=(0.0, 0.0, radius))


def cylinder_model(radius: float = 15.0, height: float = 40.0) -> TriMesh:
    return cylinder(radius, height)


def phone_model() -> TriMesh:
    """Handset-style phone: wide ear and mouth pieces joined by a slim handle.

    Rectangular cross-sections, so the rotational envelope is a dumbbell.
    """
    return TriMesh.concatenate([
        box((34.0, 16.0, 18.0), (0.0, 0.0, 9.0)),
        box((20.0, 12.0, 34.0), (0.0, 0.0, 35.0)),
        box((34.0, 16.0, 18.0), (0.0, 0.0, 61.0)),
    ])


def fish_model() -> TriMesh:
    """Cylindrical tail under a flattened ellipsoid body, mouth cut flat."""
    tail = cylinder(10.0, 22.0)
    body = ellipsoid((20.0, 14.0, 28.0), center=(0.0, 0.0, 47.0), z_clip=(19.0, 72.0))
    return TriMesh.concatenate([tail, body])


def hourglass_model(r_end: float = 20.0, r_waist: float = 8.0, height: float = 60.0) -> TriMesh:
    z = np.linspace(0, height, 61)
    u = (z - height / 2) / (height / 2)
    r = r_waist + (r_end - r_waist) * u ** 2
    return revolve(z, r)


def barrel_model(r_end: float, r_mid: float, height: float = 60.0) -> TriMesh:
    z = np.linspace(0, height, 61)
    u = (z - height / 2) / (height / 2)
    r = r_mid + (r_end - r_mid) * u ** 2
    return revolve(z, r)


def boss_on_cylinder(radius: float = 12.0, height: float = 50.0,
                     boss_size=(8.0, 10.0, 12.0), boss_z: float = 25.0,
                     boss_angle_deg: float = 0.0) -> TriMesh:
    """Cylinder with a rectangular boss sticking out radially at one angle."""
    dx, dy, dz = boss_size
    centre_r = radius + dx / 2 - 1.0  # overlap the wall by 1 mm
    ang = np.deg2rad(boss_angle_deg)
    b = box((dx, dy, dz))
    c, s = np.cos(ang), np.sin(ang)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    verts = b.vertices @ rot.T + np.array([centre_r * c, centre_r * s, boss_z])
    return TriMesh.concatenate([cylinder(radius, height), TriMesh(verts, b.triangles)])
