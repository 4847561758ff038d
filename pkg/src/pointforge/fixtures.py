"""Analytic scene building blocks used by tests, the CLI and the service.

Meshes come with exact unit normals where the geometry defines them, so
renders and metrics have a noise-free reference to compare against.  The
``*_cloud`` samplers draw area-uniform surface points with analytic normals
and position-derived colors; ``FIXTURE_SHAPES`` maps shape names to a
(cloud, mesh) builder pair for the command-line tools.
"""

from __future__ import annotations

import numpy as np

from . import rng
from .isosurface import IsosurfaceError, TriMesh
from .pointcloud import PointCloud
from .render import EnvMap


def uv_sphere_mesh(radius: float = 0.8, center=(0.0, 0.0, 0.0), rings: int = 24,
                   segments: int = 48, color=(0.8, 0.8, 0.8),
                   metallic: float = 0.0, roughness: float = 0.5) -> TriMesh:
    """Latitude-longitude triangulated sphere with exact outward normals."""
    if rings < 3 or segments < 3:
        raise IsosurfaceError("sphere tessellation needs rings >= 3 and segments >= 3")
    if radius <= 0:
        raise IsosurfaceError("sphere radius must be positive")
    center = np.asarray(center, np.float64)

    theta = np.pi * np.arange(1, rings) / rings
    phi = 2.0 * np.pi * np.arange(segments) / segments
    st, ct = np.sin(theta), np.cos(theta)
    ring_pts = np.stack([np.outer(st, np.cos(phi)),
                         np.outer(st, np.sin(phi)),
                         np.broadcast_to(ct[:, None], (rings - 1, segments))],
                        axis=-1).reshape(-1, 3)
    normals = np.vstack([[0.0, 0.0, 1.0], ring_pts, [0.0, 0.0, -1.0]])
    positions = center + radius * normals

    def vid(ring: int, seg: int) -> int:
        return 1 + ring * segments + seg % segments

    top, bottom = 0, len(positions) - 1
    faces = []
    for s in range(segments):
        faces.append([top, vid(0, s), vid(0, s + 1)])
        faces.append([bottom, vid(rings - 2, s + 1), vid(rings - 2, s)])
    for r in range(rings - 2):
        for s in range(segments):
            a, b = vid(r, s), vid(r, s + 1)
            c, d = vid(r + 1, s), vid(r + 1, s + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    colors = np.broadcast_to(np.asarray(color, np.float64), positions.shape).copy()
    return TriMesh(positions=positions, indices=np.asarray(faces, np.int64),
                   colors=colors, normals=normals, metallic=metallic,
                   roughness=roughness)


def merge_meshes(*meshes: TriMesh) -> TriMesh:
    """Concatenate meshes into one, keeping the first mesh's scalar material.

    Missing color/normal attributes on any part default to mid-gray and
    zero normals for that part's vertices.
    """
    if not meshes:
        raise IsosurfaceError("merge needs at least one mesh")
    positions, indices, colors, normals = [], [], [], []
    offset = 0
    for mesh in meshes:
        positions.append(mesh.positions)
        indices.append(mesh.indices + offset)
        n = mesh.num_vertices
        colors.append(mesh.colors if mesh.colors is not None
                      else np.full((n, 3), 0.8))
        normals.append(mesh.normals if mesh.normals is not None
                       else np.zeros((n, 3)))
        offset += n
    return TriMesh(positions=np.vstack(positions), indices=np.vstack(indices),
                   colors=np.vstack(colors), normals=np.vstack(normals),
                   metallic=meshes[0].metallic, roughness=meshes[0].roughness)


def ground_quad(half: float = 1.2, z: float = 0.0, color=(0.8, 0.8, 0.8),
                metallic: float = 0.0, roughness: float = 0.5) -> TriMesh:
    """Two-triangle horizontal square in the plane of constant z, normal +z."""
    if half <= 0:
        raise IsosurfaceError("quad half extent must be positive")
    positions = np.array([[-half, -half, z], [half, -half, z],
                          [half, half, z], [-half, half, z]])
    indices = np.array([[0, 1, 2], [0, 2, 3]], np.int64)
    normals = np.tile([0.0, 0.0, 1.0], (4, 1))
    colors = np.broadcast_to(np.asarray(color, np.float64), (4, 3)).copy()
    return TriMesh(positions=positions, indices=indices, colors=colors,
                   normals=normals)


def torus_mesh(major: float = 0.55, minor: float = 0.22, segments: int = 96,
               rings: int = 48, metallic: float = 0.0,
               roughness: float = 0.5) -> TriMesh:
    """Z-axis torus lattice with exact normals and normal-derived colors."""
    if not 0 < minor < major:
        raise IsosurfaceError("torus needs 0 < minor < major")
    if segments < 3 or rings < 3:
        raise IsosurfaceError("torus tessellation needs segments >= 3 and rings >= 3")
    u = 2.0 * np.pi * np.arange(segments) / segments
    v = 2.0 * np.pi * np.arange(rings) / rings
    uu, vv = np.meshgrid(u, v, indexing="ij")
    positions, normals = _torus_points(uu.ravel(), vv.ravel(), major, minor)

    def vid(s: int, r: int) -> int:
        return (s % segments) * rings + r % rings

    faces = []
    for s in range(segments):
        for r in range(rings):
            a, b = vid(s, r), vid(s + 1, r)
            c, d = vid(s, r + 1), vid(s + 1, r + 1)
            faces.append([a, b, d])
            faces.append([a, d, c])
    return TriMesh(positions=positions, indices=np.asarray(faces, np.int64),
                   colors=_normal_colors(normals), normals=normals,
                   metallic=metallic, roughness=roughness)


def box_mesh(half=(0.7, 0.5, 0.4), metallic: float = 0.0,
             roughness: float = 0.5) -> TriMesh:
    """Axis-aligned box, four vertices per face so normals stay sharp."""
    h = np.asarray(half, np.float64).reshape(3)
    if np.any(h <= 0):
        raise IsosurfaceError("box half extents must be positive")
    positions, normals, faces = [], [], []
    for axis in range(3):
        for sign in (1.0, -1.0):
            a, b = (axis + 1) % 3, (axis + 2) % 3
            if sign < 0:
                a, b = b, a
            base = len(positions)
            for sa, sb in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                p = np.zeros(3)
                p[axis] = sign * h[axis]
                p[a] = sa * h[a]
                p[b] = sb * h[b]
                positions.append(p)
                n = np.zeros(3)
                n[axis] = sign
                normals.append(n)
            faces.append([base, base + 1, base + 2])
            faces.append([base, base + 2, base + 3])
    positions = np.asarray(positions)
    normals = np.asarray(normals)
    return TriMesh(positions=positions, indices=np.asarray(faces, np.int64),
                   colors=_normal_colors(normals), normals=normals,
                   metallic=metallic, roughness=roughness)


# --- area-uniform fixture clouds ------------------------------------------


def _normal_colors(normals: np.ndarray) -> np.ndarray:
    """Deterministic procedural coloring: unit normal mapped into [0, 1]."""
    return 0.5 + 0.5 * np.asarray(normals, np.float64)


def _torus_points(u, v, major: float, minor: float):
    cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
    ring = major + minor * cv
    positions = np.stack([ring * cu, ring * su, minor * sv], axis=-1)
    normals = np.stack([cv * cu, cv * su, sv], axis=-1)
    return positions, normals


def sphere_cloud(n: int = 512, radius: float = 0.8, seed: int = 0) -> PointCloud:
    """Area-uniform samples of a sphere surface with exact radial normals."""
    if n < 1 or radius <= 0:
        raise IsosurfaceError("sphere cloud needs n >= 1 and radius > 0")
    gen = rng.generator(rng.derive_seed(seed, "fixtures/sphere"))
    z = gen.uniform(-1.0, 1.0, n)
    phi = gen.uniform(0.0, 2.0 * np.pi, n)
    s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    normals = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(points=radius * normals, colors=_normal_colors(normals),
                      normals=normals)


def torus_cloud(n: int = 2000, major: float = 0.55, minor: float = 0.22,
                seed: int = 0) -> PointCloud:
    """Area-uniform torus samples via rejection on the major-radius factor."""
    if n < 1:
        raise IsosurfaceError("torus cloud needs n >= 1")
    if not 0 < minor < major:
        raise IsosurfaceError("torus needs 0 < minor < major")
    gen = rng.generator(rng.derive_seed(seed, "fixtures/torus"))
    u = np.empty(0)
    v = np.empty(0)
    while len(u) < n:
        cand_u = gen.uniform(0.0, 2.0 * np.pi, 2 * n)
        cand_v = gen.uniform(0.0, 2.0 * np.pi, 2 * n)
        accept = gen.uniform(0.0, 1.0, 2 * n) \
            < (major + minor * np.cos(cand_v)) / (major + minor)
        u = np.concatenate([u, cand_u[accept]])
        v = np.concatenate([v, cand_v[accept]])
    positions, normals = _torus_points(u[:n], v[:n], major, minor)
    return PointCloud(points=positions, colors=_normal_colors(normals),
                      normals=normals)


def box_cloud(n: int = 1500, half=(0.7, 0.5, 0.4), seed: int = 0) -> PointCloud:
    """Area-uniform samples of an axis-aligned box surface, face normals."""
    h = np.asarray(half, np.float64).reshape(3)
    if n < 1 or np.any(h <= 0):
        raise IsosurfaceError("box cloud needs n >= 1 and positive half extents")
    gen = rng.generator(rng.derive_seed(seed, "fixtures/box"))
    # face order: +x, -x, +y, -y, +z, -z
    areas = np.repeat([4 * h[1] * h[2], 4 * h[2] * h[0], 4 * h[0] * h[1]], 2)
    face = gen.choice(6, size=n, p=areas / areas.sum())
    uv = gen.uniform(-1.0, 1.0, (n, 2))
    points = np.empty((n, 3))
    normals = np.zeros((n, 3))
    for f in range(6):
        rows = face == f
        axis, sign = divmod(f, 2)
        sign = 1.0 - 2.0 * sign
        a, b = (axis + 1) % 3, (axis + 2) % 3
        points[rows, axis] = sign * h[axis]
        points[rows, a] = uv[rows, 0] * h[a]
        points[rows, b] = uv[rows, 1] * h[b]
        normals[rows, axis] = sign
    return PointCloud(points=points, colors=_normal_colors(normals),
                      normals=normals)


# --- procedural environment -----------------------------------------------


def sun_sky_envmap(height: int = 16, width: int = 32,
                   sun_azimuth_deg: float = 35.0,
                   sun_elevation_deg: float = 55.0,
                   sun_radiance=(30.0, 28.0, 24.0)) -> EnvMap:
    """HDR gradient sky: zenith-to-horizon blend, dim ground, one sun texel."""
    rows = (np.arange(height) + 0.5) * np.pi / height
    cos_theta = np.cos(rows)
    zenith = np.array([0.5, 0.7, 1.1])
    horizon = np.array([0.9, 0.7, 0.55])
    ground = np.array([0.25, 0.2, 0.18])
    up = np.clip(cos_theta, 0.0, 1.0)[:, None]
    sky = up * zenith + (1.0 - up) * horizon
    radiance = np.where(cos_theta[:, None] >= 0.0, sky, ground)
    radiance = np.broadcast_to(radiance[:, None, :],
                               (height, width, 3)).copy()
    theta_sun = np.pi / 2.0 - np.radians(sun_elevation_deg)
    phi_sun = np.radians(sun_azimuth_deg)
    phi_sun = (phi_sun + np.pi) % (2.0 * np.pi) - np.pi
    i = min(int(theta_sun / np.pi * height), height - 1)
    j = min(int((phi_sun + np.pi) / (2.0 * np.pi) * width), width - 1)
    radiance[i, j] += np.asarray(sun_radiance, np.float64)
    return EnvMap(radiance)


def resolve_envmap(spec: str) -> EnvMap:
    """Map an environment spec to a map: 'sky', 'constant[:value]', or a PFM path."""
    if spec == "sky":
        return sun_sky_envmap()
    if spec == "constant":
        return EnvMap.constant(1.0)
    if spec.startswith("constant:"):
        return EnvMap.constant(float(spec.split(":", 1)[1]))
    return EnvMap.from_pfm(spec)


FIXTURE_SHAPES = {
    "sphere": {
        "cloud": lambda n, seed: sphere_cloud(n=n, seed=seed),
        "mesh": lambda: uv_sphere_mesh(radius=0.8, rings=48, segments=96),
        "default_n": 512,
    },
    "torus": {
        "cloud": lambda n, seed: torus_cloud(n=n, seed=seed),
        "mesh": lambda: torus_mesh(),
        "default_n": 2000,
    },
    "box": {
        "cloud": lambda n, seed: box_cloud(n=n, seed=seed),
        "mesh": lambda: box_mesh(),
        "default_n": 1500,
    },
}
