"""Scalar fields for meshing: analytic signed-distance fixtures and a field
fitted to an oriented point cloud.

Every field maps positions to (signed distance, color, normal). Analytic
shapes are exact SDFs (1-Lipschitz, |grad| = 1); the fitted field is a
smooth proxy whose zero set tracks the cloud surface.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fileio
from .pointcloud import KnnIndex, PointCloud, estimate_normals

DOMAIN_HALF = 1.1  # grid covers [-1.1, 1.1]^3 so geometry in [-1,1]^3 never clips


class SdfError(ValueError):
    pass


class ScalarField:
    """Interface: evaluate (m, 3) positions -> (dist (m,), color (m,3), normal (m,3))."""

    def evaluate(self, x: np.ndarray):
        raise NotImplementedError

    def distance(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(x)[0]


def _as_points(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, np.float64))
    if x.ndim != 2 or x.shape[1] != 3:
        raise SdfError(f"positions must be (m, 3), got {x.shape}")
    return x


def _unit_rows(v, fallback=(0.0, 0.0, 1.0)):
    n = np.linalg.norm(v, axis=1, keepdims=True)
    out = np.divide(v, n, out=np.zeros_like(v), where=n > 1e-300)
    out[n[:, 0] <= 1e-300] = fallback
    return out


@dataclass(frozen=True)
class SphereField(ScalarField):
    radius: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)
    color: tuple = (0.8, 0.8, 0.8)

    def __post_init__(self):
        if not self.radius > 0:
            raise SdfError("sphere radius must be positive")

    def evaluate(self, x):
        x = _as_points(x)
        rel = x - np.asarray(self.center)
        r = np.linalg.norm(rel, axis=1)
        dist = r - self.radius
        normal = _unit_rows(rel)
        color = np.broadcast_to(np.asarray(self.color, float), x.shape).copy()
        return dist, color, normal


@dataclass(frozen=True)
class BoxField(ScalarField):
    half_extents: tuple = (0.5, 0.5, 0.5)
    center: tuple = (0.0, 0.0, 0.0)
    color: tuple = (0.8, 0.8, 0.8)

    def __post_init__(self):
        if np.any(np.asarray(self.half_extents) <= 0):
            raise SdfError("box half extents must be positive")

    def evaluate(self, x):
        x = _as_points(x)
        rel = x - np.asarray(self.center)
        q = np.abs(rel) - np.asarray(self.half_extents)
        outer = np.maximum(q, 0.0)
        outer_len = np.linalg.norm(outer, axis=1)
        inner = np.minimum(q.max(axis=1), 0.0)
        dist = outer_len + inner
        # gradient: outward face/edge/corner direction outside, max-axis face inside
        outside = outer_len > 0
        normal = np.zeros_like(rel)
        normal[outside] = outer[outside] / outer_len[outside, None]
        inside = ~outside
        if np.any(inside):
            axis = np.argmax(q[inside], axis=1)
            normal[inside, axis] = 1.0
        normal *= np.where(rel >= 0, 1.0, -1.0)
        normal = _unit_rows(normal)
        color = np.broadcast_to(np.asarray(self.color, float), x.shape).copy()
        return dist, color, normal


@dataclass(frozen=True)
class TorusField(ScalarField):
    major_radius: float = 0.5
    minor_radius: float = 0.2
    center: tuple = (0.0, 0.0, 0.0)
    color: tuple = (0.8, 0.8, 0.8)

    def __post_init__(self):
        if not (self.major_radius > 0 and self.minor_radius > 0):
            raise SdfError("torus radii must be positive")

    def evaluate(self, x):
        x = _as_points(x)
        rel = x - np.asarray(self.center)
        rho = np.linalg.norm(rel[:, :2], axis=1)
        q = np.stack([rho - self.major_radius, rel[:, 2]], axis=1)
        qlen = np.linalg.norm(q, axis=1)
        dist = qlen - self.minor_radius
        normal = np.zeros_like(rel)
        safe_q = qlen > 1e-300
        safe_rho = rho > 1e-300
        both = safe_q & safe_rho
        normal[both, 0] = q[both, 0] / qlen[both] * rel[both, 0] / rho[both]
        normal[both, 1] = q[both, 0] / qlen[both] * rel[both, 1] / rho[both]
        normal[safe_q, 2] = q[safe_q, 1] / qlen[safe_q]
        normal = _unit_rows(normal)
        color = np.broadcast_to(np.asarray(self.color, float), x.shape).copy()
        return dist, color, normal


@dataclass(frozen=True)
class PlaneField(ScalarField):
    """Half-space below the plane n.x = offset is inside."""

    normal_dir: tuple = (0.0, 0.0, 1.0)
    offset: float = 0.0
    color: tuple = (0.8, 0.8, 0.8)

    def __post_init__(self):
        n = np.linalg.norm(self.normal_dir)
        if abs(n - 1.0) > 1e-9:
            raise SdfError("plane normal must be unit length")

    def evaluate(self, x):
        x = _as_points(x)
        n = np.asarray(self.normal_dir, float)
        dist = x @ n - self.offset
        normal = np.broadcast_to(n, x.shape).copy()
        color = np.broadcast_to(np.asarray(self.color, float), x.shape).copy()
        return dist, color, normal


@dataclass(frozen=True)
class UnionField(ScalarField):
    """min-combine: attributes taken from the nearer child."""

    a: ScalarField
    b: ScalarField

    def evaluate(self, x):
        da, ca, na = self.a.evaluate(x)
        db, cb, nb = self.b.evaluate(x)
        take_a = (da <= db)[:, None]
        return np.minimum(da, db), np.where(take_a, ca, cb), np.where(take_a, na, nb)


@dataclass(frozen=True)
class IntersectionField(ScalarField):
    """max-combine: attributes taken from the farther child."""

    a: ScalarField
    b: ScalarField

    def evaluate(self, x):
        da, ca, na = self.a.evaluate(x)
        db, cb, nb = self.b.evaluate(x)
        take_a = (da >= db)[:, None]
        return np.maximum(da, db), np.where(take_a, ca, cb), np.where(take_a, na, nb)


@dataclass(frozen=True)
class TranslatedField(ScalarField):
    base: ScalarField
    shift: tuple = (0.0, 0.0, 0.0)

    def evaluate(self, x):
        return self.base.evaluate(_as_points(x) - np.asarray(self.shift))


def analytic_sdf(shape: ScalarField, x):
    """Evaluate an analytic fixture at positions x."""
    return shape.evaluate(x)


# --- fitted field ----------------------------------------------------------

FIT_MIN_POINTS = 50
FIT_EPS = 1e-9


class FittedPointSdf(ScalarField):
    """Signed distance from an oriented point cloud.

    s(x) is the inverse-distance-weighted mean of the tangent-plane
    projections (x - p_i) . n_i over the k nearest points; colors and
    normals blend with the same weights. Smooth, defined everywhere, but
    only approximately a unit-gradient SDF.
    """

    def __init__(self, pc: PointCloud, k: int = 8, color_radius: Optional[float] = None):
        if pc.n < FIT_MIN_POINTS:
            raise SdfError(f"fit needs >= {FIT_MIN_POINTS} points, got {pc.n}")
        if pc.normals is None or pc.normals_stale:
            pc = estimate_normals(pc, k=min(8, pc.n))
        self.cloud = pc
        self.k = min(k, pc.n)
        self.color_radius = color_radius
        self.index = KnnIndex(pc.points)

    def evaluate(self, x):
        x = _as_points(x)
        dist, idx = self.index.knn(x, self.k)
        nbr = self.cloud.points[idx]          # (m, k, 3)
        nrm = self.cloud.normals[idx]
        col = self.cloud.colors[idx]
        rel = x[:, None, :] - nbr
        signed = np.einsum("mki,mki->mk", rel, nrm)
        w = 1.0 / (dist + FIT_EPS)
        wsum = w.sum(axis=1)
        s = np.einsum("mk,mk->m", w, signed) / wsum
        if self.color_radius is not None:
            wc = w * np.exp(-((dist / self.color_radius) ** 2))
            wc_sum = np.maximum(wc.sum(axis=1), 1e-300)
        else:
            wc, wc_sum = w, wsum
        color = np.einsum("mk,mki->mi", wc, col) / wc_sum[:, None]
        normal = _unit_rows(np.einsum("mk,mki->mi", w, nrm))
        return s, np.clip(color, 0.0, 1.0), normal


def fit_sdf(pc: PointCloud, k: int = 8, color_radius: Optional[float] = None) -> FittedPointSdf:
    return FittedPointSdf(pc, k=k, color_radius=color_radius)


# --- grid sampling ---------------------------------------------------------


@dataclass(frozen=True)
class GridSamples:
    """Field values on the (res+1)^3 lattice over [-1.1, 1.1]^3."""

    resolution: int
    sdf: np.ndarray      # (res+1)^3 flat, index (i*(res+1)+j)*(res+1)+k
    color: np.ndarray    # (V, 3)
    normal: np.ndarray   # (V, 3)

    @property
    def side(self) -> int:
        return self.resolution + 1

    @property
    def cell(self) -> float:
        return 2.0 * DOMAIN_HALF / self.resolution

    def vertex_positions(self) -> np.ndarray:
        return lattice_positions(self.resolution)


def lattice_positions(res: int) -> np.ndarray:
    axis = np.linspace(-DOMAIN_HALF, DOMAIN_HALF, res + 1)
    ii, jj, kk = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)


def sample_grid(field: ScalarField, res: int, batch: int = 1 << 18) -> GridSamples:
    """Evaluate the field at every lattice vertex, in index order."""
    if res < 8:
        raise SdfError("grid resolution must be >= 8")
    pts = lattice_positions(res)
    v = pts.shape[0]
    sdf = np.empty(v)
    color = np.empty((v, 3))
    normal = np.empty((v, 3))
    for lo in range(0, v, batch):
        hi = min(lo + batch, v)
        d, c, nrm = field.evaluate(pts[lo:hi])
        sdf[lo:hi] = d
        color[lo:hi] = c
        normal[lo:hi] = nrm
    if not np.all(np.isfinite(sdf)):
        bad = int(np.flatnonzero(~np.isfinite(sdf))[0])
        raise SdfError(f"non-finite field value at vertex {pts[bad].tolist()}")
    return GridSamples(resolution=res, sdf=sdf, color=color, normal=normal)


_GRID_MAGIC = b"SDFG"


def save_grid(path, grid: GridSamples) -> None:
    """Debug dump: magic, int32 res, float64 bounds, then f4 sdf/color/normal."""
    header = _GRID_MAGIC + struct.pack("<i2d", grid.resolution, -DOMAIN_HALF, DOMAIN_HALF)
    body = (grid.sdf.astype("<f4").tobytes()
            + grid.color.astype("<f4").tobytes()
            + grid.normal.astype("<f4").tobytes())
    fileio.atomic_write(path, header + body)


def load_grid(path) -> GridSamples:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _GRID_MAGIC:
        raise SdfError("not a grid dump")
    res, lo, hi = struct.unpack_from("<i2d", blob, 4)
    v = (res + 1) ** 3
    off = 4 + struct.calcsize("<i2d")
    sdf = np.frombuffer(blob, "<f4", v, off).astype(np.float64)
    color = np.frombuffer(blob, "<f4", v * 3, off + 4 * v).reshape(v, 3).astype(np.float64)
    normal = np.frombuffer(blob, "<f4", v * 3, off + 16 * v).reshape(v, 3).astype(np.float64)
    return GridSamples(resolution=res, sdf=sdf, color=color, normal=normal)
