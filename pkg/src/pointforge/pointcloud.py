"""Point-cloud data model, normalization, neighbor queries, and edits.

Clouds are immutable: every operation returns a new value and leaves
untouched points bit-exact, which is what makes the service's undo stack a
plain byte comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

EDIT_KINDS = ("delete", "duplicate", "translate", "stretch", "recolor")


class PointCloudError(ValueError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """n points with linear-RGB colors and optional unit normals.

    Positions are unitless, nominally inside [-1, 1]^3; colors are linear
    floats in [0, 1] (uint8 on disk, see fileio). ``normals_stale`` marks
    normals invalidated by a geometric edit; they are re-estimated lazily.
    """

    points: np.ndarray
    colors: np.ndarray
    normals: Optional[np.ndarray] = None
    normals_stale: bool = False

    def __post_init__(self):
        pts = _readonly(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise PointCloudError(f"points must be (n, 3), got {pts.shape}")
        cols = _readonly(self.colors)
        if cols.shape != pts.shape:
            raise PointCloudError(f"colors must match points shape, got {cols.shape}")
        if not np.all(np.isfinite(pts)):
            raise PointCloudError("points contain non-finite values")
        if cols.size and (cols.min() < -1e-9 or cols.max() > 1 + 1e-9):
            raise PointCloudError("colors outside [0, 1]")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", cols)
        if self.normals is not None:
            nrm = _readonly(self.normals)
            if nrm.shape != pts.shape:
                raise PointCloudError(f"normals must match points shape, got {nrm.shape}")
            if not self.normals_stale and nrm.size:
                lens = np.linalg.norm(nrm, axis=1)
                if np.any(np.abs(lens - 1.0) > 1e-6):
                    raise PointCloudError("normals not unit length")
            object.__setattr__(self, "normals", nrm)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.n == 0:
            raise PointCloudError("empty cloud has no bounds")
        return self.points.min(axis=0), self.points.max(axis=0)

    def replace(self, **kw) -> "PointCloud":
        args = dict(
            points=self.points,
            colors=self.colors,
            normals=self.normals,
            normals_stale=self.normals_stale,
        )
        args.update(kw)
        return PointCloud(**args)


@dataclass(frozen=True)
class UnitCubeTransform:
    """p' = (p - center) * scale; invertible record of normalization."""

    center: np.ndarray
    scale: float

    def apply(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p, float) - self.center) * self.scale

    def invert(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, float) / self.scale + self.center


def unit_cube_frame(points: np.ndarray) -> UnitCubeTransform:
    """Transform centering the bounding box and scaling its longest axis to [-1, 1].

    Degenerate (zero-extent) inputs translate to the origin with unit scale.
    """
    pts = np.asarray(points, float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise PointCloudError(f"expected a non-empty (n, 3) array, got {pts.shape}")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = 0.5 * (lo + hi)
    extent = float((hi - lo).max())
    scale = 1.0 if extent <= 0.0 else 2.0 / extent
    return UnitCubeTransform(center=_readonly(center.reshape(3)), scale=scale)


def normalize_to_unit_cube(pc: PointCloud) -> tuple[PointCloud, UnitCubeTransform]:
    """Center at the bounding-box center and scale the longest axis to [-1, 1]."""
    if pc.n < 1:
        raise PointCloudError("cannot normalize an empty cloud")
    tf = unit_cube_frame(pc.points)
    return pc.replace(points=tf.apply(pc.points)), tf


# --- neighbor queries ------------------------------------------------------


class KnnIndex:
    """k-NN / radius index over point positions.

    Queries return exactly min(k, n) neighbors sorted by distance, ties
    broken by point index (the backing kd-tree leaves tie order undefined,
    so boundary ties fall back to an exact scan).
    """

    _TIE_SLACK = 8

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise PointCloudError("index requires an (n>=1, 3) array")
        self.points = pts
        self._tree = cKDTree(pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def knn(self, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Distances and indices of the k nearest points, (m, k) each."""
        q = np.atleast_2d(np.asarray(query, dtype=np.float64))
        k = min(k, self.n)
        kq = min(self.n, k + self._TIE_SLACK)
        dist, idx = self._tree.query(q, k=kq, workers=-1)
        dist = np.atleast_2d(dist)
        idx = np.atleast_2d(idx)
        # stable order: distance, then index
        order = np.lexsort((idx, dist), axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        if kq < self.n:
            # unresolved tie at the candidate boundary -> exact scan
            bad = np.abs(dist[:, k - 1] - dist[:, -1]) <= 0.0
            if np.any(bad):
                d_all = np.linalg.norm(self.points[None, :, :] - q[bad][:, None, :], axis=2)
                full = np.lexsort((np.broadcast_to(np.arange(self.n), d_all.shape), d_all), axis=1)
                dist[bad, :] = np.take_along_axis(d_all, full, axis=1)[:, :kq]
                idx[bad, :] = full[:, :kq]
        return dist[:, :k], idx[:, :k]

    def radius(self, center: np.ndarray, radius: float) -> np.ndarray:
        """Indices of points within radius of center, ascending."""
        hits = self._tree.query_ball_point(np.asarray(center, float), float(radius))
        return np.array(sorted(hits), dtype=np.int64)


def estimate_normals(pc: PointCloud, k: int = 8, return_degenerate: bool = False):
    """Estimate unit normals as the smallest-eigenvector of each k-NN covariance.

    Orientation is flipped to point away from the cloud centroid. Collinear
    neighborhoods (rank-deficient covariance) fall back to the radial
    direction and are flagged in the optional degenerate mask.
    """
    if k < 3:
        raise PointCloudError("normal estimation needs k >= 3")
    if pc.n < k:
        raise PointCloudError(f"normal estimation needs n >= k ({pc.n} < {k})")
    index = KnnIndex(pc.points)
    _, idx = index.knn(pc.points, k)
    nbrs = pc.points[idx]  # (n, k, 3)
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    # rank < 2: the two smallest eigenvalues both vanish
    degenerate = evals[:, 1] <= 1e-12 * np.maximum(evals[:, 2], 1e-300)
    centroid = pc.points.mean(axis=0)
    radial = pc.points - centroid
    rlen = np.linalg.norm(radial, axis=1, keepdims=True)
    radial = np.where(rlen > 1e-12, radial / np.maximum(rlen, 1e-300), [[0.0, 0.0, 1.0]])
    normals = np.where(degenerate[:, None], radial, normals)
    flip = np.einsum("ni,ni->n", normals, radial) < 0
    normals = np.where(flip[:, None], -normals, normals)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    out = pc.replace(normals=normals, normals_stale=False)
    if return_degenerate:
        return out, degenerate
    return out


# --- edits -----------------------------------------------------------------


@dataclass(frozen=True)
class Selection:
    """Point selection: a sphere, an explicit index set, or everything."""

    kind: str  # "sphere" | "indices" | "all"
    center: Optional[np.ndarray] = None
    radius: float = 0.0
    indices: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "sphere":
            if self.center is None or not self.radius > 0:
                raise PointCloudError("sphere selection needs a center and radius > 0")
            object.__setattr__(self, "center", _readonly(np.asarray(self.center).reshape(3)))
        elif self.kind == "indices":
            idx = np.array(self.indices, dtype=np.int64, copy=True)
            idx.setflags(write=False)
            object.__setattr__(self, "indices", idx)
        elif self.kind != "all":
            raise PointCloudError(f"unknown selection kind {self.kind!r}")

    def resolve(self, pc: PointCloud) -> np.ndarray:
        """Selected point indices, ascending and unique."""
        if self.kind == "all":
            return np.arange(pc.n, dtype=np.int64)
        if self.kind == "sphere":
            if pc.n == 0:
                return np.zeros(0, dtype=np.int64)
            d = np.linalg.norm(pc.points - self.center, axis=1)
            return np.nonzero(d <= self.radius)[0].astype(np.int64)
        idx = self.indices
        if idx.size and (idx.min() < 0 or idx.max() >= pc.n):
            raise PointCloudError(f"selection index out of range for n={pc.n}")
        return np.unique(idx)

    @staticmethod
    def sphere(center, radius: float) -> "Selection":
        return Selection(kind="sphere", center=center, radius=radius)

    @staticmethod
    def of_indices(indices) -> "Selection":
        return Selection(kind="indices", indices=indices)

    @staticmethod
    def all() -> "Selection":
        return Selection(kind="all")

    def to_json(self) -> dict:
        if self.kind == "sphere":
            return {"type": "sphere", "center": list(map(float, self.center)), "radius": self.radius}
        if self.kind == "indices":
            return {"type": "indices", "indices": [int(i) for i in self.indices]}
        return {"type": "all"}

    @staticmethod
    def from_json(obj: dict) -> "Selection":
        kind = obj.get("type")
        if kind == "sphere":
            return Selection.sphere(obj["center"], float(obj["radius"]))
        if kind == "indices":
            return Selection.of_indices(obj["indices"])
        if kind == "all":
            return Selection.all()
        raise PointCloudError(f"unknown selection type {kind!r}")


@dataclass(frozen=True)
class EditOp:
    """One edit: delete, duplicate, translate, stretch, or recolor.

    duplicate/translate carry an offset vector; stretch carries per-axis
    scale factors about a pivot; recolor carries an RGB color in [0, 1].
    """

    kind: str
    selection: Selection
    offset: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    pivot: Optional[np.ndarray] = None
    color: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in EDIT_KINDS:
            raise PointCloudError(f"unknown edit kind {self.kind!r}")
        for name in ("offset", "scale", "pivot", "color"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _readonly(np.asarray(v, float).reshape(3)))
        if self.kind in ("translate", "duplicate") and self.offset is None:
            raise PointCloudError(f"{self.kind} needs an offset")
        if self.kind == "stretch":
            if self.scale is None:
                raise PointCloudError("stretch needs per-axis scale factors")
            if np.any(self.scale == 0):
                raise PointCloudError("stretch scale factors must be nonzero")
        if self.kind == "recolor":
            if self.color is None or self.color.min() < 0 or self.color.max() > 1:
                raise PointCloudError("recolor needs a color in [0, 1]^3")

    def to_json(self) -> dict:
        out = {"kind": self.kind, "select": self.selection.to_json()}
        for name in ("offset", "scale", "pivot", "color"):
            v = getattr(self, name)
            if v is not None:
                out[name] = list(map(float, v))
        return out

    @staticmethod
    def from_json(obj: dict) -> "EditOp":
        known = {"kind", "select", "offset", "scale", "pivot", "color"}
        extra = set(obj) - known
        if extra:
            raise PointCloudError(f"unknown edit keys: {sorted(extra)}")
        if "kind" not in obj or "select" not in obj:
            raise PointCloudError("edit op needs 'kind' and 'select'")
        return EditOp(
            kind=obj["kind"],
            selection=Selection.from_json(obj["select"]),
            offset=obj.get("offset"),
            scale=obj.get("scale"),
            pivot=obj.get("pivot"),
            color=obj.get("color"),
        )


def apply_edit(pc: PointCloud, op: EditOp) -> PointCloud:
    """Apply one edit; untouched points are preserved bit-exactly.

    Empty selections are a no-op only for delete; moved points mark the
    cloud's normals stale rather than re-estimating eagerly.
    """
    sel = op.selection.resolve(pc)
    if op.kind != "delete" and sel.size == 0:
        raise PointCloudError(f"{op.kind} requires a non-empty selection")

    if op.kind == "delete":
        keep = np.ones(pc.n, dtype=bool)
        keep[sel] = False
        normals = pc.normals[keep] if pc.normals is not None else None
        return pc.replace(points=pc.points[keep], colors=pc.colors[keep], normals=normals)

    if op.kind == "recolor":
        colors = pc.colors.copy()
        colors[sel] = op.color
        return pc.replace(colors=colors)

    if op.kind == "duplicate":
        new_pts = pc.points[sel] + op.offset
        points = np.concatenate([pc.points, new_pts])
        colors = np.concatenate([pc.colors, pc.colors[sel]])
        normals = None
        if pc.normals is not None:
            normals = np.concatenate([pc.normals, pc.normals[sel]])
        return pc.replace(points=points, colors=colors, normals=normals,
                          normals_stale=pc.normals is not None)

    points = pc.points.copy()
    if op.kind == "translate":
        points[sel] = points[sel] + op.offset
    else:  # stretch
        pivot = op.pivot if op.pivot is not None else np.zeros(3)
        points[sel] = pivot + (points[sel] - pivot) * op.scale
    return pc.replace(points=points, normals_stale=pc.normals is not None)


def apply_edits(pc: PointCloud, ops: Sequence[EditOp]) -> PointCloud:
    for op in ops:
        pc = apply_edit(pc, op)
    return pc
