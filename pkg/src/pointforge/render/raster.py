"""Deterministic z-buffer rasterizer producing a geometry buffer.

Triangles are projected through the pinhole camera and scan-converted with
inclusive half-plane tests at pixel centers; attributes (world position,
normal, albedo) are interpolated with perspective-correct barycentrics.
Shading is two-sided, so no backface culling. Depth ties resolve to the
lowest triangle index, which makes the output independent of chunking.

Triangles touching the camera plane (any vertex depth below a small near
cutoff) are dropped instead of clipped; fixture scenes keep geometry well in
front of the camera.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..isosurface import TriMesh
from .camera import Camera, RenderError

NEAR_CLIP = 1e-4
_DEFAULT_ALBEDO = 0.8
_CHUNK = 4096


@dataclass(frozen=True)
class GBuffer:
    """Per-pixel geometry: depth, world position, normal, albedo, coverage."""

    depth: np.ndarray
    position: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray
    mask: np.ndarray
    cam: Camera

    def __post_init__(self):
        h, w = self.cam.height, self.cam.width
        if self.depth.shape != (h, w) or self.mask.shape != (h, w):
            raise RenderError("buffer shape does not match the camera")
        for plane in (self.position, self.normal, self.albedo):
            if plane.shape != (h, w, 3):
                raise RenderError("buffer shape does not match the camera")
        if not np.all(np.isfinite(self.depth[self.mask])):
            raise RenderError("covered pixels must have finite depth")


def _background(cam: Camera) -> GBuffer:
    h, w = cam.height, cam.width
    return GBuffer(depth=np.full((h, w), np.inf),
                   position=np.zeros((h, w, 3)),
                   normal=np.zeros((h, w, 3)),
                   albedo=np.zeros((h, w, 3)),
                   mask=np.zeros((h, w), bool),
                   cam=cam)


def rasterize(mesh: TriMesh, cam: Camera) -> GBuffer:
    """Render the mesh into a geometry buffer; empty input gives background."""
    h, w = cam.height, cam.width
    if mesh.num_faces == 0:
        return _background(cam)

    xy, depth = cam.project(mesh.positions)
    faces = mesh.indices
    vert_ok = (depth > NEAR_CLIP) & np.all(np.isfinite(xy), axis=1)
    face_ok = np.all(vert_ok[faces], axis=1)
    face_ids = np.flatnonzero(face_ok)
    if face_ids.size == 0:
        return _background(cam)

    zbuf = np.full(h * w, np.inf)
    win_tri = np.full(h * w, -1, np.int64)
    win_bary = np.zeros((h * w, 3))

    for start in range(0, face_ids.size, _CHUNK):
        ids = face_ids[start:start + _CHUNK]
        tri = faces[ids]
        a, b, c = xy[tri[:, 0]], xy[tri[:, 1]], xy[tri[:, 2]]
        area2 = ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                 - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
        keep = np.abs(area2) > 1e-12

        # Pixel-center bounding boxes, clipped to the image.
        xs = np.stack([a[:, 0], b[:, 0], c[:, 0]])
        ys = np.stack([a[:, 1], b[:, 1], c[:, 1]])
        c0u = np.ceil(xs.min(axis=0) - 0.5).astype(np.int64)
        c1u = np.floor(xs.max(axis=0) - 0.5).astype(np.int64)
        r0u = np.ceil(ys.min(axis=0) - 0.5).astype(np.int64)
        r1u = np.floor(ys.max(axis=0) - 0.5).astype(np.int64)
        keep &= (c1u >= c0u) & (c1u >= 0) & (c0u <= w - 1)
        keep &= (r1u >= r0u) & (r1u >= 0) & (r0u <= h - 1)
        c0 = np.clip(c0u, 0, w - 1)
        c1 = np.clip(c1u, 0, w - 1)
        r0 = np.clip(r0u, 0, h - 1)
        r1 = np.clip(r1u, 0, h - 1)
        nc = c1 - c0 + 1
        nr = r1 - r0 + 1
        if not keep.any():
            continue
        (sel,) = np.nonzero(keep)
        counts = (nc * nr)[sel]
        total = int(counts.sum())
        if total == 0:
            continue

        rep = np.repeat(np.arange(sel.size), counts)
        offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        width_rep = nc[sel][rep]
        rows = r0[sel][rep] + offsets // width_rep
        cols = c0[sel][rep] + offsets % width_rep
        px = cols + 0.5
        py = rows + 0.5

        av, bv, cv = a[sel][rep], b[sel][rep], c[sel][rep]
        area = area2[sel][rep]
        wa = ((bv[:, 0] - px) * (cv[:, 1] - py) - (bv[:, 1] - py) * (cv[:, 0] - px)) / area
        wb = ((cv[:, 0] - px) * (av[:, 1] - py) - (cv[:, 1] - py) * (av[:, 0] - px)) / area
        wc = 1.0 - wa - wb
        inside = (wa >= 0.0) & (wb >= 0.0) & (wc >= 0.0)
        if not inside.any():
            continue

        tri_rows = tri[sel][rep][inside]
        gids = ids[sel][rep][inside]
        wa, wb, wc = wa[inside], wb[inside], wc[inside]
        pix = rows[inside] * w + cols[inside]
        inv_z = (wa / depth[tri_rows[:, 0]] + wb / depth[tri_rows[:, 1]]
                 + wc / depth[tri_rows[:, 2]])
        z = 1.0 / inv_z

        # One candidate per pixel within the chunk: nearest, then lowest id.
        order = np.lexsort((gids, z, pix))
        pix, z, gids = pix[order], z[order], gids[order]
        bary = np.stack([wa, wb, wc], axis=1)[order]
        first = np.ones(len(pix), bool)
        first[1:] = pix[1:] != pix[:-1]
        pix, z, gids, bary = pix[first], z[first], gids[first], bary[first]

        better = z < zbuf[pix]
        pix, z, gids, bary = pix[better], z[better], gids[better], bary[better]
        zbuf[pix] = z
        win_tri[pix] = gids
        win_bary[pix] = bary

    covered = win_tri >= 0
    gbuf = _background(cam)
    if not covered.any():
        return gbuf

    pix = np.flatnonzero(covered)
    tri = faces[win_tri[pix]]
    bary = win_bary[pix]
    z_vert = depth[tri]
    pw = bary / z_vert
    pw /= pw.sum(axis=1, keepdims=True)

    position = np.einsum("nk,nkd->nd", pw, mesh.positions[tri])
    if mesh.normals is not None:
        normal = np.einsum("nk,nkd->nd", pw, mesh.normals[tri])
    else:
        fn = mesh.face_normals()[win_tri[pix]]
        normal = fn
    nlen = np.linalg.norm(normal, axis=1, keepdims=True)
    flat = nlen[:, 0] < 1e-12
    if flat.any():
        normal[flat] = mesh.face_normals()[win_tri[pix][flat]]
        nlen = np.linalg.norm(normal, axis=1, keepdims=True)
    normal = np.divide(normal, nlen, out=np.zeros_like(normal), where=nlen > 1e-300)
    if mesh.colors is not None:
        albedo = np.einsum("nk,nkd->nd", pw, mesh.colors[tri])
    else:
        albedo = np.full((len(pix), 3), _DEFAULT_ALBEDO)

    h_w = (cam.height, cam.width)
    depth_img = np.full(h_w, np.inf)
    depth_img.ravel()[pix] = zbuf[pix]
    out = {"position": position, "normal": normal, "albedo": albedo}
    planes = {}
    for name, values in out.items():
        img = np.zeros((*h_w, 3))
        img.reshape(-1, 3)[pix] = values
        planes[name] = img
    mask = np.zeros(h_w, bool)
    mask.ravel()[pix] = True
    return GBuffer(depth=depth_img, position=planes["position"],
                   normal=planes["normal"], albedo=planes["albedo"],
                   mask=mask, cam=cam)
