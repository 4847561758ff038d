"""HTTP/JSON service for the interactive edit, re-mesh, render loop.

One editable document: upload a point cloud, apply edit operations, rebuild
a mesh, and fetch shaded orbit views.  Mutations are serialized behind a
lock and swap an immutable snapshot, so readers never observe a
half-applied edit; undo/redo restore byte-identical clouds.
"""

from __future__ import annotations

import dataclasses
import math
import threading
import time
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import rng
from .config import PipelineConfig
from .fileio import FormatError, decode_ply, encode_obj, encode_ply, encode_png
from .fixtures import resolve_envmap
from .isosurface import IsosurfaceError, extract_mesh, mesh_stats
from .pointcloud import EditOp, PointCloud, PointCloudError, apply_edit
from .render import Camera, RenderError, material_for_mesh, rasterize, shade, \
    srgb_encode, tonemap_reinhard
from .sdf import SdfError, fit_sdf, sample_grid

HISTORY_LIMIT = 64
DEFAULT_RESOLUTION = 64


class ConflictError(RuntimeError):
    """Request is valid but the document is not in a state to honor it."""


class DegenerateError(RuntimeError):
    """Reconstruction produced no usable surface."""


@dataclasses.dataclass(frozen=True)
class Snapshot:
    """Immutable document state; swapped atomically under the write lock."""

    cloud: Optional[PointCloud]
    revision: int
    undo: tuple
    redo: tuple


@dataclasses.dataclass(frozen=True)
class MeshEntry:
    """One cached reconstruction of a specific cloud revision."""

    revision: int
    resolution: int
    obj: bytes
    mesh: object
    stats: dict
    millis: float


class Document:
    """Single editable cloud with bounded history and serialized mutations."""

    def __init__(self, config: Optional[PipelineConfig] = None):
        self.config = config if config is not None else PipelineConfig()
        self._snapshot = Snapshot(cloud=None, revision=0, undo=(), redo=())
        self._write_lock = threading.Lock()
        self._mesh_lock = threading.Lock()
        self._mesh_cache: dict = {}

    @property
    def snapshot(self) -> Snapshot:
        return self._snapshot

    def current_mesh(self) -> Optional[MeshEntry]:
        snap = self._snapshot
        for entry in reversed(list(self._mesh_cache.values())):
            if entry.revision == snap.revision:
                return entry
        return None

    # --- mutations (serialized) -------------------------------------------

    def set_cloud(self, cloud: PointCloud) -> Snapshot:
        with self._write_lock:
            snap = self._snapshot
            undo = (snap.undo + (snap.cloud,))[-HISTORY_LIMIT:]
            self._snapshot = Snapshot(cloud=cloud, revision=snap.revision + 1,
                                      undo=undo, redo=())
            return self._snapshot

    def edit(self, ops, revision: Optional[int] = None):
        if not ops:
            raise PointCloudError("edit request carries no operations")
        with self._write_lock:
            snap = self._snapshot
            if revision is not None and revision != snap.revision:
                raise ConflictError(
                    f"stale revision {revision}, current is {snap.revision}")
            if snap.cloud is None:
                raise ConflictError("no point cloud uploaded")
            cloud = snap.cloud
            changed = 0
            for op in ops:
                changed += int(op.selection.resolve(cloud).size)
                cloud = apply_edit(cloud, op)
            undo = (snap.undo + (snap.cloud,))[-HISTORY_LIMIT:]
            self._snapshot = Snapshot(cloud=cloud, revision=snap.revision + 1,
                                      undo=undo, redo=())
            return self._snapshot, changed

    def undo(self) -> Snapshot:
        with self._write_lock:
            snap = self._snapshot
            if not snap.undo:
                raise ConflictError("nothing to undo")
            redo = (snap.redo + (snap.cloud,))[-HISTORY_LIMIT:]
            self._snapshot = Snapshot(cloud=snap.undo[-1],
                                      revision=snap.revision + 1,
                                      undo=snap.undo[:-1], redo=redo)
            return self._snapshot

    def redo(self) -> Snapshot:
        with self._write_lock:
            snap = self._snapshot
            if not snap.redo:
                raise ConflictError("nothing to redo")
            undo = (snap.undo + (snap.cloud,))[-HISTORY_LIMIT:]
            self._snapshot = Snapshot(cloud=snap.redo[-1],
                                      revision=snap.revision + 1,
                                      undo=undo, redo=snap.redo[:-1])
            return self._snapshot

    # --- reconstruction & rendering ---------------------------------------

    def reconstruct(self, resolution: Optional[int] = None):
        """Mesh the current cloud; cache per (revision, resolution)."""
        cfg = self.config
        res = resolution if resolution is not None else DEFAULT_RESOLUTION
        if not (isinstance(res, int) and 2 <= res <= 512):
            raise PointCloudError(f"resolution must be an int in [2, 512], got {res}")
        snap = self._snapshot
        if snap.cloud is None or snap.cloud.n == 0:
            raise ConflictError("no point cloud uploaded")
        key = (snap.revision, res)
        with self._mesh_lock:
            entry = self._mesh_cache.get(key)
            if entry is not None:
                return entry, True
            start = time.perf_counter()
            field = fit_sdf(snap.cloud, k=cfg.fit.k,
                            color_radius=cfg.fit.color_radius)
            samples = sample_grid(field, res)
            mesh = extract_mesh(samples, metallic=cfg.mesh.metallic,
                                roughness=cfg.mesh.roughness)
            if mesh.num_faces == 0:
                raise DegenerateError("no surface crossed the grid")
            millis = 1000.0 * (time.perf_counter() - start)
            entry = MeshEntry(revision=snap.revision, resolution=res,
                              obj=encode_obj(mesh.positions, mesh.indices,
                                             mesh.colors),
                              mesh=mesh, stats=mesh_stats(mesh), millis=millis)
            # keep only entries for the live revision
            self._mesh_cache = {k: v for k, v in self._mesh_cache.items()
                                if v.revision == snap.revision}
            self._mesh_cache[key] = entry
            return entry, False

    def render(self, azimuth: float, elevation: float, size: int) -> bytes:
        entry = self.current_mesh()
        if entry is None:
            raise ConflictError("no mesh reconstructed for the current cloud")
        if not 1 <= size <= 1024:
            raise PointCloudError(f"size must be in [1, 1024], got {size}")
        cfg = self.config
        cam = Camera.from_orbit(azimuth, elevation,
                                distance=cfg.render.distance,
                                fov_y=math.radians(cfg.render.fov_deg),
                                width=size, height=size)
        env = resolve_envmap(cfg.render.env)
        gbuffer = rasterize(entry.mesh, cam)
        result = shade(gbuffer, env, material_for_mesh(entry.mesh),
                       seed=rng.derive_seed(cfg.seed, "service/render"),
                       counts=cfg.render.counts, shadows=cfg.render.shadows,
                       shadow_distance=cfg.render.shadow_distance,
                       shadow_steps=cfg.render.shadow_steps)
        return encode_png(srgb_encode(tonemap_reinhard(result.image)))


def summarize(doc: Document, **extra) -> dict:
    snap = doc.snapshot
    cloud = snap.cloud
    entry = doc.current_mesh()
    out = {
        "n": 0 if cloud is None else cloud.n,
        "bbox": None,
        "revision": snap.revision,
        "history_depth": len(snap.undo),
        "redo_depth": len(snap.redo),
        "has_mesh": entry is not None,
    }
    if cloud is not None and cloud.n > 0:
        lo, hi = cloud.bounds()
        out["bbox"] = [lo.tolist(), hi.tolist()]
    if entry is not None:
        out["mesh"] = {"resolution": entry.resolution, "millis": entry.millis,
                       "faces": entry.stats["faces"],
                       "vertices": entry.stats["vertices"]}
    out.update(extra)
    return out


def build_app(config: Optional[PipelineConfig] = None) -> FastAPI:
    app = FastAPI(title="pointforge service", docs_url=None, redoc_url=None)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"],
                       expose_headers=["*"])
    doc = Document(config)
    app.state.document = doc

    @app.exception_handler(ConflictError)
    async def conflict_handler(request: Request, err: ConflictError):
        return JSONResponse({"detail": str(err)}, status_code=409)

    @app.exception_handler(DegenerateError)
    async def degenerate_handler(request: Request, err: DegenerateError):
        return JSONResponse({"detail": str(err)}, status_code=422)

    for bad_request in (PointCloudError, FormatError, SdfError,
                        IsosurfaceError, RenderError):
        @app.exception_handler(bad_request)
        async def bad_request_handler(request: Request, err: Exception):
            return JSONResponse({"detail": str(err)}, status_code=400)

    @app.get("/state")
    async def get_state():
        return summarize(doc, config=doc.config.to_json())

    @app.post("/pointcloud")
    async def post_pointcloud(request: Request):
        body = await request.body()
        try:
            cloud = decode_ply(body)
        except (FormatError, PointCloudError, ValueError) as err:
            return JSONResponse({"detail": f"PLY parse failed: {err}"},
                                status_code=400)
        doc.set_cloud(cloud)
        return summarize(doc)

    @app.get("/pointcloud")
    async def get_pointcloud(format: str = "ply"):
        snap = doc.snapshot
        if snap.cloud is None:
            return JSONResponse({"detail": "no point cloud uploaded"},
                                status_code=404)
        if format == "json":
            cloud = snap.cloud
            payload = {"revision": snap.revision,
                       "points": cloud.points.tolist(),
                       "colors": cloud.colors.tolist()}
            return JSONResponse(payload)
        return Response(content=encode_ply(snap.cloud),
                        media_type="application/octet-stream")

    @app.post("/edit")
    async def post_edit(request: Request):
        payload = await request.json()
        revision = None
        if isinstance(payload, dict):
            revision = payload.get("revision")
            payload = payload.get("ops")
        if not isinstance(payload, list):
            raise PointCloudError("edit body must be a JSON array of ops "
                                  "or {revision, ops}")
        ops = [EditOp.from_json(item) for item in payload]
        _, changed = doc.edit(ops, revision=revision)
        return summarize(doc, changed=changed)

    @app.post("/undo")
    async def post_undo():
        doc.undo()
        return summarize(doc)

    @app.post("/redo")
    async def post_redo():
        doc.redo()
        return summarize(doc)

    def _mesh_response(entry: MeshEntry, cache_hit: bool) -> Response:
        return Response(content=entry.obj, media_type="model/obj", headers={
            "X-Mesh-Millis": f"{entry.millis:.3f}",
            "X-Cache": "hit" if cache_hit else "miss",
            "X-Revision": str(entry.revision),
            "X-Resolution": str(entry.resolution),
        })

    @app.post("/mesh")
    async def post_mesh(request: Request):
        resolution = None
        body = await request.body()
        if body:
            import json as _json
            payload = _json.loads(body)
            if not isinstance(payload, dict):
                raise PointCloudError("mesh body must be a JSON object")
            resolution = payload.get("resolution")
        entry, cache_hit = doc.reconstruct(resolution)
        return _mesh_response(entry, cache_hit)

    @app.get("/mesh")
    async def get_mesh():
        entry = doc.current_mesh()
        if entry is None:
            return JSONResponse({"detail": "no mesh reconstructed"},
                                status_code=404)
        return _mesh_response(entry, True)

    @app.get("/render")
    async def get_render(az: float = 0.0, el: float = 0.0, size: int = 0):
        cfg = doc.config
        png = doc.render(az, el, size if size > 0 else cfg.render.width)
        return Response(content=png, media_type="image/png")

    return app
