"""HTTP service: document lifecycle, history, meshing, rendering, races."""

import io
import json
import socket
import subprocess
import sys
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from pointforge.config import MeshConfig, PipelineConfig, RenderConfig
from pointforge.fileio import decode_ply, encode_ply, load_obj
from pointforge.fixtures import sphere_cloud
from pointforge.isosurface import mesh_stats
from pointforge.pointcloud import EditOp, PointCloud, Selection, apply_edit
from pointforge.service import (HISTORY_LIMIT, Document, build_app)


@pytest.fixture()
def client():
    cfg = PipelineConfig(render=RenderConfig(width=32, height=32,
                                             spp_ggx=2, spp_env=2, spp_hemi=1))
    app = build_app(cfg)
    with TestClient(app) as c:
        yield c


@pytest.fixture(scope="module")
def sphere_blob():
    return encode_ply(sphere_cloud(512, seed=0))


def upload(client, blob):
    r = client.post("/pointcloud", content=blob)
    assert r.status_code == 200, r.text
    return r.json()


class TestUpload:
    def test_summary_has_count_and_bbox(self, client, sphere_blob):
        out = upload(client, sphere_blob)
        assert out["n"] == 512
        lo, hi = out["bbox"]
        assert all(-1.0 <= v <= 1.0 for v in lo + hi)
        assert out["revision"] == 1

    def test_malformed_body_is_400_with_position(self, client):
        r = client.post("/pointcloud", content=b"definitely not a ply")
        assert r.status_code == 400
        detail = r.json()["detail"]
        assert "parse" in detail.lower()
        assert any(ch.isdigit() for ch in detail)

    def test_reupload_pushes_history(self, client, sphere_blob):
        first = upload(client, sphere_blob)
        second = upload(client, sphere_blob)
        assert second["history_depth"] == first["history_depth"] + 1

    def test_upload_clears_mesh(self, client, sphere_blob):
        upload(client, sphere_blob)
        assert client.post("/mesh", json={"resolution": 16}).status_code == 200
        upload(client, sphere_blob)
        assert client.get("/mesh").status_code == 404


class TestEdit:
    def test_recolor_all_changes_every_point(self, client, sphere_blob):
        upload(client, sphere_blob)
        ops = [{"kind": "recolor", "select": {"type": "all"},
                "color": [1.0, 0.0, 0.0]}]
        r = client.post("/edit", json=ops)
        assert r.status_code == 200
        assert r.json()["changed"] == 512

    def test_delete_empty_selection_changes_nothing(self, client, sphere_blob):
        upload(client, sphere_blob)
        ops = [{"kind": "delete", "select": {"type": "indices", "indices": []}}]
        r = client.post("/edit", json=ops)
        assert r.status_code == 200
        assert r.json()["changed"] == 0
        assert r.json()["n"] == 512

    def test_ops_apply_in_order(self, client, sphere_blob):
        upload(client, sphere_blob)
        ops = [
            {"kind": "translate", "select": {"type": "all"}, "offset": [5, 0, 0]},
            {"kind": "delete", "select": {"type": "sphere",
                                          "center": [5, 0, 0], "radius": 10.0}},
        ]
        r = client.post("/edit", json=ops)
        assert r.status_code == 200
        assert r.json()["n"] == 0
        assert r.json()["changed"] == 1024

    def test_edit_without_cloud_is_409(self, client):
        ops = [{"kind": "recolor", "select": {"type": "all"},
                "color": [0, 0, 0]}]
        assert client.post("/edit", json=ops).status_code == 409

    def test_invalid_op_is_400(self, client, sphere_blob):
        upload(client, sphere_blob)
        r = client.post("/edit", json=[{"kind": "explode",
                                        "select": {"type": "all"}}])
        assert r.status_code == 400
        assert "explode" in r.json()["detail"]

    def test_empty_op_list_is_400(self, client, sphere_blob):
        upload(client, sphere_blob)
        assert client.post("/edit", json=[]).status_code == 400

    def test_nonarray_body_is_400(self, client, sphere_blob):
        upload(client, sphere_blob)
        assert client.post("/edit", json={"nope": 1}).status_code == 400

    def test_stale_revision_is_409(self, client, sphere_blob):
        upload(client, sphere_blob)
        ops = [{"kind": "translate", "select": {"type": "all"},
                "offset": [0.1, 0, 0]}]
        rev = client.get("/state").json()["revision"]
        assert client.post("/edit",
                           json={"revision": rev, "ops": ops}).status_code == 200
        r = client.post("/edit", json={"revision": rev, "ops": ops})
        assert r.status_code == 409
        assert "stale" in r.json()["detail"]

    def test_failed_op_leaves_state_untouched(self, client, sphere_blob):
        upload(client, sphere_blob)
        before = client.get("/pointcloud").content
        ops = [
            {"kind": "translate", "select": {"type": "all"}, "offset": [1, 0, 0]},
            {"kind": "recolor", "select": {"type": "all"}, "color": [2, 0, 0]},
        ]
        assert client.post("/edit", json=ops).status_code == 400
        assert client.get("/pointcloud").content == before


class TestHistory:
    def test_undo_restores_bytes(self, client, sphere_blob):
        upload(client, sphere_blob)
        before = client.get("/pointcloud").content
        ops = [{"kind": "duplicate", "select": {"type": "all"},
                "offset": [0.3, 0, 0]}]
        client.post("/edit", json=ops)
        assert client.get("/pointcloud").content != before
        assert client.post("/undo").status_code == 200
        assert client.get("/pointcloud").content == before

    def test_redo_restores_edit(self, client, sphere_blob):
        upload(client, sphere_blob)
        ops = [{"kind": "translate", "select": {"type": "all"},
                "offset": [0.2, 0, 0]}]
        client.post("/edit", json=ops)
        after = client.get("/pointcloud").content
        client.post("/undo")
        assert client.post("/redo").status_code == 200
        assert client.get("/pointcloud").content == after

    def test_new_edit_clears_redo(self, client, sphere_blob):
        upload(client, sphere_blob)
        ops = [{"kind": "translate", "select": {"type": "all"},
                "offset": [0.1, 0, 0]}]
        client.post("/edit", json=ops)
        client.post("/undo")
        client.post("/edit", json=ops)
        assert client.post("/redo").status_code == 409

    def test_undo_empty_history_is_409(self, client):
        assert client.post("/undo").status_code == 409
        assert client.post("/redo").status_code == 409

    def test_history_depth_is_bounded(self, client, sphere_blob):
        upload(client, sphere_blob)
        ops = [{"kind": "translate", "select": {"type": "all"},
                "offset": [0.001, 0, 0]}]
        for _ in range(HISTORY_LIMIT + 8):
            assert client.post("/edit", json=ops).status_code == 200
        assert client.get("/state").json()["history_depth"] == HISTORY_LIMIT
        undos = 0
        while client.post("/undo").status_code == 200:
            undos += 1
            assert undos <= HISTORY_LIMIT
        assert undos == HISTORY_LIMIT


class TestMesh:
    def test_sphere_mesh_is_closed_surface(self, client, sphere_blob, tmp_path):
        upload(client, sphere_blob)
        r = client.post("/mesh", json={"resolution": 64})
        assert r.status_code == 200
        assert float(r.headers["x-mesh-millis"]) > 0
        path = tmp_path / "out.obj"
        path.write_bytes(r.content)
        verts, faces, colors = load_obj(path)
        from pointforge.isosurface import TriMesh
        stats = mesh_stats(TriMesh(positions=verts, indices=faces))
        assert stats["euler"] == 2
        assert stats["boundary_edges"] == 0

    def test_second_call_is_cache_hit(self, client, sphere_blob):
        upload(client, sphere_blob)
        first = client.post("/mesh", json={"resolution": 24})
        second = client.post("/mesh", json={"resolution": 24})
        assert first.headers["x-cache"] == "miss"
        assert second.headers["x-cache"] == "hit"
        assert second.content == first.content
        assert second.headers["x-mesh-millis"] == first.headers["x-mesh-millis"]

    def test_distinct_resolutions_cached_separately(self, client, sphere_blob):
        upload(client, sphere_blob)
        a = client.post("/mesh", json={"resolution": 16})
        b = client.post("/mesh", json={"resolution": 24})
        assert a.headers["x-cache"] == b.headers["x-cache"] == "miss"
        assert a.content != b.content

    def test_edit_invalidates_cache(self, client, sphere_blob):
        upload(client, sphere_blob)
        client.post("/mesh", json={"resolution": 16})
        ops = [{"kind": "translate", "select": {"type": "all"},
                "offset": [0.05, 0, 0]}]
        client.post("/edit", json=ops)
        r = client.post("/mesh", json={"resolution": 16})
        assert r.headers["x-cache"] == "miss"

    def test_mesh_without_cloud_is_409(self, client):
        assert client.post("/mesh").status_code == 409
        assert client.get("/mesh").status_code == 404

    def test_degenerate_reconstruction_is_422(self, client):
        cloud = sphere_cloud(128, seed=1)
        far = PointCloud(points=cloud.points + 40.0, colors=cloud.colors)
        upload(client, encode_ply(far))
        r = client.post("/mesh", json={"resolution": 16})
        assert r.status_code == 422

    def test_bad_resolution_is_400(self, client, sphere_blob):
        upload(client, sphere_blob)
        assert client.post("/mesh", json={"resolution": 1}).status_code == 400
        assert client.post("/mesh", json={"resolution": "big"}).status_code == 400

    def test_default_resolution_is_64(self, client, sphere_blob):
        upload(client, sphere_blob)
        r = client.post("/mesh")
        assert r.headers["x-resolution"] == "64"


class TestRender:
    def _prepare(self, client, sphere_blob):
        upload(client, sphere_blob)
        assert client.post("/mesh", json={"resolution": 24}).status_code == 200

    def test_render_covers_pixels(self, client, sphere_blob):
        self._prepare(client, sphere_blob)
        r = client.get("/render", params={"az": 0, "el": 0, "size": 32})
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        img = np.asarray(Image.open(io.BytesIO(r.content)))
        assert img.shape == (32, 32, 3)
        assert (img.sum(axis=2) > 0).sum() > 16

    def test_render_is_deterministic(self, client, sphere_blob):
        self._prepare(client, sphere_blob)
        a = client.get("/render", params={"az": 30, "el": 20, "size": 24})
        b = client.get("/render", params={"az": 30, "el": 20, "size": 24})
        assert a.content == b.content

    def test_render_without_mesh_is_409(self, client, sphere_blob):
        upload(client, sphere_blob)
        assert client.get("/render", params={"az": 0, "el": 0}).status_code == 409

    def test_bad_size_is_400(self, client, sphere_blob):
        self._prepare(client, sphere_blob)
        r = client.get("/render", params={"az": 0, "el": 0, "size": 5000})
        assert r.status_code == 400

    def test_angles_change_image(self, client, sphere_blob):
        upload(client, sphere_blob)
        ops = [{"kind": "stretch", "select": {"type": "all"},
                "scale": [1.6, 1.0, 0.6]}]
        client.post("/edit", json=ops)
        client.post("/mesh", json={"resolution": 24})
        a = client.get("/render", params={"az": 0, "el": 0, "size": 24})
        b = client.get("/render", params={"az": 90, "el": 45, "size": 24})
        assert a.content != b.content


class TestState:
    def test_initial_state(self, client):
        out = client.get("/state").json()
        assert out["n"] == 0 and out["bbox"] is None
        assert out["revision"] == 0 and out["has_mesh"] is False
        assert out["config"]["sampler"]["steps"] == 50

    def test_state_tracks_mesh(self, client, sphere_blob):
        upload(client, sphere_blob)
        client.post("/mesh", json={"resolution": 16})
        out = client.get("/state").json()
        assert out["has_mesh"] is True
        assert out["mesh"]["resolution"] == 16
        assert out["mesh"]["faces"] > 0

    def test_get_pointcloud_formats(self, client, sphere_blob):
        assert client.get("/pointcloud").status_code == 404
        upload(client, sphere_blob)
        ply = client.get("/pointcloud").content
        original = decode_ply(sphere_blob)
        echoed = decode_ply(ply)
        assert np.array_equal(echoed.points, original.points)
        out = client.get("/pointcloud", params={"format": "json"}).json()
        assert len(out["points"]) == 512
        assert len(out["colors"]) == 512
        assert out["revision"] == 1


class TestConcurrency:
    def test_interleaved_translates_serialize(self):
        doc = Document(PipelineConfig())
        cloud = sphere_cloud(256, seed=3)
        doc.set_cloud(cloud)
        op = EditOp(kind="translate", selection=Selection.all(),
                    offset=[0.01, 0.0, 0.0])
        threads = [threading.Thread(target=lambda: doc.edit([op]))
                   for _ in range(24)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        expected = cloud
        for _ in range(24):
            expected = apply_edit(expected, op)
        assert np.array_equal(doc.snapshot.cloud.points, expected.points)
        assert doc.snapshot.revision == 25

    def test_racing_recolors_end_in_one_submitted_color(self):
        doc = Document(PipelineConfig())
        doc.set_cloud(sphere_cloud(128, seed=4))
        palette = [np.array([i / 16, 0.5, 1 - i / 16]) for i in range(16)]
        threads = [threading.Thread(target=lambda c=c: doc.edit(
            [EditOp(kind="recolor", selection=Selection.all(), color=c)]))
            for c in palette]
        observed_mixed = []

        def reader():
            # revision 1 is the upload with per-point colors; every later
            # snapshot is post-recolor and must be uniform or it is torn
            for _ in range(500):
                snap = doc.snapshot
                cols = snap.cloud.colors
                if snap.revision >= 2 and not np.all(cols == cols[0]):
                    observed_mixed.append(snap.revision)

        watch = threading.Thread(target=reader)
        watch.start()
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        watch.join()
        final = doc.snapshot.cloud.colors
        assert np.all(final == final[0])
        assert any(np.allclose(final[0], c) for c in palette)
        assert observed_mixed == []

    def test_mesh_cache_safe_under_concurrent_requests(self):
        doc = Document(PipelineConfig())
        doc.set_cloud(sphere_cloud(200, seed=5))
        results = []

        def build():
            entry, hit = doc.reconstruct(16)
            results.append((entry.obj, hit))

        threads = [threading.Thread(target=build) for _ in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        blobs = {obj for obj, _ in results}
        assert len(blobs) == 1
        assert sum(1 for _, hit in results if not hit) == 1


class TestRealSocket:
    def test_serve_subcommand_speaks_http(self, tmp_path):
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]
        proc = subprocess.Popen(
            [sys.executable, "-m", "pointforge.cli", "serve",
             "--port", str(port)],
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        try:
            import urllib.request
            base = f"http://127.0.0.1:{port}"
            deadline = time.time() + 20
            while True:
                try:
                    with urllib.request.urlopen(base + "/state", timeout=2) as r:
                        state = json.loads(r.read())
                    break
                except OSError:
                    if time.time() > deadline:
                        raise
                    time.sleep(0.2)
            assert state["n"] == 0
            blob = encode_ply(sphere_cloud(96, seed=6))
            req = urllib.request.Request(base + "/pointcloud", data=blob,
                                         method="POST")
            with urllib.request.urlopen(req, timeout=10) as r:
                assert json.loads(r.read())["n"] == 96
            req = urllib.request.Request(
                base + "/mesh", data=json.dumps({"resolution": 16}).encode(),
                headers={"Content-Type": "application/json"}, method="POST")
            with urllib.request.urlopen(req, timeout=30) as r:
                assert r.headers["X-Cache"] == "miss"
                assert r.read().startswith(b"v ")
        finally:
            proc.terminate()
            proc.wait(timeout=10)
