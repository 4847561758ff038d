import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pointforge import fileio
from pointforge.pointcloud import PointCloud, estimate_normals


def rand_cloud(n, seed=0, with_normals=False):
    g = np.random.default_rng(seed)
    pc = PointCloud(points=g.uniform(-1, 1, (n, 3)), colors=g.uniform(0, 1, (n, 3)))
    if with_normals:
        pc = estimate_normals(pc, k=min(8, n))
    return pc


class TestAtomicWrite:
    def test_writes_bytes(self, tmp_path):
        p = tmp_path / "out.bin"
        fileio.atomic_write(p, b"hello")
        assert p.read_bytes() == b"hello"

    def test_no_temp_left_behind(self, tmp_path):
        fileio.atomic_write(tmp_path / "a", b"x")
        names = set(os.listdir(tmp_path))
        assert names == {"a"}

    def test_overwrite(self, tmp_path):
        p = tmp_path / "f"
        fileio.atomic_write(p, b"one")
        fileio.atomic_write(p, b"two")
        assert p.read_bytes() == b"two"


class TestPlyCloud:
    @pytest.mark.parametrize("binary", [False, True])
    @pytest.mark.parametrize("with_normals", [False, True])
    def test_positions_roundtrip_exact(self, tmp_path, binary, with_normals):
        pc = rand_cloud(64, seed=1, with_normals=with_normals)
        p = tmp_path / "c.ply"
        fileio.save_ply(p, pc, binary=binary)
        back = fileio.load_ply(p)
        assert back.points.tobytes() == pc.points.tobytes()
        if with_normals:
            assert back.normals.tobytes() == pc.normals.tobytes()

    @pytest.mark.parametrize("binary", [False, True])
    def test_colors_quantize_to_u8(self, tmp_path, binary):
        pc = rand_cloud(32, seed=2)
        p = tmp_path / "c.ply"
        fileio.save_ply(p, pc, binary=binary)
        back = fileio.load_ply(p)
        assert np.max(np.abs(back.colors - pc.colors)) <= 0.5 / 255 + 1e-12
        # a second trip is lossless since colors are already on the u8 grid
        fileio.save_ply(p, back, binary=binary)
        again = fileio.load_ply(p)
        assert again.colors.tobytes() == back.colors.tobytes()

    def test_ascii_binary_agree(self, tmp_path):
        pc = rand_cloud(20, seed=3, with_normals=True)
        fileio.save_ply(tmp_path / "a.ply", pc, binary=False)
        fileio.save_ply(tmp_path / "b.ply", pc, binary=True)
        a = fileio.load_ply(tmp_path / "a.ply")
        b = fileio.load_ply(tmp_path / "b.ply")
        assert a.points.tobytes() == b.points.tobytes()
        assert a.colors.tobytes() == b.colors.tobytes()

    def test_empty_cloud(self, tmp_path):
        pc = PointCloud(points=np.zeros((0, 3)), colors=np.zeros((0, 3)))
        p = tmp_path / "e.ply"
        fileio.save_ply(p, pc)
        assert fileio.load_ply(p).n == 0

    def test_deterministic_bytes(self, tmp_path):
        pc = rand_cloud(16, seed=4)
        fileio.save_ply(tmp_path / "1.ply", pc)
        fileio.save_ply(tmp_path / "2.ply", pc)
        assert (tmp_path / "1.ply").read_bytes() == (tmp_path / "2.ply").read_bytes()

    def test_rejects_garbage(self, tmp_path):
        p = tmp_path / "bad.ply"
        p.write_bytes(b"not a ply\n")
        with pytest.raises(fileio.FormatError):
            fileio.load_ply(p)

    def test_missing_coord_rejected(self, tmp_path):
        p = tmp_path / "bad.ply"
        p.write_text("ply\nformat ascii 1.0\nelement vertex 1\n"
                     "property double x\nproperty double y\nend_header\n0 0\n")
        with pytest.raises(fileio.FormatError):
            fileio.load_ply(p)

    def test_foreign_float32_ply_loads(self, tmp_path):
        # other tools commonly write float32; we read any numeric type
        p = tmp_path / "f.ply"
        p.write_text(
            "ply\nformat ascii 1.0\nelement vertex 2\n"
            "property float x\nproperty float y\nproperty float z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "end_header\n0.5 0 0 255 0 0\n0 0.5 0 0 255 0\n")
        pc = fileio.load_ply(p)
        assert pc.n == 2
        assert np.allclose(pc.points[0], [0.5, 0, 0])
        assert np.allclose(pc.colors[0], [1, 0, 0])

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_roundtrip_property(self, tmp_path_factory, seed):
        tmp = tmp_path_factory.mktemp("ply")
        g = np.random.default_rng(seed)
        n = int(g.integers(1, 40))
        pc = PointCloud(points=g.normal(scale=10, size=(n, 3)), colors=g.uniform(0, 1, (n, 3)))
        p = tmp / "c.ply"
        fileio.save_ply(p, pc, binary=bool(g.integers(0, 2)))
        assert fileio.load_ply(p).points.tobytes() == pc.points.tobytes()


class TestPlyMesh:
    def tetra(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
        f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]], np.int64)
        return v, f

    @pytest.mark.parametrize("binary", [False, True])
    def test_roundtrip(self, tmp_path, binary):
        v, f = self.tetra()
        cols = np.linspace(0, 1, 12).reshape(4, 3)
        p = tmp_path / "m.ply"
        fileio.save_mesh_ply(p, v, f, colors=cols, binary=binary)
        v2, f2, c2 = fileio.load_mesh_ply(p)
        assert v2.tobytes() == v.tobytes()
        assert np.array_equal(f2, f)
        assert np.max(np.abs(c2 - cols)) <= 0.5 / 255 + 1e-12

    def test_no_colors(self, tmp_path):
        v, f = self.tetra()
        p = tmp_path / "m.ply"
        fileio.save_mesh_ply(p, v, f)
        v2, f2, c2 = fileio.load_mesh_ply(p)
        assert c2 is None
        assert np.array_equal(f2, f)

    def test_face_index_validated(self, tmp_path):
        v, f = self.tetra()
        with pytest.raises(fileio.FormatError):
            fileio.save_mesh_ply(tmp_path / "m.ply", v, np.array([[0, 1, 9]]))

    def test_quad_fan_triangulated(self, tmp_path):
        p = tmp_path / "q.ply"
        p.write_text(
            "ply\nformat ascii 1.0\nelement vertex 4\n"
            "property double x\nproperty double y\nproperty double z\n"
            "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
        _, f, _ = fileio.load_mesh_ply(p)
        assert f.tolist() == [[0, 1, 2], [0, 2, 3]]


class TestObj:
    def test_roundtrip_with_colors(self, tmp_path):
        g = np.random.default_rng(5)
        v = g.uniform(-1, 1, (6, 3))
        f = np.array([[0, 1, 2], [3, 4, 5]], np.int64)
        c = g.uniform(0, 1, (6, 3))
        p = tmp_path / "m.obj"
        fileio.save_obj(p, v, f, colors=c)
        v2, f2, c2 = fileio.load_obj(p)
        assert v2.tobytes() == v.tobytes()
        assert np.array_equal(f2, f)
        assert c2.tobytes() == c.tobytes()

    def test_roundtrip_no_colors(self, tmp_path):
        v = np.eye(3)
        f = np.array([[0, 1, 2]])
        p = tmp_path / "m.obj"
        fileio.save_obj(p, v, f)
        v2, f2, c2 = fileio.load_obj(p)
        assert c2 is None
        assert np.array_equal(f2, f)

    def test_reads_slash_face_syntax(self, tmp_path):
        p = tmp_path / "m.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2 3/3\n")
        _, f, _ = fileio.load_obj(p)
        assert f.tolist() == [[0, 1, 2]]


class TestImages:
    def test_pfm_roundtrip(self, tmp_path):
        g = np.random.default_rng(6)
        img = g.uniform(0, 10, (5, 7, 3)).astype(np.float32)
        p = tmp_path / "i.pfm"
        fileio.save_pfm(p, img)
        back = fileio.load_pfm(p)
        assert back.shape == img.shape
        assert back.tobytes() == img.tobytes()

    def test_png_roundtrip_u8(self, tmp_path):
        g = np.random.default_rng(7)
        img = g.integers(0, 256, (8, 9, 3), dtype=np.uint8)
        p = tmp_path / "i.png"
        fileio.save_png(p, img)
        assert fileio.load_png(p).tobytes() == img.tobytes()

    def test_png_float_quantizes(self, tmp_path):
        img = np.full((2, 2, 3), 0.5)
        p = tmp_path / "i.png"
        fileio.save_png(p, img)
        back = fileio.load_png(p)
        assert np.all(back == 128)

    def test_encode_png_matches_save(self, tmp_path):
        g = np.random.default_rng(8)
        img = g.integers(0, 256, (4, 4, 3), dtype=np.uint8)
        p = tmp_path / "i.png"
        fileio.save_png(p, img)
        assert fileio.encode_png(img) == p.read_bytes()
