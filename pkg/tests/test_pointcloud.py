import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pointforge.pointcloud import (
    EditOp,
    KnnIndex,
    PointCloud,
    PointCloudError,
    Selection,
    apply_edit,
    apply_edits,
    estimate_normals,
    normalize_to_unit_cube,
)


def cloud(pts, cols=None, **kw):
    pts = np.asarray(pts, float)
    if cols is None:
        cols = np.full_like(pts, 0.5)
    return PointCloud(points=pts, colors=cols, **kw)


def rand_cloud(n, seed=0, with_normals=False):
    g = np.random.default_rng(seed)
    pts = g.uniform(-1, 1, (n, 3))
    cols = g.uniform(0, 1, (n, 3))
    pc = PointCloud(points=pts, colors=cols)
    if with_normals:
        pc = estimate_normals(pc, k=min(8, n))
    return pc


class TestPointCloud:
    def test_arrays_are_readonly(self):
        pc = cloud([[0, 0, 0]])
        with pytest.raises(ValueError):
            pc.points[0, 0] = 1.0
        with pytest.raises(ValueError):
            pc.colors[0, 0] = 1.0

    def test_defensive_copy(self):
        pts = np.zeros((2, 3))
        pc = cloud(pts)
        pts[0, 0] = 5.0
        assert pc.points[0, 0] == 0.0

    def test_empty_cloud_allowed(self):
        pc = cloud(np.zeros((0, 3)))
        assert pc.n == 0
        with pytest.raises(PointCloudError):
            pc.bounds()

    def test_shape_validation(self):
        with pytest.raises(PointCloudError):
            cloud(np.zeros((3, 2)))
        with pytest.raises(PointCloudError):
            PointCloud(points=np.zeros((2, 3)), colors=np.zeros((3, 3)))

    def test_color_range_validation(self):
        with pytest.raises(PointCloudError):
            cloud([[0, 0, 0]], cols=np.array([[1.5, 0, 0]]))
        with pytest.raises(PointCloudError):
            cloud([[0, 0, 0]], cols=np.array([[-0.1, 0, 0]]))

    def test_nonfinite_rejected(self):
        with pytest.raises(PointCloudError):
            cloud([[np.nan, 0, 0]])

    def test_normal_unit_validation(self):
        with pytest.raises(PointCloudError):
            cloud([[0, 0, 0]], normals=np.array([[0.5, 0, 0]]))
        # stale normals skip the length check
        pc = cloud([[0, 0, 0]], normals=np.array([[0.5, 0, 0]]), normals_stale=True)
        assert pc.normals_stale


class TestNormalize:
    def test_segment_example(self):
        pc = cloud([[0, 0, 0], [4, 0, 0]])
        out, tf = normalize_to_unit_cube(pc)
        assert np.allclose(tf.center, [2, 0, 0])
        assert tf.scale == pytest.approx(0.5)
        assert np.allclose(out.points, [[-1, 0, 0], [1, 0, 0]])

    def test_longest_axis_maps_to_unit(self):
        pc = cloud([[0, 0, 0], [2, 1, 0.5]])
        out, _ = normalize_to_unit_cube(pc)
        lo, hi = out.bounds()
        assert np.max(hi - lo) == pytest.approx(2.0)
        assert np.allclose((lo + hi) / 2, 0, atol=1e-15)

    def test_degenerate_single_point(self):
        pc = cloud([[3, 4, 5]])
        out, tf = normalize_to_unit_cube(pc)
        assert tf.scale == 1.0
        assert np.allclose(out.points, 0)

    def test_roundtrip(self):
        pc = rand_cloud(50, seed=3)
        out, tf = normalize_to_unit_cube(pc)
        back = tf.invert(out.points)
        assert np.allclose(back, pc.points, atol=1e-12)

    @given(st.integers(1, 40), st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_output_in_unit_cube(self, n, seed):
        g = np.random.default_rng(seed)
        pc = cloud(g.uniform(-100, 100, (n, 3)) * g.uniform(0.0, 1.0))
        out, _ = normalize_to_unit_cube(pc)
        assert np.all(np.abs(out.points) <= 1 + 1e-9)


class TestKnn:
    def brute(self, pts, q, k):
        d = np.linalg.norm(pts[None, :, :] - q[:, None, :], axis=2)
        order = np.lexsort((np.broadcast_to(np.arange(len(pts)), d.shape), d), axis=1)
        dist = np.take_along_axis(d, order, axis=1)
        return dist[:, :k], order[:, :k]

    def test_matches_bruteforce_random(self):
        g = np.random.default_rng(11)
        pts = g.uniform(-1, 1, (200, 3))
        q = g.uniform(-1, 1, (40, 3))
        idx = KnnIndex(pts)
        for k in (1, 4, 17, 200):
            d1, i1 = idx.knn(q, k)
            d2, i2 = self.brute(pts, q, k)
            assert np.array_equal(i1, i2)
            assert np.allclose(d1, d2, atol=1e-12)

    def test_tie_break_by_index(self):
        # 8 points all at distance 1 from the origin
        pts = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0],
                        [0, 0, 1], [0, 0, -1], [1, 0, 0], [0, 1, 0]], float)
        idx = KnnIndex(pts)
        _, i = idx.knn(np.zeros((1, 3)), 3)
        assert i.tolist() == [[0, 1, 2]]

    def test_grid_ties(self):
        # lattice makes many exactly-equal distances
        xs = np.arange(4)
        pts = np.array(np.meshgrid(xs, xs, xs)).reshape(3, -1).T.astype(float)
        q = pts[:10] + 0.5
        idx = KnnIndex(pts)
        for k in (5, 9):
            d1, i1 = idx.knn(q, k)
            d2, i2 = self.brute(pts, q, k)
            assert np.array_equal(i1, i2)

    def test_k_clamped_to_n(self):
        idx = KnnIndex(np.eye(3))
        d, i = idx.knn(np.zeros((1, 3)), 10)
        assert d.shape == (1, 3)

    def test_radius_query(self):
        pts = np.array([[0, 0, 0], [0.5, 0, 0], [2, 0, 0]], float)
        idx = KnnIndex(pts)
        assert idx.radius([0, 0, 0], 1.0).tolist() == [0, 1]
        assert idx.radius([0, 0, 0], 0.1).tolist() == [0]


class TestNormals:
    def test_plane_normals(self):
        g = np.random.default_rng(2)
        pts = np.column_stack([g.uniform(-1, 1, 200), g.uniform(-1, 1, 200), np.zeros(200)])
        pc = estimate_normals(cloud(pts), k=8)
        assert np.allclose(np.abs(pc.normals[:, 2]), 1.0, atol=1e-9)
        assert not pc.normals_stale

    def test_sphere_normals_radial(self):
        g = np.random.default_rng(4)
        v = g.normal(size=(500, 3))
        pts = v / np.linalg.norm(v, axis=1, keepdims=True)
        pc = estimate_normals(cloud(pts), k=8)
        dots = np.einsum("ni,ni->n", pc.normals, pts)
        # oriented outward along the radius
        assert np.all(dots > 0.9)

    def test_collinear_fallback_flagged(self):
        pts = np.column_stack([np.linspace(0, 1, 20), np.zeros(20), np.zeros(20)])
        pc, degen = estimate_normals(cloud(pts), k=4, return_degenerate=True)
        assert degen.all()
        assert np.allclose(np.linalg.norm(pc.normals, axis=1), 1.0)

    def test_too_few_points(self):
        with pytest.raises(PointCloudError):
            estimate_normals(cloud(np.zeros((2, 3))), k=8)


class TestSelection:
    def test_sphere_resolve(self):
        pc = cloud([[0, 0, 0], [0.5, 0, 0], [2, 0, 0]])
        sel = Selection.sphere([0, 0, 0], 1.0)
        assert sel.resolve(pc).tolist() == [0, 1]

    def test_indices_resolve_sorted_unique(self):
        pc = cloud(np.zeros((5, 3)))
        sel = Selection.of_indices([3, 1, 3])
        assert sel.resolve(pc).tolist() == [1, 3]

    def test_indices_out_of_range(self):
        pc = cloud(np.zeros((2, 3)))
        with pytest.raises(PointCloudError):
            Selection.of_indices([5]).resolve(pc)

    def test_all_resolve(self):
        pc = cloud(np.zeros((3, 3)))
        assert Selection.all().resolve(pc).tolist() == [0, 1, 2]

    def test_json_roundtrip(self):
        sels = [Selection.sphere([0.1, 0.2, 0.3], 0.5),
                Selection.of_indices([4, 2]),
                Selection.all()]
        for s in sels:
            s2 = Selection.from_json(s.to_json())
            assert s2.to_json() == s.to_json()


class TestEdits:
    def test_delete(self):
        pc = rand_cloud(10, seed=1, with_normals=True)
        out = apply_edit(pc, EditOp(kind="delete", selection=Selection.of_indices([0, 5])))
        assert out.n == 8
        keep = [i for i in range(10) if i not in (0, 5)]
        assert np.array_equal(out.points, pc.points[keep])
        assert np.array_equal(out.normals, pc.normals[keep])

    def test_delete_empty_selection_noop(self):
        pc = rand_cloud(5)
        out = apply_edit(pc, EditOp(kind="delete", selection=Selection.sphere([10, 10, 10], 0.1)))
        assert np.array_equal(out.points, pc.points)

    def test_nondelete_empty_selection_rejected(self):
        pc = rand_cloud(5)
        op = EditOp(kind="translate", selection=Selection.sphere([10, 10, 10], 0.1),
                    offset=[1, 0, 0])
        with pytest.raises(PointCloudError):
            apply_edit(pc, op)

    def test_translate_bitexact_untouched(self):
        pc = rand_cloud(20, seed=7, with_normals=True)
        op = EditOp(kind="translate", selection=Selection.of_indices([3, 4]), offset=[0.1, 0, 0])
        out = apply_edit(pc, op)
        untouched = [i for i in range(20) if i not in (3, 4)]
        assert out.points[untouched].tobytes() == pc.points[untouched].tobytes()
        assert np.allclose(out.points[3], pc.points[3] + [0.1, 0, 0])
        assert out.normals_stale

    def test_duplicate_appends(self):
        pc = rand_cloud(6, seed=2)
        op = EditOp(kind="duplicate", selection=Selection.of_indices([1]), offset=[0, 0.2, 0])
        out = apply_edit(pc, op)
        assert out.n == 7
        assert out.points[:6].tobytes() == pc.points.tobytes()
        assert np.allclose(out.points[6], pc.points[1] + [0, 0.2, 0])
        assert np.array_equal(out.colors[6], pc.colors[1])

    def test_stretch_about_pivot(self):
        pc = cloud([[1, 1, 1], [2, 0, 0]])
        op = EditOp(kind="stretch", selection=Selection.of_indices([0]),
                    scale=[2, 1, 1], pivot=[1, 0, 0])
        out = apply_edit(pc, op)
        assert np.allclose(out.points[0], [1, 1, 1])
        op2 = EditOp(kind="stretch", selection=Selection.of_indices([1]),
                     scale=[2, 3, 4], pivot=[0, 0, 0])
        out2 = apply_edit(pc, op2)
        assert np.allclose(out2.points[1], [4, 0, 0])

    def test_stretch_zero_scale_rejected(self):
        with pytest.raises(PointCloudError):
            EditOp(kind="stretch", selection=Selection.all(), scale=[0, 1, 1])

    def test_recolor(self):
        pc = rand_cloud(4, seed=9)
        op = EditOp(kind="recolor", selection=Selection.of_indices([2]), color=[1, 0, 0])
        out = apply_edit(pc, op)
        assert np.array_equal(out.colors[2], [1, 0, 0])
        assert out.points.tobytes() == pc.points.tobytes()
        assert not out.normals_stale

    def test_geometry_edit_marks_normals_stale(self):
        pc = rand_cloud(10, seed=3, with_normals=True)
        for op in (
            EditOp(kind="translate", selection=Selection.of_indices([0]), offset=[0.1, 0, 0]),
            EditOp(kind="stretch", selection=Selection.of_indices([0]), scale=[2, 2, 2]),
            EditOp(kind="duplicate", selection=Selection.of_indices([0]), offset=[0.1, 0, 0]),
        ):
            assert apply_edit(pc, op).normals_stale
        # colors-only edit keeps normals fresh
        op = EditOp(kind="recolor", selection=Selection.of_indices([0]), color=[0, 1, 0])
        assert not apply_edit(pc, op).normals_stale

    def test_unknown_kind_rejected(self):
        with pytest.raises(PointCloudError):
            EditOp(kind="explode", selection=Selection.all())

    def test_json_roundtrip_all_kinds(self):
        ops = [
            EditOp(kind="delete", selection=Selection.sphere([0, 0, 0], 0.5)),
            EditOp(kind="duplicate", selection=Selection.of_indices([1, 2]), offset=[0.1, 0, 0]),
            EditOp(kind="translate", selection=Selection.all(), offset=[0, 0.3, 0]),
            EditOp(kind="stretch", selection=Selection.all(), scale=[1, 2, 1], pivot=[0, 0, 0]),
            EditOp(kind="recolor", selection=Selection.all(), color=[0.2, 0.4, 0.6]),
        ]
        for op in ops:
            op2 = EditOp.from_json(op.to_json())
            assert op2.to_json() == op.to_json()

    def test_from_json_rejects_unknown_keys(self):
        with pytest.raises(PointCloudError):
            EditOp.from_json({"kind": "delete", "select": {"type": "all"}, "power": 9})

    def test_apply_edits_sequence(self):
        pc = rand_cloud(10, seed=5)
        ops = [
            EditOp(kind="translate", selection=Selection.all(), offset=[0.1, 0, 0]),
            EditOp(kind="delete", selection=Selection.of_indices([0])),
        ]
        out = apply_edits(pc, ops)
        assert out.n == 9

    @given(st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_translate_then_inverse_is_identity(self, seed):
        pc = rand_cloud(12, seed=seed)
        sel = Selection.of_indices([0, 3, 7])
        fwd = EditOp(kind="translate", selection=sel, offset=[0.25, -0.125, 0.5])
        bwd = EditOp(kind="translate", selection=sel, offset=[-0.25, 0.125, -0.5])
        out = apply_edits(pc, [fwd, bwd])
        # offsets are powers of two so the float round trip is exact
        assert out.points.tobytes() == pc.points.tobytes()
