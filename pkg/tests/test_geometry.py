import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from darec.errors import EmptyShapeError, InvalidInputError
from darec.geometry import (
    EvalConfig,
    MetricReport,
    PointCloud,
    VoxelGrid,
    chamfer_distance,
    evaluate_pair,
    exposed_faces,
    mean_sample_spacing,
    read_points,
    read_voxels,
    sample_isosurface,
    voxel_iou,
    write_points,
    write_voxels,
)

from oracles import (
    brute_chamfer,
    brute_exposed_face_count,
    brute_iou,
    distance_to_exposed_faces,
)

coords = st.floats(-1, 1, allow_nan=False, width=64)
clouds = st.integers(1, 40).flatmap(
    lambda n: arrays(np.float64, (n, 3), elements=coords)
)


def grid_with(cells, r=4):
    g = np.zeros((r, r, r))
    for c in cells:
        g[c] = 1.0
    return g


class TestChamfer:
    def test_identical_single_point(self):
        p = [[0.3, -0.1, 0.5]]
        assert chamfer_distance(p, p) == 0.0

    def test_unit_apart(self):
        assert chamfer_distance([[0, 0, 0]], [[1, 0, 0]]) == 2.0

    def test_two_vs_one(self):
        # hand count: P1->P2 mean (1+1)/2 = 1, P2->P1 min(1, 1) = 1
        assert chamfer_distance([[0, 0, 0], [2, 0, 0]], [[1, 0, 0]]) == 2.0

    def test_empty_cloud(self):
        with pytest.raises(InvalidInputError):
            chamfer_distance(np.zeros((0, 3)), [[0, 0, 0]])

    def test_squared_mode_is_opt_in(self):
        a, b = [[0, 0, 0]], [[2, 0, 0]]
        assert chamfer_distance(a, b) == 4.0
        assert chamfer_distance(a, b, squared=True) == 8.0

    @settings(max_examples=60, deadline=None)
    @given(clouds, clouds)
    def test_matches_brute_force_and_symmetric(self, a, b):
        ref = brute_chamfer(a, b)
        got = chamfer_distance(a, b)
        assert got == pytest.approx(ref, rel=1e-9, abs=1e-12)
        assert chamfer_distance(b, a) == pytest.approx(got, rel=1e-9, abs=1e-12)
        assert chamfer_distance(a, a) == 0.0

    @settings(max_examples=30, deadline=None)
    @given(clouds, clouds, arrays(np.float64, 3, elements=st.floats(-5, 5)))
    def test_translation_invariant(self, a, b, t):
        got = chamfer_distance(a + t, b + t)
        assert got == pytest.approx(chamfer_distance(a, b), rel=1e-9, abs=1e-12)


class TestIoU:
    def test_identity(self):
        g = np.random.default_rng(0).random((6, 6, 6))
        assert voxel_iou(g, g) == 1.0

    def test_disjoint(self):
        assert voxel_iou(grid_with([(0, 0, 0)]), grid_with([(3, 3, 3)])) == 0.0

    def test_partial_overlap(self):
        a = grid_with([(0, 0, 0), (1, 0, 0)])
        b = grid_with([(1, 0, 0), (2, 0, 0)])
        assert voxel_iou(a, b, 0.5) == pytest.approx(1 / 3)

    def test_both_empty(self):
        z = np.zeros((4, 4, 4))
        assert voxel_iou(z, z) == 1.0

    def test_resolution_mismatch(self):
        with pytest.raises(InvalidInputError):
            voxel_iou(np.zeros((4, 4, 4)), np.zeros((5, 5, 5)))

    def test_threshold_bounds(self):
        with pytest.raises(InvalidInputError):
            voxel_iou(np.zeros((4, 4, 4)), np.zeros((4, 4, 4)), threshold=1.0)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 4, 4), elements=st.floats(0, 1)),
           arrays(np.float64, (4, 4, 4), elements=st.floats(0, 1)),
           st.floats(0.05, 0.95))
    def test_matches_enumeration(self, a, b, t):
        got = voxel_iou(a, b, t)
        assert got == brute_iou(a, b, t)
        assert got == voxel_iou(b, a, t)
        assert 0.0 <= got <= 1.0
        assert (got == 1.0) == bool(np.array_equal(a >= t, b >= t))


class TestIsosurface:
    def test_single_cell_faces_uniform(self):
        g = grid_with([(1, 2, 1)])
        cloud = sample_isosurface(g, n_points=600, seed=3).points
        assert cloud.shape == (600, 3)
        h = 0.5
        lo = -1.0 + np.array([1, 2, 1]) * h
        hi = lo + h
        assert np.all(cloud >= lo - 1e-12) and np.all(cloud <= hi + 1e-12)
        on_face = np.isclose(cloud, lo) | np.isclose(cloud, hi)
        assert np.all(on_face.any(axis=1))
        # six equal-area faces: each count ~ Binomial(600, 1/6), 5 sigma band
        sigma = np.sqrt(600 * (1 / 6) * (5 / 6))
        for axis in range(3):
            for plane in (lo[axis], hi[axis]):
                n = np.isclose(cloud[:, axis], plane).sum()
                assert abs(n - 100) <= 5 * sigma

    def test_full_grid_only_outer_shell(self):
        g = np.ones((4, 4, 4))
        cloud = sample_isosurface(g, n_points=500, seed=1).points
        assert np.all(np.isclose(np.abs(cloud), 1.0).any(axis=1))
        assert len(exposed_faces(g >= 0.5)) == 6 * 16

    def test_deterministic(self):
        g = np.random.default_rng(1).random((6, 6, 6))
        a = sample_isosurface(g, seed=7).points
        b = sample_isosurface(g, seed=7).points
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, sample_isosurface(g, seed=8).points)

    def test_empty_grid(self):
        with pytest.raises(EmptyShapeError):
            sample_isosurface(np.zeros((4, 4, 4)))

    @settings(max_examples=25, deadline=None)
    @given(arrays(bool, (4, 4, 4)))
    def test_points_on_exposed_faces(self, occ):
        if not occ.any():
            return
        assert len(exposed_faces(occ)) == brute_exposed_face_count(occ)
        pts = sample_isosurface(occ.astype(float), n_points=64, seed=0).points
        assert np.all(np.abs(pts) <= 1.0)
        assert np.all(distance_to_exposed_faces(pts, occ) <= 1e-9)


class TestEvaluatePair:
    def test_identity_voxels(self):
        g = np.zeros((8, 8, 8))
        g[2:6, 1:4, 3:7] = 1
        r = evaluate_pair(g, g)
        assert r.iou == [1.0]
        spacing = mean_sample_spacing(g >= 0.5, 2500)
        assert r.chamfer[0] <= 2 * spacing

    def test_empty_prediction(self):
        gt = grid_with([(1, 1, 1)])
        with pytest.raises(EmptyShapeError):
            evaluate_pair(np.zeros((4, 4, 4)), gt)

    def test_crafted_overlap(self):
        a = np.zeros((4, 4, 4))
        b = np.zeros((4, 4, 4))
        a[0:2, 0:2, 0:2] = 1  # 8 cells
        b[1:3, 0:2, 0:2] = 1  # 8 cells, 4 shared
        r = evaluate_pair(a, b)
        assert r.iou[0] == pytest.approx(4 / 12)

    def test_cloud_pair_has_no_iou(self):
        r = evaluate_pair(PointCloud([[0, 0, 0]]), PointCloud([[1, 0, 0]]))
        assert r.iou is None and r.chamfer == [2.0]

    def test_mixed_kinds_need_conversion(self):
        g = grid_with([(1, 1, 1)])
        with pytest.raises(InvalidInputError):
            evaluate_pair(g, PointCloud([[0, 0, 0]]), EvalConfig(convert_voxels=False))
        r = evaluate_pair(g, PointCloud([[0, 0, 0]]))
        assert r.iou is None and r.chamfer[0] > 0

    def test_report_mean(self):
        r = MetricReport(ids=[0, 1, 2], iou=[0.1, 0.2, 0.6], chamfer=[1.0, 2.0, 4.5])
        assert r.mean_chamfer == pytest.approx(7.5 / 3, rel=1e-9)
        assert r.mean_iou == pytest.approx(0.3, rel=1e-9)
        assert MetricReport.from_dict(r.to_dict()).to_dict() == r.to_dict()


class TestTypes:
    def test_voxel_validation(self):
        with pytest.raises(InvalidInputError):
            VoxelGrid(np.full((4, 4, 4), 1.5))
        with pytest.raises(InvalidInputError):
            VoxelGrid(np.zeros((1, 1, 1)))
        with pytest.raises(InvalidInputError):
            VoxelGrid(np.zeros((4, 4, 5)))
        assert VoxelGrid(np.zeros((2, 2, 2))).is_binary

    def test_cloud_validation(self):
        with pytest.raises(InvalidInputError):
            PointCloud(np.zeros((0, 3)))
        with pytest.raises(InvalidInputError):
            PointCloud([[np.nan, 0, 0]])


class TestFormats:
    def test_binary_roundtrip(self, tmp_path):
        g = (np.random.default_rng(0).random((5, 5, 5)) > 0.5).astype(float)
        write_voxels(tmp_path / "a.dvox", g)
        raw = (tmp_path / "a.dvox").read_bytes()
        assert raw[:4] == b"DVOX"
        assert int.from_bytes(raw[12:16], "little") == 0
        assert len(raw) == 16 + (125 + 7) // 8
        np.testing.assert_array_equal(read_voxels(tmp_path / "a.dvox").values, g)

    def test_payload_is_x_fastest(self, tmp_path):
        g = grid_with([(1, 0, 0)], r=2)
        write_voxels(tmp_path / "x.dvox", g)
        assert (tmp_path / "x.dvox").read_bytes()[16] == 0b10

    def test_float_roundtrip(self, tmp_path):
        g = np.random.default_rng(0).random((4, 4, 4)).astype(np.float32)
        write_voxels(tmp_path / "f.dvox", g)
        raw = (tmp_path / "f.dvox").read_bytes()
        assert int.from_bytes(raw[12:16], "little") == 1
        np.testing.assert_array_equal(read_voxels(tmp_path / "f.dvox").values, g)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(InvalidInputError):
            read_voxels(tmp_path / "bad")

    def test_points_roundtrip(self, tmp_path):
        p = np.random.default_rng(0).uniform(-1, 1, (20, 3))
        write_points(tmp_path / "p.xyz", p, comment="sample")
        text = (tmp_path / "p.xyz").read_text()
        assert text.startswith("# sample")
        np.testing.assert_array_equal(read_points(tmp_path / "p.xyz").points, p)
