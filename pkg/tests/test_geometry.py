import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regretgroup.geometry import (
    Aabb,
    CloudFormatError,
    LabeledCloud,
    SampledSegment,
    Segment,
    aabb,
    center_pair,
    content_seed,
    load_ply,
    load_xyzl,
    sample_and_pad,
    save_xyzl,
)


def make_cloud(n=10, seed=0, labeled=False):
    r = np.random.default_rng(seed)
    pts = r.uniform(-1, 1, size=(n, 3))
    labels = r.integers(0, 4, size=n) if labeled else None
    return LabeledCloud(pts, labels)


class TestLabeledCloud:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            LabeledCloud(np.array([[0.0, 0.0, np.nan]]))

    def test_rejects_label_length_mismatch(self):
        with pytest.raises(ValueError):
            LabeledCloud(np.zeros((3, 3)), np.array([1, 2]))

    def test_rejects_negative_labels(self):
        with pytest.raises(ValueError):
            LabeledCloud(np.zeros((2, 3)), np.array([1, -1]))

    def test_empty_cloud(self):
        cloud = LabeledCloud(np.zeros((0, 3)))
        assert len(cloud) == 0


class TestSegment:
    def test_sorts_and_dedupes(self):
        seg = Segment(1, np.array([5, 2, 5, 9]))
        assert seg.indices.tolist() == [2, 5, 9]

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Segment(0, np.array([], dtype=np.int64))


class TestXyzl:
    def test_labeled_roundtrip(self, tmp_path):
        path = tmp_path / "pts.xyzl"
        path.write_text("# comment\n0 0 0 1\n1 0 0 2\n")
        cloud = load_xyzl(path)
        assert len(cloud) == 2
        assert cloud.labels.tolist() == [1, 2]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.xyzl"
        path.write_text("")
        cloud = load_xyzl(path)
        assert len(cloud) == 0 and cloud.labels is None

    def test_nan_coordinate_reports_line(self, tmp_path):
        path = tmp_path / "bad.xyzl"
        path.write_text("0 0 0\n0 0 nan\n")
        with pytest.raises(CloudFormatError, match=":2"):
            load_xyzl(path)

    def test_mixed_labels_rejected(self, tmp_path):
        path = tmp_path / "mixed.xyzl"
        path.write_text("0 0 0 1\n1 0 0\n")
        with pytest.raises(CloudFormatError, match="mixed"):
            load_xyzl(path)

    def test_save_load_roundtrip(self, tmp_path):
        cloud = make_cloud(50, seed=3, labeled=True)
        path = tmp_path / "out.xyzl"
        save_xyzl(cloud, path)
        back = load_xyzl(path)
        np.testing.assert_allclose(back.points, cloud.points, rtol=1e-8)
        assert back.labels.tolist() == cloud.labels.tolist()

    def test_save_then_save_is_stable(self, tmp_path):
        cloud = make_cloud(20, seed=4)
        a, b = tmp_path / "a.xyzl", tmp_path / "b.xyzl"
        save_xyzl(cloud, a)
        save_xyzl(load_xyzl(a), b)
        assert a.read_bytes() == b.read_bytes()


PLY_MINIMAL = """ply
format ascii 1.0
element vertex 3
property float x
property float y
property float z
end_header
0 0 0
1 0 0
0 1 0
"""

PLY_LABELED = """ply
format ascii 1.0
element vertex 2
property float x
property float y
property float z
property int label
end_header
0 0 0 1
1 2 3 2
"""


class TestPly:
    def test_minimal(self, tmp_path):
        path = tmp_path / "a.ply"
        path.write_text(PLY_MINIMAL)
        cloud = load_ply(path)
        assert len(cloud) == 3 and cloud.labels is None

    def test_label_property(self, tmp_path):
        path = tmp_path / "b.ply"
        path.write_text(PLY_LABELED)
        cloud = load_ply(path)
        assert cloud.labels.tolist() == [1, 2]
        np.testing.assert_allclose(cloud.points[1], [1, 2, 3])

    def test_binary_rejected(self, tmp_path):
        path = tmp_path / "c.ply"
        path.write_text("ply\nformat binary_little_endian 1.0\nend_header\n")
        with pytest.raises(CloudFormatError, match="ASCII"):
            load_ply(path)

    def test_missing_coordinate_rejected(self, tmp_path):
        path = tmp_path / "d.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n"
        )
        with pytest.raises(CloudFormatError, match="'z'"):
            load_ply(path)


class TestAabb:
    def test_single_point(self):
        cloud = LabeledCloud(np.array([[1.0, 2.0, 3.0]]))
        box = aabb(cloud)
        np.testing.assert_array_equal(box.min, box.max)

    def test_two_points(self):
        cloud = LabeledCloud(np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]))
        box = aabb(cloud)
        assert box.min.tolist() == [0, 0, 0]
        assert box.max.tolist() == [1, 2, 3]

    def test_unit_cube_corners(self):
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
        box = aabb(LabeledCloud(corners))
        expect_min = corners.min(axis=0)
        expect_max = corners.max(axis=0)
        np.testing.assert_array_equal(box.min, expect_min)
        np.testing.assert_array_equal(box.max, expect_max)

    def test_empty_selection(self):
        with pytest.raises(ValueError):
            aabb(make_cloud(), np.array([], dtype=np.int64))

    def test_union_contains_subsets(self, rng):
        cloud = make_cloud(40, seed=9)
        a = rng.choice(40, 10, replace=False)
        b = rng.choice(40, 15, replace=False)
        u = aabb(cloud, np.union1d(a, b))
        for sub in (a, b):
            box = aabb(cloud, sub)
            assert (u.min <= box.min).all() and (u.max >= box.max).all()

    def test_invalid_box(self):
        with pytest.raises(ValueError):
            Aabb(np.array([1.0, 0, 0]), np.array([0.0, 1, 1]))


class TestSampleAndPad:
    def test_padding_case(self):
        cloud = make_cloud(3, seed=1)
        seg = Segment(0, np.arange(3))
        s = sample_and_pad(cloud, seg, 5, seed=7)
        assert s.valid_count == 3
        assert np.all(s.points[3:] == 0)
        got = {tuple(row) for row in s.points[:3]}
        want = {tuple(row) for row in cloud.points}
        assert got == want

    def test_full_sample_is_permutation(self):
        cloud = make_cloud(64, seed=2)
        seg = Segment(0, np.arange(64))
        s = sample_and_pad(cloud, seg, 64, seed=3)
        assert s.valid_count == 64
        assert sorted(map(tuple, s.points)) == sorted(map(tuple, cloud.points))

    def test_no_duplicates_when_subsampling(self):
        cloud = make_cloud(500, seed=5)
        seg = Segment(0, np.arange(500))
        s = sample_and_pad(cloud, seg, 100, seed=0)
        assert len({tuple(row) for row in s.points}) == 100

    def test_deterministic(self):
        cloud = make_cloud(1000, seed=6)
        seg = Segment(0, np.arange(1000))
        a = sample_and_pad(cloud, seg, 256, seed=11)
        b = sample_and_pad(cloud, seg, 256, seed=11)
        np.testing.assert_array_equal(a.points, b.points)

    @given(st.integers(0, 2**31 - 1))
    def test_valid_count_invariant(self, seed):
        cloud = make_cloud(10, seed=8)
        seg = Segment(0, np.arange(10))
        s = sample_and_pad(cloud, seg, 4, seed=seed)
        assert s.valid_count == 4


class TestCenterPair:
    def test_direct_arithmetic(self):
        a = SampledSegment(np.array([[1.0, 0, 0]]), 1)
        b = SampledSegment(np.array([[3.0, 0, 0]]), 1)
        ca, cb = center_pair(a, b)
        np.testing.assert_allclose(ca.points, [[-1, 0, 0]])
        np.testing.assert_allclose(cb.points, [[1, 0, 0]])

    def test_identical_inputs_stay_identical(self):
        pts = np.array([[1.0, 2, 3], [4.0, 5, 6]])
        a = SampledSegment(pts.copy(), 2)
        b = SampledSegment(pts.copy(), 2)
        ca, cb = center_pair(a, b)
        np.testing.assert_array_equal(ca.points, cb.points)

    def test_joint_centroid_at_origin(self, rng):
        pa = np.zeros((8, 3))
        pa[:5] = rng.normal(size=(5, 3))
        pb = np.zeros((8, 3))
        pb[:3] = rng.normal(size=(3, 3))
        ca, cb = center_pair(SampledSegment(pa, 5), SampledSegment(pb, 3))
        joint = np.vstack([ca.valid_points, cb.valid_points]).mean(axis=0)
        assert np.abs(joint).max() <= 1e-9

    def test_padding_stays_zero(self, rng):
        pa = np.zeros((6, 3))
        pa[:2] = rng.normal(size=(2, 3))
        ca, cb = center_pair(SampledSegment(pa, 2), SampledSegment(pa.copy(), 2))
        assert np.all(ca.points[2:] == 0) and np.all(cb.points[2:] == 0)

    def test_idempotent(self, rng):
        pa = rng.normal(size=(5, 3))
        pb = rng.normal(size=(5, 3))
        ca, cb = center_pair(SampledSegment(pa, 5), SampledSegment(pb, 5))
        ca2, cb2 = center_pair(ca, cb)
        np.testing.assert_allclose(ca2.points, ca.points, atol=1e-9)
        np.testing.assert_allclose(cb2.points, cb.points, atol=1e-9)

    def test_relative_pose_preserved(self, rng):
        pa = rng.normal(size=(4, 3))
        pb = rng.normal(size=(4, 3))
        ca, cb = center_pair(SampledSegment(pa, 4), SampledSegment(pb, 4))
        np.testing.assert_allclose(ca.points - cb.points, pa - pb, atol=1e-12)


class TestContentSeed:
    def test_order_independent(self):
        assert content_seed([3, 1, 2]) == content_seed([1, 2, 3])

    def test_salt_changes_seed(self):
        assert content_seed([1, 2, 3], salt=1) != content_seed([1, 2, 3], salt=2)
