import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from vlsdamage.errors import EmptyCloud, InvalidRadius, InvalidSpacing
from vlsdamage.pointcloud import (
    Epoch,
    Mode,
    PointCloud,
    SpatialIndex,
    build_index,
    mean_nn_spacing,
    nearest_neighbor,
    radius_query,
    subsample_to_spacing,
)

from conftest import grid_plane


def brute_radius(xyz, q, r, mode):
    dim = 3 if mode == Mode.BALL3D else 2
    d = ((xyz[:, :dim] - q[:dim]) ** 2).sum(axis=1)
    return np.flatnonzero(d <= r * r)


def brute_nn(xyz, q, mode):
    dim = 3 if mode == Mode.BALL3D else 2
    d = ((xyz[:, :dim] - q[:dim]) ** 2).sum(axis=1)
    return int(np.flatnonzero(d == d.min())[0])


class TestPointCloud:
    def test_attribute_length_checked(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((3, 3)), {"a": np.zeros(2)})

    def test_negative_building_id_rejected(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((2, 3)), building_id=[0, -1])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            PointCloud([[0, 0, np.nan]])

    def test_subset_carries_columns(self):
        c = PointCloud(np.arange(12.0).reshape(4, 3), {"a": [1, 2, 3, 4]}, [0, 1, 1, 2], [0, 1, 2, 3], Epoch.POST)
        s = c.subset([1, 3])
        assert s.attributes["a"].tolist() == [2, 4]
        assert s.building_id.tolist() == [1, 2]
        assert s.epoch is Epoch.POST

    def test_concatenate(self):
        a = PointCloud(np.zeros((2, 3)), {"t": [1, 1]})
        b = PointCloud(np.ones((1, 3)), {"t": [2]})
        c = PointCloud.concatenate([a, b])
        assert len(c) == 3 and c.attributes["t"].tolist() == [1, 1, 2]


class TestSpatialIndex:
    def test_empty_cloud(self):
        with pytest.raises(EmptyCloud):
            build_index(np.empty((0, 3)))

    def test_singleton(self):
        idx = build_index(np.zeros((1, 3)))
        assert nearest_neighbor(idx, [5, -3, 2]) == (0, pytest.approx(np.sqrt(38)))

    def test_negative_radius(self):
        with pytest.raises(InvalidRadius):
            radius_query(build_index(np.zeros((1, 3))), [0, 0, 0], -1.0)

    def test_empty_region(self):
        idx = build_index(np.zeros((5, 3)))
        assert len(radius_query(idx, [10, 10, 10], 1.0)) == 0

    def test_grid_nine_neighbors(self):
        xyz = grid_plane(1.0, 0.1)
        idx = build_index(xyz)
        q = np.array([0.5, 0.5, 0.0])
        res = radius_query(idx, q, 0.15)
        assert len(res) == 9
        assert set(res) == set(brute_radius(xyz, q, 0.15, Mode.BALL3D))

    def test_zero_radius_coincident_only(self):
        xyz = np.array([[0, 0, 0], [0, 0, 0], [1e-12, 0, 0]], dtype=float)
        assert radius_query(build_index(xyz), [0, 0, 0], 0.0).tolist() == [0, 1]

    def test_inclusive_boundary(self):
        xyz = np.array([[1.0, 0, 0], [0, 0.5, 0]])
        assert radius_query(build_index(xyz), [0, 0, 0], 1.0).tolist() == [0, 1]

    def test_nn_identity_and_ordering(self):
        xyz = np.array([[0, 0, 1.0], [0, 0, 2.0], [0, 0, 0.0]])
        idx = build_index(xyz)
        assert nearest_neighbor(idx, [0, 0, 2.0]) == (1, 0.0)
        assert nearest_neighbor(idx, [0, 0, -1.0])[0] == 2
        assert nearest_neighbor(SpatialIndex(xyz[:2]), [0, 0, 0])[0] == 0

    def test_nn_tie_lowest_index(self):
        xyz = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
        assert nearest_neighbor(build_index(xyz), [0, 0, 0])[0] == 0

    def test_disc_mode_ignores_height(self):
        xyz = np.array([[0, 0, 100.0], [0.5, 0, 0.0]])
        idx = build_index(xyz)
        assert radius_query(idx, [0, 0, 0], 0.1, Mode.DISC2D).tolist() == [0]
        assert nearest_neighbor(idx, [0, 0, 0], Mode.DISC2D)[0] == 0
        assert nearest_neighbor(idx, [0, 0, 0], Mode.BALL3D)[0] == 1

    @pytest.mark.parametrize("mode", [Mode.BALL3D, Mode.DISC2D])
    def test_brute_force_agreement(self, rng, mode):
        xyz = rng.uniform(0, 10, size=(1000, 3))
        idx = build_index(xyz)
        queries = rng.uniform(-1, 11, size=(100, 3))
        radii = rng.uniform(0, 2, size=100)
        for q, r in zip(queries, radii):
            assert radius_query(idx, q, r, mode).tolist() == brute_radius(xyz, q, r, mode).tolist()
            assert nearest_neighbor(idx, q, mode)[0] == brute_nn(xyz, q, mode)

    def test_batch_queries_match_single(self, rng):
        xyz = rng.uniform(0, 5, size=(500, 3))
        idx = build_index(xyz)
        q = rng.uniform(0, 5, size=(50, 3))
        off, flat = idx.radius_query_many(q, 0.7)
        counts = idx.count_many(q, 0.7)
        for k in range(len(q)):
            single = idx.radius_query(q[k], 0.7)
            assert flat[off[k]:off[k + 1]].tolist() == single.tolist()
            assert counts[k] == len(single)
        j, d = idx.nearest_many(q)
        assert j.tolist() == [brute_nn(xyz, x, Mode.BALL3D) for x in q]

    @given(arrays(np.float64, (30, 3), elements=st.floats(-5, 5)),
           arrays(np.float64, 3, elements=st.floats(-6, 6)),
           st.floats(0, 4))
    def test_property_brute_force(self, xyz, q, r):
        idx = build_index(xyz)
        for mode in (Mode.BALL3D, Mode.DISC2D):
            assert radius_query(idx, q, r, mode).tolist() == brute_radius(xyz, q, r, mode).tolist()
            assert nearest_neighbor(idx, q, mode)[0] == brute_nn(xyz, q, mode)

    @given(arrays(np.float64, (25, 3), elements=st.floats(-5, 5)),
           arrays(np.float64, 3, elements=st.integers(-20, 20).map(float)))
    def test_property_translation_equivariance(self, xyz, shift):
        q = np.array([0.3, -0.2, 0.1])
        a = radius_query(build_index(xyz), q, 2.0)
        b = radius_query(build_index(xyz + shift), q + shift, 2.0)
        # translation by integers keeps distances well away from round-off at r
        d = np.sqrt(((xyz - q) ** 2).sum(axis=1))
        if np.all(np.abs(d - 2.0) > 1e-9):
            assert a.tolist() == b.tolist()


class TestSubsample:
    def test_invalid_spacing(self):
        with pytest.raises(InvalidSpacing):
            subsample_to_spacing(PointCloud(np.zeros((1, 3))), 0.0)

    def test_no_op_when_finer(self):
        xyz = grid_plane(2.0, 0.1) + 0.05
        c = PointCloud(xyz, {"a": np.arange(len(xyz))})
        out = subsample_to_spacing(c, 0.01)
        assert len(out) == len(c)
        assert np.array_equal(out.attributes["a"], c.attributes["a"])

    def test_grid_to_spacing(self):
        xyz = grid_plane(5.0, 0.01)
        out = subsample_to_spacing(PointCloud(xyz), 0.1, seed=3)
        assert 0.08 <= mean_nn_spacing(out.xyz) <= 0.12

    def test_keeps_point_nearest_center(self):
        xyz = np.array([[0.01, 0.01, 0.01], [0.05, 0.05, 0.05], [0.09, 0.09, 0.09]])
        out = subsample_to_spacing(PointCloud(xyz), 0.1)
        assert out.xyz.tolist() == [[0.05, 0.05, 0.05]]

    def test_deterministic(self, rng):
        xyz = rng.uniform(0, 3, size=(2000, 3))
        a = subsample_to_spacing(PointCloud(xyz), 0.25, seed=7)
        b = subsample_to_spacing(PointCloud(xyz), 0.25, seed=7)
        assert np.array_equal(a.xyz, b.xyz)

    @given(st.floats(0.05, 1.0), st.floats(1.0, 3.0))
    def test_property_count_monotone(self, spacing, factor):
        xyz = np.random.default_rng(0).uniform(0, 4, size=(800, 3))
        c = PointCloud(xyz)
        n1 = len(subsample_to_spacing(c, spacing))
        assert n1 <= len(c)
        # voxel grids nest only for integer ratios, so compare against a power-of-two multiple
        n2 = len(subsample_to_spacing(c, spacing * 2 ** int(np.ceil(np.log2(factor)))))
        assert n2 <= n1
