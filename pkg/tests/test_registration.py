import numpy as np
import pytest
from hypothesis import given, strategies as st

from vlsdamage.errors import DegenerateGeometry, EmptyStableArea
from vlsdamage.pointcloud import PointCloud
from vlsdamage.registration import RigidTransform, align_icp, alignment_quality, signed_distances

from conftest import box_scene_points, grid_plane


def rms(a, b):
    return float(np.sqrt(((a - b) ** 2).sum(axis=1).mean()))


class TestRigidTransform:
    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]))

    def test_inverse_compose(self, rng):
        t = RigidTransform.from_euler_z(30, (1, 2, 3), center=(5, 5, 0))
        p = rng.normal(size=(10, 3))
        assert np.allclose(t.inverse().apply(t.apply(p)), p, atol=1e-12)
        assert np.allclose(t.compose(t.inverse()).rotation, np.eye(3), atol=1e-12)

    @given(st.floats(-180, 180), st.tuples(*[st.floats(-10, 10)] * 3))
    def test_property_preserves_distances(self, angle, shift):
        t = RigidTransform.from_euler_z(angle, shift)
        assert abs(np.linalg.det(t.rotation) - 1) < 1e-9
        p = np.random.default_rng(1).normal(size=(6, 3)) * 5
        q = t.apply(p)
        d0 = np.linalg.norm(p[:, None] - p[None], axis=2)
        d1 = np.linalg.norm(q[:, None] - q[None], axis=2)
        assert np.allclose(d0, d1, rtol=1e-9, atol=1e-9)


class TestICP:
    def test_identity(self):
        xyz = box_scene_points()
        c = PointCloud(xyz)
        t = align_icp(c, c, np.ones(len(xyz), bool))
        assert np.allclose(t.rotation, np.eye(3), atol=1e-12)
        assert np.allclose(t.translation, 0, atol=1e-12)

    def test_translation_recovered(self):
        xyz = box_scene_points()
        fixed = PointCloud(xyz)
        moving = PointCloud(xyz - [0.5, 0.0, 0.0])
        t = align_icp(moving, fixed, np.ones(len(xyz), bool))
        assert np.allclose(t.translation, [0.5, 0, 0], atol=1e-6)

    def test_rotation_and_translation(self):
        xyz = box_scene_points()
        truth = RigidTransform.from_euler_z(5.0, (0.2, 0.0, 0.0), center=xyz.mean(axis=0))
        moving = PointCloud(truth.inverse().apply(xyz))
        t = align_icp(moving, PointCloud(xyz), np.ones(len(xyz), bool), max_iter=200)
        assert rms(t.apply(moving.xyz), xyz) < 1e-3

    def test_stable_mask_ignores_changed_points(self, rng):
        xyz = box_scene_points()
        post = xyz.copy()
        changed = np.zeros(len(xyz), bool)
        changed[:200] = True
        post[changed] += [0, 0, -3]  # ground patch "collapses"
        moving = PointCloud(post - [0.3, 0.1, 0.0])
        t = align_icp(moving, PointCloud(xyz), ~changed, fixed_mask=~changed)
        assert np.allclose(t.translation, [0.3, 0.1, 0.0], atol=1e-6)

    def test_degenerate(self):
        line = np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])
        with pytest.raises(DegenerateGeometry):
            align_icp(PointCloud(line), PointCloud(line), np.ones(10, bool))
        with pytest.raises(DegenerateGeometry):
            align_icp(PointCloud(line[:2]), PointCloud(line), np.ones(2, bool))


class TestAlignmentQuality:
    def test_identical(self):
        xyz = grid_plane(5.0, 0.1)
        assert alignment_quality(PointCloud(xyz), PointCloud(xyz), np.ones(len(xyz), bool)) == pytest.approx(0, abs=1e-12)

    def test_noise_level(self, rng):
        xyz = grid_plane(10.0, 0.1)
        post = xyz + np.column_stack([np.zeros((len(xyz), 2)), rng.normal(0, 0.02, len(xyz))])
        std = alignment_quality(PointCloud(xyz), PointCloud(post), np.ones(len(xyz), bool))
        assert std == pytest.approx(0.02, abs=0.005)

    def test_vertical_offset(self):
        xyz = grid_plane(5.0, 0.1)
        d = signed_distances(PointCloud(xyz), PointCloud(xyz + [0, 0, 0.05]), np.ones(len(xyz), bool))
        assert d.mean() == pytest.approx(0.05, abs=1e-9)
        assert d.std() == pytest.approx(0.0, abs=1e-9)

    def test_empty_stable(self):
        xyz = grid_plane(1.0, 0.1)
        with pytest.raises(EmptyStableArea):
            alignment_quality(PointCloud(xyz), PointCloud(xyz), np.zeros(len(xyz), bool))
