import numpy as np
import pytest
from hypothesis import given, strategies as st

from vlsdamage.change import ChangeTable, compute_change, height_change, normal_angle_deg
from vlsdamage.errors import FeatureMismatch
from vlsdamage.features import ALL_FEATURES, Feature, compute_features
from vlsdamage.pointcloud import Epoch, PointCloud, SpatialIndex
from vlsdamage.registration import RigidTransform

from conftest import grid_plane


def change_between(pre_xyz, post_xyz, r=1.0, feats=ALL_FEATURES, column_radius=None):
    pre, post = PointCloud(pre_xyz), PointCloud(post_xyz, epoch=Epoch.POST)
    ip, iq = SpatialIndex(pre_xyz), SpatialIndex(post_xyz)
    fa = compute_features(pre, ip, r, feats)
    fb = compute_features(post, iq, r, feats)
    return compute_change(pre, fa, post, fb, iq, column_radius=column_radius)


def noisy_plane(extent, spacing, z, sigma, seed):
    xyz = grid_plane(extent, spacing, z)
    xyz[:, 2] += np.random.default_rng(seed).normal(0, sigma, len(xyz))
    return xyz


def test_identity_epochs():
    xyz = noisy_plane(4.0, 0.2, 0.0, 0.05, 0)
    ch = change_between(xyz, xyz)
    for f in ALL_FEATURES:
        v = ch[f]
        assert np.all(v[np.isfinite(v)] == 0), f
    assert np.all(ch.dz == 0) and np.all(ch.nn_distance == 0)


def test_lowered_roof_reads_negative():
    pre = grid_plane(6.0, 0.2, 10.0)
    post = grid_plane(6.0, 0.2, 7.0)
    ch = change_between(pre, post)
    assert np.allclose(ch.dz, -3.0)


def test_hole_rim_shows_at_hole_anchors():
    pre = noisy_plane(10.0, 0.1, 5.0, 0.005, 1)
    keep = ~np.all((pre[:, :2] > 3.5) & (pre[:, :2] < 6.5), axis=1)
    roof = noisy_plane(10.0, 0.1, 5.0, 0.005, 2)
    # the opening exposes the floor slab below the roof
    floor = roof[~keep] - [0, 0, 0.3]
    post = np.vstack([roof[keep], floor])
    ch = change_between(pre, post, r=1.0, feats=[Feature.CURVATURE, Feature.ROUGHNESS])
    inside = ~keep
    interior = np.all((pre[:, :2] > 1) & (pre[:, :2] < 9), axis=1) & keep
    interior &= ~np.all((pre[:, :2] > 2.5) & (pre[:, :2] < 7.5), axis=1)
    for f in (Feature.CURVATURE, Feature.ROUGHNESS):
        assert np.median(np.abs(ch[f][inside])) > 2 * np.median(np.abs(ch[f][interior])), f


def test_height_uses_planimetric_neighbor():
    # collapsed roof next to a surviving wall: the 3D neighbor is on the wall
    pre = np.array([[0.0, 0.0, 10.0]])
    post = np.array([[0.0, 0.0, 1.0], [0.0, 0.5, 9.5]])
    iq = SpatialIndex(post)
    assert height_change(PointCloud(post), iq, pre).tolist() == [-9.0]


def test_column_radius_picks_smallest_change():
    wall = np.array([[0.0, 0.02, z] for z in np.arange(0, 10.01, 0.1)])
    iq = SpatialIndex(wall)
    q = np.array([[0.0, 0.0, 4.95]])
    assert abs(height_change(PointCloud(wall), iq, q, column_radius=0.1)[0]) <= 0.05 + 1e-12
    # empty column falls back to the 2D nearest point
    far = np.array([[5.0, 5.0, 1.0]])
    assert height_change(PointCloud(wall), iq, far, column_radius=0.1)[0] == pytest.approx(wall[0, 2] - 1.0)


def test_normal_angle_range():
    a = np.array([[0, 0, 1.0], [0, 0, 1.0], [1, 0, 0.0]])
    b = np.array([[0, 0, -1.0], [1, 0, 0.0], [np.sqrt(0.5), np.sqrt(0.5), 0]])
    assert np.allclose(normal_angle_deg(a, b), [0, 90, 45])


def test_mismatch_detected():
    xyz = grid_plane(2.0, 0.2)
    pre = PointCloud(xyz)
    idx = SpatialIndex(xyz)
    fa = compute_features(pre, idx, 1.0, [Feature.PLANARITY])
    with pytest.raises(FeatureMismatch):
        compute_change(pre, fa, pre, compute_features(pre, idx, 1.5, [Feature.PLANARITY]), idx)
    with pytest.raises(FeatureMismatch):
        compute_change(pre, fa, pre, compute_features(pre, idx, 1.0, [Feature.ROUGHNESS]), idx)


def test_attribute_round_trip():
    ch = change_between(grid_plane(2.0, 0.25), grid_plane(2.0, 0.25, 1.0), feats=[Feature.Z_RANGE, Feature.NORMAL_VECTOR])
    back = ChangeTable.from_attributes(ch.to_attributes(), ch.radius)
    assert np.array_equal(back.dz, ch.dz)
    assert np.array_equal(back[Feature.NORMAL_VECTOR], ch[Feature.NORMAL_VECTOR], equal_nan=True)


@given(st.floats(-180, 180), st.tuples(*[st.floats(-100, 100)] * 2), st.floats(-5, 5))
def test_joint_motion_leaves_deltas(yaw, shift, dz):
    rng = np.random.default_rng(4)
    pre = rng.uniform(0, 3, size=(150, 3)) * [1, 1, 0.4]
    post = pre + rng.normal(0, 0.05, pre.shape)
    feats = [Feature.PLANARITY, Feature.SURFACE_VARIATION, Feature.NUM_NEIGHBORS, Feature.ROUGHNESS, Feature.Z_RANGE]
    a = change_between(pre, post, 0.8, feats)
    t = RigidTransform.from_euler_z(yaw, (shift[0], shift[1], dz))
    b = change_between(t.apply(pre), t.apply(post), 0.8, feats)
    for f in feats:
        assert np.allclose(a[f], b[f], atol=1e-6, equal_nan=True), f


def test_swapping_epochs_negates_scalar_deltas():
    # a regular grid with a rigid vertical shift keeps nearest-neighbor pairs mutual
    pre = grid_plane(4.0, 0.25)
    pre[:, 2] = 0.1 * np.sin(pre[:, 0])
    post = pre + [0, 0, 0.01]
    feats = [Feature.PLANARITY, Feature.CURVATURE, Feature.Z_RANK, Feature.NORMAL_VECTOR]
    a = change_between(pre, post, 1.0, feats)
    b = change_between(post, pre, 1.0, feats)
    for f in feats[:-1]:
        assert np.allclose(a[f], -b[f], atol=1e-12), f
    assert np.allclose(a[Feature.NORMAL_VECTOR], b[Feature.NORMAL_VECTOR])
    assert np.allclose(a.dz, -b.dz)
