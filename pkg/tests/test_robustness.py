import numpy as np
import pytest
from hypothesis import given, strategies as st

from vlsdamage.change import ChangeTable
from vlsdamage.errors import EmptyInput
from vlsdamage.features import Feature
from vlsdamage.pointcloud import Epoch, PointCloud
from vlsdamage.robustness import (
    RobustnessReport,
    mean_abs_change,
    relative_change_difference,
    relative_difference,
    select_robust_features,
)

U, V = Feature.PLANARITY, Feature.ROUGHNESS


def report(cells, radii=(1.0,)):
    return RobustnessReport(radii=list(radii), table={(Feature(f), float(r)): v for (f, r), v in cells.items()})


def test_scaled_change_gives_percentages(rng):
    base = rng.normal(size=500)
    a = ChangeTable(1.0, {U: base, V: base}, np.zeros(500), np.zeros(500))
    b = ChangeTable(1.0, {U: 1.05 * base, V: 1.20 * base}, np.zeros(500), np.zeros(500))
    diff = relative_difference(mean_abs_change(a), mean_abs_change(b))
    assert diff[U] == pytest.approx(5.0, abs=1e-9)
    assert diff[V] == pytest.approx(20.0, abs=1e-9)


def test_mean_abs_change_ignores_missing():
    t = ChangeTable(1.0, {U: np.array([1.0, -3.0, np.nan])}, np.zeros(3), np.zeros(3))
    assert mean_abs_change(t)[U] == 2.0


def test_zero_reference_uses_epsilon():
    assert relative_difference({U: 0.0}, {U: 0.0})[U] == 0.0
    assert relative_difference({U: 0.0}, {U: 1e-6})[U] == pytest.approx(1e-6 / 1e-12 * 100)


def test_identical_sources_zero(rng):
    pre = PointCloud(rng.uniform(0, 4, (300, 3)) * [1, 1, 0.3])
    post = PointCloud(pre.xyz + rng.normal(0, 0.05, pre.xyz.shape), epoch=Epoch.POST)
    rep = relative_change_difference((pre, post), (pre, post), radii=[1.0, 1.5])
    vals = np.array([v for v in rep.table.values() if np.isfinite(v)])
    assert len(vals) > 0 and np.all(vals == 0)


def test_empty_pair():
    empty = PointCloud(np.empty((0, 3)))
    full = PointCloud(np.zeros((3, 3)))
    with pytest.raises(EmptyInput):
        relative_change_difference((empty, full), (full, full), radii=[1.0])
    with pytest.raises(EmptyInput):
        select_robust_features(RobustnessReport(radii=[1.0]))


def test_select_five_vs_twenty():
    rep = report({(U, 1.0): 5.0, (V, 1.0): 20.0})
    assert select_robust_features(rep, 10.0) == ([U], 1.0)
    assert rep.selected_features == [U] and rep.selected_radius == 1.0


def test_threshold_zero_empty():
    assert select_robust_features(report({(U, 1.0): 5.0, (V, 1.0): 20.0}), 0.0)[0] == []


def test_radius_argmin_of_sum():
    rep = report({(U, 1.0): 1.0, (V, 1.0): 30.0, (U, 2.0): 8.0, (V, 2.0): 9.0}, radii=(1.0, 2.0))
    feats, r = select_robust_features(rep, 10.0)
    assert r == 2.0 and feats == [U, V]


def test_missing_cells_never_selected():
    rep = report({(U, 1.0): np.nan, (V, 1.0): 3.0})
    assert select_robust_features(rep, 10.0)[0] == [V]


def test_json_round_trip(tmp_path):
    rep = report({(U, 1.0): 5.0, (V, 1.0): np.nan})
    select_robust_features(rep)
    rep.save(tmp_path / "r.json")
    back = RobustnessReport.load(tmp_path / "r.json")
    assert back.selected_features == [U] and back.selected_radius == 1.0
    assert back.rel_diff(U, 1.0) == 5.0 and np.isnan(back.rel_diff(V, 1.0))


cells = st.floats(0, 50, allow_nan=False)


@given(st.lists(cells, min_size=3, max_size=3), st.lists(cells, min_size=3, max_size=3),
       st.floats(0, 50), st.floats(0, 50))
def test_property_threshold_monotone(at_one, at_two, t1, t2):
    feats = [U, V, Feature.Z_RANK]
    table = {(f, 1.0): v for f, v in zip(feats, at_one)}
    table.update({(f, 2.0): v for f, v in zip(feats, at_two)})
    lo, hi = sorted((t1, t2))
    a, ra = select_robust_features(RobustnessReport([1.0, 2.0], dict(table)), lo)
    b, rb = select_robust_features(RobustnessReport([1.0, 2.0], dict(table)), hi)
    assert ra == rb
    assert set(a) <= set(b)
