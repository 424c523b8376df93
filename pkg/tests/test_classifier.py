import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from vlsdamage.change import ChangeTable
from vlsdamage.classifier import (
    BypassNoDamage,
    DamageGrade,
    ForestModel,
    TrainingConfig,
    aggregate_building_vector,
    feature_names,
    load_model,
    predict,
    save_model,
    split_train_test,
    train_forest,
    tree_depth,
)
from vlsdamage.clustering import CHANGED, ClusterResult
from vlsdamage.errors import EmptyClass, FeatureMismatch, ParseError, UnsupportedVersion
from vlsdamage.features import Feature


def cluster(labels):
    labels = np.asarray(labels)
    return ClusterResult(labels, np.zeros((2, 2)), float((labels == CHANGED).mean()))


def four_class_data(rng, n=40, d=6):
    centers = rng.normal(0, 5, (4, d))
    X = np.vstack([centers[k] + rng.normal(0, 0.5, (n, d)) for k in range(4)])
    y = np.repeat(np.arange(4), n)
    return X, y


class TestAggregate:
    def test_five_values(self):
        vals = np.array([1.0, 2, 3, 4, 5])
        ch = ChangeTable(1.0, {Feature.PLANARITY: vals}, np.zeros(5), np.zeros(5))
        v = aggregate_building_vector(cluster([1, 1, 1, 1, 1]), ch, [Feature.PLANARITY])
        mean, median, std, p10, p90, share = v.values
        assert (mean, median, p10, p90, share) == pytest.approx((3, 3, 1.4, 4.6, 1.0))
        assert std == pytest.approx(np.sqrt(2), abs=1e-4)

    def test_constant_and_missing(self):
        vals = np.array([2.5, 2.5, np.nan, 9.0])
        ch = ChangeTable(1.0, {Feature.ROUGHNESS: vals}, np.zeros(4), np.zeros(4))
        v = aggregate_building_vector(cluster([1, 1, 1, 0]), ch, [Feature.ROUGHNESS])
        assert v.values[:5].tolist() == [2.5, 2.5, 0.0, 2.5, 2.5]
        assert v.values[5] == 0.75

    def test_dimension_and_names(self):
        feats = [Feature.PLANARITY, Feature.Z_RANGE, Feature.NORMAL_VECTOR]
        ch = ChangeTable(1.0, {f: np.ones(4) for f in feats}, np.zeros(4), np.zeros(4))
        v = aggregate_building_vector(cluster([1, 0, 0, 0]), ch, feats)
        assert len(v.values) == 5 * 3 + 1 == len(feature_names(feats))
        assert v.names[0] == "planarity.mean" and v.names[-1] == "damaged_share"
        assert np.isfinite(v.values).all()

    def test_share_passthrough(self):
        labels = np.r_[np.ones(50, int), np.zeros(150, int)]
        ch = ChangeTable(1.0, {Feature.PLANARITY: np.zeros(200)}, np.zeros(200), np.zeros(200))
        assert aggregate_building_vector(cluster(labels), ch, [Feature.PLANARITY]).values[-1] == 0.25

    def test_bypass_and_mismatch(self):
        ch = ChangeTable(1.0, {Feature.PLANARITY: np.zeros(3)}, np.zeros(3), np.zeros(3))
        with pytest.raises(BypassNoDamage):
            aggregate_building_vector(cluster([0, 0, 0]), ch, [Feature.PLANARITY])
        with pytest.raises(FeatureMismatch):
            aggregate_building_vector(cluster([1, 0, 0]), ch, [Feature.ROUGHNESS])


class TestSplit:
    def test_reference_split_counts(self):
        labels = np.repeat(np.arange(4), 112)
        train, test = split_train_test(labels, 0.7, seed=0)
        for g in range(4):
            assert (labels[train] == g).sum() == 78 and (labels[test] == g).sum() == 34
        assert len(set(train) & set(test)) == 0

    def test_all_train_and_determinism(self):
        labels = np.repeat(np.arange(4), 5)
        train, test = split_train_test(labels, 1.0)
        assert len(train) == 20 and len(test) == 0
        a = split_train_test(labels, 0.7, seed=4)
        b = split_train_test(labels, 0.7, seed=4)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_empty_class(self):
        with pytest.raises(EmptyClass):
            split_train_test([0, 1, 2, 2])


class TestForest:
    def test_defaults(self, rng):
        X, y = four_class_data(rng, 10)
        m = train_forest(X, y)
        assert m.n_trees == len(m.trees) == 100 and m.max_depth == 5

    def test_single_class(self, rng):
        m = train_forest(rng.normal(size=(20, 3)), np.full(20, 2), n_trees=5)
        grades, proba = m.predict(rng.normal(size=(7, 3)) * 100)
        assert all(g is DamageGrade.EXTREME for g in grades)
        assert np.allclose(proba[:, 2], 1)

    def test_separable_toy(self, rng):
        # separating hyperplane x0 = 0 with a 1.0 gap; the other dimensions are noise.
        # axis-aligned splits can only staircase an oblique boundary.
        X = rng.uniform(-5, 5, (200, 3))
        X[:, 0] = np.where(rng.random(200) < 0.5, -1, 1) * rng.uniform(0.5, 5, 200)
        y = (X[:, 0] > 0).astype(int)
        m = train_forest(X[:140], y[:140], n_trees=50, max_depth=5, seed=1)
        grades, _ = m.predict(X[140:])
        assert np.mean([int(g) for g in grades] == y[140:]) == 1.0

    def test_memorization(self, rng):
        X, y = four_class_data(rng, 3, 4)
        m = train_forest(X, y, n_trees=30, seed=2)
        grades, proba = m.predict(X)
        assert [int(g) for g in grades] == y.tolist()
        assert proba.max(axis=1).min() > 0.5

    def test_depth_bound(self, rng):
        X = rng.normal(size=(300, 5))
        y = rng.integers(0, 4, 300)
        m = train_forest(X, y, n_trees=10, max_depth=5, seed=3)
        assert max(tree_depth(t) for t in m.trees) <= 5
        for t in m.trees:
            for node in t:
                if "leaf_counts" in node:
                    assert sum(node["leaf_counts"]) > 0

    def test_probabilities_and_mismatch(self, rng):
        X, y = four_class_data(rng, 10)
        m = train_forest(X, y, n_trees=20)
        _, proba = m.predict(rng.normal(0, 10, (50, X.shape[1])))
        assert (proba >= 0).all() and np.allclose(proba.sum(axis=1), 1, atol=1e-9)
        with pytest.raises(FeatureMismatch):
            m.predict(np.zeros((1, X.shape[1] + 1)))

    def test_tree_order_invariant(self, rng):
        X, y = four_class_data(rng, 10)
        m = train_forest(X, y, n_trees=25, seed=5)
        perm = ForestModel(list(reversed(m.trees)), m.feature_names, m.n_trees, m.max_depth)
        Q = rng.normal(0, 5, (60, X.shape[1]))
        assert np.array_equal(m.predict_proba(Q), perm.predict_proba(Q))

    def test_tie_goes_to_more_severe(self):
        leaf = lambda c: [{"leaf_counts": c}]
        m = ForestModel([leaf([1, 1, 0, 0]), leaf([0, 1, 1, 0])], ["a"], n_trees=2)
        grade, proba = predict(m, np.array([0.0]))
        assert proba.tolist() == [0.25, 0.5, 0.25, 0.0] and grade is DamageGrade.HEAVY
        m = ForestModel([leaf([1, 0, 0, 0]), leaf([0, 0, 0, 1])], ["a"], n_trees=2)
        assert predict(m, np.array([0.0]))[0] is DamageGrade.DESTRUCTION

    def test_determinism(self, rng):
        X, y = four_class_data(rng, 10)
        a = train_forest(X, y, n_trees=10, seed=11)
        b = train_forest(X, y, n_trees=10, seed=11)
        assert a.trees == b.trees

    def test_training_configs(self, rng):
        X, y = four_class_data(rng, 5)
        for tc in TrainingConfig:
            assert train_forest(X, y, n_trees=2, training_config=tc).training_config is tc


class TestPersistence:
    def test_round_trip(self, tmp_path, rng):
        X, y = four_class_data(rng, 10)
        m = train_forest(X, y, n_trees=15, seed=3, feature_names=[f"x{i}" for i in range(X.shape[1])])
        save_model(m, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        Q = rng.normal(0, 5, (100, X.shape[1]))
        assert np.array_equal(m.predict_proba(Q), back.predict_proba(Q))
        assert back.feature_names == m.feature_names

    def test_truncated(self, tmp_path, rng):
        X, y = four_class_data(rng, 5)
        p = tmp_path / "m.json"
        save_model(train_forest(X, y, n_trees=3), p)
        p.write_text(p.read_text()[:100])
        with pytest.raises(ParseError):
            load_model(p)

    def test_future_version(self, tmp_path, rng):
        X, y = four_class_data(rng, 5)
        p = tmp_path / "m.json"
        save_model(train_forest(X, y, n_trees=3), p)
        data = json.loads(p.read_text())
        data["format_version"] = 2
        p.write_text(json.dumps(data))
        with pytest.raises(UnsupportedVersion):
            load_model(p)

    def test_schema_fields(self, tmp_path, rng):
        X, y = four_class_data(rng, 5)
        p = tmp_path / "m.json"
        save_model(train_forest(X, y, n_trees=2), p)
        data = json.loads(p.read_text())
        assert {"format_version", "params", "feature_names", "training_config", "seed", "trees"} <= set(data)
        node_keys = set().union(*(set(n) for t in data["trees"] for n in t["nodes"]))
        assert node_keys <= {"feature_idx", "threshold", "left", "right", "leaf_counts"}


@given(arrays(np.float64, (30, 3), elements=st.floats(-100, 100)),
       st.lists(st.integers(0, 3), min_size=30, max_size=30),
       arrays(np.float64, (5, 3), elements=st.floats(-1e3, 1e3)))
def test_property_probability_vector(X, y, Q):
    m = train_forest(X, y, n_trees=5, seed=0)
    _, proba = m.predict(Q)
    assert (proba >= 0).all() and np.allclose(proba.sum(axis=1), 1, atol=1e-9)
    assert max(tree_depth(t) for t in m.trees) <= 5
