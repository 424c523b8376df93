"""Building-level change vectors and a random-forest damage-grade classifier."""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .change import ChangeTable
from .clustering import CHANGED, ClusterResult
from .errors import EmptyClass, FeatureMismatch, ParseError, UnsupportedVersion
from .features import Feature, parse_features

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
STATS = ("mean", "median", "std", "p10", "p90")


class DamageGrade(enum.IntEnum):
    NO_DAMAGE = 0
    HEAVY = 1
    EXTREME = 2
    DESTRUCTION = 3

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, value) -> "DamageGrade":
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        for g, name in _LABELS.items():
            if key in (name, g.name.lower()):
                return g
        raise ValueError(f"unknown damage grade {value!r}")


_LABELS = {
    DamageGrade.NO_DAMAGE: "no_damage",
    DamageGrade.HEAVY: "heavy",
    DamageGrade.EXTREME: "extreme",
    DamageGrade.DESTRUCTION: "destruction",
}
N_CLASSES = len(DamageGrade)


class TrainingConfig(str, enum.Enum):
    VLS_GENERIC = "vls-generic"
    VLS_REGION_SPECIFIC = "vls-region-specific"
    VLS_GENERIC_PLUS_REAL_DIM = "vls-generic+real-dim"
    REAL_DIM = "real-dim"


class BypassNoDamage(Exception):
    """Raised instead of a vector when a building has no changed points."""


def feature_names(selected) -> List[str]:
    names = []
    for f in parse_features(selected):
        for s in STATS:
            names.append(f"{f.value}.{s}")
    names.append("damaged_share")
    return names


@dataclass
class BuildingFeatureVector:
    building_id: int
    values: np.ndarray
    names: List[str]
    grade: Optional[DamageGrade] = None

    def to_dict(self):
        return {
            "building_id": int(self.building_id),
            "grade": None if self.grade is None else self.grade.label,
            "values": dict(zip(self.names, (float(v) for v in self.values))),
        }


def _stats(col: np.ndarray) -> List[float]:
    if len(col) == 0:
        return [0.0] * len(STATS)
    return [
        float(np.mean(col)),
        float(np.median(col)),
        float(np.std(col)),
        float(np.percentile(col, 10, method="linear")),
        float(np.percentile(col, 90, method="linear")),
    ]


def aggregate_building_vector(
    result: ClusterResult, changes: ChangeTable, selected, building_id: int = 0, grade=None
) -> BuildingFeatureVector:
    """Summary statistics of each selected delta over the changed points, plus
    the damaged share. Missing values are dropped per column; a column with
    no valid values contributes zeros."""
    if result.n_changed == 0:
        raise BypassNoDamage(f"building {building_id} has no changed points")
    feats = parse_features(selected)
    mask = result.labels == CHANGED
    values = []
    for f in feats:
        if f not in changes.deltas:
            raise FeatureMismatch(f"change table lacks feature {f.value}")
        col = changes[f][mask]
        values.extend(_stats(col[np.isfinite(col)]))
    values.append(result.damaged_share)
    g = None if grade is None else DamageGrade.parse(grade)
    return BuildingFeatureVector(int(building_id), np.asarray(values, dtype=np.float64), feature_names(feats), g)


def split_train_test(labels: Sequence, ratio: float = 0.7, seed: int = 0):
    """Stratified random split; returns sorted index arrays ``(train, test)``.

    Each class contributes ``floor(ratio * n_class)`` training items.
    """
    labels = np.asarray([int(DamageGrade.parse(g)) for g in labels])
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    present = set(labels.tolist())
    for g in DamageGrade:
        if int(g) not in present:
            raise EmptyClass(f"no samples of grade {g.label}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for g in DamageGrade:
        idx = np.nonzero(labels == int(g))[0]
        idx = idx[rng.permutation(len(idx))]
        k = int(math.floor(ratio * len(idx) + 1e-9))
        train.extend(idx[:k].tolist())
        test.extend(idx[k:].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(test), dtype=np.int64)


# --- trees -----------------------------------------------------------------


def _gini_from_counts(counts: np.ndarray) -> np.ndarray:
    tot = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / np.where(tot > 0, tot, 1)[..., None]
    return 1.0 - (p * p).sum(axis=-1)


def _best_split(X, y, feats):
    """Best Gini split among candidate features; ``None`` if no valid split."""
    n = len(y)
    onehot = np.eye(N_CLASSES)[y]
    best = None
    for f in feats:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        left = np.cumsum(onehot[order], axis=0)[:-1]
        right = left[-1] + onehot[order[-1]] - left
        nl = np.arange(1, n)
        score = (nl * _gini_from_counts(left) + (n - nl) * _gini_from_counts(right)) / n
        score = np.where(valid, score, np.inf)
        k = int(np.argmin(score))
        if best is None or score[k] < best[0]:
            thr = 0.5 * (xs[k] + xs[k + 1])
            # midpoint can round up to the right value for adjacent floats
            if not thr < xs[k + 1]:
                thr = xs[k]
            best = (float(score[k]), int(f), float(thr))
    return best


def _grow(X, y, depth, max_depth, n_try, rng, nodes):
    idx = len(nodes)
    counts = np.bincount(y, minlength=N_CLASSES)
    nodes.append({"leaf_counts": counts.tolist()})
    if depth >= max_depth or np.count_nonzero(counts) <= 1:
        return idx
    d = X.shape[1]
    feats = rng.choice(d, size=min(n_try, d), replace=False)
    split = _best_split(X, y, feats)
    if split is None:
        return idx
    _, f, thr = split
    go_left = X[:, f] <= thr
    left = _grow(X[go_left], y[go_left], depth + 1, max_depth, n_try, rng, nodes)
    right = _grow(X[~go_left], y[~go_left], depth + 1, max_depth, n_try, rng, nodes)
    nodes[idx] = {"feature_idx": f, "threshold": thr, "left": left, "right": right}
    return idx


def tree_depth(nodes, i=0) -> int:
    node = nodes[i]
    if "leaf_counts" in node:
        return 0
    return 1 + max(tree_depth(nodes, node["left"]), tree_depth(nodes, node["right"]))


def _tree_proba(nodes, X):
    out = np.empty((len(X), N_CLASSES))
    for r, x in enumerate(X):
        i = 0
        node = nodes[0]
        while "leaf_counts" not in node:
            i = node["left"] if x[node["feature_idx"]] <= node["threshold"] else node["right"]
            node = nodes[i]
        c = np.asarray(node["leaf_counts"], dtype=np.float64)
        out[r] = c / c.sum()
    return out


@dataclass
class ForestModel:
    trees: List[List[dict]]
    feature_names: List[str]
    n_trees: int = 100
    max_depth: int = 5
    training_config: TrainingConfig = TrainingConfig.VLS_GENERIC
    seed: int = 0
    format_version: int = FORMAT_VERSION
    metadata: Dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise FeatureMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        per_tree = np.stack([_tree_proba(t, X) for t in self.trees])
        # sorting over the tree axis makes the sum independent of tree order
        return np.sort(per_tree, axis=0).sum(axis=0) / len(self.trees)

    def predict(self, X):
        """Grades and probabilities; ties favour the more severe grade."""
        proba = self.predict_proba(X)
        top = proba.max(axis=1, keepdims=True)
        grades = N_CLASSES - 1 - np.argmax((proba == top)[:, ::-1], axis=1)
        return [DamageGrade(int(g)) for g in grades], proba

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "params": {"n_trees": self.n_trees, "max_depth": self.max_depth},
            "feature_names": list(self.feature_names),
            "classes": [g.label for g in DamageGrade],
            "training_config": TrainingConfig(self.training_config).value,
            "seed": self.seed,
            "metadata": self.metadata,
            "trees": [{"nodes": t} for t in self.trees],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ForestModel":
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise UnsupportedVersion(f"model format_version {version!r} is not supported (expected {FORMAT_VERSION})")
        try:
            trees = [t["nodes"] for t in data["trees"]]
            model = cls(
                trees=trees,
                feature_names=list(data["feature_names"]),
                n_trees=int(data["params"]["n_trees"]),
                max_depth=int(data["params"]["max_depth"]),
                training_config=TrainingConfig(data["training_config"]),
                seed=int(data["seed"]),
                metadata=data.get("metadata", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed model: {exc}") from exc
        for t in trees:
            for node in t:
                if "leaf_counts" in node:
                    if sum(node["leaf_counts"]) <= 0:
                        raise ParseError("empty leaf histogram")
                elif not {"feature_idx", "threshold", "left", "right"} <= set(node):
                    raise ParseError("malformed split node")
        return model


def train_forest(
    X,
    y,
    n_trees: int = 100,
    max_depth: int = 5,
    seed: int = 0,
    feature_names: Optional[List[str]] = None,
    training_config=TrainingConfig.VLS_GENERIC,
    max_features: Optional[int] = None,
) -> ForestModel:
    """Bagged Gini trees with sqrt(d) candidate features per split.

    Tree ``i`` draws its bootstrap and feature subsets from
    ``default_rng([seed, i])``, so trees are independent of each other and
    of training order. Single-class input yields a constant model.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray([int(DamageGrade.parse(g)) for g in y], dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ValueError("X must be (n, d) with one label per row")
    if not np.all(np.isfinite(X)):
        raise ValueError("training vectors must be finite")
    n, d = X.shape
    n_try = max_features or int(math.ceil(math.sqrt(d)))
    trees = []
    for i in range(n_trees):
        rng = np.random.default_rng([seed, i])
        boot = rng.integers(0, n, size=n)
        nodes: List[dict] = []
        _grow(X[boot], y[boot], 0, max_depth, n_try, rng, nodes)
        trees.append(nodes)
    names = feature_names or [f"f{k}" for k in range(d)]
    return ForestModel(trees, list(names), n_trees, max_depth, TrainingConfig(training_config), int(seed))


def predict(model: ForestModel, x):
    """Grade and probability vector for one building vector."""
    vals = x.values if isinstance(x, BuildingFeatureVector) else np.asarray(x, dtype=np.float64)
    if vals.ndim != 1:
        raise FeatureMismatch("predict takes a single vector; use ForestModel.predict for batches")
    grades, proba = model.predict(vals[None])
    return grades[0], proba[0]


def save_model(model: ForestModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_json(), sort_keys=True) + "\n")


def load_model(path) -> ForestModel:
    try:
        data = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: model file must hold a JSON object")
    return ForestModel.from_json(data)
