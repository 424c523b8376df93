"""Selection of change features that behave alike across point-cloud sources.

For every (feature, radius) cell the mean absolute change between two
epochs is summarised per source; the relative difference between sources
decides whether the feature is kept.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .change import compute_change
from .errors import EmptyInput
from .features import ALL_FEATURES, Feature, compute_features, parse_features
from .pointcloud import PointCloud, SpatialIndex

logger = logging.getLogger(__name__)

DEFAULT_RADII = (1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)
EPS = 1e-12


@dataclass
class RobustnessReport:
    radii: List[float]
    table: Dict[Tuple[Feature, float], float] = field(default_factory=dict)
    threshold_percent: float = 10.0
    selected_features: List[Feature] = field(default_factory=list)
    selected_radius: Optional[float] = None
    source_label: str = ""

    @property
    def features(self) -> List[Feature]:
        seen = []
        for f, _ in self.table:
            if f not in seen:
                seen.append(f)
        return seen

    def rel_diff(self, feature, radius) -> float:
        return self.table[(Feature(feature), float(radius))]

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold_percent,
            "radii": [float(r) for r in self.radii],
            "table": [
                {"feature": f.value, "radius": float(r), "rel_diff": _json_float(v)} for (f, r), v in self.table.items()
            ],
            "selected_features": [f.value for f in self.selected_features],
            "selected_radius": self.selected_radius,
            "source_label": self.source_label,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RobustnessReport":
        table = {}
        for row in data["table"]:
            v = row["rel_diff"]
            table[(Feature(row["feature"]), float(row["radius"]))] = float("nan") if v is None else float(v)
        return cls(
            radii=[float(r) for r in data["radii"]],
            table=table,
            threshold_percent=float(data.get("threshold", 10.0)),
            selected_features=[Feature(f) for f in data.get("selected_features", [])],
            selected_radius=data.get("selected_radius"),
            source_label=data.get("source_label", ""),
        )

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "RobustnessReport":
        return cls.from_json(json.loads(Path(path).read_text()))


def _json_float(v):
    return None if not np.isfinite(v) else float(v)


def mean_abs_change(change, anchors=None) -> Dict[Feature, float]:
    """Mean |delta| per feature over anchor rows, ignoring missing values."""
    out = {}
    for f in change.features:
        col = change[f] if anchors is None else change[f][anchors]
        col = np.abs(col[np.isfinite(col)])
        out[f] = float(col.mean()) if len(col) else float("nan")
    return out


def relative_difference(summary_a: Dict[Feature, float], summary_b: Dict[Feature, float]) -> Dict[Feature, float]:
    """``|m_A - m_B| / max(|m_A|, eps) * 100`` per feature present in both."""
    out = {}
    for f, ma in summary_a.items():
        if f not in summary_b:
            continue
        mb = summary_b[f]
        out[f] = abs(ma - mb) / max(abs(ma), EPS) * 100.0
    return out


def _pair_changes(pair, r, feats, anchors, column_radius):
    pre, post = pair
    if len(pre) == 0 or len(post) == 0:
        raise EmptyInput("robustness pair contains an empty cloud")
    pre_idx = SpatialIndex(pre.xyz)
    post_idx = SpatialIndex(post.xyz)
    rows = np.arange(len(pre)) if anchors is None else anchors
    fpre = compute_features(pre, pre_idx, r, feats, subset=rows)
    j, _ = post_idx.nearest_many(pre.xyz[rows])
    fpost = compute_features(post, post_idx, r, feats, subset=np.unique(j))
    ch = compute_change(pre, fpre, post, fpost, post_idx, anchors=rows, column_radius=column_radius)
    return ch.rows(rows)


def relative_change_difference(
    pair_a: Tuple[PointCloud, PointCloud],
    pair_b: Tuple[PointCloud, PointCloud],
    radii: Sequence[float] = DEFAULT_RADII,
    features=None,
    anchors_a=None,
    anchors_b=None,
    source_label: str = "",
) -> RobustnessReport:
    """Relative difference (percent) of mean absolute change between two sources.

    Each pair is ``(pre, post)`` of the same scene states captured by one
    source. Anchors restrict the summary to e.g. building points.
    """
    feats = parse_features(features) if features is not None else ALL_FEATURES
    table = {}
    for r in radii:
        ca = _pair_changes(pair_a, r, feats, anchors_a, None)
        cb = _pair_changes(pair_b, r, feats, anchors_b, None)
        if len(ca) == 0 or len(cb) == 0:
            raise EmptyInput("empty change table")
        diff = relative_difference(mean_abs_change(ca), mean_abs_change(cb))
        for f in feats:
            table[(f, float(r))] = diff.get(f, float("nan"))
    return RobustnessReport(radii=[float(r) for r in radii], table=table, source_label=source_label)


def select_robust_features(report: RobustnessReport, threshold_percent: float = 10.0):
    """Pick the radius with the lowest total relative difference, then keep
    features whose difference at that radius is within the threshold.

    Missing cells are never selected and do not count toward the radius sum.
    Returns ``(features, radius)`` and records both on the report.
    """
    if not report.table:
        raise EmptyInput("robustness report is empty")
    feats = report.features
    best_r, best_sum = None, np.inf
    for r in report.radii:
        vals = np.array([report.table.get((f, float(r)), np.nan) for f in feats])
        s = np.nansum(vals) if np.isfinite(vals).any() else np.inf
        if s < best_sum:
            best_r, best_sum = float(r), s
    if best_r is None:
        best_r = float(report.radii[0])
    selected = [f for f in feats if report.table.get((f, best_r), np.nan) <= threshold_percent]
    if not selected:
        logger.warning("no feature within %.1f%% relative difference at r=%.2f m", threshold_percent, best_r)
    report.threshold_percent = float(threshold_percent)
    report.selected_features = selected
    report.selected_radius = best_r
    return selected, best_r
