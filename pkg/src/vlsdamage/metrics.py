"""Confusion matrices, one-vs-rest metrics and report emission."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .classifier import DamageGrade, N_CLASSES
from .errors import LengthMismatch

METRICS = ("overall_accuracy", "precision", "recall", "f1")
_ROW_TITLES = {"overall_accuracy": "Overall accuracy", "precision": "Precision", "recall": "Recall", "f1": "F1 score"}
_COLUMN_TITLES = ["All damage grades", "No damage", "Heavy damage", "Extreme damage", "Destruction"]


@dataclass
class ConfusionMatrix:
    """Rows are true grades, columns predicted grades, in severity order."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tolist(self):
        return self.counts.tolist()


def confusion_matrix(truth: Sequence, pred: Sequence) -> ConfusionMatrix:
    if len(truth) != len(pred):
        raise LengthMismatch(f"{len(truth)} truths vs {len(pred)} predictions")
    if len(truth) == 0:
        raise LengthMismatch("no samples")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    t = np.array([int(DamageGrade.parse(g)) for g in truth])
    p = np.array([int(DamageGrade.parse(g)) for g in pred])
    np.add.at(cm, (t, p), 1)
    return ConfusionMatrix(cm)


def _binary(tp, fp, fn, tn) -> Dict[str, float]:
    total = tp + fp + fn + tn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "overall_accuracy": 100.0 * (tp + tn) / total,
        "precision": 100.0 * precision,
        "recall": 100.0 * recall,
        "f1": 100.0 * f1,
        "tp": int(tp),
        "fp": int(fp),
        "fn": int(fn),
        "tn": int(tn),
        "precision_undefined": tp + fp == 0,
        "recall_undefined": tp + fn == 0,
    }


def f1_from(precision_pct: float, recall_pct: float) -> float:
    """F1 in percent from precision and recall in percent."""
    p, r = precision_pct / 100.0, recall_pct / 100.0
    return 100.0 * (2 * p * r / (p + r)) if p + r else 0.0


def binary_metrics(cm: ConfusionMatrix, positive) -> Dict[str, float]:
    """One-vs-rest metrics (percent) for one grade.

    Precision with no positive predictions is reported as 0 with
    ``precision_undefined`` set; F1 is 0 when precision and recall are 0.
    """
    c = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
    k = int(DamageGrade.parse(positive)) if c.shape[0] == N_CLASSES else int(positive)
    if c.sum() <= 0:
        raise ValueError("confusion matrix is empty")
    tp = c[k, k]
    fp = c[:, k].sum() - tp
    fn = c[k, :].sum() - tp
    tn = c.sum() - tp - fp - fn
    return _binary(int(tp), int(fp), int(fn), int(tn))


def damaged_vs_undamaged(cm: ConfusionMatrix) -> Dict[str, float]:
    """Binary metrics with every damage grade collapsed into one positive class."""
    c = cm.counts
    nd = int(DamageGrade.NO_DAMAGE)
    tn = c[nd, nd]
    fp = c[nd, :].sum() - tn
    fn = c[1:, nd].sum()
    tp = c[1:, 1:].sum()
    return _binary(int(tp), int(fp), int(fn), int(tn))


def evaluate_config(name: str, cm: ConfusionMatrix) -> dict:
    return {
        "name": name,
        "confusion": cm.tolist(),
        "per_grade": {g.label: binary_metrics(cm, g) for g in DamageGrade},
        "all_damage": damaged_vs_undamaged(cm),
    }


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def emit_report(cms: Dict[str, ConfusionMatrix], out_dir, metadata=None, stem="report") -> Dict[str, Path]:
    """Write ``report.json``, ``report.csv`` and ``report.md`` (one table block per config)."""
    if not cms:
        raise ValueError("need at least one confusion matrix")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    configs = [evaluate_config(name, cm) for name, cm in cms.items()]
    payload = {"configs": configs, "pipeline_meta": metadata or {}}

    paths = {"json": out_dir / f"{stem}.json", "csv": out_dir / f"{stem}.csv", "md": out_dir / f"{stem}.md"}
    paths["json"].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    with open(paths["csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "metric", "all_damage"] + [g.label for g in DamageGrade])
        for c in configs:
            for m in METRICS:
                w.writerow([c["name"], m, _fmt(c["all_damage"][m])] + [_fmt(c["per_grade"][g.label][m]) for g in DamageGrade])

    lines = ["| | " + " | ".join(_COLUMN_TITLES) + " |", "|---" * (len(_COLUMN_TITLES) + 1) + "|"]
    for c in configs:
        lines.append(f"| **{c['name']}** |" + " |" * len(_COLUMN_TITLES))
        for m in METRICS:
            cells = [_fmt(c["all_damage"][m])] + [_fmt(c["per_grade"][g.label][m]) for g in DamageGrade]
            lines.append(f"| {_ROW_TITLES[m]} | " + " | ".join(cells) + " |")
    lines.append("")
    for c in configs:
        lines.append(f"Confusion matrix, {c['name']} (rows: true, columns: predicted)")
        lines.append("")
        lines.append("| | " + " | ".join(g.label for g in DamageGrade) + " |")
        lines.append("|---" * (N_CLASSES + 1) + "|")
        for g, row in zip(DamageGrade, c["confusion"]):
            lines.append(f"| {g.label} | " + " | ".join(str(v) for v in row) + " |")
        lines.append("")
    paths["md"].write_text("\n".join(lines))
    return paths


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())
