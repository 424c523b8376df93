"""Stage orchestration: simulate, features, change, cluster, robust-select,
train, classify and evaluate, either through files or fully in memory.

All processing happens per building tile, i.e. a building and the ground
patch around it. Tiles are independent, so results do not depend on the
number of workers or on processing order.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .change import ChangeTable, compute_change
from .classifier import (
    BypassNoDamage,
    DamageGrade,
    TrainingConfig,
    aggregate_building_vector,
    feature_names,
    load_model,
    save_model,
    split_train_test,
    train_forest,
)
from .clustering import CHANGED, ClusterResult, extract_changed_points
from .config import PipelineConfig
from .errors import EmptyClass, EmptyStableArea, MissingArtifact
from .features import ALL_FEATURES, Feature, FeatureTable, compute_features, parse_features
from .metrics import confusion_matrix, emit_report
from .plyio import read_ply, write_ply
from .pointcloud import Epoch, PointCloud, SpatialIndex, subsample_to_spacing
from .registration import alignment_quality
from .robustness import RobustnessReport, relative_change_difference, select_robust_features
from .simulator.scanner import GROUND_ID, ScannerConfig, plan_strips, simulate_scan
from .simulator.scene import Scene, augment_buildings, make_base_models, read_scene, write_scene

logger = logging.getLogger(__name__)

STAGES = ("simulate", "features", "change", "cluster", "robust-select", "train", "classify", "evaluate", "full-run")
DATASETS = ("train", "eval")
NOISE_FLOOR = "noise_floor_m"  # per-row copy of the tile's height noise threshold
NOISE_SAMPLES = 1000  # ground points per tile used to measure it
CLUSTERING_SPACE = "z-score standardized (d_curvature, d_z)"


# --- per-tile core ----------------------------------------------------------------


def tile_seed(seed: int, building_id: int) -> int:
    return int(np.random.SeedSequence([seed, building_id]).generate_state(1)[0])


def scan_tile(scene: Scene, strips, scanner: ScannerConfig, seed: int, building_id: int, spacing: float,
              sample_seed: int, epoch: Epoch) -> PointCloud:
    """Scan one building with its pad, then thin to the working spacing."""
    raw = simulate_scan(scene, strips, scanner, seed=seed, targets=[building_id], epoch=epoch)
    return subsample_to_spacing(raw, spacing, seed=tile_seed(sample_seed, building_id))


def building_rows(cloud: PointCloud, building_id: int) -> np.ndarray:
    return np.flatnonzero(cloud.building_id == building_id)


def tile_features(pre: PointCloud, post: PointCloud, building_id: int, radius: float, feats):
    """Features at the pre building points and at their closest post points."""
    rows = building_rows(pre, building_id)
    pre_index = SpatialIndex(pre.xyz)
    fpre = compute_features(pre, pre_index, radius, feats, subset=rows)
    if len(post) == 0:
        return fpre, None
    post_index = SpatialIndex(post.xyz)
    j, _ = post_index.nearest_many(pre.xyz[rows])
    fpost = compute_features(post, post_index, radius, feats, subset=np.unique(j))
    return fpre, fpost


def tile_change(pre, fpre, post, fpost, building_id: int, column_radius) -> ChangeTable:
    """Change rows for the pre building points only."""
    rows = building_rows(pre, building_id)
    if fpost is None:
        raise MissingArtifact(f"post-event points of building {building_id}", "simulate")
    ch = compute_change(pre, fpre, post, fpost, SpatialIndex(post.xyz), anchors=rows, column_radius=column_radius)
    return ch.rows(rows)


def tile_noise_floor(pre: PointCloud, post: PointCloud, clustering) -> float:
    """Height noise threshold for one tile from the spread of ground-to-ground
    distances; falls back to the configured constant without usable ground."""
    if clustering.epsilon_noise is not None:
        return float(clustering.epsilon_noise[1])
    fallback = float(clustering.fallback_epsilon[1])
    ground_pre = pre.subset(np.flatnonzero(pre.building_id == GROUND_ID))
    ground_post = post.subset(np.flatnonzero(post.building_id == GROUND_ID))
    if len(ground_pre) < 3 or len(ground_post) < 3:
        return fallback
    stable = np.zeros(len(ground_pre), dtype=bool)
    stable[:: max(1, len(ground_pre) // NOISE_SAMPLES)] = True
    try:
        return clustering.noise_factor * alignment_quality(ground_pre, ground_post, stable)
    except EmptyStableArea:
        return fallback


def tile_vector(changes: ChangeTable, building_id: int, selected, clustering, grade=None, height_eps=None):
    """Cluster one building; returns ``(ClusterResult, vector or None)``."""
    if clustering.epsilon_noise is not None:
        eps = tuple(clustering.epsilon_noise)
    else:
        eps_z = clustering.fallback_epsilon[1] if height_eps is None or not np.isfinite(height_eps) else height_eps
        eps = (clustering.fallback_epsilon[0], float(eps_z))
    res = extract_changed_points(changes, seed=clustering.seed, epsilon_noise=eps, max_iter=clustering.max_iter)
    try:
        vec = aggregate_building_vector(res, changes, selected, building_id, grade)
    except BypassNoDamage:
        vec = None
    return res, vec


def feature_set(selected) -> tuple:
    """Selected features plus curvature, which clustering always needs."""
    feats = list(parse_features(selected))
    if Feature.CURVATURE not in feats:
        feats.append(Feature.CURVATURE)
    return tuple(feats)


def column_radius(cfg: PipelineConfig) -> Optional[float]:
    f = cfg.features.column_radius_factor
    return None if f is None else f * cfg.sampling.spacing_m


# --- scenes -------------------------------------------------------------------------


def build_scenes(cfg: PipelineConfig, dataset: str = "train") -> Tuple[Scene, Scene]:
    sec = cfg.scene if dataset == "train" else cfg.evaluation_scene
    bases = make_base_models(sec.base_models, preset=sec.preset, seed=sec.seed)
    params = {g.label: cfg.damage.build() for g in DamageGrade}
    return augment_buildings(
        bases,
        sec.per_grade_count,
        seed=sec.seed + 1,
        damage_params=params,
        preset=sec.preset,
        pad_margin=sec.pad_margin_m,
        max_edge=sec.mesh_max_edge_m,
    )


# --- worker plumbing ------------------------------------------------------------------

_CTX: dict = {}


def _init_worker(ctx):
    _CTX.clear()
    _CTX.update(ctx)


def _parallel_map(fn, items, jobs: int, ctx: dict):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        _init_worker(ctx)
        try:
            return [fn(x) for x in items]
        finally:
            _CTX.clear()
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(ctx,)) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _scan_pair_task(bid):
    c = _CTX
    pre = scan_tile(c["pre"], c["strips"], c["scanner"], c["seed_pre"], bid, c["spacing"], c["sample_seed"], Epoch.PRE)
    post = scan_tile(c["post"], c["strips"], c["scanner"], c["seed_post"], bid, c["spacing"], c["sample_seed"], Epoch.POST)
    return pre, post


def _process_task(bid):
    """Scan, features, change and clustering for one building, in memory."""
    c = _CTX
    pre, post = _scan_pair_task(bid)
    grade = c["truth"][bid]
    if len(building_rows(pre, bid)) == 0:
        return bid, None, None, 0
    fpre, fpost = tile_features(pre, post, bid, c["radius"], c["feats"])
    ch = tile_change(pre, fpre, post, fpost, bid, c["column_radius"])
    eps = tile_noise_floor(pre, post, c["clustering"])
    res, vec = tile_vector(ch, bid, c["selected"], c["clustering"], grade, eps)
    return bid, vec, res.damaged_share, len(ch)


def _scan_context(cfg: PipelineConfig, pre: Scene, post: Scene) -> dict:
    scanner = cfg.scanner.build()
    return {
        "pre": pre,
        "post": post,
        "strips": plan_strips(post.extent, scanner),
        "scanner": scanner,
        "seed_pre": cfg.simulation.seed_pre,
        "seed_post": cfg.simulation.seed_post,
        "spacing": cfg.sampling.spacing_m,
        "sample_seed": cfg.sampling.seed,
    }


# --- artifact helpers --------------------------------------------------------------------


class Workspace:
    """File layout of one run below ``out_dir``."""

    def __init__(self, cfg: PipelineConfig, out_dir=None):
        self.cfg = cfg
        self.root = Path(out_dir or cfg.paths.out_dir)

    def data(self, dataset: str) -> Path:
        return self.root / dataset

    def scene_dir(self, dataset, epoch) -> Path:
        return self.data(dataset) / "scene" / epoch

    def cloud(self, dataset, epoch) -> Path:
        return self.data(dataset) / "clouds" / f"{epoch}.ply"

    def features(self, dataset, epoch) -> Path:
        return self.data(dataset) / "features" / f"{epoch}.ply"

    def change(self, dataset) -> Path:
        return self.data(dataset) / "change" / "change.ply"

    def clusters(self, dataset) -> Path:
        return self.data(dataset) / "cluster" / "clusters.ply"

    def vectors(self, dataset) -> Path:
        return self.data(dataset) / "cluster" / "vectors.json"

    @property
    def robustness(self) -> Path:
        return self.root / "robust" / "robustness.json"

    @property
    def model(self) -> Path:
        return self.root / "model" / "model.json"

    @property
    def split(self) -> Path:
        return self.root / "model" / "split.json"

    @property
    def predictions(self) -> Path:
        return self.root / "classify" / "predictions.json"

    @property
    def report_dir(self) -> Path:
        return self.root / "evaluate"


def provenance(cfg: PipelineConfig, stage: str, **extra) -> dict:
    out = {"stage": stage, "config_hash": cfg.config_hash(), "seeds": cfg.seeds()}
    out.update(extra)
    return out


def _ply_comments(cfg, stage, dataset):
    return {"stage": stage, "dataset": dataset, "config_hash": cfg.config_hash(),
            "seeds": json.dumps(cfg.seeds(), sort_keys=True, separators=(",", ":"))}


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifact(path, stage)
    return path


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path, stage: str):
    return json.loads(_require(path, stage).read_text())


def _tiles(cloud: PointCloud) -> Dict[int, np.ndarray]:
    tile = cloud.attributes["tile"].astype(np.int64)
    order = np.argsort(tile, kind="stable")
    ids, starts = np.unique(tile[order], return_index=True)
    bounds = list(starts[1:]) + [len(order)]
    return {int(i): order[s:e] for i, s, e in zip(ids, starts, bounds)}


def _truth(ws: Workspace, dataset: str) -> Dict[int, int]:
    path = _require(ws.scene_dir(dataset, "post") / "manifest.json", "simulate")
    return {int(e["id"]): int(DamageGrade.parse(e["grade"])) for e in json.loads(path.read_text())}


# --- radius / feature resolution --------------------------------------------------------


def resolve_selection(cfg: PipelineConfig, ws: Optional[Workspace] = None):
    """``(selected features, radius)`` from config or the robust-select artifact."""
    sel = cfg.features.selected
    radius = cfg.features.radius_m
    if sel == "robust-select" or radius is None:
        if ws is None:
            raise MissingArtifact("robustness.json", "robust-select")
        report = RobustnessReport.load(_require(ws.robustness, "robust-select"))
        if radius is None:
            radius = report.selected_radius
        if sel == "robust-select":
            sel = [f.value for f in report.selected_features]
    return list(parse_features(sel)), float(radius)


# --- stages -------------------------------------------------------------------------


def stage_simulate(cfg: PipelineConfig, ws: Workspace, dataset="train", jobs=1) -> None:
    pre, post = build_scenes(cfg, dataset)
    write_scene(pre, ws.scene_dir(dataset, "pre"))
    write_scene(post, ws.scene_dir(dataset, "post"))
    ctx = _scan_context(cfg, pre, post)
    ids = [b.id for b in post.buildings]
    pairs = _parallel_map(_scan_pair_task, ids, jobs, ctx)
    for k, epoch in enumerate(("pre", "post")):
        cloud = PointCloud.concatenate([p[k] for p in pairs], epoch=Epoch(epoch))
        write_ply(ws.cloud(dataset, epoch), cloud, _ply_comments(cfg, "simulate", dataset))
    logger.info("simulated %d buildings for %s", len(ids), dataset)


def stage_features(cfg: PipelineConfig, ws: Workspace, dataset="train", jobs=1) -> None:
    selected, radius = resolve_selection(cfg, ws)
    feats = feature_set(selected)
    pre, _ = read_ply(_require(ws.cloud(dataset, "pre"), "simulate"))
    post, _ = read_ply(_require(ws.cloud(dataset, "post"), "simulate"))
    tp, tq = _tiles(pre), _tiles(post)
    n_pre, n_post = len(pre), len(post)
    cols_pre = {f: np.full((n_pre, 3) if f is Feature.NORMAL_VECTOR else n_pre, np.nan) for f in feats}
    cols_post = {f: np.full((n_post, 3) if f is Feature.NORMAL_VECTOR else n_post, np.nan) for f in feats}
    for bid, rows in tp.items():
        a = pre.subset(rows)
        qrows = tq.get(bid, np.empty(0, dtype=np.int64))
        b = post.subset(qrows)
        fa, fb = tile_features(a, b, bid, radius, feats)
        for f in feats:
            cols_pre[f][rows] = fa[f]
            if fb is not None:
                cols_post[f][qrows] = fb[f]
    comments = _ply_comments(cfg, "features", dataset)
    comments["radius_m"] = repr(radius)
    write_ply(ws.features(dataset, "pre"), pre.with_attributes(FeatureTable(radius, cols_pre).to_attributes()), comments)
    write_ply(ws.features(dataset, "post"), post.with_attributes(FeatureTable(radius, cols_post).to_attributes()), comments)


def _load_features(ws, dataset, epoch):
    cloud, comments = read_ply(_require(ws.features(dataset, epoch), "features"))
    radius = float(comments["radius_m"])
    return cloud, FeatureTable.from_attributes(cloud.attributes, radius), radius


def stage_change(cfg: PipelineConfig, ws: Workspace, dataset="train", jobs=1) -> None:
    pre, fpre, radius = _load_features(ws, dataset, "pre")
    post, fpost, _ = _load_features(ws, dataset, "post")
    tp, tq = _tiles(pre), _tiles(post)
    parts = []
    for bid, rows in tp.items():
        a = pre.subset(rows)
        if len(building_rows(a, bid)) == 0:
            continue
        qrows = tq.get(bid, np.empty(0, dtype=np.int64))
        b = post.subset(qrows)
        fa = FeatureTable(radius, {f: v[rows] for f, v in fpre.values.items()})
        fb = FeatureTable(radius, {f: v[qrows] for f, v in fpost.values.items()})
        ch = tile_change(a, fa, b, fb, bid, column_radius(cfg))
        anchors = a.subset(building_rows(a, bid))
        eps = np.full(len(anchors), tile_noise_floor(a, b, cfg.clustering))
        parts.append(PointCloud(anchors.xyz, {"tile": anchors.attributes["tile"], NOISE_FLOOR: eps,
                                              **ch.to_attributes()},
                                anchors.building_id, anchors.grade, Epoch.PRE))
    cloud = PointCloud.concatenate(parts, epoch=Epoch.PRE)
    comments = _ply_comments(cfg, "change", dataset)
    comments["radius_m"] = repr(radius)
    write_ply(ws.change(dataset), cloud, comments)


def stage_cluster(cfg: PipelineConfig, ws: Workspace, dataset="train", jobs=1) -> None:
    selected, _ = resolve_selection(cfg, ws)
    cloud, comments = read_ply(_require(ws.change(dataset), "change"))
    radius = float(comments["radius_m"])
    table = ChangeTable.from_attributes(cloud.attributes, radius)
    truth = _truth(ws, dataset)
    labels = np.zeros(len(cloud), dtype=np.int64)
    share = np.zeros(len(cloud))
    buildings = []
    seen = set()
    for bid, rows in sorted(_tiles(cloud).items()):
        seen.add(bid)
        eps = cloud.attributes[NOISE_FLOOR][rows[0]] if NOISE_FLOOR in cloud.attributes else None
        res, vec = tile_vector(table.rows(rows), bid, selected, cfg.clustering, truth.get(bid), eps)
        labels[rows] = res.labels
        share[rows] = res.damaged_share
        buildings.append(_vector_entry(bid, truth.get(bid), vec, res.damaged_share, eps))
    for bid in sorted(set(truth) - seen):
        buildings.append(_vector_entry(bid, truth[bid], None, 0.0))
    buildings.sort(key=lambda e: e["building_id"])
    write_ply(ws.clusters(dataset), cloud.with_attributes({"changed": labels.astype(np.float64), "damaged_share": share}),
              _ply_comments(cfg, "cluster", dataset))
    _write_json(ws.vectors(dataset), {
        "provenance": provenance(cfg, "cluster", dataset=dataset),
        "feature_names": feature_names(selected),
        "buildings": buildings,
    })


def _vector_entry(bid, grade, vec, share, noise_floor=None):
    out = {
        "building_id": int(bid),
        "grade": None if grade is None else DamageGrade(grade).label,
        "bypass": vec is None,
        "damaged_share": float(share),
        "values": None if vec is None else [float(v) for v in vec.values],
    }
    if noise_floor is not None:
        # recorded for inspection only; alignment quality never gates a building
        out[NOISE_FLOOR] = float(noise_floor)
    return out


def _source_pair(cfg: PipelineConfig, pre: Scene, post: Scene, ids, source_b: bool):
    scanner = cfg.scanner.build()
    seed_pre, seed_post, spacing = cfg.simulation.seed_pre, cfg.simulation.seed_post, cfg.sampling.spacing_m
    if source_b:
        sb = cfg.robustness.source_b
        data = scanner.to_dict()
        data["range_noise_sigma_m"] = sb.range_noise_sigma_m
        scanner = ScannerConfig(**data)
        seed_pre += sb.seed_offset
        seed_post += sb.seed_offset
        spacing = sb.spacing_m or spacing
    strips = plan_strips(post.extent, scanner)
    a = [scan_tile(pre, strips, scanner, seed_pre, i, spacing, cfg.sampling.seed, Epoch.PRE) for i in ids]
    b = [scan_tile(post, strips, scanner, seed_post, i, spacing, cfg.sampling.seed, Epoch.POST) for i in ids]
    pa = PointCloud.concatenate(a, epoch=Epoch.PRE)
    pb = PointCloud.concatenate(b, epoch=Epoch.POST)
    return (pa, pb), np.flatnonzero(pa.building_id > 0)


def robust_select(cfg: PipelineConfig, pre: Scene, post: Scene) -> RobustnessReport:
    """Feature robustness between two simulated sources of the same scene pair.

    Source A uses the configured scanner; source B re-scans the same
    buildings with its own noise, sampling seed offset and spacing.
    """
    ids = sorted(b.id for b in post.buildings)[: cfg.robustness.n_buildings]
    pair_a, anchors_a = _source_pair(cfg, pre, post, ids, False)
    pair_b, anchors_b = _source_pair(cfg, pre, post, ids, True)
    report = relative_change_difference(pair_a, pair_b, cfg.robustness.radii_m, ALL_FEATURES, anchors_a, anchors_b,
                                        source_label="simulated-a-vs-b")
    select_robust_features(report, cfg.robustness.threshold_percent)
    return report


def stage_robust_select(cfg: PipelineConfig, ws: Workspace, dataset="train", jobs=1) -> RobustnessReport:
    pre = read_scene(_require(ws.scene_dir("train", "pre"), "simulate"))
    post = read_scene(_require(ws.scene_dir("train", "post"), "simulate"))
    report = robust_select(cfg, pre, post)
    payload = report.to_json()
    payload["provenance"] = provenance(cfg, "robust-select")
    _write_json(ws.robustness, payload)
    return report


def _load_vectors(ws, dataset):
    data = _read_json(ws.vectors(dataset), "cluster")
    return data["feature_names"], data["buildings"]


def stage_train(cfg: PipelineConfig, ws: Workspace, dataset="train", jobs=1, training_config=None):
    names, buildings = _load_vectors(ws, "train")
    tc = TrainingConfig(training_config or cfg.training_config)
    labels = [b["grade"] for b in buildings]
    train_idx, test_idx = split_train_test(labels, cfg.split.ratio, cfg.split.seed)
    X, y = _training_matrix([buildings[i] for i in train_idx])
    model = train_forest(X, y, cfg.forest.n_trees, cfg.forest.max_depth, cfg.forest.seed, names, tc)
    model.metadata = provenance(cfg, "train", n_train=len(y))
    _log_split_accuracy(model, [buildings[i] for i in test_idx])
    save_model(model, ws.model)
    _write_json(ws.split, {
        "provenance": provenance(cfg, "train"),
        "train": [buildings[i]["building_id"] for i in train_idx],
        "test": [buildings[i]["building_id"] for i in test_idx],
    })
    return model


def _log_split_accuracy(model, test_rows) -> Optional[float]:
    """Accuracy on the held-out split; logged only, never used as a gate."""
    if not test_rows:
        return None
    preds = classify_vectors(model, test_rows)
    acc = 100.0 * float(np.mean([p["grade"] == p["truth"] for p in preds]))
    logger.info("test-split accuracy %.1f%% on %d buildings", acc, len(preds))
    return acc


def _training_matrix(buildings):
    rows = [b for b in buildings if not b["bypass"]]
    if not rows:
        raise EmptyClass("no training building has changed points")
    X = np.array([b["values"] for b in rows], dtype=np.float64)
    y = [b["grade"] for b in rows]
    return X, y


def classify_vectors(model, buildings) -> List[dict]:
    """Predictions for vector entries; bypassed buildings are graded undamaged."""
    out = []
    active = [b for b in buildings if not b["bypass"]]
    grades, proba = (model.predict(np.array([b["values"] for b in active])) if active else ([], None))
    by_id = {}
    for k, b in enumerate(active):
        by_id[b["building_id"]] = (grades[k], proba[k])
    for b in buildings:
        if b["bypass"]:
            g, p = DamageGrade.NO_DAMAGE, np.eye(len(DamageGrade))[0]
        else:
            g, p = by_id[b["building_id"]]
        out.append({
            "building_id": b["building_id"],
            "grade": g.label,
            "probabilities": {k.label: float(v) for k, v in zip(DamageGrade, p)},
            "bypass": b["bypass"],
            "truth": b["grade"],
        })
    return out


def stage_classify(cfg: PipelineConfig, ws: Workspace, dataset=None, jobs=1):
    model = load_model(_require(ws.model, "train"))
    if dataset is None:
        dataset = "eval" if cfg.evaluation_scene.enabled else "train"
    _, buildings = _load_vectors(ws, dataset)
    if dataset == "train":
        test = set(_read_json(ws.split, "train")["test"])
        buildings = [b for b in buildings if b["building_id"] in test]
    preds = classify_vectors(model, buildings)
    _write_json(ws.predictions, {
        "provenance": provenance(cfg, "classify", dataset=dataset, training_config=model.training_config.value),
        "predictions": preds,
    })
    return preds


def stage_evaluate(cfg: PipelineConfig, ws: Workspace, dataset=None, jobs=1):
    data = _read_json(ws.predictions, "classify")
    preds = [p for p in data["predictions"] if p["truth"] is not None]
    cm = confusion_matrix([p["truth"] for p in preds], [p["grade"] for p in preds])
    name = data["provenance"].get("training_config", cfg.training_config.value)
    meta = provenance(cfg, "evaluate", dataset=data["provenance"].get("dataset"), n_buildings=len(preds),
                      clustering_space=CLUSTERING_SPACE)
    return emit_report({name: cm}, ws.report_dir, metadata=meta)


def _datasets(cfg):
    return ["train", "eval"] if cfg.evaluation_scene.enabled else ["train"]


def full_run(cfg: PipelineConfig, ws: Workspace, jobs=1):
    for ds in _datasets(cfg):
        stage_simulate(cfg, ws, ds, jobs)
    if cfg.features.radius_m is None or cfg.features.selected == "robust-select":
        stage_robust_select(cfg, ws, jobs=jobs)
    for ds in _datasets(cfg):
        stage_features(cfg, ws, ds, jobs)
        stage_change(cfg, ws, ds, jobs)
        stage_cluster(cfg, ws, ds, jobs)
    stage_train(cfg, ws, jobs=jobs)
    stage_classify(cfg, ws, jobs=jobs)
    return stage_evaluate(cfg, ws, jobs=jobs)


STAGE_FUNCS = {
    "simulate": stage_simulate,
    "features": stage_features,
    "change": stage_change,
    "cluster": stage_cluster,
    "robust-select": stage_robust_select,
    "train": stage_train,
    "classify": stage_classify,
    "evaluate": stage_evaluate,
}


# --- in-memory experiment ------------------------------------------------------------------


@dataclass
class DatasetResult:
    vectors: List[dict]
    feature_names: List[str]
    seconds: float


def process_dataset(cfg: PipelineConfig, dataset: str, jobs: int = 1, selected=None, radius=None) -> DatasetResult:
    """Simulate and vectorise every building of one dataset without writing files."""
    t = time.perf_counter()
    if selected is None or radius is None:
        s, r = resolve_selection(cfg)
        selected = selected or s
        radius = radius or r
    pre, post = build_scenes(cfg, dataset)
    ctx = _scan_context(cfg, pre, post)
    ctx.update({
        "truth": post.labels(),
        "radius": float(radius),
        "feats": feature_set(selected),
        "selected": list(parse_features(selected)),
        "column_radius": column_radius(cfg),
        "clustering": cfg.clustering,
    })
    ids = sorted(b.id for b in post.buildings)
    out = _parallel_map(_process_task, ids, jobs, ctx)
    truth = post.labels()
    vectors = []
    for bid, vec, share, _ in out:
        vectors.append(_vector_entry(bid, truth[bid], vec, share or 0.0))
    return DatasetResult(vectors, feature_names(selected), time.perf_counter() - t)


def run_experiment(cfg: PipelineConfig, jobs: int = 1, selected=None, radius=None) -> dict:
    """Train on the training scene, evaluate on the evaluation scene (if enabled)
    or on the held-out split; returns vectors, model, predictions and metrics."""
    needs_report = radius is None and cfg.features.radius_m is None
    needs_report |= selected is None and cfg.features.selected == "robust-select"
    if needs_report:
        report = robust_select(cfg, *build_scenes(cfg, "train"))
        radius = radius or cfg.features.radius_m or report.selected_radius
        if selected is None:
            selected = (cfg.features.selected if cfg.features.selected != "robust-select"
                        else [f.value for f in report.selected_features])
    train = process_dataset(cfg, "train", jobs, selected, radius)
    labels = [b["grade"] for b in train.vectors]
    train_idx, test_idx = split_train_test(labels, cfg.split.ratio, cfg.split.seed)
    fit_rows = [train.vectors[i] for i in train_idx]
    test_rows = [train.vectors[i] for i in test_idx]
    if cfg.evaluation_scene.enabled:
        evaluation = process_dataset(cfg, "eval", jobs, selected, radius)
        eval_rows = evaluation.vectors
    else:
        evaluation = None
        eval_rows = test_rows
    X, y = _training_matrix(fit_rows)
    model = train_forest(X, y, cfg.forest.n_trees, cfg.forest.max_depth, cfg.forest.seed, train.feature_names,
                         cfg.training_config)
    _log_split_accuracy(model, test_rows)
    preds = classify_vectors(model, eval_rows)
    cm = confusion_matrix([p["truth"] for p in preds], [p["grade"] for p in preds])
    return {
        "train": train,
        "eval": evaluation,
        "model": model,
        "predictions": preds,
        "confusion": cm,
    }
