"""Procedural base models, scene augmentation and scene manifests."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..classifier import DamageGrade
from ..errors import ParseError
from .damage import DamageParams, apply_damage
from .mesh import Block, TriangleMesh, building_mesh, plane_mesh, read_obj, write_obj

logger = logging.getLogger(__name__)

STORY_M = 3.0
ROOFS = ("flat", "gable", "hip")


@dataclass
class BaseModel:
    id: int
    blocks: List[Block]
    kind: str = ""

    def mesh(self, max_edge: float = 4.0) -> TriangleMesh:
        return building_mesh(self.blocks, max_edge)


@dataclass
class SceneBuilding:
    id: int
    mesh: TriangleMesh
    grade: DamageGrade
    base_model_id: int
    pad: Optional[Tuple[float, float, float, float]] = None  # ground patch (x0, y0, x1, y1)


@dataclass
class Scene:
    """Buildings plus ground.

    ``ground`` is ``"pads"`` (one ground patch per building), ``"plane"``
    (a single plane over ``extent``) or ``"none"``.
    """

    buildings: List[SceneBuilding] = field(default_factory=list)
    extent: Optional[Tuple[float, float, float, float]] = None
    ground: str = "pads"

    def __post_init__(self):
        ids = [b.id for b in self.buildings]
        if len(set(ids)) != len(ids):
            raise ValueError("building ids must be unique")
        if any(i <= 0 for i in ids):
            raise ValueError("building ids must be positive; 0 is reserved for ground")
        if self.extent is None and self.buildings:
            self.extent = self.computed_extent()

    def __len__(self):
        return len(self.buildings)

    def computed_extent(self):
        boxes = []
        for b in self.buildings:
            lo, hi = b.mesh.bounds()
            boxes.append((lo[0], lo[1], hi[0], hi[1]))
            if b.pad is not None:
                boxes.append(b.pad)
        a = np.array(boxes, dtype=np.float64)
        return (float(a[:, 0].min()), float(a[:, 1].min()), float(a[:, 2].max()), float(a[:, 3].max()))

    def by_id(self, building_id: int) -> SceneBuilding:
        for b in self.buildings:
            if b.id == building_id:
                return b
        raise KeyError(building_id)

    def ground_meshes(self) -> List[Tuple[int, TriangleMesh]]:
        """``(owner_building_id, mesh)`` per ground patch; owner 0 for a shared plane."""
        if self.ground == "plane" and self.extent is not None:
            return [(0, plane_mesh(*self.extent))]
        if self.ground == "pads":
            return [(b.id, plane_mesh(*b.pad)) for b in self.buildings if b.pad is not None]
        return []

    def labels(self):
        return {b.id: int(b.grade) for b in self.buildings}


# --- base models ---------------------------------------------------------------

PRESETS = {
    # dense to loose layouts, any orientation, wide range of building types
    "generic": dict(footprint=(6.0, 14.0), stories=(1, 4), roofs=ROOFS, wing_prob=0.5, yaw="any", gap=(0.5, 6.0)),
    # compact masonry blocks on an aligned, dense grid
    "region-specific": dict(footprint=(7.0, 12.0), stories=(2, 4), roofs=("hip", "gable", "hip", "flat"),
                            wing_prob=0.3, yaw="grid", gap=(0.5, 2.0)),
}


def _preset(name):
    if name not in PRESETS:
        raise ValueError(f"unknown scene preset {name!r}; expected one of {sorted(PRESETS)}")
    return PRESETS[name]


def make_base_models(count: int = 28, preset: str = "generic", seed: int = 0) -> List[BaseModel]:
    """Procedural base buildings: boxes with flat/gable/hip roofs and L/T-shaped wings."""
    cfg = _preset(preset)
    rng = np.random.default_rng(seed)
    models = []
    for i in range(count):
        lx, ly = rng.uniform(*cfg["footprint"], size=2)
        h = STORY_M * int(rng.integers(cfg["stories"][0], cfg["stories"][1] + 1))
        roof = str(cfg["roofs"][int(rng.integers(len(cfg["roofs"])))])
        rh = 0.0 if roof == "flat" else float(rng.uniform(1.5, 3.5))
        blocks = [Block(-lx / 2, -ly / 2, lx / 2, ly / 2, h, roof, rh)]
        kind = "box"
        if rng.random() < cfg["wing_prob"]:
            blocks.append(_wing(rng, blocks[0], cfg))
            kind = "L" if rng.random() < 0.5 else "T"
            if kind == "T":
                blocks.append(_wing(rng, blocks[0], cfg, side=_opposite(blocks[1], blocks[0])))
        models.append(BaseModel(i, blocks, kind))
    return models


def _opposite(wing, main):
    if wing.x0 >= main.x1 - 1e-9:
        return 2
    if wing.x1 <= main.x0 + 1e-9:
        return 0
    if wing.y0 >= main.y1 - 1e-9:
        return 3
    return 1


def _wing(rng, main: Block, cfg, side=None) -> Block:
    """A lower or equal wing attached flush to one side of ``main``."""
    side = int(rng.integers(4)) if side is None else side
    depth = float(rng.uniform(3.0, 6.0))
    h = max(STORY_M, main.height - STORY_M * int(rng.integers(0, 2)))
    roof = "flat" if rng.random() < 0.5 else "gable"
    rh = 0.0 if roof == "flat" else float(rng.uniform(1.0, 2.5))
    if side in (0, 2):  # -x / +x
        span = main.y1 - main.y0
        w = float(rng.uniform(0.4, 0.8)) * span
        y0 = main.y0 + float(rng.uniform(0, span - w))
        x0, x1 = (main.x0 - depth, main.x0) if side == 0 else (main.x1, main.x1 + depth)
        return Block(x0, y0, x1, y0 + w, h, roof, rh)
    span = main.x1 - main.x0
    w = float(rng.uniform(0.4, 0.8)) * span
    x0 = main.x0 + float(rng.uniform(0, span - w))
    y0, y1 = (main.y0 - depth, main.y0) if side == 1 else (main.y1, main.y1 + depth)
    return Block(x0, y0, x0 + w, y1, h, roof, rh)


def _scale_block(b: Block, s) -> Block:
    return Block(b.x0 * s[0], b.y0 * s[1], b.x1 * s[0], b.y1 * s[1], b.height * s[2], b.roof, b.roof_height * s[2])


def modify_parts(rng, blocks: Sequence[Block], cfg) -> List[Block]:
    """Random part modification: roof swap, story change, wing added or removed."""
    blocks = list(blocks)
    op = rng.choice(["none", "roof", "story", "add_wing", "drop_wing"])
    if op == "roof":
        k = int(rng.integers(len(blocks)))
        roof = str(rng.choice(ROOFS))
        rh = 0.0 if roof == "flat" else float(rng.uniform(1.5, 3.0))
        blocks[k] = replace(blocks[k], roof=roof, roof_height=rh)
    elif op == "story":
        k = int(rng.integers(len(blocks)))
        dh = STORY_M * (1 if rng.random() < 0.5 else -1)
        blocks[k] = replace(blocks[k], height=max(STORY_M, blocks[k].height + dh))
    elif op == "add_wing" and len(blocks) < 3:
        blocks.append(_wing(rng, blocks[0], cfg))
    elif op == "drop_wing" and len(blocks) > 1:
        blocks.pop(int(rng.integers(1, len(blocks))))
    return blocks


def _yaw(rng, mode):
    if mode == "any":
        return float(rng.uniform(0.0, 360.0))
    return 90.0 * int(rng.integers(4)) + float(rng.uniform(-5.0, 5.0))


def augment_buildings(
    base_models: Sequence[BaseModel],
    per_grade_count: int = 112,
    seed: int = 0,
    damage_params: Optional[dict] = None,
    preset: str = "generic",
    pad_margin: float = 2.0,
    max_edge: float = 4.0,
) -> Tuple[Scene, Scene]:
    """Augmented pre/post scene pair with ``per_grade_count`` buildings per grade.

    Variant ``i`` is derived from base model ``i mod len(base_models)`` by a
    random per-axis scale in [0.8, 1.3] and a part modification; it is then
    instantiated once per grade on its own plot. ``damage_params`` maps grade
    labels to :class:`DamageParams` (or dicts); missing grades use defaults.
    """
    if not base_models:
        raise ValueError("need at least one base model")
    cfg = _preset(preset)
    rng = np.random.default_rng(seed)
    params = {g: _params_for(damage_params, g) for g in DamageGrade}

    items = []
    for i in range(per_grade_count):
        base = base_models[i % len(base_models)]
        s = rng.uniform(0.8, 1.3, size=3)
        blocks = modify_parts(rng, [_scale_block(b, s) for b in base.blocks], cfg)
        intact = building_mesh(blocks, max_edge)
        for g in DamageGrade:
            dseed = int(rng.integers(2**31))
            yaw = _yaw(rng, cfg["yaw"])
            post = apply_damage(intact, g, params[g], seed=dseed)
            items.append((base.id, g, intact.transformed(yaw_deg=yaw), post.transformed(yaw_deg=yaw)))

    order = rng.permutation(len(items))
    items = [items[k] for k in order]
    offsets, pads = _layout(rng, items, cfg, pad_margin)
    pre, post = [], []
    for bid, ((base_id, g, m_pre, m_post), off, pad) in enumerate(zip(items, offsets, pads), start=1):
        shift = (off[0], off[1], 0.0)
        pre.append(SceneBuilding(bid, m_pre.transformed(offset=shift), DamageGrade.NO_DAMAGE, base_id, pad))
        post.append(SceneBuilding(bid, m_post.transformed(offset=shift), g, base_id, pad))
    return Scene(pre), Scene(post)


def _params_for(damage_params, grade):
    if not damage_params:
        return DamageParams()
    p = damage_params.get(grade.label, damage_params.get(grade, None))
    if p is None:
        return DamageParams()
    return p if isinstance(p, DamageParams) else DamageParams.from_dict(dict(p))


def _layout(rng, items, cfg, margin):
    """Row-wise plots; pads never overlap because plots are disjoint."""
    n = len(items)
    per_row = max(1, int(np.ceil(np.sqrt(n))))
    offsets, pads = [], []
    x = y = 0.0
    row_depth = 0.0
    for k, (_, _, a, b) in enumerate(items):
        if k and k % per_row == 0:
            x = 0.0
            y += row_depth + float(rng.uniform(*cfg["gap"]))
            row_depth = 0.0
        lo = np.minimum(a.bounds()[0], b.bounds()[0])[:2] - margin
        hi = np.maximum(a.bounds()[1], b.bounds()[1])[:2] + margin
        w, d = hi - lo
        off = np.array([x, y]) - lo
        offsets.append(off)
        pads.append((float(x), float(y), float(x + w), float(y + d)))
        x += w + float(rng.uniform(*cfg["gap"]))
        row_depth = max(row_depth, d)
    return offsets, pads


# --- manifest I/O -------------------------------------------------------------


def write_scene(scene: Scene, directory) -> Path:
    """One OBJ per building plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    for b in scene.buildings:
        name = f"building_{b.id:05d}.obj"
        write_obj(directory / name, b.mesh)
        entry = {"id": b.id, "file": name, "grade": DamageGrade(b.grade).label, "base_model_id": b.base_model_id}
        if b.pad is not None:
            entry["pad"] = list(b.pad)
        manifest.append(entry)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    if scene.extent is not None or scene.ground != "pads":
        (directory / "scene.json").write_text(json.dumps({"extent": scene.extent, "ground": scene.ground}) + "\n")
    return path


def read_scene(directory) -> Scene:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
        buildings = [
            SceneBuilding(
                int(e["id"]),
                read_obj(directory / e["file"]),
                DamageGrade.parse(e["grade"]),
                int(e.get("base_model_id", -1)),
                tuple(e["pad"]) if e.get("pad") is not None else None,
            )
            for e in manifest
        ]
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"bad scene manifest in {directory}: {exc}") from exc
    meta = {}
    if (directory / "scene.json").exists():
        meta = json.loads((directory / "scene.json").read_text())
    extent = tuple(meta["extent"]) if meta.get("extent") else None
    return Scene(buildings, extent=extent, ground=meta.get("ground", "pads"))
