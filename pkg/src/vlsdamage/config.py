"""Pipeline configuration: YAML file, schema validation and resolved defaults.

Every number that controls the experiment lives here, with its default
documented next to the field.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .classifier import TrainingConfig
from .errors import ConfigError, InvalidDamageParams, InvalidOverlap, UnknownFeature
from .features import DEFAULT_ROBUST_FEATURES, parse_features
from .robustness import DEFAULT_RADII
from .simulator.damage import DamageParams
from .simulator.scanner import ScannerConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScannerSection(_Strict):
    scan_rate_hz: float = Field(89.0, gt=0)
    pulse_rate_hz: float = Field(300_000.0, gt=0)
    strip_overlap_percent: float = Field(60.0, ge=0, le=95)
    fov_deg: float = Field(120.0, gt=0, lt=180)
    altitude_m: float = Field(100.0, gt=0)
    speed_mps: float = Field(8.0, gt=0)
    range_noise_sigma_m: float = Field(0.02, ge=0)

    def build(self) -> ScannerConfig:
        return ScannerConfig(**self.model_dump())


class DamageSection(_Strict):
    hole_count: Tuple[int, int] = (12, 30)
    hole_size_m: Tuple[float, float] = (0.5, 2.5)
    roof_hole_share: float = 0.5
    removed_fraction: Tuple[float, float] = (0.2, 0.6)
    debris_count: Tuple[int, int] = (3, 8)
    debris_size_m: Tuple[float, float] = (1.0, 3.0)
    debris_height_m: Tuple[float, float] = (0.3, 1.2)
    rubble_height_fraction: Tuple[float, float] = (0.15, 0.3)
    rubble_margin_m: float = 1.0
    rubble_cell_m: float = 0.5

    @model_validator(mode="after")
    def _check(self):
        try:
            self.build()
        except InvalidDamageParams as exc:
            raise ValueError(str(exc)) from exc
        return self

    def build(self) -> DamageParams:
        return DamageParams(**self.model_dump())


class SceneSection(_Strict):
    preset: Literal["generic", "region-specific"] = "generic"
    base_models: int = Field(28, ge=1)
    per_grade_count: int = Field(112, ge=1)
    seed: int = 0
    pad_margin_m: float = Field(2.0, ge=0)
    mesh_max_edge_m: float = Field(4.0, gt=0)


class EvalSceneSection(SceneSection):
    enabled: bool = False
    preset: Literal["generic", "region-specific"] = "region-specific"
    per_grade_count: int = Field(28, ge=1)
    seed: int = 1000


class SimulationSection(_Strict):
    seed_pre: int = 1
    seed_post: int = 2


class SamplingSection(_Strict):
    spacing_m: float = Field(0.1, gt=0)
    seed: int = 0


class FeatureSection(_Strict):
    radius_m: Optional[float] = Field(None, gt=0)
    selected: Union[Literal["robust-select"], List[str]] = Field(
        default_factory=lambda: [f.value for f in DEFAULT_ROBUST_FEATURES]
    )
    column_radius_factor: Optional[float] = Field(1.0, gt=0)

    @field_validator("selected")
    @classmethod
    def _known(cls, v):
        if isinstance(v, list):
            try:
                parse_features(v)
            except UnknownFeature as exc:
                raise ValueError(str(exc)) from exc
        return v


class SourceSection(_Strict):
    """Second point-cloud source for robust feature selection."""

    range_noise_sigma_m: float = Field(0.05, ge=0)
    spacing_m: Optional[float] = Field(None, gt=0)
    seed_offset: int = 10


class RobustnessSection(_Strict):
    radii_m: List[float] = Field(default_factory=lambda: list(DEFAULT_RADII))
    threshold_percent: float = Field(10.0, gt=0)
    n_buildings: int = Field(8, ge=1)
    source_b: SourceSection = Field(default_factory=SourceSection)

    @field_validator("radii_m")
    @classmethod
    def _positive(cls, v):
        if not v or any(r <= 0 for r in v):
            raise ValueError("radii must be a non-empty list of positive values")
        return v


class ClusteringSection(_Strict):
    """``epsilon_noise`` is (curvature, height in m). Left unset, the height
    value is ``noise_factor`` times the alignment quality measured on each
    tile's ground, and ``fallback_epsilon`` fills whatever cannot be measured."""

    seed: int = 0
    epsilon_noise: Optional[Tuple[float, float]] = None
    noise_factor: float = Field(3.0, gt=0)
    fallback_epsilon: Tuple[float, float] = (0.05, 0.05)
    max_iter: int = Field(100, ge=1)


class ForestSection(_Strict):
    n_trees: int = Field(100, ge=1)
    max_depth: int = Field(5, ge=1)
    seed: int = 0


class SplitSection(_Strict):
    ratio: float = Field(0.7, ge=0, le=1)
    seed: int = 0


class PathsSection(_Strict):
    out_dir: str = "runs/default"


class PipelineConfig(_Strict):
    scanner: ScannerSection = Field(default_factory=ScannerSection)
    damage: DamageSection = Field(default_factory=DamageSection)
    scene: SceneSection = Field(default_factory=SceneSection)
    evaluation_scene: EvalSceneSection = Field(default_factory=EvalSceneSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    sampling: SamplingSection = Field(default_factory=SamplingSection)
    features: FeatureSection = Field(default_factory=FeatureSection)
    robustness: RobustnessSection = Field(default_factory=RobustnessSection)
    clustering: ClusteringSection = Field(default_factory=ClusteringSection)
    forest: ForestSection = Field(default_factory=ForestSection)
    split: SplitSection = Field(default_factory=SplitSection)
    training_config: TrainingConfig = TrainingConfig.VLS_GENERIC
    paths: PathsSection = Field(default_factory=PathsSection)

    def resolved(self) -> dict:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        """SHA-256 over everything that affects results (paths excluded)."""
        data = self.resolved()
        data.pop("paths", None)
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def seeds(self) -> dict:
        return {
            "scene": self.scene.seed,
            "evaluation_scene": self.evaluation_scene.seed,
            "simulation_pre": self.simulation.seed_pre,
            "simulation_post": self.simulation.seed_post,
            "sampling": self.sampling.seed,
            "clustering": self.clustering.seed,
            "forest": self.forest.seed,
            "split": self.split.seed,
        }

    def with_seed_override(self, seed: int) -> "PipelineConfig":
        """Derive every named seed from one value."""
        data = self.resolved()
        data["scene"]["seed"] = seed
        data["evaluation_scene"]["seed"] = seed + 1000
        data["simulation"] = {"seed_pre": seed + 1, "seed_post": seed + 2}
        data["sampling"]["seed"] = seed
        data["clustering"]["seed"] = seed
        data["forest"]["seed"] = seed
        data["split"]["seed"] = seed
        return PipelineConfig.model_validate(data)

    def with_out_dir(self, out_dir) -> "PipelineConfig":
        data = self.resolved()
        data["paths"]["out_dir"] = str(out_dir)
        return PipelineConfig.model_validate(data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.resolved(), sort_keys=False)


def _field_path(err) -> str:
    return ".".join(str(p) for p in err["loc"]) or "<root>"


def config_from_dict(data: Optional[dict]) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data or {})
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(_field_path(first), first["msg"]) from None
    except (InvalidOverlap, InvalidDamageParams) as exc:
        raise ConfigError("<root>", str(exc)) from None


SHIPPED_CONFIGS = Path(__file__).with_name("configs")


def shipped_config(name: str) -> Path:
    return SHIPPED_CONFIGS / f"{name}.yaml"


def load_config(path=None) -> PipelineConfig:
    """Read and validate a YAML config; ``None`` gives all defaults.

    A bare name such as ``demo`` that is not an existing file refers to one
    of the configs shipped with the package.
    """
    if path is None:
        return config_from_dict({})
    path = Path(path)
    if not path.exists() and path.suffix == "" and shipped_config(path.name).exists():
        path = shipped_config(path.name)
    if not path.exists():
        raise ConfigError("--config", f"file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    return config_from_dict(data)
