"""Experiment configuration records.

The whole experiment is described by one `ExperimentConfig` document (JSON on
disk). Every field has a desk-scale default; unknown keys are rejected.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from moad_fusion.models.common import SCHEMA_BASE, CorruptionKind, Route, TargetModality
from moad_fusion.models.scene import CorruptionSpec


class WorldConfig(BaseModel):
    """Extent, object population and class catalogue of the synthetic world."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    x_min: float = Field(default=-16.0, description="World x lower bound (m)")
    x_max: float = Field(default=16.0, description="World x upper bound (m)")
    y_min: float = Field(default=-16.0, description="World y lower bound (m)")
    y_max: float = Field(default=16.0, description="World y upper bound (m)")
    class_names: List[str] = Field(
        default_factory=lambda: ["car", "pedestrian", "cyclist"],
        min_length=2,
        description="Class catalogue; its length is C",
    )
    class_sizes: List[Tuple[float, float]] = Field(
        default_factory=lambda: [(1.9, 4.5), (0.7, 0.7), (0.8, 1.8)],
        description="Mean (w, l) per class in meters",
    )
    size_jitter: float = Field(
        default=0.1, ge=0, lt=1, description="Relative uniform jitter applied to class sizes"
    )
    min_objects: int = Field(default=1, ge=0)
    max_objects: int = Field(default=8, ge=0)
    min_separation: float = Field(
        default=3.0, ge=0, description="Minimum distance between box centers (m)"
    )
    border_margin: float = Field(
        default=1.0, ge=0, description="Box centers keep this distance from the extent border (m)"
    )
    max_retries: int = Field(default=200, ge=1, description="Placement attempts per object")

    @model_validator(mode="after")
    def _check_world(self) -> "WorldConfig":
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("world extent must be positive")
        if self.min_objects > self.max_objects:
            raise ValueError("min_objects must not exceed max_objects")
        if len(self.class_sizes) != len(self.class_names):
            raise ValueError("class_sizes must have one entry per class")
        if any(w <= 0 or l <= 0 for w, l in self.class_sizes):
            raise ValueError("class sizes must be positive")
        margin_x = (self.x_max - self.x_min) / 2
        margin_y = (self.y_max - self.y_min) / 2
        if self.border_margin >= min(margin_x, margin_y):
            raise ValueError("border_margin leaves no room to place objects")
        return self

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def extent(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)


class SensorConfig(BaseModel):
    """Rendering parameters for one synthetic sensor view."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    grid_h: int = Field(default=16, ge=1, description="Rows per view")
    grid_w: int = Field(default=16, ge=1, description="Columns per view")
    num_views: int = Field(
        default=1, ge=1, description="Pseudo-cameras (N_C); each covers an x-strip of the world"
    )
    blob_sigma: float = Field(default=1.0, gt=0, description="Gaussian footprint sigma in cells")
    noise_floor: float = Field(
        default=0.05, ge=0, description="Background clutter is uniform in [0, noise_floor)"
    )
    class_confusion: float = Field(
        default=0.0,
        ge=0,
        le=1,
        description="Label-smoothing rate of the class channels (0 = one-hot)",
    )
    jitter_sigma: float = Field(
        default=0.0, ge=0, description="Per-object positional jitter sigma in cells"
    )
    size_noise: float = Field(
        default=0.0, ge=0, description="Std of the multiplicative noise on rendered sizes"
    )
    occlusion_fraction: float = Field(
        default=0.0, ge=0, le=1, description="Fraction of columns hidden by the occlusion band"
    )
    seed: int = Field(default=0, ge=0, description="Render stream seed, combined with scene seed")


def _geo_sensor() -> SensorConfig:
    return SensorConfig(class_confusion=0.8, noise_floor=0.05)


def _sem_sensor() -> SensorConfig:
    return SensorConfig(
        class_confusion=0.0,
        jitter_sigma=0.75,
        size_noise=0.25,
        occlusion_fraction=0.125,
        noise_floor=0.05,
        seed=1,
    )


class ModelConfig(BaseModel):
    """Desk-scale dimensions of tokenizers, shared decoder and heads."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    num_queries: int = Field(default=30, ge=1, description="N")
    hidden_dim: int = Field(default=64, ge=4, description="D")
    num_heads: int = Field(default=4, ge=1)
    num_layers: int = Field(default=6, ge=1, description="Shared decoder layers")
    ffn_dim: int = Field(default=128, ge=1)
    dropout: float = Field(default=0.0, ge=0, lt=1)
    pe_scale: float = Field(
        default=16.0, gt=0, description="Coordinates are divided by this before encoding (m)"
    )
    pe_temperature: float = Field(default=20.0, gt=1)
    offset_scale: float = Field(
        default=4.0, gt=0, description="Regressed center offsets are in units of this many meters"
    )
    cls_prior: float = Field(
        default=0.01, gt=0, lt=1, description="Initial foreground probability of the class head"
    )

    @model_validator(mode="after")
    def _check_dims(self) -> "ModelConfig":
        if self.hidden_dim % 4 != 0:
            raise ValueError("hidden_dim must be divisible by 4")
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError("hidden_dim must be divisible by num_heads")
        return self


class PmeConfig(BaseModel):
    """Proximity-based modality ensemble settings."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    num_heads: int = Field(default=1, ge=1)
    ffn_dim: int = Field(default=128, ge=1)
    proximity_bias: bool = Field(
        default=True, description="False trains the NME variant (no attention bias)"
    )
    alpha_init: float = Field(default=-1.0)
    beta_init: float = Field(default=0.0)
    identity_init: bool = Field(
        default=True, description="Start as identity over the LC branch"
    )


class LossWeights(BaseModel):
    """Weights of the per-branch loss and of the MOAD composite."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    w_reg: float = Field(default=2.0, ge=0)
    w_cls: float = Field(default=0.25, ge=0)
    w_LC: float = Field(default=1.0, ge=0)
    w_L: float = Field(default=1.0, ge=0)
    w_C: float = Field(default=1.0, ge=0)
    focal_gamma: float = Field(default=2.0, ge=0)
    focal_alpha: float = Field(default=0.25, ge=0, le=1)


class TrainConfig(BaseModel):
    """Two-stage training schedule."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    stage1_epochs: int = Field(default=20, ge=1)
    stage2_epochs: int = Field(default=6, ge=0)
    augment_fraction: float = Field(
        default=0.75, ge=0, le=1, description="Leading share of stage-1 epochs with GT pasting"
    )
    max_paste: int = Field(default=3, ge=0, description="Upper bound of pasted boxes per scene")
    batch_size: int = Field(default=16, ge=1)
    stage1_lr: float = Field(default=1e-4, gt=0)
    stage2_lr: float = Field(default=1e-4, gt=0)
    stage1_schedule: Literal["cyclic", "constant"] = "cyclic"
    stage2_schedule: Literal["cosine_warmup", "constant"] = "cosine_warmup"
    warmup_steps: int = Field(default=1000, ge=0)
    optimizer: Literal["adamw", "adam"] = Field(
        default="adamw", description="adamw decouples weight decay; adam adds it to the gradient"
    )
    weight_decay: float = Field(default=0.01, ge=0)
    grad_clip: Optional[float] = Field(default=35.0, gt=0)
    log_every: int = Field(default=50, ge=1)
    progress: bool = Field(default=False, description="Show tqdm progress bars")


class EvalConfig(BaseModel):
    """Center-distance evaluation settings."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    distance_thresholds: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0])
    tp_threshold: float = Field(
        default=2.0, gt=0, description="Threshold at which TP errors (mATE, mASE) are measured"
    )
    score_floor: float = Field(default=0.05, ge=0, le=1)
    batch_size: int = Field(default=32, ge=1)
    topk: int = Field(default=30, ge=1, description="k of the top-k ensemble baseline")
    nms_distance: float = Field(default=1.0, gt=0, description="NMS center-distance radius (m)")

    @field_validator("distance_thresholds")
    @classmethod
    def _strictly_increasing(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("at least one distance threshold is required")
        if any(b <= a for a, b in zip(v, v[1:])) or v[0] <= 0:
            raise ValueError("distance thresholds must be positive and strictly increasing")
        return v


class DataConfig(BaseModel):
    """Dataset size and split fractions."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    num_scenes: int = Field(default=2500, ge=1)
    splits: Dict[str, float] = Field(
        default_factory=lambda: {"train": 0.8, "val": 0.08, "eval": 0.12}
    )

    @field_validator("splits")
    @classmethod
    def _fractions(cls, v: Dict[str, float]) -> Dict[str, float]:
        if "train" not in v:
            raise ValueError("a 'train' split is required")
        if any(f < 0 for f in v.values()) or abs(sum(v.values()) - 1.0) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")
        return v

    def split_counts(self) -> Dict[str, int]:
        """Scene count per split; rounding remainder goes to train."""
        counts = {name: int(round(f * self.num_scenes)) for name, f in self.splits.items()}
        counts["train"] = self.num_scenes - sum(c for k, c in counts.items() if k != "train")
        return counts


class ScenarioConfig(BaseModel):
    """A named evaluation condition: corruptions plus the routes to evaluate."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    name: str
    corruptions: List[CorruptionSpec] = Field(default_factory=list)
    routes: List[Route] = Field(default_factory=lambda: [Route.LC, Route.SINGLE, Route.PME])
    per_scene_pool: bool = Field(
        default=False,
        description="Each scene draws exactly one corruption from `corruptions`",
    )


def _spec(kind: CorruptionKind, magnitude: float, target: TargetModality) -> CorruptionSpec:
    return CorruptionSpec(kind=kind, magnitude=magnitude, target_modality=target, seed=0)


def _default_scenarios() -> List[ScenarioConfig]:
    missing = CorruptionKind.MISSING_MODALITY
    noise = CorruptionKind.ADDITIVE_NOISE
    patch = CorruptionKind.OCCLUSION_PATCH
    return [
        ScenarioConfig(name="full", routes=[Route.LC, Route.PME]),
        ScenarioConfig(
            name="camera_only",
            corruptions=[_spec(missing, 0.0, TargetModality.GEO)],
            routes=[Route.SINGLE],
        ),
        ScenarioConfig(
            name="lidar_only",
            corruptions=[_spec(missing, 0.0, TargetModality.SEM)],
            routes=[Route.SINGLE],
        ),
        ScenarioConfig(name="sem_noise_0.2", corruptions=[_spec(noise, 0.2, TargetModality.SEM)]),
        ScenarioConfig(name="sem_noise_0.5", corruptions=[_spec(noise, 0.5, TargetModality.SEM)]),
        ScenarioConfig(name="geo_noise_0.2", corruptions=[_spec(noise, 0.2, TargetModality.GEO)]),
        ScenarioConfig(
            name="sem_occlusion_0.25", corruptions=[_spec(patch, 0.25, TargetModality.SEM)]
        ),
        ScenarioConfig(
            name="sem_occlusion_0.5", corruptions=[_spec(patch, 0.5, TargetModality.SEM)]
        ),
    ]


def _default_pool() -> List[CorruptionSpec]:
    return [
        _spec(CorruptionKind.ADDITIVE_NOISE, 0.3, TargetModality.SEM),
        _spec(CorruptionKind.OCCLUSION_PATCH, 0.4, TargetModality.SEM),
        _spec(CorruptionKind.ATTENUATION, 0.7, TargetModality.SEM),
        _spec(CorruptionKind.ADDITIVE_NOISE, 0.3, TargetModality.GEO),
        _spec(CorruptionKind.POSITION_JITTER, 1.0, TargetModality.GEO),
    ]


class RobustnessConfig(BaseModel):
    """Scenario grid for the robustness sweep and the corrupted-eval pool."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    scenarios: List[ScenarioConfig] = Field(default_factory=_default_scenarios)
    corrupted_pool: List[CorruptionSpec] = Field(default_factory=_default_pool)
    suite_seeds: List[int] = Field(
        default_factory=lambda: [0, 1, 2], description="Seeds for ablation / ensemble suites"
    )

    def corrupted_scenario(self) -> ScenarioConfig:
        return ScenarioConfig(
            name="corrupted",
            corruptions=list(self.corrupted_pool),
            routes=[Route.LC, Route.PME],
            per_scene_pool=True,
        )


class ExperimentConfig(BaseModel):
    """Root configuration document of an experiment."""

    model_config = ConfigDict(
        populate_by_name=True,
        extra="forbid",
        frozen=True,
        json_schema_extra={
            "$schema": "https://json-schema.org/draft/2020-12/schema",
            "$id": f"{SCHEMA_BASE}:experiment-config",
        },
    )

    seed: int = Field(default=0, ge=0, description="Root seed; every other seed derives from it")
    world: WorldConfig = Field(default_factory=WorldConfig)
    geo_sensor: SensorConfig = Field(default_factory=_geo_sensor)
    sem_sensor: SensorConfig = Field(default_factory=_sem_sensor)
    model: ModelConfig = Field(default_factory=ModelConfig)
    pme: PmeConfig = Field(default_factory=PmeConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    robustness: RobustnessConfig = Field(default_factory=RobustnessConfig)

    @model_validator(mode="after")
    def _check_geo_views(self) -> "ExperimentConfig":
        if self.geo_sensor.num_views != 1:
            raise ValueError("the GEO sensor renders a single BEV view")
        return self

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)


def derive_seed(root: int, *labels: Union[int, str]) -> int:
    """Fan a root seed out into an independent 32-bit seed per label path."""
    entropy: List[int] = [int(root)]
    for label in labels:
        if isinstance(label, str):
            entropy.extend(label.encode("utf-8"))
            entropy.append(0x1F)
        else:
            entropy.append(int(label))
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def load_config(path: Optional[Union[str, Path]], overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Load a JSON config file (or defaults when `path` is None) and apply overrides."""
    raw: Dict[str, Any] = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    if overrides:
        raw = apply_overrides(raw, overrides)
    return ExperimentConfig.model_validate(raw)


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply `dotted.key=value` overrides to a raw config dict.

    Values are parsed as JSON when possible, otherwise kept as strings.
    """
    result = json.loads(json.dumps(raw))
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like key=value, got {item!r}")
        key, text = item.split("=", 1)
        try:
            value: Any = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = result
        parts = key.strip().split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[parts[-1]] = value
    return result
