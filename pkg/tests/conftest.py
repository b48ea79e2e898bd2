"""Shared fixtures: the smoke config, tiny rendered splits and tiny trained models."""

from pathlib import Path
from typing import Callable, Sequence, Tuple

import pytest

from moad_fusion.models.config import ExperimentConfig, load_config
from moad_fusion.models.scene import GroundTruthBox, Scene
from moad_fusion.training.trainer import StageResult, train_stage1, train_stage2
from moad_fusion.world.dataset import SceneSample, generate_split

REPO_ROOT = Path(__file__).resolve().parents[1]
SMOKE_CONFIG = REPO_ROOT / "configs" / "smoke.json"
DEFAULT_CONFIG = REPO_ROOT / "configs" / "default.json"

EXTENT = (-16.0, 16.0, -16.0, 16.0)

BoxSpec = Tuple[Tuple[float, float], Tuple[float, float], int]


@pytest.fixture(scope="session")
def smoke_cfg() -> ExperimentConfig:
    return load_config(SMOKE_CONFIG)


@pytest.fixture(scope="session")
def train_samples(smoke_cfg: ExperimentConfig) -> Sequence[SceneSample]:
    return generate_split(smoke_cfg, "train", 8)


@pytest.fixture(scope="session")
def eval_samples(smoke_cfg: ExperimentConfig) -> Sequence[SceneSample]:
    return generate_split(smoke_cfg, "eval", 6)


@pytest.fixture(scope="session")
def stage1(smoke_cfg: ExperimentConfig, train_samples: Sequence[SceneSample]) -> StageResult:
    return train_stage1(smoke_cfg, train_samples)


@pytest.fixture(scope="session")
def stage2(
    smoke_cfg: ExperimentConfig, stage1: StageResult, train_samples: Sequence[SceneSample]
) -> StageResult:
    return train_stage2(smoke_cfg, stage1.checkpoint, train_samples)


@pytest.fixture
def make_scene() -> Callable[..., Scene]:
    """Build a scene from (center, size, class_id) triples."""

    def build(boxes: Sequence[BoxSpec] = (), seed: int = 0, extent=EXTENT) -> Scene:
        return Scene(
            boxes=tuple(
                GroundTruthBox(center=center, size=size, class_id=class_id)
                for center, size, class_id in boxes
            ),
            world_extent=extent,
            seed=seed,
        )

    return build
