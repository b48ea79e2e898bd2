"""Ground-truth scene generation and GT-sampling augmentation."""

import logging
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from moad_fusion.errors import PlacementError
from moad_fusion.models.config import WorldConfig
from moad_fusion.models.scene import GroundTruthBox, Scene

logger = logging.getLogger(__name__)


def _far_enough(center: Tuple[float, float], placed: Sequence[Tuple[float, float]], min_sep: float) -> bool:
    if not placed:
        return True
    d = np.hypot(*(np.asarray(placed) - np.asarray(center)).T)
    return bool(np.all(d >= min_sep))


def generate_scene(seed: int, world_cfg: WorldConfig) -> Scene:
    """Draw a scene from the world distribution.

    The object count is uniform in [min_objects, max_objects]; classes are
    balanced; each center is redrawn up to `max_retries` times until it keeps
    `min_separation` from every placed center.
    """
    rng = np.random.default_rng(seed)
    count = int(rng.integers(world_cfg.min_objects, world_cfg.max_objects + 1))
    margin = world_cfg.border_margin
    lo = np.array([world_cfg.x_min + margin, world_cfg.y_min + margin])
    hi = np.array([world_cfg.x_max - margin, world_cfg.y_max - margin])

    centers: List[Tuple[float, float]] = []
    boxes: List[GroundTruthBox] = []
    for _ in range(count):
        for _attempt in range(world_cfg.max_retries):
            x, y = rng.uniform(lo, hi)
            center = (float(x), float(y))
            if _far_enough(center, centers, world_cfg.min_separation):
                break
        else:
            raise PlacementError(seed, len(boxes), count)
        class_id = int(rng.integers(world_cfg.num_classes))
        mean_w, mean_l = world_cfg.class_sizes[class_id]
        jw, jl = rng.uniform(-world_cfg.size_jitter, world_cfg.size_jitter, size=2)
        centers.append(center)
        boxes.append(
            GroundTruthBox(
                center=center,
                size=(float(mean_w * (1 + jw)), float(mean_l * (1 + jl))),
                class_id=class_id,
            )
        )
    return Scene(boxes=tuple(boxes), world_extent=world_cfg.extent, seed=seed)


def paste_augment(
    scene: Scene,
    bank: Sequence[GroundTruthBox],
    seed: int,
    max_paste: int = 3,
    min_separation: float = 3.0,
) -> Scene:
    """Paste up to `max_paste` bank objects at their recorded positions.

    Pastes that would come closer than `min_separation` to an existing or
    previously pasted center are skipped. Returns a new scene.
    """
    if not bank or max_paste <= 0:
        return scene
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, max_paste + 1))
    if k == 0:
        return scene
    picks = rng.choice(len(bank), size=min(k, len(bank)), replace=False)

    x_min, x_max, y_min, y_max = scene.world_extent
    centers = [box.center for box in scene.boxes]
    pasted: List[GroundTruthBox] = []
    for idx in picks:
        box = bank[int(idx)]
        x, y = box.center
        if not (x_min <= x <= x_max and y_min <= y <= y_max):
            continue
        if not _far_enough(box.center, centers, min_separation):
            continue
        centers.append(box.center)
        pasted.append(box)
    if not pasted:
        return scene
    return scene.model_copy(update={"boxes": scene.boxes + tuple(pasted)})


def build_gt_bank(scenes: Iterable[Scene]) -> List[GroundTruthBox]:
    """Collect every ground-truth box of the given scenes, in order."""
    bank = [box for scene in scenes for box in scene.boxes]
    logger.debug("GT bank holds %d boxes", len(bank))
    return bank
