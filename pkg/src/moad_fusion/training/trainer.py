"""Two-stage training: MOAD first, then the ensemble module with everything else frozen."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import torch
import torch.nn as nn
from torch import Tensor
from tqdm import tqdm

from moad_fusion.errors import DatasetError, TrainingDivergenceError
from moad_fusion.logging_utils import JsonlWriter
from moad_fusion.matching.losses import moad_loss, pme_loss
from moad_fusion.models.common import MoadMode
from moad_fusion.models.config import ExperimentConfig, TrainConfig, derive_seed
from moad_fusion.models.records import TrainLogRecord
from moad_fusion.models.scene import GroundTruthBox
from moad_fusion.network.detector import Detector, build_detector
from moad_fusion.training.checkpoint import (
    CheckpointState,
    check_stage1_config,
    detector_state,
    load_moad_state,
)
from moad_fusion.training.data import collate, iterate_batches, tokenize_batch
from moad_fusion.training.schedules import stage1_scheduler, stage2_scheduler
from moad_fusion.world import scene as scene_ops
from moad_fusion.world.dataset import SceneSample, render_sample

logger = logging.getLogger(__name__)

MOAD_PREFIX = "moad."


@dataclass
class StageResult:
    """Checkpoint of a finished stage, the trained detector and its log rows."""

    checkpoint: CheckpointState
    detector: Detector
    history: List[TrainLogRecord] = field(default_factory=list)

    @property
    def final_loss(self) -> Optional[float]:
        if not self.history:
            return None
        losses = self.history[-1].losses
        return losses.get("L_total", losses.get("L_PME"))


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def augment_sample(
    sample: SceneSample,
    bank: Sequence[GroundTruthBox],
    seed: int,
    cfg: ExperimentConfig,
) -> SceneSample:
    """GT pasting followed by a re-render of both views."""
    pasted = scene_ops.paste_augment(
        sample.scene, bank, seed, cfg.train.max_paste, cfg.world.min_separation
    )
    if pasted is sample.scene:
        return sample
    return render_sample(pasted, cfg)


def make_optimizer(
    params: Sequence[nn.Parameter], lr: float, tc: TrainConfig
) -> torch.optim.Optimizer:
    if tc.optimizer == "adam":
        return torch.optim.Adam(params, lr=lr, weight_decay=tc.weight_decay)
    return torch.optim.AdamW(params, lr=lr, weight_decay=tc.weight_decay)


def _check_finite(loss: Tensor, step: int, stage: int) -> None:
    value = float(loss.detach())
    if not math.isfinite(value):
        raise TrainingDivergenceError(step, stage, value)


def _steps(num_samples: int, batch_size: int, epochs: int) -> int:
    return epochs * math.ceil(num_samples / batch_size)


def _open_log(log_path: Optional[Union[str, Path]]) -> Optional[JsonlWriter]:
    return JsonlWriter(log_path) if log_path is not None else None


def train_stage1(
    cfg: ExperimentConfig,
    samples: Sequence[SceneSample],
    log_path: Optional[Union[str, Path]] = None,
) -> StageResult:
    """Train tokenizers, queries, decoder and head under the MOAD loss.

    GT pasting is active for the first round(augment_fraction * epochs) epochs.
    """
    if not samples:
        raise DatasetError("stage 1 needs a non-empty training split")
    tc = cfg.train
    seed_everything(derive_seed(cfg.seed, "train", 1))
    detector = build_detector(cfg)
    detector.train()
    params = [p for n, p in detector.named_parameters() if n.startswith(MOAD_PREFIX)]
    optimizer = make_optimizer(params, tc.stage1_lr, tc)
    total_steps = _steps(len(samples), tc.batch_size, tc.stage1_epochs)
    scheduler = stage1_scheduler(optimizer, tc, total_steps)
    augment_epochs = int(round(tc.augment_fraction * tc.stage1_epochs))
    bank = scene_ops.build_gt_bank(s.scene for s in samples) if augment_epochs else []
    dtype = next(detector.parameters()).dtype

    history: List[TrainLogRecord] = []
    writer = _open_log(log_path)
    step = 0
    try:
        for epoch in tqdm(range(tc.stage1_epochs), desc="stage 1", disable=not tc.progress):
            augmented = epoch < augment_epochs
            for indices in iterate_batches(
                len(samples), tc.batch_size, derive_seed(cfg.seed, "shuffle", 1, epoch)
            ):
                chunk = [samples[i] for i in indices]
                if augmented:
                    chunk = [
                        augment_sample(s, bank, derive_seed(cfg.seed, "paste", epoch, i), cfg)
                        for s, i in zip(chunk, indices)
                    ]
                batch = collate(chunk, dtype=dtype)
                tokens_L, tokens_C = tokenize_batch(detector.moad.tokenizer, batch)
                outputs = detector.moad(tokens_L, tokens_C, MoadMode.TRAIN)
                loss, breakdown = moad_loss(
                    {b: o.predictions for b, o in outputs.items()}, batch.targets(dtype), cfg.loss
                )
                _check_finite(loss, step, 1)

                lr = optimizer.param_groups[0]["lr"]
                optimizer.zero_grad()
                loss.backward()
                if tc.grad_clip is not None:
                    nn.utils.clip_grad_norm_(params, tc.grad_clip)
                optimizer.step()
                scheduler.step()

                record = TrainLogRecord(
                    stage=1,
                    epoch=epoch,
                    step=step,
                    lr=lr,
                    losses={k: float(v.detach()) for k, v in breakdown.items()},
                    augmented=augmented,
                )
                history.append(record)
                if writer is not None:
                    writer.write(record)
                if step % tc.log_every == 0:
                    logger.info(
                        "stage 1 epoch %d step %d: L_total=%.4f lr=%.2e",
                        epoch,
                        step,
                        record.losses["L_total"],
                        lr,
                    )
                step += 1
    finally:
        if writer is not None:
            writer.close()

    detector.sync_pme_head()
    return StageResult(detector_state(detector, cfg, "stage1", step), detector, history)


def freeze_for_stage2(detector: Detector) -> List[nn.Parameter]:
    """Disable gradients everywhere except the stage-2 parameters, which are returned."""
    trainable = dict(detector.stage2_parameters())
    for name, p in detector.named_parameters():
        p.requires_grad_(name in trainable)
    return list(trainable.values())


def train_stage2(
    cfg: ExperimentConfig,
    stage1: CheckpointState,
    samples: Sequence[SceneSample],
    log_path: Optional[Union[str, Path]] = None,
) -> StageResult:
    """Train the ensemble module on frozen MOAD branch outputs under the PME loss.

    The ensemble module is re-initialized (its head copied from the trained MOAD
    head); no GT pasting is applied.
    """
    if not samples:
        raise DatasetError("stage 2 needs a non-empty training split")
    check_stage1_config(stage1, cfg)
    tc = cfg.train
    seed_everything(derive_seed(cfg.seed, "train", 2))
    detector = build_detector(cfg)
    load_moad_state(detector, stage1)
    detector.sync_pme_head()
    params = freeze_for_stage2(detector)
    detector.moad.eval()
    detector.pme.train()
    dtype = next(detector.parameters()).dtype

    history: List[TrainLogRecord] = []
    writer = _open_log(log_path)
    step = 0
    try:
        if tc.stage2_epochs > 0:
            optimizer = make_optimizer(params, tc.stage2_lr, tc)
            total_steps = _steps(len(samples), tc.batch_size, tc.stage2_epochs)
            scheduler = stage2_scheduler(optimizer, tc, total_steps)
            for epoch in tqdm(range(tc.stage2_epochs), desc="stage 2", disable=not tc.progress):
                for indices in iterate_batches(
                    len(samples), tc.batch_size, derive_seed(cfg.seed, "shuffle", 2, epoch)
                ):
                    batch = collate([samples[i] for i in indices], dtype=dtype)
                    with torch.no_grad():
                        tokens_L, tokens_C = tokenize_batch(detector.moad.tokenizer, batch)
                        branches = detector.moad(tokens_L, tokens_C, MoadMode.TRAIN)
                    ensembled, _ = detector.pme(branches, use_bias=cfg.pme.proximity_bias)
                    loss = pme_loss(ensembled.predictions, batch.targets(dtype), cfg.loss)
                    _check_finite(loss, step, 2)

                    lr = optimizer.param_groups[0]["lr"]
                    optimizer.zero_grad()
                    loss.backward()
                    if tc.grad_clip is not None:
                        nn.utils.clip_grad_norm_(params, tc.grad_clip)
                    optimizer.step()
                    scheduler.step()

                    record = TrainLogRecord(
                        stage=2, epoch=epoch, step=step, lr=lr, losses={"L_PME": float(loss)}
                    )
                    history.append(record)
                    if writer is not None:
                        writer.write(record)
                    if step % tc.log_every == 0:
                        logger.info(
                            "stage 2 epoch %d step %d: L_PME=%.4f lr=%.2e",
                            epoch,
                            step,
                            float(loss),
                            lr,
                        )
                    step += 1
    finally:
        if writer is not None:
            writer.close()

    for p in detector.parameters():
        p.requires_grad_(True)
    return StageResult(
        detector_state(detector, cfg, "stage2", stage1.step + step), detector, history
    )

