"""Inference routing: sensor availability plus ensemble strategy to one prediction set."""

import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from moad_fusion.data_types.predictions import BoxPredictionSet, Detections, to_detections
from moad_fusion.errors import InferenceModeError
from moad_fusion.models.common import Branch, EnsembleStrategy, InferenceMode, MoadMode
from moad_fusion.models.config import EvalConfig, ExperimentConfig
from moad_fusion.network.detector import Detector, build_detector
from moad_fusion.network.ensemble import ensemble_nme, ensemble_nms, ensemble_topk
from moad_fusion.training.data import InputBatch, collate, group_by_missing, tokenize_batch
from moad_fusion.world.dataset import SceneSample

logger = logging.getLogger(__name__)

SINGLE_MODES = {
    InferenceMode.CAMERA_ONLY: (MoadMode.TEST_C, Branch.C),
    InferenceMode.LIDAR_ONLY: (MoadMode.TEST_L, Branch.L),
}


def _check_mode(batch: InputBatch, mode: InferenceMode, ensemble: EnsembleStrategy) -> None:
    if mode == InferenceMode.FULL:
        missing = [
            name
            for name, flag in (("GEO", batch.geo_missing), ("SEM", batch.sem_missing))
            if flag
        ]
        if missing:
            raise InferenceModeError(
                f"{', '.join(missing)} is missing; full-input inference (ensemble "
                f"{ensemble.value}) needs both modalities, use camera_only or lidar_only"
            )
        return
    if ensemble != EnsembleStrategy.NONE:
        raise InferenceModeError(
            f"{mode.value} runs a single branch; ensemble {ensemble.value} needs both modalities"
        )
    if mode == InferenceMode.CAMERA_ONLY and batch.sem_missing:
        raise InferenceModeError("camera_only requested but the SEM grid is missing")
    if mode == InferenceMode.LIDAR_ONLY and batch.geo_missing:
        raise InferenceModeError("lidar_only requested but the GEO grid is missing")


@torch.no_grad()
def infer(
    detector: Detector,
    batch: InputBatch,
    mode: InferenceMode = InferenceMode.FULL,
    ensemble: EnsembleStrategy = EnsembleStrategy.PME,
    eval_cfg: Optional[EvalConfig] = None,
) -> BoxPredictionSet:
    """Predictions of one batch.

    full + none is the LC branch alone; full + an ensemble runs all three branches
    and merges them. camera_only / lidar_only bypass the ensemble and return the
    surviving branch.
    """
    eval_cfg = eval_cfg or EvalConfig()
    _check_mode(batch, mode, ensemble)
    tokens_L, tokens_C = tokenize_batch(detector.moad.tokenizer, batch)

    if mode in SINGLE_MODES:
        moad_mode, branch = SINGLE_MODES[mode]
        if mode == InferenceMode.CAMERA_ONLY:
            return detector.moad(None, tokens_C, moad_mode)[branch].predictions
        return detector.moad(tokens_L, None, moad_mode)[branch].predictions

    if ensemble == EnsembleStrategy.NONE:
        return detector.moad(tokens_L, tokens_C, MoadMode.TEST_LC)[Branch.LC].predictions
    branches = detector.moad(tokens_L, tokens_C, MoadMode.TRAIN)
    if ensemble == EnsembleStrategy.PME:
        output, _ = detector.pme(branches, use_bias=True)
        return output.predictions
    if ensemble == EnsembleStrategy.NME:
        return ensemble_nme(branches, detector.pme)
    preds = {b: o.predictions for b, o in branches.items()}
    if ensemble == EnsembleStrategy.TOPK:
        return ensemble_topk(preds, eval_cfg.topk)
    return ensemble_nms(preds, eval_cfg.nms_distance)


@dataclass(frozen=True)
class DetectorSnapshot:
    """Picklable copy of a detector for evaluation workers."""

    config: ExperimentConfig
    dtype: torch.dtype
    arrays: Dict[str, np.ndarray]

    @classmethod
    def of(cls, detector: Detector) -> "DetectorSnapshot":
        return cls(
            config=detector.cfg,
            dtype=next(detector.parameters()).dtype,
            arrays={k: v.detach().cpu().numpy().copy() for k, v in detector.state_dict().items()},
        )

    def restore(self) -> Detector:
        detector = build_detector(self.config).to(self.dtype)
        detector.load_state_dict({k: torch.from_numpy(v) for k, v in self.arrays.items()})
        detector.eval()
        return detector


BatchFn = Callable[..., List[Any]]


def _run_shard(
    args: Tuple[DetectorSnapshot, List[List[Tuple[int, SceneSample]]], BatchFn, tuple, int]
) -> List[Tuple[int, Any]]:
    snapshot, batches, fn, fn_args, threads = args
    torch.set_num_threads(threads)
    detector = snapshot.restore()
    out: List[Tuple[int, Any]] = []
    for batch in batches:
        indices = [i for i, _ in batch]
        inputs = collate([s for _, s in batch], dtype=snapshot.dtype)
        out.extend(zip(indices, fn(detector, inputs, *fn_args)))
    return out


def _map_batches(
    detector: Detector,
    samples: Sequence[SceneSample],
    plan: Sequence[Sequence[int]],
    fn: BatchFn,
    fn_args: tuple,
    workers: int,
) -> List[Optional[Any]]:
    """Run `fn` over the planned batches, in-process or sharded over `workers`.

    Batches are formed identically either way and results are merged back by
    sample index, so the output does not depend on `workers`.
    """
    detector.eval()
    out: List[Optional[Any]] = [None] * len(samples)
    if workers <= 1 or len(plan) < 2:
        dtype = next(detector.parameters()).dtype
        for chunk in plan:
            batch = collate([samples[i] for i in chunk], dtype=dtype)
            for i, result in zip(chunk, fn(detector, batch, *fn_args)):
                out[i] = result
        return out

    snapshot = DetectorSnapshot.of(detector)
    workers = min(workers, len(plan))
    shards = [
        [[(i, samples[i]) for i in chunk] for chunk in plan[w::workers]] for w in range(workers)
    ]
    threads = torch.get_num_threads()
    context = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=context) as pool:
        parts = pool.map(_run_shard, [(snapshot, s, fn, fn_args, threads) for s in shards])
        for part in parts:
            for i, result in part:
                out[i] = result
    logger.debug("Evaluated %d batches on %d workers", len(plan), workers)
    return out


def _batch_plan(samples: Sequence[SceneSample], batch_size: int) -> List[List[int]]:
    """Batches within groups that share a missing-modality pattern."""
    return [
        indices[start : start + batch_size]
        for _, indices in group_by_missing(samples)
        for start in range(0, len(indices), batch_size)
    ]


def _predict_batch(
    detector: Detector,
    batch: InputBatch,
    mode: InferenceMode,
    ensemble: EnsembleStrategy,
    eval_cfg: EvalConfig,
) -> List[Detections]:
    return to_detections(infer(detector, batch, mode, ensemble, eval_cfg), eval_cfg.score_floor)


def predict(
    detector: Detector,
    samples: Sequence[SceneSample],
    mode: InferenceMode,
    ensemble: EnsembleStrategy,
    eval_cfg: EvalConfig,
    workers: int = 1,
) -> List[Detections]:
    """Detections for every sample, in sample order."""
    plan = _batch_plan(samples, eval_cfg.batch_size)
    out = _map_batches(detector, samples, plan, _predict_batch, (mode, ensemble, eval_cfg), workers)
    return [d if d is not None else Detections.empty() for d in out]


@torch.no_grad()
def _branch_batch(
    detector: Detector, batch: InputBatch, eval_cfg: EvalConfig
) -> List[Dict[Branch, Detections]]:
    _check_mode(batch, InferenceMode.FULL, EnsembleStrategy.PME)
    tokens_L, tokens_C = tokenize_batch(detector.moad.tokenizer, batch)
    branches = detector.moad(tokens_L, tokens_C, MoadMode.TRAIN)
    ensembled, _ = detector.pme(branches, use_bias=True)
    sets = {b: o.predictions for b, o in branches.items()}
    sets[Branch.E] = ensembled.predictions
    per_branch = {b: to_detections(p, eval_cfg.score_floor) for b, p in sets.items()}
    return [{b: per_branch[b][k] for b in Branch} for k in range(len(batch.scenes))]


def predict_branches(
    detector: Detector, samples: Sequence[SceneSample], eval_cfg: EvalConfig, workers: int = 1
) -> Dict[Branch, List[Detections]]:
    """Detections of every decoding branch and of the ensemble on full inputs."""
    plan = [
        list(range(start, min(start + eval_cfg.batch_size, len(samples))))
        for start in range(0, len(samples), eval_cfg.batch_size)
    ]
    out = _map_batches(detector, samples, plan, _branch_batch, (eval_cfg,), workers)
    return {b: [per_scene[b] for per_scene in out if per_scene is not None] for b in Branch}
