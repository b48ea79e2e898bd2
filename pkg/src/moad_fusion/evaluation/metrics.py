"""Center-distance detection metrics.

A prediction is a true positive when an unmatched ground-truth box of its class
lies strictly closer than the distance threshold; predictions claim boxes in
descending confidence order. AP is the 101-point interpolated precision over
recall {0, 0.01, ..., 1} without min-recall or min-precision clipping.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from moad_fusion.data_types.predictions import Detections
from moad_fusion.models.config import EvalConfig
from moad_fusion.models.report import EvalReport, PrCurve
from moad_fusion.models.scene import Scene

RECALL_POINTS = 101
MAX_TRANSLATION_ERROR = 4.0
MAX_SCALE_ERROR = 1.0


@dataclass(frozen=True)
class MetricData:
    """Confidence-ranked outcome of one class at one threshold, over all scenes."""

    tp: np.ndarray
    scores: np.ndarray
    trans_err: np.ndarray
    scale_err: np.ndarray
    num_gt: int


def ranking_order(scores: np.ndarray, centers: np.ndarray, group: Optional[np.ndarray] = None) -> np.ndarray:
    """Descending confidence; ties broken by (group, x, y) so input order never matters."""
    keys = [centers[:, 1], centers[:, 0]]
    if group is not None:
        keys.append(group)
    keys.append(-scores)
    return np.lexsort(keys)


def match_by_distance(
    pred_centers: np.ndarray, gt_centers: np.ndarray, threshold: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Greedy matching of confidence-sorted predictions to ground truth.

    Each prediction claims the nearest unmatched box if it lies strictly within
    `threshold`. Returns TP flags (K,), translation errors (K,) with NaN for
    false positives, and the matched gt index (K,) with -1 for false positives.
    """
    k = pred_centers.shape[0]
    tp = np.zeros(k, dtype=bool)
    err = np.full(k, np.nan)
    gt_idx = np.full(k, -1, dtype=np.int64)
    taken = np.zeros(gt_centers.shape[0], dtype=bool)
    for i in range(k):
        if taken.all():
            break
        d = np.hypot(*(gt_centers - pred_centers[i]).T)
        d[taken] = np.inf
        j = int(np.argmin(d))
        if d[j] < threshold:
            taken[j] = True
            tp[i] = True
            err[i] = d[j]
            gt_idx[i] = j
    return tp, err, gt_idx


def scale_error(pred_sizes: np.ndarray, gt_sizes: np.ndarray) -> np.ndarray:
    """1 - IoU of axis-aligned (w, l) rectangles sharing a center."""
    inter = np.minimum(pred_sizes[:, 0], gt_sizes[:, 0]) * np.minimum(pred_sizes[:, 1], gt_sizes[:, 1])
    union = pred_sizes.prod(axis=1) + gt_sizes.prod(axis=1) - inter
    return 1.0 - inter / union


def accumulate(
    detections: Sequence[Detections], scenes: Sequence[Scene], class_id: int, threshold: float
) -> MetricData:
    scores: List[np.ndarray] = []
    centers: List[np.ndarray] = []
    groups: List[np.ndarray] = []
    tps: List[np.ndarray] = []
    trans: List[np.ndarray] = []
    scale: List[np.ndarray] = []
    num_gt = 0
    for s, (det, scene) in enumerate(zip(detections, scenes)):
        gt = Detections.from_scene(scene)
        gt_mask = gt.labels == class_id
        gt_centers, gt_sizes = gt.centers[gt_mask], gt.sizes[gt_mask]
        num_gt += int(gt_mask.sum())

        mask = det.labels == class_id
        p_scores, p_centers, p_sizes = det.scores[mask], det.centers[mask], det.sizes[mask]
        order = ranking_order(p_scores, p_centers)
        p_scores, p_centers, p_sizes = p_scores[order], p_centers[order], p_sizes[order]
        tp, err, gt_idx = match_by_distance(p_centers, gt_centers, threshold)
        s_err = np.full(len(tp), np.nan)
        if tp.any():
            s_err[tp] = scale_error(p_sizes[tp], gt_sizes[gt_idx[tp]])

        scores.append(p_scores)
        centers.append(p_centers.reshape(-1, 2))
        groups.append(np.full(len(p_scores), s, dtype=np.int64))
        tps.append(tp)
        trans.append(err)
        scale.append(s_err)

    if not scores:
        empty = np.zeros(0)
        return MetricData(empty.astype(bool), empty, empty, empty, num_gt)
    all_scores = np.concatenate(scores)
    order = ranking_order(all_scores, np.concatenate(centers), np.concatenate(groups))
    return MetricData(
        tp=np.concatenate(tps)[order],
        scores=all_scores[order],
        trans_err=np.concatenate(trans)[order],
        scale_err=np.concatenate(scale)[order],
        num_gt=num_gt,
    )


def interpolated_precision(tp: np.ndarray, num_gt: int) -> np.ndarray:
    """Precision envelope sampled at recall k/100, k = 0..100."""
    out = np.zeros(RECALL_POINTS)
    if num_gt == 0 or len(tp) == 0:
        return out
    tp_cum = np.cumsum(tp.astype(np.int64))
    precision = tp_cum / np.arange(1, len(tp) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    for k in range(RECALL_POINTS):
        # recall >= k/100, compared in integers
        reached = np.nonzero(100 * tp_cum >= k * num_gt)[0]
        if len(reached):
            out[k] = envelope[reached[0]]
    return out


def average_precision(tp: np.ndarray, num_gt: int) -> float:
    """AP of a confidence-ranked TP list; NaN when there is no ground truth."""
    if num_gt == 0:
        return float("nan")
    return float(interpolated_precision(np.asarray(tp, dtype=bool), num_gt).mean())


def nds_lite(mean_ap: float, mate: float, mase: float) -> float:
    """(5 mAP + (1 - min(1, mATE / 4 m)) + (1 - min(1, mASE))) / 7."""
    return (
        5.0 * mean_ap
        + (1.0 - min(1.0, mate / MAX_TRANSLATION_ERROR))
        + (1.0 - min(1.0, mase))
    ) / 7.0


def threshold_key(t: float) -> str:
    return f"{t:g}"


def evaluate(
    detections: Sequence[Detections],
    scenes: Sequence[Scene],
    cfg: EvalConfig,
    class_names: Sequence[str],
    scenario_tag: str = "full",
    with_curves: bool = True,
) -> EvalReport:
    """Per-class AP per threshold, mAP, TP errors and nds_lite.

    Classes without ground truth are reported as null and left out of every mean.
    A class with ground truth but no true positive at the TP threshold counts
    with the maximum translation (4 m) and scale (1) errors.
    """
    if len(detections) != len(scenes):
        raise ValueError(f"{len(detections)} prediction sets for {len(scenes)} scenes")
    per_class: Dict[str, Dict[str, Optional[float]]] = {}
    aps: List[float] = []
    trans_errs: List[float] = []
    scale_errs: List[float] = []
    curves: Dict[str, PrCurve] = {}
    recall_grid = [k / 100 for k in range(RECALL_POINTS)]

    for class_id, name in enumerate(class_names):
        per_class[name] = {}
        for t in cfg.distance_thresholds:
            md = accumulate(detections, scenes, class_id, t)
            ap = average_precision(md.tp, md.num_gt)
            per_class[name][threshold_key(t)] = None if np.isnan(ap) else ap
            if not np.isnan(ap):
                aps.append(ap)

        md_tp = accumulate(detections, scenes, class_id, cfg.tp_threshold)
        if md_tp.num_gt == 0:
            continue
        if md_tp.tp.any():
            trans_errs.append(float(np.mean(md_tp.trans_err[md_tp.tp])))
            scale_errs.append(float(np.mean(md_tp.scale_err[md_tp.tp])))
        else:
            trans_errs.append(MAX_TRANSLATION_ERROR)
            scale_errs.append(MAX_SCALE_ERROR)
        if with_curves:
            curves[name] = PrCurve(
                threshold=cfg.tp_threshold,
                recall=recall_grid,
                precision=interpolated_precision(md_tp.tp, md_tp.num_gt).tolist(),
            )

    mean_ap = float(np.mean(aps)) if aps else 0.0
    mate = float(np.mean(trans_errs)) if trans_errs else MAX_TRANSLATION_ERROR
    mase = float(np.mean(scale_errs)) if scale_errs else MAX_SCALE_ERROR
    return EvalReport(
        scenario_tag=scenario_tag,
        num_scenes=len(scenes),
        class_names=list(class_names),
        distance_thresholds=list(cfg.distance_thresholds),
        per_class_ap=per_class,
        mean_ap=mean_ap,
        mate=mate,
        mase=min(1.0, max(0.0, mase)),
        nds_lite=nds_lite(mean_ap, mate, mase),
        pr_curves=curves if with_curves else None,
    )
