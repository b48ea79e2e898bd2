"""Set-prediction losses: focal classification, L1 regression, MOAD and PME composites."""

from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import Tensor

from moad_fusion.data_types.predictions import BoxPredictionSet, BoxTargets
from moad_fusion.errors import BranchInputError
from moad_fusion.matching.hungarian import HungarianMatcher, MatchResult
from moad_fusion.models.common import MOAD_BRANCHES, Branch
from moad_fusion.models.config import LossWeights


def sigmoid_focal_loss(
    inputs: Tensor, targets: Tensor, num_boxes: float, alpha: float = 0.25, gamma: float = 2.0
) -> Tensor:
    """Loss used in RetinaNet for dense detection, summed and divided by `num_boxes`.

    inputs: logits of any shape; targets: same shape, 1 for positives, 0 otherwise.
    """
    prob = inputs.sigmoid()
    ce_loss = F.binary_cross_entropy_with_logits(inputs, targets, reduction="none")
    p_t = prob * targets + (1 - prob) * (1 - targets)
    loss = ce_loss * ((1 - p_t) ** gamma)
    if alpha >= 0:
        alpha_t = alpha * targets + (1 - alpha) * (1 - targets)
        loss = alpha_t * loss
    return loss.sum() / num_boxes


def class_targets(labels: Tensor, num_classes: int) -> Tensor:
    """Sparse labels (N,), -1 for unmatched, to dense (N, C) one-hot rows."""
    dense = torch.zeros(labels.shape[0], num_classes + 1, dtype=torch.float64, device=labels.device)
    dense[torch.arange(labels.shape[0], device=labels.device), labels] = 1.0
    return dense[:, :num_classes]


def focal_loss(logits: Tensor, labels: Tensor, w: LossWeights, num_matched: Optional[int] = None) -> Tensor:
    """Focal loss of (N, C) logits against sparse labels (N,) with -1 meaning background.

    Normalized by the number of matched queries, at least 1.
    """
    if num_matched is None:
        num_matched = int((labels >= 0).sum())
    targets = class_targets(labels, logits.shape[-1]).to(logits.dtype)
    return sigmoid_focal_loss(
        logits, targets, max(1, num_matched), alpha=w.focal_alpha, gamma=w.focal_gamma
    )


def l1_reg_loss(pred_vectors: Tensor, target_vectors: Tensor, match: MatchResult) -> Tensor:
    """Mean absolute error over matched pairs and regression dims; 0 without matches."""
    if not match.pairs:
        return pred_vectors.sum() * 0.0
    q = torch.as_tensor(match.query_indices, device=pred_vectors.device)
    g = torch.as_tensor(match.gt_indices, device=pred_vectors.device)
    return (pred_vectors[q] - target_vectors[g]).abs().mean()


def matched_labels(match: MatchResult, target: BoxTargets, num_queries: int) -> Tensor:
    labels = torch.full((num_queries,), -1, dtype=torch.long)
    for i, j in match.pairs:
        labels[i] = target.labels[j]
    return labels


def branch_loss(
    preds: BoxPredictionSet,
    targets: Sequence[BoxTargets],
    w: LossWeights,
    matches: Optional[Sequence[MatchResult]] = None,
) -> Tuple[Tensor, Dict[str, Tensor]]:
    """w_reg * L_reg + w_cls * L_cls for one branch, normalized over the batch.

    The L1 term averages over all matched pairs of the batch; the focal term is
    summed and divided by the number of matched pairs (at least 1).
    """
    if matches is None:
        matches = HungarianMatcher(w)(preds, targets)
    pred_vectors = preds.regression_vectors()
    total_matched = sum(len(m.pairs) for m in matches)

    reg_sum = pred_vectors.sum() * 0.0
    cls_sum = preds.logits.sum() * 0.0
    for b, (target, match) in enumerate(zip(targets, matches)):
        if match.pairs:
            tv = target.regression_vectors(preds.offset_scale).to(pred_vectors)
            reg_sum = reg_sum + l1_reg_loss(pred_vectors[b], tv, match) * (4 * len(match.pairs))
        labels = matched_labels(match, target, preds.num_queries).to(preds.logits.device)
        cls_sum = cls_sum + focal_loss(preds.logits[b], labels, w, num_matched=1)

    reg = reg_sum / (4 * total_matched) if total_matched else reg_sum
    cls = cls_sum / max(1, total_matched)
    return w.w_reg * reg + w.w_cls * cls, {"reg": reg, "cls": cls}


def moad_loss(
    branch_preds: Mapping[Branch, BoxPredictionSet],
    targets: Sequence[BoxTargets],
    w: LossWeights,
    matches: Optional[Mapping[Branch, Sequence[MatchResult]]] = None,
) -> Tuple[Tensor, Dict[str, Tensor]]:
    """w_LC L_LC + w_L L_L + w_C L_C, each branch matched on its own.

    The breakdown holds L_LC, L_L, L_C and L_total.
    """
    branch_weights = {Branch.LC: w.w_LC, Branch.L: w.w_L, Branch.C: w.w_C}
    breakdown: Dict[str, Tensor] = {}
    total: Optional[Tensor] = None
    for branch in MOAD_BRANCHES:
        if branch not in branch_preds:
            raise BranchInputError(branch.value, "predictions are required for the MOAD loss")
        loss, _ = branch_loss(
            branch_preds[branch], targets, w, None if matches is None else matches[branch]
        )
        breakdown[f"L_{branch.value}"] = loss
        term = branch_weights[branch] * loss
        total = term if total is None else total + term
    assert total is not None
    breakdown["L_total"] = total
    return total, breakdown


def pme_loss(
    preds_E: BoxPredictionSet,
    targets: Sequence[BoxTargets],
    w: LossWeights,
    matches: Optional[Sequence[MatchResult]] = None,
) -> Tensor:
    """Branch loss of the ensembled predictions."""
    loss, _ = branch_loss(preds_E, targets, w, matches)
    return loss


def match_all(
    branch_preds: Mapping[Branch, BoxPredictionSet], targets: Sequence[BoxTargets], w: LossWeights
) -> Dict[Branch, List[MatchResult]]:
    """Assignments of every branch, for holding them fixed across evaluations."""
    matcher = HungarianMatcher(w)
    return {branch: matcher(preds, targets) for branch, preds in branch_preds.items()}
