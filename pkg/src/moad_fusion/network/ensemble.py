"""Baseline ensembles over the three decoding branches."""

from typing import Mapping

import torch
from torch import Tensor

from moad_fusion.data_types.predictions import BoxPredictionSet
from moad_fusion.errors import BranchInputError
from moad_fusion.models.common import MOAD_BRANCHES, Branch
from moad_fusion.network.moad import BranchOutput
from moad_fusion.network.pme import ProximityModalityEnsemble


def pool_predictions(branch_preds: Mapping[Branch, BoxPredictionSet]) -> BoxPredictionSet:
    """Concatenate the LC, L and C predictions into one 3N set."""
    for branch in MOAD_BRANCHES:
        if branch not in branch_preds:
            raise BranchInputError(branch.value, "missing from the ensemble input")
    sets = [branch_preds[b] for b in MOAD_BRANCHES]
    return BoxPredictionSet(
        boxes=torch.cat([s.boxes for s in sets], dim=1),
        logits=torch.cat([s.logits for s in sets], dim=1),
        centers=torch.cat([s.centers for s in sets], dim=1),
        anchors=torch.cat([s.anchors for s in sets], dim=1),
        branch=Branch.E,
        offset_scale=sets[0].offset_scale,
    )


def _gather(x: Tensor, index: Tensor) -> Tensor:
    return torch.gather(x, 1, index.unsqueeze(-1).expand(-1, -1, x.shape[-1]))


def ensemble_topk(branch_preds: Mapping[Branch, BoxPredictionSet], k: int) -> BoxPredictionSet:
    """Keep the k most confident of the 3N pooled predictions."""
    pooled = pool_predictions(branch_preds)
    k = min(k, pooled.num_queries)
    order = torch.argsort(pooled.scores(), dim=1, descending=True, stable=True)[:, :k]
    return BoxPredictionSet(
        boxes=_gather(pooled.boxes, order),
        logits=_gather(pooled.logits, order),
        centers=_gather(pooled.centers, order),
        anchors=_gather(pooled.anchors, order),
        branch=Branch.E,
        offset_scale=pooled.offset_scale,
    )


def center_nms(centers: Tensor, scores: Tensor, dist_threshold: float) -> Tensor:
    """Greedy class-agnostic suppression by center distance, (N, 2), (N,) -> keep mask (N,)."""
    order = torch.argsort(scores, descending=True, stable=True)
    keep = torch.zeros_like(scores, dtype=torch.bool)
    suppressed = torch.zeros_like(keep)
    dist = torch.cdist(
        centers.unsqueeze(0), centers.unsqueeze(0), compute_mode="donot_use_mm_for_euclid_dist"
    ).squeeze(0)
    for i in order.tolist():
        if suppressed[i]:
            continue
        keep[i] = True
        suppressed |= dist[i] < dist_threshold
    return keep


def ensemble_nms(
    branch_preds: Mapping[Branch, BoxPredictionSet], dist_threshold: float
) -> BoxPredictionSet:
    """Pool the 3N predictions and mark NMS survivors in `keep`."""
    pooled = pool_predictions(branch_preds)
    scores = pooled.scores().detach()
    centers = pooled.centers.detach()
    keep = torch.stack(
        [center_nms(centers[b], scores[b], dist_threshold) for b in range(pooled.batch_size)]
    )
    return BoxPredictionSet(
        boxes=pooled.boxes,
        logits=pooled.logits,
        centers=pooled.centers,
        anchors=pooled.anchors,
        branch=Branch.E,
        offset_scale=pooled.offset_scale,
        keep=keep,
    )


def ensemble_nme(
    branches: Mapping[Branch, BranchOutput], pme: ProximityModalityEnsemble
) -> BoxPredictionSet:
    """The ensemble layer without the proximity bias."""
    output, _ = pme(branches, use_bias=False)
    return output.predictions
