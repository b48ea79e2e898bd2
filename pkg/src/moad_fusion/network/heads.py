"""Modality-agnostic box head."""

import math

import torch.nn as nn
from torch import Tensor

from moad_fusion.data_types.predictions import BoxFeatures, BoxPredictionSet
from moad_fusion.network.embedding import MLP


class BoxHead(nn.Module):
    """Independent regression and classification stacks over box features.

    Regression outputs (dx/s, dy/s, log w, log l) against the query anchors;
    classification outputs one sigmoid logit per class.
    """

    def __init__(self, dim: int, num_classes: int, offset_scale: float, cls_prior: float) -> None:
        super().__init__()
        self.offset_scale = offset_scale
        self.reg = MLP(dim, dim, 4, 3)
        self.cls = MLP(dim, dim, num_classes, 2)
        nn.init.constant_(self.reg.layers[-1].weight, 0)
        nn.init.constant_(self.reg.layers[-1].bias, 0)
        nn.init.constant_(self.cls.layers[-1].bias, -math.log((1 - cls_prior) / cls_prior))

    def forward(self, z: BoxFeatures, anchors: Tensor) -> BoxPredictionSet:
        """anchors: (N, 2) or (B, N, 2)."""
        feats = z.features
        if anchors.dim() == 2:
            anchors = anchors.unsqueeze(0).expand(feats.shape[0], -1, -1)
        return BoxPredictionSet.decode(
            boxes=self.reg(feats),
            logits=self.cls(feats),
            anchors=anchors,
            branch=z.branch,
            offset_scale=self.offset_scale,
        )
