"""Box features, prediction sets, matching targets and post-processed detections."""

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
import torch
from torch import Tensor

from moad_fusion.models.common import Branch
from moad_fusion.models.scene import Scene


@dataclass(frozen=True)
class BoxFeatures:
    """Decoder output of one branch: features (B, N, D)."""

    features: Tensor
    branch: Branch


@dataclass(frozen=True)
class BoxPredictionSet:
    """Per-query boxes of one branch.

    boxes: (B, N, 4) regression vectors (dx/s, dy/s, log w, log l) relative to the
    anchors; logits: (B, N, C) sigmoid class scores; centers: (B, N, 2) decoded BEV
    centers; anchors: (B, N, 2). `keep` marks the rows that survive a suppression
    step (None keeps every row).
    """

    boxes: Tensor
    logits: Tensor
    centers: Tensor
    anchors: Tensor
    branch: Branch
    offset_scale: float
    keep: Optional[Tensor] = None

    @classmethod
    def decode(
        cls, boxes: Tensor, logits: Tensor, anchors: Tensor, branch: Branch, offset_scale: float
    ) -> "BoxPredictionSet":
        centers = anchors + offset_scale * boxes[..., :2]
        return cls(boxes, logits, centers, anchors, branch, offset_scale)

    def recompute_centers(self) -> Tensor:
        return self.anchors + self.offset_scale * self.boxes[..., :2]

    @property
    def batch_size(self) -> int:
        return int(self.boxes.shape[0])

    @property
    def num_queries(self) -> int:
        return int(self.boxes.shape[1])

    def sizes(self) -> Tensor:
        return self.boxes[..., 2:4].exp()

    def scores(self) -> Tensor:
        """Best per-class probability of every query, (B, N)."""
        return self.logits.sigmoid().max(dim=-1).values

    def regression_vectors(self) -> Tensor:
        """(cx/s, cy/s, log w, log l): the space the L1 loss is measured in."""
        return torch.cat([self.centers / self.offset_scale, self.boxes[..., 2:4]], dim=-1)

    def with_branch(self, branch: Branch) -> "BoxPredictionSet":
        return replace(self, branch=branch)


@dataclass(frozen=True)
class BoxTargets:
    """Ground truth of one scene as tensors: centers (G, 2), sizes (G, 2), labels (G,)."""

    centers: Tensor
    sizes: Tensor
    labels: Tensor

    @property
    def num_boxes(self) -> int:
        return int(self.labels.shape[0])

    def regression_vectors(self, offset_scale: float) -> Tensor:
        return torch.cat([self.centers / offset_scale, self.sizes.log()], dim=-1)

    @classmethod
    def from_scene(cls, scene: Scene, dtype: torch.dtype = torch.float32) -> "BoxTargets":
        centers = torch.tensor([b.center for b in scene.boxes], dtype=dtype).reshape(-1, 2)
        sizes = torch.tensor([b.size for b in scene.boxes], dtype=dtype).reshape(-1, 2)
        labels = torch.tensor([b.class_id for b in scene.boxes], dtype=torch.long)
        return cls(centers=centers, sizes=sizes, labels=labels)


@dataclass(frozen=True)
class Detections:
    """Post-processed detections of one scene (numpy, K rows)."""

    centers: np.ndarray
    sizes: np.ndarray
    scores: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.scores.shape[0])

    @classmethod
    def empty(cls) -> "Detections":
        return cls(
            centers=np.zeros((0, 2)),
            sizes=np.zeros((0, 2)),
            scores=np.zeros((0,)),
            labels=np.zeros((0,), dtype=np.int64),
        )

    @classmethod
    def from_scene(cls, scene: Scene, score: float = 1.0) -> "Detections":
        """Ground truth as detections with a constant score."""
        n = len(scene.boxes)
        return cls(
            centers=np.array([b.center for b in scene.boxes], dtype=np.float64).reshape(n, 2),
            sizes=np.array([b.size for b in scene.boxes], dtype=np.float64).reshape(n, 2),
            scores=np.full((n,), score, dtype=np.float64),
            labels=np.array([b.class_id for b in scene.boxes], dtype=np.int64).reshape(n),
        )


def to_detections(preds: BoxPredictionSet, score_floor: float = 0.0) -> List[Detections]:
    """One detection per query: best class and its probability, above `score_floor`."""
    probs = preds.logits.detach().sigmoid().double()
    scores, labels = probs.max(dim=-1)
    centers = preds.centers.detach().double()
    sizes = preds.sizes().detach().double()
    keep = scores >= score_floor
    if preds.keep is not None:
        keep = keep & preds.keep
    out: List[Detections] = []
    for b in range(preds.batch_size):
        mask = keep[b]
        out.append(
            Detections(
                centers=centers[b][mask].cpu().numpy(),
                sizes=sizes[b][mask].cpu().numpy(),
                scores=scores[b][mask].cpu().numpy(),
                labels=labels[b][mask].cpu().numpy().astype(np.int64),
            )
        )
    return out


def targets_from_scenes(scenes: Sequence[Scene], dtype: torch.dtype = torch.float32) -> List[BoxTargets]:
    return [BoxTargets.from_scene(scene, dtype=dtype) for scene in scenes]
