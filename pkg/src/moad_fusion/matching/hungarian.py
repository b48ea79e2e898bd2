"""Matching cost and the bipartite assignment between queries and ground truth."""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment
from torch import Tensor

from moad_fusion.data_types.predictions import BoxPredictionSet, BoxTargets
from moad_fusion.errors import MatchingError
from moad_fusion.models.config import LossWeights

_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class MatchResult:
    """Matched (query, gt) pairs sorted by query index, and the unmatched queries."""

    pairs: Tuple[Tuple[int, int], ...]
    unmatched_queries: Tuple[int, ...]

    @property
    def query_indices(self) -> List[int]:
        return [i for i, _ in self.pairs]

    @property
    def gt_indices(self) -> List[int]:
        return [j for _, j in self.pairs]

    def total_cost(self, cost: np.ndarray) -> float:
        return float(sum(cost[i, j] for i, j in self.pairs))

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[int, int]], num_queries: int) -> "MatchResult":
        pairs = tuple(sorted((int(i), int(j)) for i, j in pairs))
        matched = {i for i, _ in pairs}
        return cls(pairs, tuple(i for i in range(num_queries) if i not in matched))


def pairwise_cost(
    pred_vectors: Tensor,
    pred_logits: Tensor,
    target_vectors: Tensor,
    target_labels: Tensor,
    w: LossWeights,
) -> np.ndarray:
    """(N, G) matching cost in float64.

    cost(i, j) = w_reg * mean|box_i - gt_j| + w_cls * alpha (1 - p)^gamma (-log p),
    with p the predicted probability of gt_j's class.
    """
    n, g = pred_vectors.shape[0], target_vectors.shape[0]
    if g == 0 or n == 0:
        return np.zeros((n, g), dtype=np.float64)
    pv = pred_vectors.detach().double()
    tv = target_vectors.detach().double()
    reg = (pv[:, None, :] - tv[None, :, :]).abs().mean(dim=-1)
    logits = pred_logits.detach().double()[:, target_labels]
    prob = logits.sigmoid()
    cls = w.focal_alpha * (1 - prob).pow(w.focal_gamma) * F.softplus(-logits)
    return (w.w_reg * reg + w.w_cls * cls).cpu().numpy()


def _solve(cost: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    rows, cols = linear_sum_assignment(cost)
    return rows, cols, float(cost[rows, cols].sum())


def _is_tie(a: float, b: float) -> bool:
    return abs(a - b) <= _TIE_RTOL * max(1.0, abs(a), abs(b))


def _canonical(cost: np.ndarray, optimum: float) -> List[Tuple[int, int]]:
    """Lexicographically smallest optimal assignment, fixing queries in order."""
    n, g = cost.shape
    k = min(n, g)
    free_rows = list(range(n))
    free_cols = list(range(g))
    pairs: List[Tuple[int, int]] = []
    fixed_cost = 0.0
    for i in range(n):
        if len(pairs) == k:
            break
        rest_rows = [r for r in free_rows if r != i]
        chosen: Optional[int] = None
        for j in free_cols:
            rest_cols = [c for c in free_cols if c != j]
            rest = 0.0
            if rest_rows and rest_cols:
                _, _, rest = _solve(cost[np.ix_(rest_rows, rest_cols)])
            if _is_tie(fixed_cost + cost[i, j] + rest, optimum):
                chosen = j
                break
        free_rows.remove(i)
        if chosen is not None:
            pairs.append((i, chosen))
            fixed_cost += cost[i, chosen]
            free_cols.remove(chosen)
    return pairs


def hungarian_assign(cost: np.ndarray) -> MatchResult:
    """Minimum-cost assignment of min(N, G) pairs.

    Among optimal assignments the lexicographically smallest list of
    (query, gt) pairs is returned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise MatchingError(f"cost must be a matrix, got shape {cost.shape}")
    n, g = cost.shape
    if n == 0 or g == 0:
        return MatchResult.from_pairs([], n)
    if not np.all(np.isfinite(cost)):
        raise MatchingError("cost matrix holds NaN or infinite entries")

    rows, cols, optimum = _solve(cost)
    forbidden = 2.0 * (np.abs(cost).sum() + 1.0)
    unique = True
    for r, c in zip(rows, cols):
        trial = cost.copy()
        trial[r, c] = forbidden
        _, _, alt = _solve(trial)
        if _is_tie(alt, optimum):
            unique = False
            break
    if unique:
        return MatchResult.from_pairs(zip(rows, cols), n)
    return MatchResult.from_pairs(_canonical(cost, optimum), n)


class HungarianMatcher:
    """Matches every scene of a batch independently."""

    def __init__(self, weights: LossWeights) -> None:
        self.weights = weights

    @torch.no_grad()
    def __call__(self, preds: BoxPredictionSet, targets: Sequence[BoxTargets]) -> List[MatchResult]:
        if len(targets) != preds.batch_size:
            raise MatchingError(f"{len(targets)} targets for a batch of {preds.batch_size}")
        pred_vectors = preds.regression_vectors()
        results = []
        for b, target in enumerate(targets):
            cost = pairwise_cost(
                pred_vectors[b],
                preds.logits[b],
                target.regression_vectors(preds.offset_scale).to(pred_vectors.device),
                target.labels.to(pred_vectors.device),
                self.weights,
            )
            results.append(hungarian_assign(cost))
        return results
