"""Tests for Hungarian matching and the set-prediction losses."""

import itertools
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from moad_fusion.data_types.predictions import BoxPredictionSet, BoxTargets
from moad_fusion.errors import BranchInputError, MatchingError
from moad_fusion.matching.hungarian import MatchResult, hungarian_assign, pairwise_cost
from moad_fusion.matching.losses import (
    branch_loss,
    focal_loss,
    l1_reg_loss,
    match_all,
    moad_loss,
    pme_loss,
)
from moad_fusion.models.common import Branch
from moad_fusion.models.config import LossWeights

OFFSET_SCALE = 4.0


def brute_force(cost):
    """Minimum total and the lexicographically smallest optimal pair list."""
    n, g = cost.shape
    candidates = []
    if n >= g:
        for rows in itertools.permutations(range(n), g):
            candidates.append(sorted((rows[j], j) for j in range(g)))
    else:
        for cols in itertools.permutations(range(g), n):
            candidates.append([(i, cols[i]) for i in range(n)])
    totals = [sum(cost[i, j] for i, j in pairs) for pairs in candidates]
    best = min(totals)
    optimal = [pairs for pairs, t in zip(candidates, totals) if t == best]
    return best, min(optimal)


def _preds(boxes, logits, anchors, branch=Branch.LC):
    return BoxPredictionSet.decode(boxes, logits, anchors, branch, OFFSET_SCALE)


def _random_problem(rng, n=6, g=3, c=3, dtype=torch.float64):
    boxes = torch.as_tensor(rng.normal(size=(1, n, 4)), dtype=dtype)
    logits = torch.as_tensor(rng.normal(size=(1, n, c)), dtype=dtype)
    anchors = torch.as_tensor(rng.uniform(-10, 10, size=(1, n, 2)), dtype=dtype)
    target = BoxTargets(
        centers=torch.as_tensor(rng.uniform(-10, 10, size=(g, 2)), dtype=dtype),
        sizes=torch.as_tensor(rng.uniform(0.5, 4, size=(g, 2)), dtype=dtype),
        labels=torch.as_tensor(rng.integers(0, c, size=g), dtype=torch.long),
    )
    return boxes, logits, anchors, target


def _numeric_grad(fn, x, h=1e-6):
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    for k in range(flat.numel()):
        orig = flat[k].item()
        flat[k] = orig + h
        up = fn().item()
        flat[k] = orig - h
        down = fn().item()
        flat[k] = orig
        grad.view(-1)[k] = (up - down) / (2 * h)
    return grad


class TestHungarianAssign:
    """Exact minimum-cost assignment with a deterministic tie-break."""

    def test_worked_example(self):
        cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
        result = hungarian_assign(cost)
        assert result.pairs == ((0, 1), (1, 0), (2, 2))
        assert result.total_cost(cost) == 5.0

    def test_zero_diagonal(self):
        result = hungarian_assign(np.ones((4, 4)) - np.eye(4))
        assert result.pairs == ((0, 0), (1, 1), (2, 2), (3, 3))

    def test_more_queries_than_objects(self):
        rng = np.random.default_rng(42)
        result = hungarian_assign(rng.uniform(size=(5, 2)))
        assert len(result.pairs) == 2
        assert len(result.unmatched_queries) == 3
        assert len({j for _, j in result.pairs}) == 2

    def test_no_objects(self):
        result = hungarian_assign(np.zeros((4, 0)))
        assert result.pairs == ()
        assert result.unmatched_queries == (0, 1, 2, 3)

    def test_non_finite_cost(self):
        cost = np.ones((3, 3))
        cost[1, 2] = np.nan
        with pytest.raises(MatchingError):
            hungarian_assign(cost)
        cost[1, 2] = np.inf
        with pytest.raises(MatchingError):
            hungarian_assign(cost)

    def test_matches_exhaustive_search(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            n, g = rng.integers(1, 8, size=2)
            cost = rng.uniform(0, 10, size=(n, g))
            best, _ = brute_force(cost)
            result = hungarian_assign(cost)
            assert len(result.pairs) == min(n, g)
            assert result.total_cost(cost) == pytest.approx(best, abs=1e-12)

    def test_ties_resolve_lexicographically(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            n, g = rng.integers(1, 6, size=2)
            cost = rng.integers(0, 4, size=(n, g)).astype(np.float64)
            best, smallest = brute_force(cost)
            result = hungarian_assign(cost)
            assert result.total_cost(cost) == best
            assert list(result.pairs) == smallest

    def test_row_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        cost = rng.uniform(size=(6, 4))
        perm = rng.permutation(6)
        base = dict(hungarian_assign(cost).pairs)
        permuted = dict(hungarian_assign(cost[perm]).pairs)
        assert {int(perm[i]): j for i, j in permuted.items()} == base


class TestPairwiseCost:
    """Regression plus focal matching cost."""

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(42)
        w = LossWeights()
        pv = rng.normal(size=(5, 4))
        logits = rng.normal(size=(5, 3))
        tv = rng.normal(size=(2, 4))
        labels = np.array([2, 0])
        cost = pairwise_cost(torch.as_tensor(pv), torch.as_tensor(logits), torch.as_tensor(tv),
                             torch.as_tensor(labels), w)
        expected = np.zeros((5, 2))
        for i in range(5):
            for j in range(2):
                p = 1 / (1 + math.exp(-logits[i, labels[j]]))
                focal = w.focal_alpha * (1 - p) ** w.focal_gamma * -math.log(p)
                expected[i, j] = w.w_reg * np.abs(pv[i] - tv[j]).mean() + w.w_cls * focal
        np.testing.assert_allclose(cost, expected, rtol=1e-9, atol=1e-12)

    def test_exact_prediction_is_cheapest(self):
        w = LossWeights()
        tv = torch.tensor([[1.0, 2.0, 0.5, 0.3]], dtype=torch.float64)
        pv = torch.cat([tv, tv + 1.0])
        logits = torch.tensor([[10.0, -10.0], [10.0, -10.0]], dtype=torch.float64)
        cost = pairwise_cost(pv, logits, tv, torch.tensor([0]), w)
        assert cost[0, 0] < cost[1, 0]
        assert cost[0, 0] < 1e-6

    def test_empty_targets(self):
        cost = pairwise_cost(torch.zeros(3, 4), torch.zeros(3, 2), torch.zeros(0, 4),
                             torch.zeros(0, dtype=torch.long), LossWeights())
        assert cost.shape == (3, 0)


class TestFocalLoss:
    """Sigmoid focal classification loss."""

    def test_single_uncertain_positive(self):
        loss = focal_loss(torch.zeros(1, 1, dtype=torch.float64), torch.tensor([0]), LossWeights())
        assert loss.item() == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-9)
        assert loss.item() == pytest.approx(0.043321, abs=1e-6)

    def test_confident_correct_logits(self):
        logits = torch.full((3, 3), -30.0, dtype=torch.float64)
        labels = torch.tensor([0, 2, -1])
        logits[0, 0] = logits[1, 2] = 30.0
        assert focal_loss(logits, labels, LossWeights()).item() < 1e-10

    def test_reduces_to_half_bce(self):
        w = LossWeights(focal_gamma=0.0, focal_alpha=0.5)
        rng = np.random.default_rng(42)
        logits = torch.as_tensor(rng.normal(size=(6, 3)))
        labels = torch.tensor([0, -1, 2, -1, 1, -1])
        targets = torch.zeros(6, 3, dtype=torch.float64)
        targets[0, 0] = targets[2, 2] = targets[4, 1] = 1.0
        bce = F.binary_cross_entropy_with_logits(logits, targets, reduction="sum")
        torch.testing.assert_close(focal_loss(logits, labels, w), 0.5 * bce / 3)

    def test_background_only_normalizes_by_one(self):
        w = LossWeights()
        logits = torch.zeros(2, 2, dtype=torch.float64)
        loss = focal_loss(logits, torch.tensor([-1, -1]), w)
        expected = 4 * (1 - w.focal_alpha) * 0.25 * math.log(2)
        assert loss.item() == pytest.approx(expected, abs=1e-12)


class TestL1RegLoss:
    """Matched-pair regression loss."""

    def test_equal_vectors(self):
        v = torch.randn(3, 4, dtype=torch.float64)
        match = MatchResult.from_pairs([(0, 0), (1, 1), (2, 2)], 3)
        assert l1_reg_loss(v, v, match).item() == 0.0

    def test_worked_example(self):
        pred = torch.zeros(1, 4, dtype=torch.float64)
        target = torch.tensor([[1.0, 2.0, 3.0, 4.0]], dtype=torch.float64)
        assert l1_reg_loss(pred, target, MatchResult.from_pairs([(0, 0)], 1)).item() == 2.5

    def test_no_matches_is_zero_with_gradient_path(self):
        pred = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
        loss = l1_reg_loss(pred, torch.zeros(0, 4, dtype=torch.float64), MatchResult.from_pairs([], 2))
        loss.backward()
        assert loss.item() == 0.0
        assert torch.equal(pred.grad, torch.zeros_like(pred))


class TestMoadLoss:
    """Weighted sum over the three decoding branches."""

    def test_identical_branches(self):
        rng = np.random.default_rng(42)
        boxes, logits, anchors, target = _random_problem(rng)
        preds = {b: _preds(boxes, logits, anchors, b) for b in (Branch.LC, Branch.L, Branch.C)}
        total, parts = moad_loss(preds, [target], LossWeights())
        assert parts["L_LC"].item() == parts["L_L"].item() == parts["L_C"].item()
        assert total.item() == pytest.approx(3 * parts["L_LC"].item(), rel=1e-12)
        assert set(parts) == {"L_LC", "L_L", "L_C", "L_total"}

    def test_total_is_weighted_sum(self):
        rng = np.random.default_rng(1)
        w = LossWeights(w_LC=1.0, w_L=0.5, w_C=2.0)
        preds = {}
        for b in (Branch.LC, Branch.L, Branch.C):
            boxes, logits, anchors, target = _random_problem(rng)
            preds[b] = _preds(boxes, logits, anchors, b)
        total, parts = moad_loss(preds, [target], w)
        for b in (Branch.LC, Branch.L, Branch.C):
            single, _ = branch_loss(preds[b], [target], w)
            assert parts[f"L_{b.value}"].item() == pytest.approx(single.item(), rel=1e-12)
        expected = parts["L_LC"] + 0.5 * parts["L_L"] + 2.0 * parts["L_C"]
        assert total.item() == pytest.approx(expected.item(), rel=1e-12)

    def test_single_branch_weighting(self):
        rng = np.random.default_rng(2)
        boxes, logits, anchors, target = _random_problem(rng)
        preds = {b: _preds(boxes + i, logits, anchors, b) for i, b in enumerate((Branch.LC, Branch.L, Branch.C))}
        total, parts = moad_loss(preds, [target], LossWeights(w_L=0.0, w_C=0.0))
        assert total.item() == parts["L_LC"].item()
        assert parts["L_L"].item() > 0

    def test_missing_branch(self):
        rng = np.random.default_rng(3)
        boxes, logits, anchors, target = _random_problem(rng)
        with pytest.raises(BranchInputError):
            moad_loss({Branch.LC: _preds(boxes, logits, anchors)}, [target], LossWeights())

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        w = LossWeights()
        leaves = {}
        target = None
        for b in (Branch.LC, Branch.L, Branch.C):
            boxes, logits, anchors, target_b = _random_problem(rng)
            target = target if target is not None else target_b
            leaves[b] = (boxes.requires_grad_(), logits.requires_grad_(), anchors)

        def build():
            return {b: _preds(bx, lg, an, b) for b, (bx, lg, an) in leaves.items()}

        matches = match_all(build(), [target], w)

        def loss():
            return moad_loss(build(), [target], w, matches)[0]

        loss().backward()
        with torch.no_grad():
            for bx, lg, _ in leaves.values():
                for leaf in (bx, lg):
                    numeric = _numeric_grad(loss, leaf)
                    np.testing.assert_allclose(leaf.grad.numpy(), numeric.numpy(), rtol=1e-4, atol=1e-8)


class TestPmeLoss:
    """Branch loss of the ensembled set."""

    def test_perfect_predictions(self):
        target = BoxTargets(
            centers=torch.tensor([[2.0, 3.0], [-4.0, 1.0]], dtype=torch.float64),
            sizes=torch.tensor([[1.9, 4.5], [0.7, 0.7]], dtype=torch.float64),
            labels=torch.tensor([0, 1]),
        )
        anchors = torch.zeros(1, 2, 2, dtype=torch.float64)
        boxes = torch.cat([target.centers / OFFSET_SCALE, target.sizes.log()], dim=-1).unsqueeze(0)
        logits = torch.tensor([[[20.0, -20.0], [-20.0, 20.0]]], dtype=torch.float64)
        loss = pme_loss(_preds(boxes, logits, anchors, Branch.E), [target], LossWeights())
        assert loss.item() < 1e-6

    def test_no_objects_leaves_classification_only(self):
        rng = np.random.default_rng(5)
        boxes, logits, anchors, _ = _random_problem(rng)
        empty = BoxTargets(torch.zeros(0, 2, dtype=torch.float64), torch.ones(0, 2, dtype=torch.float64),
                           torch.zeros(0, dtype=torch.long))
        w = LossWeights()
        loss = pme_loss(_preds(boxes, logits, anchors, Branch.E), [empty], w)
        background = focal_loss(logits[0], torch.full((6,), -1), w, num_matched=1)
        assert loss.item() == pytest.approx(w.w_cls * background.item(), rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        boxes, logits, anchors, target = _random_problem(rng)
        boxes.requires_grad_()
        logits.requires_grad_()
        w = LossWeights()
        matches = match_all({Branch.E: _preds(boxes, logits, anchors, Branch.E)}, [target], w)[Branch.E]

        def loss():
            return pme_loss(_preds(boxes, logits, anchors, Branch.E), [target], w, matches)

        loss().backward()
        with torch.no_grad():
            for leaf in (boxes, logits):
                np.testing.assert_allclose(
                    leaf.grad.numpy(), _numeric_grad(loss, leaf).numpy(), rtol=1e-4, atol=1e-8
                )
