"""Tests for the proximity-based ensemble and the baseline ensembles."""

import numpy as np
import pytest
import torch

from moad_fusion.data_types.predictions import BoxFeatures
from moad_fusion.errors import BranchInputError
from moad_fusion.models.common import Branch, MoadMode
from moad_fusion.models.config import ModelConfig, PmeConfig, WorldConfig
from moad_fusion.network.detector import build_detector
from moad_fusion.network.ensemble import (
    center_nms,
    ensemble_nme,
    ensemble_nms,
    ensemble_topk,
    pool_predictions,
)
from moad_fusion.network.pme import ProximityBias, ProximityModalityEnsemble, proximity_bias
from moad_fusion.training.data import collate, tokenize_batch

MODEL = ModelConfig(num_queries=6, hidden_dim=16, num_heads=2, num_layers=1, ffn_dim=32)
WORLD = WorldConfig()


def _reference_bias(c_lc, c_l, c_c, alpha, beta):
    phi = np.concatenate([c_lc, c_l, c_c])
    out = np.zeros((len(c_lc), len(phi)))
    for i in range(len(c_lc)):
        for j in range(len(phi)):
            out[i, j] = alpha * np.sqrt(((c_lc[i] - phi[j]) ** 2).sum()) + beta
    return out


@pytest.fixture
def random_pme():
    torch.manual_seed(0)
    return ProximityModalityEnsemble(PmeConfig(identity_init=False), MODEL, WORLD).double()


def _attend_inputs(rng, n=6, dim=16):
    q = torch.as_tensor(rng.normal(size=(1, n, dim)))
    keys = torch.cat([q, torch.as_tensor(rng.normal(size=(1, 2 * n, dim)))], dim=1)
    centers = [torch.as_tensor(rng.uniform(-10, 10, size=(1, n, 2))) for _ in range(3)]
    return q, keys, centers


def _nearest_weight(pme, q, keys, centers, alpha):
    bias = proximity_bias(*centers, alpha, 0.0)
    _, weights = pme.pme_attend(q, keys, bias, centers[0], torch.cat(centers, dim=1))
    # each LC query is nearest to its own key (distance 0)
    return torch.diagonal(weights[0, 0, :, : q.shape[1]])


class TestProximityBias:
    """Affine function of center distances."""

    def test_matches_reference(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n = int(rng.integers(1, 9))
            c = [rng.uniform(-20, 20, size=(n, 2)) for _ in range(3)]
            alpha, beta = rng.normal(size=2)
            got = proximity_bias(*(torch.as_tensor(x) for x in c), float(alpha), float(beta))
            assert got.shape == (n, 3 * n)
            np.testing.assert_allclose(got.numpy(), _reference_bias(*c, alpha, beta), rtol=0, atol=1e-12)

    def test_three_four_five(self):
        c_lc = torch.tensor([[0.0, 0.0], [3.0, 4.0]])
        bias = proximity_bias(c_lc, torch.zeros(2, 2), torch.zeros(2, 2), 1.0, 0.0)
        assert bias[0, 1].item() == 5.0
        assert bias[0, 0].item() == 0.0

    def test_shape_and_zero_parameters(self):
        c = [torch.randn(4, 2) for _ in range(3)]
        assert proximity_bias(*c, 0.0, 0.0).shape == (4, 12)
        assert torch.count_nonzero(proximity_bias(*c, 0.0, 0.0)) == 0

    def test_batched(self):
        c = [torch.randn(3, 5, 2, dtype=torch.float64) for _ in range(3)]
        batched = proximity_bias(*c, -1.0, 0.5)
        assert batched.shape == (3, 5, 15)
        torch.testing.assert_close(batched[1], proximity_bias(*(x[1] for x in c), -1.0, 0.5))

    def test_module_uses_its_parameters(self):
        module = ProximityBias(alpha=-2.0, beta=0.25)
        c = [torch.randn(3, 2) for _ in range(3)]
        torch.testing.assert_close(module(*c), proximity_bias(*c, -2.0, 0.25))


class TestPmeAttend:
    """Biased cross-attention of the LC features over all branches."""

    def test_beta_cancels_in_softmax(self, random_pme):
        q, keys, centers = _attend_inputs(np.random.default_rng(42))
        outs = []
        for beta in (-10.0, 0.0, 10.0):
            bias = proximity_bias(*centers, -1.0, beta)
            z, w = random_pme.pme_attend(q, keys, bias, centers[0], torch.cat(centers, dim=1))
            outs.append((z.features, w))
        for z, w in outs[1:]:
            torch.testing.assert_close(z, outs[0][0], atol=1e-6, rtol=0)
            torch.testing.assert_close(w, outs[0][1], atol=1e-6, rtol=0)

    def test_zero_bias_equals_unbiased(self, random_pme):
        q, keys, centers = _attend_inputs(np.random.default_rng(1))
        k_centers = torch.cat(centers, dim=1)
        zero = torch.zeros(1, 6, 18, dtype=torch.float64)
        a, _ = random_pme.pme_attend(q, keys, zero, centers[0], k_centers)
        b, _ = random_pme.pme_attend(q, keys, None, centers[0], k_centers)
        assert torch.equal(a.features, b.features)
        assert a.branch == Branch.E

    def test_strong_negative_alpha_concentrates_on_nearest(self, random_pme):
        q, keys, centers = _attend_inputs(np.random.default_rng(2))
        assert torch.all(_nearest_weight(random_pme, q, keys, centers, -1e6) > 0.999)

    def test_concentration_grows_as_alpha_falls(self, random_pme):
        q, keys, centers = _attend_inputs(np.random.default_rng(3))
        weights = [_nearest_weight(random_pme, q, keys, centers, a) for a in (0.0, -0.5, -1.0, -2.0, -5.0, -10.0, -100.0)]
        for lo, hi in zip(weights, weights[1:]):
            assert torch.all(hi >= lo - 1e-12)

    def test_key_block_order_does_not_matter(self, random_pme):
        rng = np.random.default_rng(4)
        q, keys, (c_lc, c_l, c_c) = _attend_inputs(rng)
        k_lc, k_l, k_c = keys.split(6, dim=1)
        a, _ = random_pme.pme_attend(
            q, keys, proximity_bias(c_lc, c_l, c_c, -1.0, 0.0), c_lc, torch.cat([c_lc, c_l, c_c], dim=1)
        )
        b, _ = random_pme.pme_attend(
            q, torch.cat([k_lc, k_c, k_l], dim=1), proximity_bias(c_lc, c_c, c_l, -1.0, 0.0),
            c_lc, torch.cat([c_lc, c_c, c_l], dim=1),
        )
        torch.testing.assert_close(a.features, b.features, atol=1e-10, rtol=0)

    def test_shape_checks(self, random_pme):
        q, keys, centers = _attend_inputs(np.random.default_rng(5))
        k_centers = torch.cat(centers, dim=1)
        with pytest.raises(BranchInputError):
            random_pme.pme_attend(q, keys[:, :12], None, centers[0], k_centers[:, :12])
        with pytest.raises(BranchInputError):
            random_pme.pme_attend(q, keys, torch.zeros(1, 6, 12, dtype=torch.float64), centers[0], k_centers)


class TestProjections:
    """Per-branch linear maps g_LC, g_L, g_C."""

    def test_identity_init(self):
        pme = ProximityModalityEnsemble(PmeConfig(), MODEL, WORLD)
        z = BoxFeatures(torch.randn(2, 6, 16), Branch.L)
        assert torch.equal(pme.project_branch(z, Branch.L), z.features)

    def test_zero_input_gives_bias_row(self, random_pme):
        z = BoxFeatures(torch.zeros(1, 6, 16, dtype=torch.float64), Branch.C)
        out = random_pme.project_branch(z, Branch.C)
        torch.testing.assert_close(out, random_pme.proj["C"].bias.expand(1, 6, 16))

    def test_branches_have_separate_maps(self, random_pme):
        z = BoxFeatures(torch.randn(1, 6, 16, dtype=torch.float64), Branch.L)
        assert not torch.allclose(random_pme.project_branch(z, Branch.L), random_pme.project_branch(z, Branch.C))

    def test_ensemble_tag_has_no_projection(self, random_pme):
        with pytest.raises(BranchInputError):
            random_pme.project_branch(BoxFeatures(torch.zeros(1, 6, 16), Branch.E), Branch.E)


@pytest.fixture
def detector(smoke_cfg):
    det = build_detector(smoke_cfg)
    det.eval()
    return det


@pytest.fixture
def branches(detector, train_samples):
    tokens = tokenize_batch(detector.moad.tokenizer, collate(train_samples[:4]))
    with torch.no_grad():
        return detector.moad(*tokens, MoadMode.TRAIN)


class TestEnsembleForward:
    """The ensemble module wired to real MOAD branch outputs."""

    def test_identity_init_reproduces_lc(self, detector, branches):
        with torch.no_grad():
            out, weights = detector.pme(branches)
        lc = branches[Branch.LC].predictions
        torch.testing.assert_close(out.predictions.logits, lc.logits, atol=1e-6, rtol=1e-6)
        torch.testing.assert_close(out.predictions.centers, lc.centers, atol=1e-6, rtol=1e-6)
        assert out.predictions.branch == Branch.E
        n = lc.num_queries
        assert weights.shape == (4, detector.pme.layer.attn.head_count, n, 3 * n)

    def test_nme_equals_pme_without_bias_parameters(self, detector, branches):
        with torch.no_grad():
            detector.pme.layer.attn.final_linear.weight.normal_()
            detector.pme.bias.alpha.zero_()
            detector.pme.bias.beta.zero_()
            pme_out, _ = detector.pme(branches, use_bias=True)
            nme = ensemble_nme(branches, detector.pme)
        torch.testing.assert_close(nme.logits, pme_out.predictions.logits, atol=1e-6, rtol=1e-6)
        torch.testing.assert_close(nme.boxes, pme_out.predictions.boxes, atol=1e-6, rtol=1e-6)

    def test_missing_branch(self, detector, branches):
        partial = {b: o for b, o in branches.items() if b != Branch.C}
        with pytest.raises(BranchInputError):
            detector.pme(partial)

    def test_head_is_a_separate_copy(self, detector):
        moad_params = {p.data_ptr() for p in detector.moad.head.parameters()}
        assert not moad_params & {p.data_ptr() for p in detector.pme.head.parameters()}
        for a, b in zip(detector.moad.head.parameters(), detector.pme.head.parameters()):
            assert torch.equal(a, b)
        with torch.no_grad():
            next(detector.pme.head.parameters()).add_(1.0)
        assert not torch.equal(next(detector.moad.head.parameters()), next(detector.pme.head.parameters()))

    def test_pme_head_decodes_zero_features_to_anchors(self, detector, branches):
        anchors = branches[Branch.LC].predictions.anchors
        z = BoxFeatures(torch.zeros(4, anchors.shape[1], 16), Branch.E)
        assert torch.equal(detector.pme.pme_head(z, anchors).centers, anchors)

    def test_disabled_bias(self, smoke_cfg):
        pme = ProximityModalityEnsemble(PmeConfig(proximity_bias=False), smoke_cfg.model, smoke_cfg.world)
        assert pme.bias is None


class TestBaselineEnsembles:
    """Top-k, center-distance NMS and pooling."""

    def test_pooling_keeps_branch_order(self, branches):
        preds = {b: o.predictions for b, o in branches.items()}
        pooled = pool_predictions(preds)
        n = preds[Branch.LC].num_queries
        assert pooled.num_queries == 3 * n
        assert torch.equal(pooled.boxes[:, n : 2 * n], preds[Branch.L].boxes)
        assert pooled.branch == Branch.E

    def test_topk_with_everything_returns_all(self, branches):
        preds = {b: o.predictions for b, o in branches.items()}
        pooled = pool_predictions(preds)
        top = ensemble_topk(preds, k=3 * pooled.num_queries)
        assert top.num_queries == pooled.num_queries
        torch.testing.assert_close(
            top.scores(), torch.sort(pooled.scores(), dim=1, descending=True).values
        )

    def test_topk_is_sorted_and_truncated(self, branches):
        preds = {b: o.predictions for b, o in branches.items()}
        top = ensemble_topk(preds, k=5)
        scores = top.scores()
        assert scores.shape == (4, 5)
        assert torch.all(scores[:, :-1] >= scores[:, 1:])
        assert torch.equal(top.recompute_centers(), top.centers)

    def test_nms_drops_duplicates(self):
        centers = torch.tensor([[0.0, 0.0], [0.0, 0.0], [10.0, 10.0], [0.5, 0.0]])
        scores = torch.tensor([0.9, 0.9, 0.5, 0.8])
        keep = center_nms(centers, scores, 1.0)
        assert keep.tolist() == [True, False, True, False]

    def test_nms_identical_branches_keep_one_copy(self, branches):
        lc = branches[Branch.LC].predictions
        preds = {Branch.LC: lc, Branch.L: lc.with_branch(Branch.L), Branch.C: lc.with_branch(Branch.C)}
        out = ensemble_nms(preds, dist_threshold=1e-6)
        n = lc.num_queries
        kept_per_query = out.keep.view(4, 3, n).sum(dim=1)
        assert torch.all(kept_per_query == 1)

    def test_missing_branch(self, branches):
        with pytest.raises(BranchInputError):
            pool_predictions({Branch.LC: branches[Branch.LC].predictions})
