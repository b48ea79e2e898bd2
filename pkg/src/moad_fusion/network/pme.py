"""Proximity-based modality ensemble.

The LC branch's box features query the box features of all three branches in
one cross-attention layer whose logits are biased by a learnable affine function
of the distance between predicted box centers. A dedicated head decodes the
ensembled features against the LC anchors.
"""

import copy
from typing import Mapping, Optional, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from moad_fusion.data_types.predictions import BoxFeatures, BoxPredictionSet
from moad_fusion.errors import BranchInputError
from moad_fusion.models.common import MOAD_BRANCHES, Branch
from moad_fusion.models.config import ModelConfig, PmeConfig, WorldConfig
from moad_fusion.network.attention import MultiHeadedAttention
from moad_fusion.network.embedding import CenterPositionalEmbedding
from moad_fusion.network.heads import BoxHead
from moad_fusion.network.moad import BranchOutput

Scalar = Union[float, Tensor]


def proximity_bias(
    centers_LC: Tensor, centers_L: Tensor, centers_C: Tensor, alpha: Scalar, beta: Scalar
) -> Tensor:
    """M[i, j] = alpha * ||phi_LC,i - phi_A,j|| + beta with phi_A = [phi_LC; phi_L; phi_C].

    Centers are (..., N, 2); the result is (..., N, 3N).
    """
    phi_a = torch.cat([centers_LC, centers_L, centers_C], dim=-2)
    diff = centers_LC.unsqueeze(-2) - phi_a.unsqueeze(-3)
    dist = diff.pow(2).sum(dim=-1).sqrt()
    return alpha * dist + beta


class ProximityBias(nn.Module):
    """Learnable scalars alpha and beta of the attention bias."""

    def __init__(self, alpha: float = -1.0, beta: float = 0.0) -> None:
        super().__init__()
        self.alpha = nn.Parameter(torch.tensor(float(alpha)))
        self.beta = nn.Parameter(torch.tensor(float(beta)))

    def forward(self, centers_LC: Tensor, centers_L: Tensor, centers_C: Tensor) -> Tensor:
        return proximity_bias(centers_LC, centers_L, centers_C, self.alpha, self.beta)


class EnsembleLayer(nn.Module):
    """Pre-norm cross-attention and feed-forward with residuals."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float = 0.0) -> None:
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.attn = MultiHeadedAttention(heads, dim, dropout)
        self.norm_ffn = nn.LayerNorm(dim)
        self.linear1 = nn.Linear(dim, ffn_dim)
        self.linear2 = nn.Linear(ffn_dim, dim)

    def zero_residuals(self) -> None:
        """Make the layer an identity map at initialization."""
        for layer in (self.attn.final_linear, self.linear2):
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)

    def forward(
        self, q: Tensor, keys: Tensor, q_pos: Tensor, k_pos: Tensor, bias: Optional[Tensor]
    ) -> Tuple[Tensor, Tensor]:
        kv = self.norm_kv(keys)
        out, weights = self.attn(self.norm_q(q) + q_pos, kv + k_pos, kv, bias=bias)
        z = q + out
        z = z + self.linear2(F.relu(self.linear1(self.norm_ffn(z))))
        return z, weights


class ProximityModalityEnsemble(nn.Module):
    """Projections g_LC, g_L, g_C, the ensemble layer f_e and the head h_e."""

    def __init__(self, pme_cfg: PmeConfig, model_cfg: ModelConfig, world_cfg: WorldConfig) -> None:
        super().__init__()
        dim = model_cfg.hidden_dim
        self.cfg = pme_cfg
        self.proj = nn.ModuleDict({b.value: nn.Linear(dim, dim) for b in MOAD_BRANCHES})
        self.center_pe = CenterPositionalEmbedding(dim, model_cfg.pe_scale, model_cfg.pe_temperature)
        self.layer = EnsembleLayer(dim, pme_cfg.num_heads, pme_cfg.ffn_dim, model_cfg.dropout)
        self.bias: Optional[ProximityBias] = (
            ProximityBias(pme_cfg.alpha_init, pme_cfg.beta_init) if pme_cfg.proximity_bias else None
        )
        self.head = BoxHead(dim, world_cfg.num_classes, model_cfg.offset_scale, model_cfg.cls_prior)
        if pme_cfg.identity_init:
            for linear in self.proj.values():
                nn.init.eye_(linear.weight)
                nn.init.zeros_(linear.bias)
            self.layer.zero_residuals()

    def init_head_from(self, head: BoxHead) -> None:
        """Start h_e as a copy of `head` with its own storage."""
        self.head.load_state_dict(copy.deepcopy(head.state_dict()))

    def project_branch(self, z: BoxFeatures, branch: Branch) -> Tensor:
        """Q'_m = g_m(Z_m)."""
        if branch.value not in self.proj:
            raise BranchInputError(branch.value, "has no ensemble projection")
        return self.proj[branch.value](z.features)

    def pme_attend(
        self,
        q: Tensor,
        keys: Tensor,
        bias: Optional[Tensor],
        q_centers: Tensor,
        key_centers: Tensor,
    ) -> Tuple[BoxFeatures, Tensor]:
        """One biased cross-attention step; returns Z_e and the attention weights."""
        n = q.shape[-2]
        if keys.shape[-2] != 3 * n:
            raise BranchInputError(Branch.E.value, f"expects {3 * n} keys, got {keys.shape[-2]}")
        if bias is not None and tuple(bias.shape[-2:]) != (n, 3 * n):
            raise BranchInputError(
                Branch.E.value, f"bias shape {tuple(bias.shape)} does not match ({n}, {3 * n})"
            )
        z, weights = self.layer(
            q, keys, self.center_pe(q_centers), self.center_pe(key_centers), bias
        )
        return BoxFeatures(features=z, branch=Branch.E), weights

    def pme_head(self, z_e: BoxFeatures, anchors_LC: Tensor) -> BoxPredictionSet:
        return self.head(z_e, anchors_LC)

    def forward(
        self, branches: Mapping[Branch, BranchOutput], use_bias: bool = True
    ) -> Tuple[BranchOutput, Tensor]:
        """Ensemble the three MOAD branches; `use_bias=False` gives the NME variant."""
        for branch in MOAD_BRANCHES:
            if branch not in branches:
                raise BranchInputError(branch.value, "missing from the ensemble input")
        projected = [self.project_branch(branches[b].features, b) for b in MOAD_BRANCHES]
        centers = [branches[b].predictions.centers.detach() for b in MOAD_BRANCHES]
        bias = self.bias(*centers) if (use_bias and self.bias is not None) else None
        z_e, weights = self.pme_attend(
            projected[0], torch.cat(projected, dim=1), bias, centers[0], torch.cat(centers, dim=1)
        )
        preds = self.pme_head(z_e, branches[Branch.LC].predictions.anchors)
        return BranchOutput(z_e, preds), weights
