"""Modality-agnostic decoding: one decoder and one head run as LC, L and C branches."""

from typing import Dict, NamedTuple, Optional, Sequence

import torch
import torch.nn as nn

from moad_fusion.data_types.predictions import BoxFeatures, BoxPredictionSet
from moad_fusion.data_types.sensor_grid import num_features
from moad_fusion.data_types.tokens import QuerySet, TokenSet
from moad_fusion.errors import BranchInputError, InferenceModeError
from moad_fusion.models.common import BRANCH_MODALITIES, MOAD_BRANCHES, Branch, MoadMode
from moad_fusion.models.config import ModelConfig, WorldConfig, derive_seed
from moad_fusion.network.decoder import SharedDecoder
from moad_fusion.network.embedding import ModalityPositionalEmbedding
from moad_fusion.network.heads import BoxHead
from moad_fusion.network.tokenizer import QueryBank, Tokenizer


class BranchOutput(NamedTuple):
    features: BoxFeatures
    predictions: BoxPredictionSet


MODE_BRANCHES = {
    MoadMode.TRAIN: MOAD_BRANCHES,
    MoadMode.TEST_LC: (Branch.LC,),
    MoadMode.TEST_L: (Branch.L,),
    MoadMode.TEST_C: (Branch.C,),
}


class MoadModel(nn.Module):
    """Tokenizers, shared queries, shared decoder and shared box head."""

    def __init__(self, model_cfg: ModelConfig, world_cfg: WorldConfig, seed: int) -> None:
        super().__init__()
        dim = model_cfg.hidden_dim
        pe = ModalityPositionalEmbedding(dim, model_cfg.pe_scale, model_cfg.pe_temperature)
        self.tokenizer = Tokenizer(num_features(world_cfg.num_classes), dim, pe)
        self.queries = QueryBank(
            model_cfg.num_queries, dim, world_cfg.extent, derive_seed(seed, "anchors")
        )
        self.decoder = SharedDecoder(
            dim, model_cfg.num_heads, model_cfg.num_layers, model_cfg.ffn_dim, model_cfg.dropout
        )
        self.head = BoxHead(
            dim, world_cfg.num_classes, model_cfg.offset_scale, model_cfg.cls_prior
        )

    def query_set(self) -> QuerySet:
        return self.queries(self.tokenizer.pe)

    def decode_branch(
        self, queries: QuerySet, inputs: Sequence[TokenSet], branch: Branch
    ) -> BoxFeatures:
        """Run the shared decoder with the keys and query PE of `branch`.

        LC attends over [X_L; X_C], each token carrying its own modality PE.
        """
        if branch not in BRANCH_MODALITIES:
            raise BranchInputError(branch.value, "not a decoding branch")
        by_modality = {t.modality: t for t in inputs}
        sets = []
        for modality in BRANCH_MODALITIES[branch]:
            if modality not in by_modality:
                raise BranchInputError(branch.value, f"needs {modality.value} tokens")
            sets.append(by_modality[modality])
        memory = torch.cat([s.tokens for s in sets], dim=1)
        memory_pos = torch.cat([s.modality_pe for s in sets], dim=0)
        content = queries.content.unsqueeze(0).expand(memory.shape[0], -1, -1)
        z = self.decoder(content, queries.query_pe(branch), memory, memory_pos)
        return BoxFeatures(features=z, branch=branch)

    def box_head(self, z: BoxFeatures, queries: QuerySet) -> BoxPredictionSet:
        return self.head(z, queries.anchors)

    def forward(
        self,
        tokens_L: Optional[TokenSet],
        tokens_C: Optional[TokenSet],
        mode: MoadMode = MoadMode.TRAIN,
    ) -> Dict[Branch, BranchOutput]:
        """Run the branches of `mode`; TRAIN runs all three."""
        branches = MODE_BRANCHES[mode]
        available = [t for t in (tokens_L, tokens_C) if t is not None]
        flagged = [t.modality.value for t in available if t.missing]
        if flagged and mode in (MoadMode.TRAIN, MoadMode.TEST_LC):
            raise InferenceModeError(
                f"{mode.value} needs both modalities but {', '.join(flagged)} is missing; "
                "select TEST_L or TEST_C"
            )
        usable = [t for t in available if not t.missing]
        queries = self.query_set()
        out: Dict[Branch, BranchOutput] = {}
        for branch in branches:
            z = self.decode_branch(queries, usable, branch)
            out[branch] = BranchOutput(z, self.box_head(z, queries))
        return out
