"""Grid tokenizers and the shared object queries."""

from typing import Tuple

import torch
import torch.nn as nn
from torch import Tensor

from moad_fusion.data_types.sensor_grid import SensorGrid
from moad_fusion.data_types.tokens import QuerySet, TokenSet
from moad_fusion.errors import TokenizationError
from moad_fusion.models.common import Modality
from moad_fusion.network.embedding import ModalityPositionalEmbedding


def grid_tensors(grid: SensorGrid, dtype: torch.dtype = torch.float32) -> Tuple[Tensor, Tensor]:
    """(T, F) values and (T, 2) coords of a grid, row-major over (view, row, column)."""
    values = torch.as_tensor(grid.flat_values().copy(), dtype=dtype)
    coords = torch.as_tensor(grid.flat_coords().copy(), dtype=dtype)
    return values, coords


class Tokenizer(nn.Module):
    """Lifts per-cell features to D with a learned linear map per modality."""

    def __init__(self, in_features: int, dim: int, pe: ModalityPositionalEmbedding) -> None:
        super().__init__()
        self.in_features = in_features
        self.dim = dim
        self.pe = pe
        self.lift = nn.ModuleDict({m.value: nn.Linear(in_features, dim) for m in Modality})

    def forward(
        self, values: Tensor, coords: Tensor, modality: Modality, missing: bool = False
    ) -> TokenSet:
        """values: (B, T, F) or (T, F); coords: (T, 2)."""
        if values.dim() == 2:
            values = values.unsqueeze(0)
        if values.shape[-1] != self.in_features:
            raise TokenizationError(
                f"{modality.value} grid has {values.shape[-1]} features, tokenizer expects {self.in_features}"
            )
        if coords.shape != (values.shape[1], 2):
            raise TokenizationError(
                f"{modality.value}: {values.shape[1]} cells but coords {tuple(coords.shape)}"
            )
        if not torch.isfinite(values).all():
            raise TokenizationError(f"{modality.value} grid holds non-finite values")
        return TokenSet(
            tokens=self.lift[modality.value](values),
            coords=coords,
            modality_pe=self.pe(coords, modality),
            modality=modality,
            missing=missing,
        )

    def tokenize_grid(self, grid: SensorGrid) -> TokenSet:
        param = self.lift[grid.modality.value].weight
        values, coords = grid_tensors(grid, dtype=param.dtype)
        return self(values.to(param.device), coords.to(param.device), grid.modality, grid.missing)


def sample_anchors(
    n: int, extent: Tuple[float, float, float, float], seed: int, dtype: torch.dtype = torch.float32
) -> Tensor:
    """(n, 2) anchors uniform over the extent."""
    if n < 1:
        raise ValueError("at least one query is required")
    gen = torch.Generator().manual_seed(seed)
    x_min, x_max, y_min, y_max = extent
    u = torch.rand((n, 2), generator=gen, dtype=dtype)
    lo = torch.tensor([x_min, y_min], dtype=dtype)
    hi = torch.tensor([x_max, y_max], dtype=dtype)
    return lo + u * (hi - lo)


class QueryBank(nn.Module):
    """Learnable anchors and zero-initialized content shared by every branch."""

    def __init__(
        self, num_queries: int, dim: int, extent: Tuple[float, float, float, float], seed: int
    ) -> None:
        super().__init__()
        self.anchors = nn.Parameter(sample_anchors(num_queries, extent, seed))
        self.content = nn.Parameter(torch.zeros(num_queries, dim))

    def forward(self, pe: ModalityPositionalEmbedding) -> QuerySet:
        return QuerySet(
            anchors=self.anchors,
            query_pe_L=pe(self.anchors, Modality.GEO),
            query_pe_C=pe(self.anchors, Modality.SEM),
            content=self.content,
        )


def init_queries(
    n_queries: int,
    world_extent: Tuple[float, float, float, float],
    seed: int,
    pe: ModalityPositionalEmbedding,
) -> QuerySet:
    """Fresh query set with anchors drawn from `seed`."""
    return QueryBank(n_queries, pe.dim, world_extent, seed)(pe)
