"""Positional embeddings of BEV coordinates."""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from moad_fusion.errors import TokenizationError
from moad_fusion.models.common import Modality


class MLP(nn.Module):
    """Stack of `num_layers` linear layers with ReLU between them."""

    def __init__(self, input_dim: int, hidden_dim: int, output_dim: int, num_layers: int) -> None:
        super().__init__()
        self.num_layers = num_layers
        h = [hidden_dim] * (num_layers - 1)
        self.layers = nn.ModuleList(
            nn.Linear(n, k) for n, k in zip([input_dim] + h, h + [output_dim])
        )

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = F.relu(layer(x)) if i < self.num_layers - 1 else layer(x)
        return x


def sinusoidal_encoding(
    coords: Tensor, dim: int, scale: float = 16.0, temperature: float = 20.0
) -> Tensor:
    """Fixed 2-D sinusoidal code of BEV coordinates, (..., 2) -> (..., dim).

    Layout is [sin x | cos x | sin y | cos y], dim/4 frequencies per block, so
    the origin maps to zeros in the sin blocks and ones in the cos blocks.
    """
    if dim % 4 != 0:
        raise TokenizationError(f"positional dim {dim} is not divisible by 4")
    if not torch.isfinite(coords).all():
        raise TokenizationError("non-finite coordinates")
    n_freq = dim // 4
    exponent = torch.arange(n_freq, dtype=coords.dtype, device=coords.device) / n_freq
    freqs = 2 * math.pi / (temperature ** exponent)
    x = (coords[..., 0:1] / scale) * freqs
    y = (coords[..., 1:2] / scale) * freqs
    return torch.cat([x.sin(), x.cos(), y.sin(), y.cos()], dim=-1)


class ModalityPositionalEmbedding(nn.Module):
    """Sinusoidal core followed by a learned 2-layer map per modality."""

    def __init__(self, dim: int, scale: float, temperature: float) -> None:
        super().__init__()
        if dim % 4 != 0:
            raise TokenizationError(f"positional dim {dim} is not divisible by 4")
        self.dim = dim
        self.scale = scale
        self.temperature = temperature
        self.heads = nn.ModuleDict({m.value: MLP(dim, dim, dim, 2) for m in Modality})

    def forward(self, coords: Tensor, modality: Modality) -> Tensor:
        code = sinusoidal_encoding(coords, self.dim, self.scale, self.temperature)
        return self.heads[modality.value](code)


class CenterPositionalEmbedding(nn.Module):
    """Sinusoidal code of predicted box centers through one shared MLP."""

    def __init__(self, dim: int, scale: float, temperature: float) -> None:
        super().__init__()
        self.dim = dim
        self.scale = scale
        self.temperature = temperature
        self.mlp = MLP(dim, dim, dim, 2)

    def forward(self, centers: Tensor) -> Tensor:
        return self.mlp(sinusoidal_encoding(centers, self.dim, self.scale, self.temperature))
