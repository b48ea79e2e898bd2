"""Shared transformer decoder (post-norm, DETR layout)."""

import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from moad_fusion.network.attention import MultiHeadedAttention


class DecoderLayer(nn.Module):
    """Self-attention over queries, cross-attention over tokens, feed-forward."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float = 0.0) -> None:
        super().__init__()
        self.self_attn = MultiHeadedAttention(heads, dim, dropout)
        self.cross_attn = MultiHeadedAttention(heads, dim, dropout)
        self.linear1 = nn.Linear(dim, ffn_dim)
        self.linear2 = nn.Linear(ffn_dim, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.norm3 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, tgt: Tensor, query_pos: Tensor, memory: Tensor, memory_pos: Tensor) -> Tensor:
        q = k = tgt + query_pos
        out, _ = self.self_attn(q, k, tgt)
        tgt = self.norm1(tgt + self.dropout(out))

        out, _ = self.cross_attn(tgt + query_pos, memory + memory_pos, memory)
        tgt = self.norm2(tgt + self.dropout(out))

        out = self.linear2(self.dropout(F.relu(self.linear1(tgt))))
        return self.norm3(tgt + self.dropout(out))


class SharedDecoder(nn.Module):
    """The one decoder every decoding branch runs."""

    def __init__(
        self, dim: int, heads: int, num_layers: int, ffn_dim: int, dropout: float = 0.0
    ) -> None:
        super().__init__()
        self.layers = nn.ModuleList(
            DecoderLayer(dim, heads, ffn_dim, dropout) for _ in range(num_layers)
        )
        self.norm = nn.LayerNorm(dim)

    def forward(self, content: Tensor, query_pos: Tensor, memory: Tensor, memory_pos: Tensor) -> Tensor:
        """content (B, N, D); query_pos (N, D) or (B, N, D); memory (B, T, D); memory_pos (T, D)."""
        if memory.shape[1] == 0:
            raise ValueError("cross-attention needs at least one key token")
        tgt = content
        for layer in self.layers:
            tgt = layer(tgt, query_pos, memory, memory_pos)
        return self.norm(tgt)
