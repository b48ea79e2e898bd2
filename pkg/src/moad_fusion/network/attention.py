"""Multi-head attention with an optional additive logit bias."""

import math
from typing import Optional, Tuple

import torch
import torch.nn as nn
from torch import Tensor


class MultiHeadedAttention(nn.Module):
    """Scaled dot-product attention over `head_count` heads.

    `bias` is added to the attention logits before the softmax; it broadcasts
    against (batch, heads, query_len, key_len), so an (N, K) or (B, N, K) matrix
    is shared by every head.
    """

    def __init__(self, head_count: int, model_dim: int, dropout: float = 0.0) -> None:
        super().__init__()
        if model_dim % head_count != 0:
            raise ValueError(f"model_dim {model_dim} is not divisible by head_count {head_count}")
        self.head_count = head_count
        self.dim_per_head = model_dim // head_count
        self.model_dim = model_dim
        self.linear_query = nn.Linear(model_dim, model_dim)
        self.linear_keys = nn.Linear(model_dim, model_dim)
        self.linear_values = nn.Linear(model_dim, model_dim)
        self.final_linear = nn.Linear(model_dim, model_dim)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.head_count, self.dim_per_head).transpose(1, 2)

    def forward(
        self,
        query: Tensor,
        key: Tensor,
        value: Tensor,
        bias: Optional[Tensor] = None,
    ) -> Tuple[Tensor, Tensor]:
        """query (B, N, D), key/value (B, K, D) -> output (B, N, D), weights (B, H, N, K)."""
        b, n, _ = query.shape
        q = self._split(self.linear_query(query)) / math.sqrt(self.dim_per_head)
        k = self._split(self.linear_keys(key))
        v = self._split(self.linear_values(value))

        scores = torch.matmul(q, k.transpose(2, 3))
        if bias is not None:
            if bias.dim() == 3:
                bias = bias.unsqueeze(1)
            scores = scores + bias
        attn = torch.softmax(scores, dim=-1)
        context = torch.matmul(self.dropout(attn), v)
        context = context.transpose(1, 2).reshape(b, n, self.model_dim)
        return self.final_linear(context), attn
