"""Token and query containers consumed by the shared decoder."""

from dataclasses import dataclass

from torch import Tensor

from moad_fusion.models.common import Branch, Modality


@dataclass(frozen=True)
class TokenSet:
    """Flattened tokens of one modality.

    tokens: (B, T, D); coords: (T, 2) BEV meters; modality_pe: (T, D). Coordinates
    and positional embeddings are shared by every scene of the batch since they
    only depend on the sensor layout.
    """

    tokens: Tensor
    coords: Tensor
    modality_pe: Tensor
    modality: Modality
    missing: bool = False

    def __post_init__(self) -> None:
        b, t, d = self.tokens.shape
        if self.coords.shape != (t, 2) or self.modality_pe.shape != (t, d):
            raise ValueError(
                f"{self.modality.value} tokens {tuple(self.tokens.shape)} misaligned with "
                f"coords {tuple(self.coords.shape)} / pe {tuple(self.modality_pe.shape)}"
            )

    @property
    def num_tokens(self) -> int:
        return int(self.tokens.shape[1])

    @property
    def batch_size(self) -> int:
        return int(self.tokens.shape[0])

    @classmethod
    def empty(cls, batch_size: int, dim: int, modality: Modality, like: Tensor) -> "TokenSet":
        return cls(
            tokens=like.new_zeros((batch_size, 0, dim)),
            coords=like.new_zeros((0, 2)),
            modality_pe=like.new_zeros((0, dim)),
            modality=modality,
        )


@dataclass(frozen=True)
class QuerySet:
    """Shared object queries: anchors (N, 2), per-modality query PEs and content (N, D)."""

    anchors: Tensor
    query_pe_L: Tensor
    query_pe_C: Tensor
    content: Tensor

    @property
    def num_queries(self) -> int:
        return int(self.anchors.shape[0])

    def query_pe(self, branch: Branch) -> Tensor:
        if branch == Branch.LC:
            return self.query_pe_L + self.query_pe_C
        if branch == Branch.L:
            return self.query_pe_L
        if branch == Branch.C:
            return self.query_pe_C
        raise ValueError(f"no query positional embedding for branch {branch.value}")

    def batched_anchors(self, batch_size: int) -> Tensor:
        return self.anchors.unsqueeze(0).expand(batch_size, -1, -1)
