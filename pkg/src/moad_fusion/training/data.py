"""Batching of rendered scene samples into model inputs."""

from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor

from moad_fusion.data_types.predictions import BoxTargets, targets_from_scenes
from moad_fusion.data_types.tokens import TokenSet
from moad_fusion.models.common import Modality
from moad_fusion.models.scene import Scene
from moad_fusion.network.tokenizer import Tokenizer
from moad_fusion.world.dataset import SceneSample


@dataclass(frozen=True)
class InputBatch:
    """B scenes sharing one sensor layout and one missing-modality pattern.

    geo_values: (B, T_L, F); sem_values: (B, T_C, F); coords are (T, 2) per modality.
    """

    geo_values: Tensor
    geo_coords: Tensor
    sem_values: Tensor
    sem_coords: Tensor
    geo_missing: bool
    sem_missing: bool
    scenes: Tuple[Scene, ...]

    @property
    def batch_size(self) -> int:
        return len(self.scenes)

    def targets(self, dtype: torch.dtype = torch.float32) -> List[BoxTargets]:
        return targets_from_scenes(self.scenes, dtype=dtype)


def missing_pattern(sample: SceneSample) -> Tuple[bool, bool]:
    return (sample.geo.missing, sample.sem.missing)


def collate(samples: Sequence[SceneSample], dtype: torch.dtype = torch.float32) -> InputBatch:
    if not samples:
        raise ValueError("cannot collate an empty batch")
    patterns = {missing_pattern(s) for s in samples}
    if len(patterns) != 1:
        raise ValueError("a batch must share one missing-modality pattern")
    geo_missing, sem_missing = patterns.pop()
    first = samples[0]
    return InputBatch(
        geo_values=torch.as_tensor(np.stack([s.geo.flat_values() for s in samples]), dtype=dtype),
        geo_coords=torch.as_tensor(first.geo.flat_coords().copy(), dtype=dtype),
        sem_values=torch.as_tensor(np.stack([s.sem.flat_values() for s in samples]), dtype=dtype),
        sem_coords=torch.as_tensor(first.sem.flat_coords().copy(), dtype=dtype),
        geo_missing=geo_missing,
        sem_missing=sem_missing,
        scenes=tuple(s.scene for s in samples),
    )


def tokenize_batch(tokenizer: Tokenizer, batch: InputBatch) -> Tuple[TokenSet, TokenSet]:
    param = next(tokenizer.parameters())
    tokens_L = tokenizer(
        batch.geo_values.to(param),
        batch.geo_coords.to(param),
        Modality.GEO,
        missing=batch.geo_missing,
    )
    tokens_C = tokenizer(
        batch.sem_values.to(param),
        batch.sem_coords.to(param),
        Modality.SEM,
        missing=batch.sem_missing,
    )
    return tokens_L, tokens_C


def iterate_batches(
    num_samples: int, batch_size: int, seed: Optional[int] = None
) -> Iterator[List[int]]:
    """Index lists of consecutive batches; shuffled when a seed is given."""
    order = np.arange(num_samples)
    if seed is not None:
        order = np.random.default_rng(seed).permutation(num_samples)
    for start in range(0, num_samples, batch_size):
        yield [int(i) for i in order[start : start + batch_size]]


def group_by_missing(samples: Sequence[SceneSample]) -> List[Tuple[Tuple[bool, bool], List[int]]]:
    """Sample indices grouped by missing pattern, groups in first-seen order."""
    groups: Dict[Tuple[bool, bool], List[int]] = {}
    for i, sample in enumerate(samples):
        groups.setdefault(missing_pattern(sample), []).append(i)
    return list(groups.items())
