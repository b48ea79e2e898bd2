"""Rendered sensor grid container."""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from moad_fusion.models.common import Modality
from moad_fusion.models.scene import NoiseRecord

INTENSITY_CHANNEL = 0


def num_features(num_classes: int) -> int:
    """Feature width F: intensity, one channel per class, log-width, log-length."""
    return 1 + num_classes + 2


def class_channels(num_classes: int) -> slice:
    return slice(1, 1 + num_classes)


def size_channels(num_classes: int) -> slice:
    return slice(1 + num_classes, 3 + num_classes)


@dataclass(frozen=True)
class SensorGrid:
    """Dense BEV feature grid of one modality.

    `values` has shape (views, H, W, F) and `cell_coords` (views, H, W, 2) with
    the BEV (x, y) center of each cell. Rows run along y, columns along x. Both
    arrays are read-only; transforms return new grids.
    """

    modality: Modality
    values: np.ndarray
    cell_coords: np.ndarray
    noise: NoiseRecord = field(default_factory=NoiseRecord)

    def __post_init__(self) -> None:
        if self.values.ndim != 4 or self.cell_coords.shape != self.values.shape[:3] + (2,):
            raise ValueError(
                f"values {self.values.shape} and cell_coords {self.cell_coords.shape} disagree"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.modality.value} grid holds non-finite values")
        self.values.setflags(write=False)
        self.cell_coords.setflags(write=False)

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        v, h, w, f = self.values.shape
        return (v, h, w, f)

    @property
    def num_tokens(self) -> int:
        v, h, w, _ = self.shape
        return v * h * w

    @property
    def missing(self) -> bool:
        return self.noise.missing

    def flat_values(self) -> np.ndarray:
        """(T, F) in row-major (view, row, column) order."""
        return self.values.reshape(self.num_tokens, self.shape[3])

    def flat_coords(self) -> np.ndarray:
        """(T, 2), index-aligned with `flat_values`."""
        return self.cell_coords.reshape(self.num_tokens, 2)

    def replace_values(self, values: np.ndarray, noise: NoiseRecord) -> "SensorGrid":
        return SensorGrid(
            modality=self.modality,
            values=np.ascontiguousarray(values, dtype=np.float32),
            cell_coords=self.cell_coords,
            noise=noise,
        )
