"""Sensor malfunction and degradation transforms.

Every transform is pure: the input grid is never modified and the applied spec
is appended to the output's noise record.
"""

import logging
from typing import Sequence, Tuple

import numpy as np

from moad_fusion.data_types.sensor_grid import SensorGrid
from moad_fusion.errors import CorruptionError
from moad_fusion.models.common import CorruptionKind, TargetModality
from moad_fusion.models.scene import CorruptionSpec

logger = logging.getLogger(__name__)

NULL_VALUE = 0.0


def _targets(spec: CorruptionSpec, grid: SensorGrid) -> bool:
    return spec.target_modality == TargetModality.BOTH or spec.target_modality.value == grid.modality.value


def _rng(spec: CorruptionSpec, grid: SensorGrid) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, grid.noise.render_seed]))


def _occlusion_patch(values: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Zero a rectangle covering `fraction` of each view's area."""
    out = values.copy()
    _, h, w, _ = values.shape
    ph = min(h, max(1, int(round(np.sqrt(fraction) * h))))
    pw = min(w, max(1, int(round(fraction * h * w / ph))))
    for view in range(values.shape[0]):
        r0 = int(rng.integers(0, h - ph + 1))
        c0 = int(rng.integers(0, w - pw + 1))
        out[view, r0 : r0 + ph, c0 : c0 + pw, :] = NULL_VALUE
    return out


def _shift(values: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Rigid misalignment: translate every view by a rounded N(0, sigma) cell offset."""
    dr, dc = np.rint(rng.normal(0.0, sigma, size=2)).astype(int)
    out = np.zeros_like(values)
    _, h, w, _ = values.shape
    src_r = slice(max(0, -dr), min(h, h - dr))
    dst_r = slice(max(0, dr), min(h, h + dr))
    src_c = slice(max(0, -dc), min(w, w - dc))
    dst_c = slice(max(0, dc), min(w, w + dc))
    out[:, dst_r, dst_c, :] = values[:, src_r, src_c, :]
    return out


def apply_corruption(grid: SensorGrid, spec: CorruptionSpec) -> SensorGrid:
    """Apply one corruption to a grid of the targeted modality."""
    if not _targets(spec, grid):
        raise CorruptionError(
            f"{spec.kind.value} targets {spec.target_modality.value}, grid is {grid.modality.value}"
        )
    kind = spec.kind
    if kind == CorruptionKind.NONE:
        return grid
    if kind == CorruptionKind.MISSING_MODALITY:
        values = np.full_like(grid.values, NULL_VALUE)
        return grid.replace_values(values, grid.noise.with_corruption(spec, missing=True))
    if spec.magnitude == 0:
        return grid

    source = grid.values.astype(np.float64)
    if kind == CorruptionKind.ADDITIVE_NOISE:
        values = source + spec.magnitude * _rng(spec, grid).normal(size=source.shape)
    elif kind == CorruptionKind.OCCLUSION_PATCH:
        values = _occlusion_patch(source, spec.magnitude, _rng(spec, grid))
    elif kind == CorruptionKind.POSITION_JITTER:
        values = _shift(source, spec.magnitude, _rng(spec, grid))
    elif kind == CorruptionKind.ATTENUATION:
        values = source * (1.0 - spec.magnitude)
    else:
        raise CorruptionError(f"unknown corruption kind {kind!r}")
    return grid.replace_values(values, grid.noise.with_corruption(spec))


def corrupt_pair(
    geo: SensorGrid, sem: SensorGrid, specs: Sequence[CorruptionSpec]
) -> Tuple[SensorGrid, SensorGrid]:
    """Route each spec to the grid(s) it targets, in order."""
    for spec in specs:
        if _targets(spec, geo):
            geo = apply_corruption(geo, spec)
        if _targets(spec, sem):
            sem = apply_corruption(sem, spec)
    return geo, sem
