"""Synthetic GEO (LiDAR-like) and SEM (camera-like) BEV renderers.

Each object deposits an isotropic Gaussian footprint (sigma in cells). Blobs are
max-composed: the intensity channel holds the strongest footprint, the class and
log-size channels carry the encoding of the object that owns the cell, scaled by
that footprint. Background clutter is uniform in [0, noise_floor) on the
intensity channel only.
"""

from typing import Tuple

import numpy as np

from moad_fusion.data_types.sensor_grid import (
    INTENSITY_CHANNEL,
    SensorGrid,
    class_channels,
    num_features,
    size_channels,
)
from moad_fusion.models.common import Modality
from moad_fusion.models.config import SensorConfig, derive_seed
from moad_fusion.models.scene import NoiseRecord, Scene


def cell_centers(extent: Tuple[float, float, float, float], sensor_cfg: SensorConfig) -> np.ndarray:
    """(views, H, W, 2) BEV centers; view v covers the v-th x-strip of the extent."""
    x_min, x_max, y_min, y_max = extent
    v, h, w = sensor_cfg.num_views, sensor_cfg.grid_h, sensor_cfg.grid_w
    cell_w = (x_max - x_min) / (v * w)
    cell_h = (y_max - y_min) / h
    xs = x_min + (np.arange(v * w) + 0.5) * cell_w
    ys = y_min + (np.arange(h) + 0.5) * cell_h
    coords = np.empty((v, h, w, 2), dtype=np.float64)
    for view in range(v):
        gx, gy = np.meshgrid(xs[view * w : (view + 1) * w], ys, indexing="xy")
        coords[view, ..., 0] = gx
        coords[view, ..., 1] = gy
    return coords


def cell_size(extent: Tuple[float, float, float, float], sensor_cfg: SensorConfig) -> Tuple[float, float]:
    """(width, height) of one cell in meters."""
    x_min, x_max, y_min, y_max = extent
    return (
        (x_max - x_min) / (sensor_cfg.num_views * sensor_cfg.grid_w),
        (y_max - y_min) / sensor_cfg.grid_h,
    )


def render_seed(scene: Scene, sensor_cfg: SensorConfig, modality: Modality) -> int:
    return derive_seed(scene.seed, "render", modality.value, sensor_cfg.seed)


def _streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    jitter, clutter, band = np.random.SeedSequence(seed).spawn(3)
    return (
        np.random.default_rng(jitter),
        np.random.default_rng(clutter),
        np.random.default_rng(band),
    )


def object_footprints(
    scene: Scene, sensor_cfg: SensorConfig, modality: Modality
) -> Tuple[np.ndarray, np.ndarray]:
    """Centers (K, 2) and sizes (K, 2) as the sensor perceives them.

    Centers are displaced by N(0, jitter_sigma) cells per axis; sizes scaled by
    exp(N(0, size_noise)).
    """
    jitter_rng, _, _ = _streams(render_seed(scene, sensor_cfg, modality))
    k = len(scene.boxes)
    centers = np.array([b.center for b in scene.boxes], dtype=np.float64).reshape(k, 2)
    sizes = np.array([b.size for b in scene.boxes], dtype=np.float64).reshape(k, 2)
    offsets = jitter_rng.normal(0.0, 1.0, size=(k, 2))
    size_eps = jitter_rng.normal(0.0, 1.0, size=(k, 2))
    cw, ch = cell_size(scene.world_extent, sensor_cfg)
    centers = centers + sensor_cfg.jitter_sigma * offsets * np.array([cw, ch])
    sizes = sizes * np.exp(sensor_cfg.size_noise * size_eps)
    return centers, sizes


def class_encoding(num_classes: int, confusion: float) -> np.ndarray:
    """(C, C) rows: label-smoothed one-hot code of each class."""
    return (1.0 - confusion) * np.eye(num_classes) + confusion / num_classes


def render_view(
    scene: Scene, sensor_cfg: SensorConfig, modality: Modality, num_classes: int
) -> SensorGrid:
    seed = render_seed(scene, sensor_cfg, modality)
    _, clutter_rng, band_rng = _streams(seed)
    coords = cell_centers(scene.world_extent, sensor_cfg)
    v, h, w = coords.shape[:3]
    values = np.zeros((v, h, w, num_features(num_classes)), dtype=np.float64)

    centers, sizes = object_footprints(scene, sensor_cfg, modality)
    if len(centers):
        cw, ch = cell_size(scene.world_extent, sensor_cfg)
        dx = (coords[None, ..., 0] - centers[:, 0, None, None, None]) / cw
        dy = (coords[None, ..., 1] - centers[:, 1, None, None, None]) / ch
        blobs = np.exp(-(dx**2 + dy**2) / (2.0 * sensor_cfg.blob_sigma**2))
        owner = blobs.argmax(axis=0)
        peak = blobs.max(axis=0)
        labels = np.array([b.class_id for b in scene.boxes], dtype=np.int64)
        codes = class_encoding(num_classes, sensor_cfg.class_confusion)[labels]
        values[..., INTENSITY_CHANNEL] = peak
        values[..., class_channels(num_classes)] = peak[..., None] * codes[owner]
        values[..., size_channels(num_classes)] = peak[..., None] * np.log(sizes)[owner]

    clutter = clutter_rng.uniform(0.0, sensor_cfg.noise_floor, size=(v, h, w))
    values[..., INTENSITY_CHANNEL] += clutter

    # band start is drawn unconditionally so wider bands cover narrower ones
    total_cols = v * w
    start = int(band_rng.integers(total_cols))
    width = int(round(sensor_cfg.occlusion_fraction * total_cols))
    if width > 0:
        cols = (start + np.arange(width)) % total_cols
        flat = values.transpose(1, 0, 2, 3).reshape(h, total_cols, -1)
        flat[:, cols, :] = 0.0
        values = flat.reshape(h, v, w, -1).transpose(1, 0, 2, 3)

    noise = NoiseRecord(
        render_seed=seed,
        jitter_sigma=sensor_cfg.jitter_sigma,
        occlusion_fraction=sensor_cfg.occlusion_fraction,
    )
    return SensorGrid(
        modality=modality,
        values=np.ascontiguousarray(values, dtype=np.float32),
        cell_coords=coords,
        noise=noise,
    )


def render_geo_view(scene: Scene, sensor_cfg: SensorConfig, num_classes: int) -> SensorGrid:
    """Accurate geometry, ambiguous classes."""
    return render_view(scene, sensor_cfg, Modality.GEO, num_classes)


def render_sem_view(scene: Scene, sensor_cfg: SensorConfig, num_classes: int) -> SensorGrid:
    """Sharp classes, jittered geometry, occlusion band."""
    return render_view(scene, sensor_cfg, Modality.SEM, num_classes)
