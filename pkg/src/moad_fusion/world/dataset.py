"""Dataset split files.

A split directory holds:

    meta.json     DatasetManifest
    index.jsonl   one DatasetRecord per scene
    geo.f32       raw little-endian float32 GEO grids, concatenated
    sem.f32       raw little-endian float32 SEM grids, concatenated
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from moad_fusion.data_types.sensor_grid import SensorGrid
from moad_fusion.errors import DatasetError, SchemaVersionError
from moad_fusion.models.common import SCHEMA_VERSION, Modality
from moad_fusion.models.config import ExperimentConfig, SensorConfig, derive_seed
from moad_fusion.models.records import DatasetManifest, DatasetRecord, GridBlobRef
from moad_fusion.models.scene import Scene
from moad_fusion.world.render import cell_centers, render_geo_view, render_sem_view
from moad_fusion.world.scene import generate_scene

logger = logging.getLogger(__name__)

META_FILE = "meta.json"
INDEX_FILE = "index.jsonl"
BLOB_FILES = {Modality.GEO: "geo.f32", Modality.SEM: "sem.f32"}


@dataclass(frozen=True)
class SceneSample:
    """A scene with both rendered views."""

    scene: Scene
    geo: SensorGrid
    sem: SensorGrid


def scene_seed(root_seed: int, split: str, index: int) -> int:
    return derive_seed(root_seed, "scene", split, index)


def render_sample(scene: Scene, cfg: ExperimentConfig) -> SceneSample:
    c = cfg.world.num_classes
    return SceneSample(
        scene=scene,
        geo=render_geo_view(scene, cfg.geo_sensor, c),
        sem=render_sem_view(scene, cfg.sem_sensor, c),
    )


def _render_chunk(args: Tuple[ExperimentConfig, str, Sequence[int]]) -> List[SceneSample]:
    cfg, split, indices = args
    return [
        render_sample(generate_scene(scene_seed(cfg.seed, split, i), cfg.world), cfg)
        for i in indices
    ]


def generate_split(
    cfg: ExperimentConfig, split: str, num_scenes: int, workers: int = 1
) -> List[SceneSample]:
    """Generate and render `num_scenes` scenes.

    Scene i of a split depends only on (root seed, split, i), so the work is
    partitioned by index and merged back in index order.
    """
    indices = list(range(num_scenes))
    if workers <= 1 or num_scenes < 2 * workers:
        samples = _render_chunk((cfg, split, indices))
    else:
        chunks = [indices[w::workers] for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_render_chunk, [(cfg, split, chunk) for chunk in chunks]))
        by_index = {i: s for chunk, part in zip(chunks, parts) for i, s in zip(chunk, part)}
        samples = [by_index[i] for i in indices]
    logger.info("Generated %d %s scenes (%d objects)", len(samples), split,
                sum(len(s.scene.boxes) for s in samples))
    return samples


def write_split(
    split_dir: Union[str, Path], split: str, samples: Sequence[SceneSample], cfg: ExperimentConfig
) -> DatasetManifest:
    """Write a split directory; output bytes depend only on the inputs."""
    split_dir = Path(split_dir)
    split_dir.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(
        split=split,
        num_scenes=len(samples),
        root_seed=cfg.seed,
        world=cfg.world,
        geo_sensor=cfg.geo_sensor,
        sem_sensor=cfg.sem_sensor,
    )
    offsets = {Modality.GEO: 0, Modality.SEM: 0}
    with open(split_dir / BLOB_FILES[Modality.GEO], "wb") as geo_f, open(
        split_dir / BLOB_FILES[Modality.SEM], "wb"
    ) as sem_f, open(split_dir / INDEX_FILE, "w", encoding="utf-8") as index_f:
        for i, sample in enumerate(samples):
            refs = {}
            for grid, fh in ((sample.geo, geo_f), (sample.sem, sem_f)):
                payload = np.ascontiguousarray(grid.values, dtype="<f4").tobytes()
                fh.write(payload)
                refs[grid.modality] = GridBlobRef(
                    offset=offsets[grid.modality], shape=grid.shape, noise=grid.noise
                )
                offsets[grid.modality] += len(payload)
            record = DatasetRecord(
                schema_version=SCHEMA_VERSION,
                index=i,
                scene=sample.scene,
                geo=refs[Modality.GEO],
                sem=refs[Modality.SEM],
            )
            index_f.write(record.model_dump_json(by_alias=True))
            index_f.write("\n")
    (split_dir / META_FILE).write_text(
        manifest.model_dump_json(by_alias=True, indent=2) + "\n", encoding="utf-8"
    )
    logger.info("Wrote %s (%d scenes)", split_dir, len(samples))
    return manifest


def _load_grid(
    blob: bytes, ref: GridBlobRef, modality: Modality, coords: np.ndarray, source: Path
) -> SensorGrid:
    count = int(np.prod(ref.shape))
    end = ref.offset + 4 * count
    if end > len(blob):
        raise DatasetError(f"{source}: grid at offset {ref.offset} runs past the end of the blob")
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=ref.offset).reshape(ref.shape)
    if coords.shape[:3] != tuple(ref.shape[:3]):
        raise DatasetError(f"{source}: grid shape {ref.shape} disagrees with the sensor config")
    return SensorGrid(
        modality=modality, values=values.astype(np.float32), cell_coords=coords, noise=ref.noise
    )


def read_manifest(split_dir: Union[str, Path]) -> DatasetManifest:
    path = Path(split_dir) / META_FILE
    if not path.is_file():
        raise DatasetError(f"no dataset split at {split_dir} (missing {META_FILE})")
    try:
        manifest = DatasetManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise DatasetError(f"{path}: invalid manifest: {e}") from e
    if manifest.schema_version != SCHEMA_VERSION:
        raise SchemaVersionError(manifest.schema_version, SCHEMA_VERSION, str(path))
    return manifest


def read_split(split_dir: Union[str, Path]) -> Tuple[DatasetManifest, List[SceneSample]]:
    """Load a split directory written by `write_split`."""
    split_dir = Path(split_dir)
    manifest = read_manifest(split_dir)
    try:
        blobs = {m: (split_dir / name).read_bytes() for m, name in BLOB_FILES.items()}
        lines = (split_dir / INDEX_FILE).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as e:
        raise DatasetError(f"incomplete dataset split at {split_dir}: {e}") from e

    sensors: Dict[Modality, SensorConfig] = {
        Modality.GEO: manifest.geo_sensor,
        Modality.SEM: manifest.sem_sensor,
    }
    coords = {m: _coords(manifest, s) for m, s in sensors.items()}
    samples: List[SceneSample] = []
    for line in lines:
        if not line.strip():
            continue
        record = DatasetRecord.model_validate_json(line)
        if record.schema_version != SCHEMA_VERSION:
            raise SchemaVersionError(record.schema_version, SCHEMA_VERSION, str(split_dir / INDEX_FILE))
        try:
            record.scene.check_classes(manifest.world.num_classes)
        except ValueError as e:
            raise DatasetError(f"{split_dir}: scene {record.index}: {e}") from e
        samples.append(
            SceneSample(
                scene=record.scene,
                geo=_load_grid(blobs[Modality.GEO], record.geo, Modality.GEO, coords[Modality.GEO], split_dir),
                sem=_load_grid(blobs[Modality.SEM], record.sem, Modality.SEM, coords[Modality.SEM], split_dir),
            )
        )
    if len(samples) != manifest.num_scenes:
        raise DatasetError(
            f"{split_dir}: index lists {len(samples)} scenes, manifest says {manifest.num_scenes}"
        )
    logger.info("Loaded %s split: %d scenes", manifest.split, len(samples))
    return manifest, samples


def _coords(manifest: DatasetManifest, sensor: SensorConfig) -> np.ndarray:
    return cell_centers(manifest.world.extent, sensor)
