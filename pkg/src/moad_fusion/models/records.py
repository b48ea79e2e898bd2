"""On-disk records: dataset index, checkpoint manifest and training log rows."""

from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from moad_fusion.models.common import SCHEMA_BASE, SCHEMA_VERSION
from moad_fusion.models.config import ExperimentConfig, SensorConfig, WorldConfig
from moad_fusion.models.scene import NoiseRecord, Scene


class GridBlobRef(BaseModel):
    """Location of one rendered grid inside a split's raw float32 blob."""

    model_config = ConfigDict(populate_by_name=True, frozen=True)

    offset: int = Field(..., ge=0, description="Byte offset into the blob file")
    shape: Tuple[int, int, int, int] = Field(..., description="(views, H, W, F)")
    dtype: Literal["<f4"] = Field(default="<f4", description="Little-endian float32")
    noise: NoiseRecord = Field(default_factory=NoiseRecord)


class DatasetRecord(BaseModel):
    """One line of a split's `index.jsonl`."""

    model_config = ConfigDict(
        populate_by_name=True,
        frozen=True,
        json_schema_extra={
            "$schema": "https://json-schema.org/draft/2020-12/schema",
            "$id": f"{SCHEMA_BASE}:dataset-record",
        },
    )

    schema_version: str = Field(..., alias="schemaVersion")
    index: int = Field(..., ge=0)
    scene: Scene
    geo: GridBlobRef
    sem: GridBlobRef


class DatasetManifest(BaseModel):
    """`meta.json` of a split directory."""

    model_config = ConfigDict(
        populate_by_name=True,
        frozen=True,
        json_schema_extra={
            "$schema": "https://json-schema.org/draft/2020-12/schema",
            "$id": f"{SCHEMA_BASE}:dataset-manifest",
        },
    )

    type_: Literal["DatasetManifest"] = Field(default="DatasetManifest", alias="@type")
    schema_version: str = Field(default=SCHEMA_VERSION, alias="schemaVersion")
    split: str
    num_scenes: int = Field(..., ge=0, alias="numScenes")
    root_seed: int = Field(..., ge=0, alias="rootSeed")
    world: WorldConfig
    geo_sensor: SensorConfig = Field(..., alias="geoSensor")
    sem_sensor: SensorConfig = Field(..., alias="semSensor")


class TensorEntry(BaseModel):
    """One parameter tensor in a checkpoint payload."""

    model_config = ConfigDict(populate_by_name=True, frozen=True)

    key: str = Field(..., description="Module path of the parameter or buffer")
    dtype: Literal["<f4", "<f8", "<i8"] = Field(..., description="Little-endian numpy dtype")
    shape: List[int] = Field(default_factory=list)
    offset: int = Field(..., ge=0, description="Byte offset into the payload")
    nbytes: int = Field(..., ge=0)


class CheckpointManifest(BaseModel):
    """Structured-text header of a checkpoint container."""

    model_config = ConfigDict(
        populate_by_name=True,
        frozen=True,
        json_schema_extra={
            "$schema": "https://json-schema.org/draft/2020-12/schema",
            "$id": f"{SCHEMA_BASE}:checkpoint-manifest",
        },
    )

    type_: Literal["CheckpointManifest"] = Field(default="CheckpointManifest", alias="@type")
    schema_version: str = Field(..., alias="schemaVersion")
    stage: Literal["init", "stage1", "stage2"]
    step: int = Field(..., ge=0)
    config: ExperimentConfig
    tensors: List[TensorEntry] = Field(default_factory=list)


class TrainLogRecord(BaseModel):
    """One line of `train_log.jsonl`."""

    model_config = ConfigDict(populate_by_name=True)

    stage: int = Field(..., ge=1, le=2)
    epoch: int = Field(..., ge=0)
    step: int = Field(..., ge=0)
    lr: float
    losses: Dict[str, float] = Field(
        ..., description="L_LC, L_L, L_C, L_total in stage 1; L_PME in stage 2"
    )
    augmented: Optional[bool] = Field(None, description="Whether GT pasting was active")
