"""JSON Schema export and validation of persisted records."""

import json
from pathlib import Path
from typing import Any, Dict, List, Type, Union

from pydantic import BaseModel

from moad_fusion.errors import SchemaVersionError
from moad_fusion.models.common import SCHEMA_BASE, SCHEMA_VERSION
from moad_fusion.models.config import ExperimentConfig
from moad_fusion.models.records import (
    CheckpointManifest,
    DatasetManifest,
    DatasetRecord,
    TrainLogRecord,
)
from moad_fusion.models.report import ARTIFACT_TYPES
from moad_fusion.models.scene import Scene

SCHEMA_FILES: Dict[str, Type[BaseModel]] = {
    "experiment-config.json": ExperimentConfig,
    "scene.json": Scene,
    "dataset-manifest.json": DatasetManifest,
    "dataset-record.json": DatasetRecord,
    "checkpoint-manifest.json": CheckpointManifest,
    "train-log-record.json": TrainLogRecord,
    "eval-report.json": ARTIFACT_TYPES["EvalReport"],
    "robustness-table.json": ARTIFACT_TYPES["RobustnessTable"],
    "ablation-table.json": ARTIFACT_TYPES["AblationTable"],
    "ensemble-table.json": ARTIFACT_TYPES["EnsembleTable"],
}

TYPED_RECORDS: Dict[str, Type[BaseModel]] = {
    **ARTIFACT_TYPES,
    "DatasetManifest": DatasetManifest,
    "Scene": Scene,
}


def schema_id(filename: str) -> str:
    return f"{SCHEMA_BASE}:{Path(filename).stem}"


def model_schema(
    model_class: Type[BaseModel], schema_ref: str, mode: str = "serialization"
) -> Dict[str, Any]:
    """JSON Schema 2020-12 of a record, keyed by its aliases."""
    schema = model_class.model_json_schema(mode=mode, by_alias=True)  # type: ignore[arg-type]
    schema["$schema"] = "https://json-schema.org/draft/2020-12/schema"
    schema["$id"] = schema_ref
    return schema


def export_schemas(out_dir: Union[str, Path]) -> List[Path]:
    """Write one schema file per persisted record."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for filename, model_class in SCHEMA_FILES.items():
        path = out_dir / filename
        with open(path, "w", encoding="utf-8") as f:
            schema = model_schema(model_class, schema_id(filename))
            json.dump(schema, f, indent=2, ensure_ascii=False)
            f.write("\n")
        written.append(path)
    return written


def record_class(data: Dict[str, Any], path: Path) -> Type[BaseModel]:
    """Record model of a JSON document: by `@type`, else by its shape."""
    type_name = data.get("@type")
    if type_name is not None:
        if type_name not in TYPED_RECORDS:
            raise ValueError(f"{path}: unknown @type {type_name!r}")
        return TYPED_RECORDS[type_name]
    if "world" in data and "model" in data:
        return ExperimentConfig
    raise ValueError(f"{path}: cannot tell which record this is (no @type)")


def validate_artifact(path: Union[str, Path]) -> BaseModel:
    """Load a JSON artifact and validate it with pydantic and, if installed, jsonschema."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object")
    version = data.get("schemaVersion")
    if version is not None and version != SCHEMA_VERSION:
        raise SchemaVersionError(str(version), SCHEMA_VERSION, str(path))

    model_class = record_class(data, path)
    record = model_class.model_validate(data)
    try:
        import jsonschema  # type: ignore[import-untyped]
    except ImportError:
        return record
    schema = model_schema(model_class, schema_id(model_class.__name__), mode="validation")
    jsonschema.validate(data, schema)
    return record
