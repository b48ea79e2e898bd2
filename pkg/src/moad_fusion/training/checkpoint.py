"""Checkpoint container.

Layout, all integers little-endian:

    8 bytes   magic b"MOADCKPT"
    8 bytes   u64 manifest length M
    M bytes   CheckpointManifest as compact JSON with sorted keys
    rest      tensor payloads, concatenated in manifest order

Saving the same state twice yields identical bytes.
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import torch
from pydantic import ValidationError
from torch import Tensor

from moad_fusion.errors import CheckpointError, SchemaVersionError
from moad_fusion.models.common import SCHEMA_VERSION
from moad_fusion.models.config import ExperimentConfig
from moad_fusion.models.records import CheckpointManifest, TensorEntry
from moad_fusion.network.detector import Detector, build_detector

logger = logging.getLogger(__name__)

MAGIC = b"MOADCKPT"
_HEADER = struct.Struct("<Q")

_TORCH_TO_NUMPY = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
}


@dataclass(frozen=True)
class CheckpointState:
    """Parameters keyed by module path plus the run they came from."""

    stage: str
    step: int
    config: ExperimentConfig
    tensors: Dict[str, Tensor]


def checkpoint_bytes(state: CheckpointState) -> bytes:
    entries: List[TensorEntry] = []
    chunks: List[bytes] = []
    offset = 0
    for key in sorted(state.tensors):
        tensor = state.tensors[key].detach().cpu().contiguous()
        if tensor.dtype not in _TORCH_TO_NUMPY:
            raise CheckpointError(f"unsupported dtype {tensor.dtype}", key=key)
        dtype = _TORCH_TO_NUMPY[tensor.dtype]
        payload = np.ascontiguousarray(tensor.numpy(), dtype=dtype).tobytes()
        entries.append(
            TensorEntry(
                key=key, dtype=dtype, shape=list(tensor.shape), offset=offset, nbytes=len(payload)
            )
        )
        chunks.append(payload)
        offset += len(payload)

    manifest = CheckpointManifest(
        schema_version=SCHEMA_VERSION,
        stage=state.stage,
        step=state.step,
        config=state.config,
        tensors=entries,
    )
    header = json.dumps(
        manifest.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    return MAGIC + _HEADER.pack(len(header)) + header + b"".join(chunks)


def parse_checkpoint(data: bytes, source: str = "<bytes>") -> CheckpointState:
    if len(data) < len(MAGIC) + _HEADER.size or not data.startswith(MAGIC):
        raise CheckpointError(f"{source}: not a moad-fusion checkpoint")
    start = len(MAGIC) + _HEADER.size
    (length,) = _HEADER.unpack_from(data, len(MAGIC))
    if start + length > len(data):
        raise CheckpointError(f"{source}: manifest runs past the end of the file")
    try:
        raw = json.loads(data[start : start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source}: unreadable manifest: {e}") from e

    version = raw.get("schemaVersion") if isinstance(raw, dict) else None
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(str(version), SCHEMA_VERSION, source)
    try:
        manifest = CheckpointManifest.model_validate(raw)
    except ValidationError as e:
        raise CheckpointError(f"{source}: invalid manifest: {e}") from e

    payload = memoryview(data)[start + length :]
    tensors: Dict[str, Tensor] = {}
    for entry in manifest.tensors:
        if entry.offset + entry.nbytes > len(payload):
            raise CheckpointError(f"{source}: truncated payload", key=entry.key)
        dtype = np.dtype(entry.dtype)
        count = int(np.prod(entry.shape, dtype=np.int64))
        if count * dtype.itemsize != entry.nbytes:
            raise CheckpointError(
                f"{source}: size does not match shape {entry.shape}", key=entry.key
            )
        array = np.frombuffer(payload, dtype=dtype, count=count, offset=entry.offset)
        tensors[entry.key] = torch.from_numpy(array.reshape(entry.shape).copy())
    return CheckpointState(
        stage=manifest.stage, step=manifest.step, config=manifest.config, tensors=tensors
    )


def save_checkpoint(state: CheckpointState, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(state))
    logger.info(
        "Saved %s checkpoint (step %d, %d tensors) to %s",
        state.stage,
        state.step,
        len(state.tensors),
        path,
    )
    return path


def load_checkpoint(path: Union[str, Path]) -> CheckpointState:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    state = parse_checkpoint(path.read_bytes(), str(path))
    logger.info("Loaded %s checkpoint (step %d) from %s", state.stage, state.step, path)
    return state


def detector_state(
    detector: Detector, cfg: ExperimentConfig, stage: str, step: int
) -> CheckpointState:
    return CheckpointState(
        stage=stage,
        step=step,
        config=cfg,
        tensors={k: v.detach().clone() for k, v in detector.state_dict().items()},
    )


def detector_from_checkpoint(state: CheckpointState) -> Detector:
    """Rebuild the detector of a checkpoint from its config snapshot."""
    detector = build_detector(state.config)
    expected = detector.state_dict()
    for key, value in expected.items():
        if key not in state.tensors:
            raise CheckpointError("missing from checkpoint", key=key)
        if tuple(state.tensors[key].shape) != tuple(value.shape):
            raise CheckpointError(
                f"shape {tuple(state.tensors[key].shape)} != {tuple(value.shape)}", key=key
            )
    unexpected = sorted(set(state.tensors) - set(expected))
    if unexpected:
        raise CheckpointError("not a parameter of the detector", key=unexpected[0])
    detector.load_state_dict(state.tensors)
    return detector


def load_moad_state(detector: Detector, state: CheckpointState) -> None:
    """Load only the MOAD tensors of a checkpoint into `detector`."""
    prefix = "moad."
    moad = {k[len(prefix) :]: v for k, v in state.tensors.items() if k.startswith(prefix)}
    expected = detector.moad.state_dict()
    for key, value in expected.items():
        if key not in moad:
            raise CheckpointError("missing from checkpoint", key=prefix + key)
        if tuple(moad[key].shape) != tuple(value.shape):
            raise CheckpointError(
                f"shape {tuple(moad[key].shape)} != {tuple(value.shape)}", key=prefix + key
            )
    detector.moad.load_state_dict(moad)


STAGE1_SECTIONS = ("model", "world", "geo_sensor", "sem_sensor")


def check_stage1_config(state: CheckpointState, cfg: ExperimentConfig) -> None:
    """Stage 2 must continue the network and world the stage-1 checkpoint was trained on."""
    for section in STAGE1_SECTIONS:
        saved, requested = getattr(state.config, section), getattr(cfg, section)
        if saved != requested:
            changed = sorted(
                k for k in type(saved).model_fields if getattr(saved, k) != getattr(requested, k)
            )
            raise CheckpointError(
                f"{section} config differs from the {state.stage} checkpoint's snapshot "
                f"({', '.join(f'{section}.{k}' for k in changed)})"
            )
