"""Tests for the checkpoint container."""

import json
import struct

import pytest
import torch

from moad_fusion.errors import CheckpointError, SchemaVersionError
from moad_fusion.network.detector import build_detector
from moad_fusion.training.checkpoint import (
    MAGIC,
    CheckpointState,
    checkpoint_bytes,
    detector_from_checkpoint,
    detector_state,
    load_checkpoint,
    load_moad_state,
    parse_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def state(smoke_cfg):
    return detector_state(build_detector(smoke_cfg), smoke_cfg, "init", 0)


def _rewrite_manifest(data: bytes, **changes) -> bytes:
    (length,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    manifest = json.loads(data[start : start + length])
    manifest.update(changes)
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + data[start + length :]


class TestContainer:
    """Byte layout and validation."""

    def test_round_trip_is_byte_identical(self, state):
        data = checkpoint_bytes(state)
        assert data.startswith(MAGIC)
        parsed = parse_checkpoint(data)
        assert checkpoint_bytes(parsed) == data
        assert parsed.stage == "init" and parsed.step == 0
        assert parsed.config == state.config
        assert set(parsed.tensors) == set(state.tensors)
        for key, tensor in state.tensors.items():
            assert torch.equal(parsed.tensors[key], tensor)

    def test_saving_twice_gives_same_file(self, state, tmp_path):
        a = save_checkpoint(state, tmp_path / "a.ckpt")
        b = save_checkpoint(load_checkpoint(a), tmp_path / "b.ckpt")
        assert a.read_bytes() == b.read_bytes()

    def test_float64_tensors(self, smoke_cfg):
        state = CheckpointState("stage1", 3, smoke_cfg, {"x": torch.arange(6, dtype=torch.float64).view(2, 3)})
        parsed = parse_checkpoint(checkpoint_bytes(state))
        assert parsed.tensors["x"].dtype == torch.float64
        assert torch.equal(parsed.tensors["x"], state.tensors["x"])

    def test_unsupported_dtype(self, smoke_cfg):
        state = CheckpointState("init", 0, smoke_cfg, {"flag": torch.ones(2, dtype=torch.bool)})
        with pytest.raises(CheckpointError) as err:
            checkpoint_bytes(state)
        assert err.value.key == "flag"

    def test_schema_version_mismatch(self, state):
        data = _rewrite_manifest(checkpoint_bytes(state), schemaVersion="9.9")
        with pytest.raises(SchemaVersionError) as err:
            parse_checkpoint(data)
        assert err.value.found == "9.9"

    def test_truncated_payload_names_tensor(self, state):
        data = checkpoint_bytes(state)
        with pytest.raises(CheckpointError) as err:
            parse_checkpoint(data[:-1])
        assert err.value.key == sorted(state.tensors)[-1]

    def test_not_a_checkpoint(self, tmp_path):
        with pytest.raises(CheckpointError):
            parse_checkpoint(b"PK\x03\x04 definitely not ours")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "missing.ckpt")

    def test_unknown_stage_is_rejected(self, state):
        with pytest.raises(CheckpointError):
            parse_checkpoint(_rewrite_manifest(checkpoint_bytes(state), stage="stage3"))


class TestDetectorRestore:
    """Rebuilding a detector from a checkpoint."""

    def test_restores_every_tensor(self, state):
        with torch.no_grad():
            state.tensors["moad.queries.anchors"].add_(1.0)
        detector = detector_from_checkpoint(state)
        for key, value in detector.state_dict().items():
            assert torch.equal(value, state.tensors[key])

    def test_missing_tensor_names_key(self, state):
        tensors = dict(state.tensors)
        del tensors["pme.bias.alpha"]
        with pytest.raises(CheckpointError) as err:
            detector_from_checkpoint(CheckpointState(state.stage, state.step, state.config, tensors))
        assert err.value.key == "pme.bias.alpha"

    def test_unexpected_tensor(self, state):
        tensors = dict(state.tensors, extra=torch.zeros(1))
        with pytest.raises(CheckpointError) as err:
            detector_from_checkpoint(CheckpointState(state.stage, state.step, state.config, tensors))
        assert err.value.key == "extra"

    def test_load_moad_state_leaves_ensemble(self, smoke_cfg, state):
        detector = build_detector(smoke_cfg)
        pme_before = {k: v.clone() for k, v in detector.pme.state_dict().items()}
        tensors = {k: (v + 1.0 if v.is_floating_point() else v) for k, v in state.tensors.items()}
        load_moad_state(detector, CheckpointState(state.stage, state.step, state.config, tensors))
        for key, value in detector.moad.state_dict().items():
            assert torch.equal(value, tensors["moad." + key])
        for key, value in detector.pme.state_dict().items():
            assert torch.equal(value, pme_before[key])
