"""Tests for scene generation, rendering, corruption and split files."""

import json

import numpy as np
import pytest
from pydantic import ValidationError

from moad_fusion.data_types.sensor_grid import INTENSITY_CHANNEL
from moad_fusion.errors import CorruptionError, DatasetError, PlacementError, SchemaVersionError
from moad_fusion.models.common import CorruptionKind, Modality, TargetModality
from moad_fusion.models.config import SensorConfig, WorldConfig
from moad_fusion.models.scene import CorruptionSpec, GroundTruthBox
from moad_fusion.world.corruption import apply_corruption, corrupt_pair
from moad_fusion.world.dataset import generate_split, read_split, write_split
from moad_fusion.world.render import (
    cell_centers,
    object_footprints,
    render_geo_view,
    render_sem_view,
)
from moad_fusion.world.scene import build_gt_bank, generate_scene, paste_augment

QUIET = SensorConfig(noise_floor=0.0)


def _pairwise_min(centers):
    c = np.asarray(centers, dtype=np.float64)
    if len(c) < 2:
        return np.inf
    d = np.hypot(c[:, None, 0] - c[None, :, 0], c[:, None, 1] - c[None, :, 1])
    return d[np.triu_indices(len(c), k=1)].min()


class TestGenerateScene:
    """World sampling."""

    def test_deterministic_per_seed(self):
        cfg = WorldConfig()
        assert generate_scene(7, cfg) == generate_scene(7, cfg)
        assert generate_scene(7, cfg) != generate_scene(8, cfg)

    def test_zero_objects(self):
        scene = generate_scene(7, WorldConfig(min_objects=0, max_objects=0))
        assert scene.boxes == ()

    def test_counts_and_separation(self):
        cfg = WorldConfig(min_objects=2, max_objects=8)
        for seed in range(50):
            scene = generate_scene(seed, cfg)
            assert 2 <= len(scene.boxes) <= 8
            assert _pairwise_min([b.center for b in scene.boxes]) >= cfg.min_separation
            for box in scene.boxes:
                x, y = box.center
                assert cfg.x_min + cfg.border_margin <= x <= cfg.x_max - cfg.border_margin
                assert cfg.y_min + cfg.border_margin <= y <= cfg.y_max - cfg.border_margin

    def test_unplaceable_density_raises(self):
        cfg = WorldConfig(
            x_min=-4, x_max=4, y_min=-4, y_max=4,
            min_objects=5, max_objects=5, min_separation=20.0, max_retries=5,
        )
        with pytest.raises(PlacementError) as err:
            generate_scene(11, cfg)
        assert err.value.seed == 11
        assert err.value.requested == 5
        assert err.value.placed < 5


class TestRender:
    """GEO and SEM renderers."""

    def test_empty_scene_is_clutter_only(self, make_scene):
        grid = render_geo_view(make_scene(), SensorConfig(), 3)
        assert grid.shape == (1, 16, 16, 6)
        intensity = grid.values[..., INTENSITY_CHANNEL]
        assert np.all(intensity >= 0) and np.all(intensity < 0.05)
        np.testing.assert_array_equal(np.delete(grid.values, INTENSITY_CHANNEL, axis=-1), 0)

    def test_single_object_peaks_at_its_cell(self, make_scene):
        # cell (8, 8) of the 16x16 grid over [-16, 16] is centered at (1, 1)
        scene = make_scene([((1.0, 1.0), (1.9, 4.5), 0)])
        grid = render_geo_view(scene, QUIET, 3)
        idx = np.unravel_index(np.argmax(grid.values[..., 0]), grid.values.shape[:3])
        assert idx == (0, 8, 8)
        assert grid.values[0, 8, 8, 0] == pytest.approx(1.0)

    def test_noise_free_peak_contains_true_center(self, make_scene):
        rng = np.random.default_rng(42)
        coords = cell_centers((-16.0, 16.0, -16.0, 16.0), QUIET)
        for _ in range(20):
            center = tuple(rng.uniform(-14, 14, size=2))
            grid = render_sem_view(make_scene([(center, (1.0, 1.0), 1)]), QUIET, 3)
            _, r, c = np.unravel_index(np.argmax(grid.values[..., 0]), grid.values.shape[:3])
            assert abs(coords[0, r, c, 0] - center[0]) <= 1.0
            assert abs(coords[0, r, c, 1] - center[1]) <= 1.0

    def test_class_channels_encode_label(self, make_scene):
        scene = make_scene([((1.0, 1.0), (0.7, 0.7), 2)])
        grid = render_sem_view(scene, QUIET, 3)
        np.testing.assert_allclose(grid.values[0, 8, 8, 1:4], [0.0, 0.0, 1.0], atol=1e-6)

    def test_sensor_seed_changes_noise_not_geometry(self, make_scene):
        scene = make_scene([((1.0, 1.0), (1.9, 4.5), 0)], seed=3)
        a = render_geo_view(scene, SensorConfig(seed=0), 3)
        b = render_geo_view(scene, SensorConfig(seed=1), 3)
        assert np.argmax(a.values[..., 0]) == np.argmax(b.values[..., 0])
        assert not np.array_equal(a.values, b.values)

    def test_full_occlusion_blanks_the_view(self, make_scene):
        scene = make_scene([((1.0, 1.0), (1.9, 4.5), 0)])
        grid = render_sem_view(scene, SensorConfig(occlusion_fraction=1.0), 3)
        np.testing.assert_array_equal(grid.values, 0)

    def test_occlusion_energy_is_monotone(self, make_scene):
        scene = make_scene([((1.0, 1.0), (1.9, 4.5), 0), ((-9.0, 5.0), (0.7, 0.7), 1)], seed=5)
        energies = [
            np.abs(render_sem_view(scene, SensorConfig(occlusion_fraction=f), 3).values).sum()
            for f in (0.0, 0.25, 0.5, 0.75, 1.0)
        ]
        assert all(b <= a + 1e-9 for a, b in zip(energies, energies[1:]))

    def test_jitter_statistics(self, make_scene):
        sensor = SensorConfig(jitter_sigma=2.0)
        offsets = []
        for seed in range(1000):
            scene = make_scene([((0.0, 0.0), (1.0, 1.0), 0)], seed=seed)
            centers, _ = object_footprints(scene, sensor, Modality.SEM)
            offsets.append(centers[0] / 2.0)  # meters to cells
        offsets = np.asarray(offsets)
        bound = 3 * 2.0 / np.sqrt(len(offsets))
        assert np.all(np.abs(offsets.mean(axis=0)) < bound)
        np.testing.assert_allclose(offsets.std(axis=0), 2.0, rtol=0.1)

    def test_grids_are_read_only(self, make_scene):
        grid = render_geo_view(make_scene(), SensorConfig(), 3)
        with pytest.raises(ValueError):
            grid.values[0, 0, 0, 0] = 1.0


class TestCorruption:
    """Pure sensor malfunction transforms."""

    @pytest.fixture
    def grid(self, make_scene):
        scene = make_scene([((1.0, 1.0), (1.9, 4.5), 0), ((-7.0, 3.0), (0.8, 1.8), 2)], seed=9)
        return render_geo_view(scene, SensorConfig(), 3)

    def test_none_is_identity(self, grid):
        assert apply_corruption(grid, CorruptionSpec()) is grid

    def test_missing_modality_zero_fills(self, grid):
        spec = CorruptionSpec(kind=CorruptionKind.MISSING_MODALITY, target_modality=TargetModality.GEO)
        out = apply_corruption(grid, spec)
        np.testing.assert_array_equal(out.values, 0)
        assert out.missing and out.noise.null_value == 0.0
        assert out.noise.applied == (spec,)
        assert out.shape == grid.shape

    def test_zero_magnitude_is_identity(self, grid):
        for kind in (CorruptionKind.ADDITIVE_NOISE, CorruptionKind.POSITION_JITTER, CorruptionKind.ATTENUATION):
            out = apply_corruption(grid, CorruptionSpec(kind=kind, magnitude=0.0))
            np.testing.assert_array_equal(out.values, grid.values)

    def test_input_is_not_modified(self, grid):
        before = grid.values.copy()
        out = apply_corruption(grid, CorruptionSpec(kind=CorruptionKind.ADDITIVE_NOISE, magnitude=0.5, seed=1))
        np.testing.assert_array_equal(grid.values, before)
        assert not np.array_equal(out.values, before)

    def test_deterministic_in_seed(self, grid):
        spec = CorruptionSpec(kind=CorruptionKind.ADDITIVE_NOISE, magnitude=0.5, seed=4)
        np.testing.assert_array_equal(apply_corruption(grid, spec).values, apply_corruption(grid, spec).values)

    def test_occlusion_patch_area(self, grid):
        out = apply_corruption(grid, CorruptionSpec(kind=CorruptionKind.OCCLUSION_PATCH, magnitude=0.25))
        blank = np.all(out.values == 0, axis=-1)
        assert blank.sum() == 64

    def test_attenuation_scales(self, grid):
        out = apply_corruption(grid, CorruptionSpec(kind=CorruptionKind.ATTENUATION, magnitude=0.5))
        np.testing.assert_array_equal(out.values, grid.values * np.float32(0.5))

    def test_position_jitter_keeps_shape(self, grid):
        out = apply_corruption(grid, CorruptionSpec(kind=CorruptionKind.POSITION_JITTER, magnitude=3.0, seed=2))
        assert out.shape == grid.shape

    def test_wrong_target_raises(self, grid):
        with pytest.raises(CorruptionError):
            apply_corruption(grid, CorruptionSpec(kind=CorruptionKind.ADDITIVE_NOISE, magnitude=0.1,
                                                  target_modality=TargetModality.SEM))

    def test_magnitude_ranges_are_validated(self):
        with pytest.raises(ValidationError):
            CorruptionSpec(kind=CorruptionKind.ATTENUATION, magnitude=1.5)
        with pytest.raises(ValidationError):
            CorruptionSpec(kind=CorruptionKind.OCCLUSION_PATCH, magnitude=0.0)

    def test_pair_routing(self, make_scene):
        scene = make_scene([((1.0, 1.0), (1.9, 4.5), 0)])
        geo = render_geo_view(scene, SensorConfig(), 3)
        sem = render_sem_view(scene, SensorConfig(seed=1), 3)
        drop_sem = CorruptionSpec(kind=CorruptionKind.MISSING_MODALITY, target_modality=TargetModality.SEM)
        g, s = corrupt_pair(geo, sem, [drop_sem])
        assert g is geo and s.missing
        both = CorruptionSpec(kind=CorruptionKind.ATTENUATION, magnitude=1.0)
        g, s = corrupt_pair(geo, sem, [both])
        np.testing.assert_array_equal(g.values, 0)
        np.testing.assert_array_equal(s.values, 0)


class TestPasteAugment:
    """GT-sampling augmentation."""

    BANK = [
        GroundTruthBox(center=(-10.0, -10.0), size=(1.9, 4.5), class_id=0),
        GroundTruthBox(center=(0.0, 0.0), size=(0.7, 0.7), class_id=1),
        GroundTruthBox(center=(10.0, 10.0), size=(0.8, 1.8), class_id=2),
    ]

    def test_empty_bank_returns_scene(self, make_scene):
        scene = make_scene([((1.0, 1.0), (1.0, 1.0), 0)])
        assert paste_augment(scene, [], seed=0) is scene
        assert paste_augment(scene, self.BANK, seed=0, max_paste=0) is scene

    def test_bounds_and_separation(self, make_scene):
        scene = make_scene([((1.0, 1.0), (1.0, 1.0), 0)])
        for seed in range(30):
            out = paste_augment(scene, self.BANK, seed=seed, max_paste=3, min_separation=3.0)
            assert len(scene.boxes) <= len(out.boxes) <= len(scene.boxes) + 3
            assert _pairwise_min([b.center for b in out.boxes]) >= 3.0
            assert out.boxes[: len(scene.boxes)] == scene.boxes

    def test_deterministic(self, make_scene):
        scene = make_scene()
        assert paste_augment(scene, self.BANK, seed=4) == paste_augment(scene, self.BANK, seed=4)

    def test_bank_preserves_order(self, make_scene):
        a = make_scene([((1.0, 1.0), (1.0, 1.0), 0)])
        b = make_scene([((5.0, 5.0), (1.0, 1.0), 1), ((-5.0, 5.0), (1.0, 1.0), 2)])
        assert build_gt_bank([a, b]) == list(a.boxes + b.boxes)


class TestSplitFiles:
    """Split generation and on-disk layout."""

    def test_round_trip(self, tmp_path, smoke_cfg, train_samples):
        manifest = write_split(tmp_path / "train", "train", train_samples, smoke_cfg)
        loaded_manifest, loaded = read_split(tmp_path / "train")
        assert loaded_manifest == manifest
        assert len(loaded) == len(train_samples)
        for got, want in zip(loaded, train_samples):
            assert got.scene == want.scene
            assert got.geo.noise == want.geo.noise
            np.testing.assert_array_equal(got.geo.values, want.geo.values)
            np.testing.assert_array_equal(got.sem.values, want.sem.values)
            np.testing.assert_array_equal(got.sem.cell_coords, want.sem.cell_coords)

    def test_rewrite_is_byte_identical(self, tmp_path, smoke_cfg):
        for name in ("a", "b"):
            write_split(tmp_path / name, "eval", generate_split(smoke_cfg, "eval", 4), smoke_cfg)
        for f in ("meta.json", "index.jsonl", "geo.f32", "sem.f32"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_workers_do_not_change_output(self, smoke_cfg):
        serial = generate_split(smoke_cfg, "train", 8, workers=1)
        parallel = generate_split(smoke_cfg, "train", 8, workers=2)
        for a, b in zip(serial, parallel):
            assert a.scene == b.scene
            np.testing.assert_array_equal(a.sem.values, b.sem.values)

    def test_splits_use_disjoint_seeds(self, train_samples, eval_samples):
        assert not {s.scene.seed for s in train_samples} & {s.scene.seed for s in eval_samples}

    def test_missing_split_raises(self, tmp_path):
        with pytest.raises(DatasetError):
            read_split(tmp_path / "nope")

    def test_schema_version_is_checked(self, tmp_path, smoke_cfg, train_samples):
        write_split(tmp_path, "train", train_samples[:2], smoke_cfg)
        meta = tmp_path / "meta.json"
        data = json.loads(meta.read_text())
        data["schemaVersion"] = "9.9"
        meta.write_text(json.dumps(data))
        with pytest.raises(SchemaVersionError):
            read_split(tmp_path)

    def test_class_ids_are_checked(self, tmp_path, smoke_cfg, train_samples):
        sample = next(s for s in train_samples if s.scene.boxes)
        write_split(tmp_path, "train", [sample], smoke_cfg)
        index = tmp_path / "index.jsonl"
        record = json.loads(index.read_text())
        record["scene"]["boxes"][0]["classId"] = smoke_cfg.world.num_classes
        index.write_text(json.dumps(record) + "\n")
        with pytest.raises(DatasetError, match="out of range"):
            read_split(tmp_path)
