"""Test dataset ingestion, preprocessing and augmentation"""

import json
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from retseg.models.sample import SOURCE_REAL, SOURCE_SYNTHETIC, SPLIT_TEST, DatasetManifest, RetinalSample
from retseg.services.dataset import (
    ManifestDataset,
    augment,
    load_drive_dataset,
    load_manifest,
    load_synthetic_images,
    pairing_key,
    preprocess,
    preprocess_manifest,
    sample_tensors,
    save_manifest,
    split_validation,
    write_drive_layout,
    write_synthetic_dir,
)
from retseg.services.generator import toy_generate
from retseg.utilities.config import AugmentationSpec
from retseg.utilities.exceptions import (
    ConfigurationError,
    DataError,
    DataIntegrityError,
    DatasetLayoutError,
    EmptyManifestError,
    ValidationError,
)

STILL = dict(horizontal_flip=False, vertical_flip=False, rotation_degrees=(0.0, 0.0), brightness=(1.0, 1.0),
             contrast=(1.0, 1.0), scale=(1.0, 1.0), translate=0.0)


def _sample(height=8, width=8, vessel=None, fov=None, source=SOURCE_REAL, sample_id='s'):
    rng = np.random.default_rng(0)
    return RetinalSample(
        id=sample_id,
        image=rng.random((height, width, 3)),
        fov_mask=np.ones((height, width), dtype=np.uint8) if fov is None else fov,
        vessel_mask=vessel,
        source=source,
    )


def _write_png(path, array):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path)


class TestRetinalSample:
    """Test sample invariants"""

    def test_shape_mismatch(self):
        """Test masks must match the image size"""
        with pytest.raises(DataIntegrityError):
            _sample(vessel=np.zeros((4, 8), dtype=np.uint8))

    def test_non_binary_mask(self):
        """Test masks must be binary"""
        with pytest.raises(ValidationError):
            _sample(vessel=np.full((8, 8), 3, dtype=np.uint8))

    def test_image_channels(self):
        """Test images must be RGB"""
        with pytest.raises(DataIntegrityError):
            RetinalSample(id='x', image=np.zeros((8, 8)), fov_mask=np.ones((8, 8)))


class TestLoadDrive:
    """Test DRIVE ingestion"""

    def test_train_split(self, drive_root):
        """Test samples are labeled, paired and ordered by filename"""
        manifest = load_drive_dataset(drive_root, 'train')
        assert manifest.ids == ['21', '22', '23', '24']
        assert manifest.is_labeled()
        for sample in manifest:
            assert sample.source == SOURCE_REAL
            assert sample.shape == (64, 64)
            assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0
            assert set(np.unique(sample.fov_mask)) <= {0, 1}

    def test_test_split(self, drive_root):
        """Test the test split"""
        manifest = load_drive_dataset(drive_root, 'test')
        assert manifest.ids == ['01', '02']
        assert manifest.split == SPLIT_TEST

    def test_missing_root(self, tmp_path):
        """Test a missing root"""
        with pytest.raises(DatasetLayoutError):
            load_drive_dataset(tmp_path / 'nowhere', 'train')

    def test_missing_subdirectory(self, drive_root):
        """Test the error names the missing directory"""
        for path in (drive_root / 'training' / 'mask').iterdir():
            path.unlink()
        (drive_root / 'training' / 'mask').rmdir()
        with pytest.raises(DatasetLayoutError) as exc_info:
            load_drive_dataset(drive_root, 'train')
        assert exc_info.value.missing == 'mask'

    def test_empty_images(self, tmp_path):
        """Test a layout without images"""
        for name in ('images', '1st_manual', 'mask'):
            (tmp_path / 'training' / name).mkdir(parents=True)
        with pytest.raises(DatasetLayoutError):
            load_drive_dataset(tmp_path, 'train')

    def test_size_mismatch(self, drive_root):
        """Test an integrity error names the sample"""
        _write_png(drive_root / 'training' / '1st_manual' / '22_manual1.gif', np.zeros((10, 10), dtype=np.uint8))
        with pytest.raises(DataIntegrityError) as exc_info:
            load_drive_dataset(drive_root, 'train')
        assert exc_info.value.sample_id == '22'

    def test_missing_partner(self, drive_root):
        """Test an image without a manual label"""
        (drive_root / 'training' / '1st_manual' / '23_manual1.gif').unlink()
        with pytest.raises(DataIntegrityError) as exc_info:
            load_drive_dataset(drive_root, 'train')
        assert exc_info.value.sample_id == '23'

    def test_pairing_key(self):
        """Test the shared numeric prefix"""
        assert pairing_key(Path('21_training.tif')) == '21'
        assert pairing_key(Path('03_test_mask.gif')) == '03'
        assert pairing_key(Path('sample_a.png')) == 'sample'


class TestLoadSynthetic:
    """Test synthetic image ingestion"""

    def test_single_image(self, tmp_path):
        """Test an unlabeled image gets an all-ones FOV"""
        _write_png(tmp_path / 'a.png', np.full((16, 16, 3), 100, dtype=np.uint8))
        manifest = load_synthetic_images(tmp_path)
        assert len(manifest) == 1
        sample = manifest[0]
        assert sample.source == SOURCE_SYNTHETIC
        assert not sample.is_labeled
        assert sample.fov_mask.all()

    def test_corrupt_files_skipped(self, tmp_path):
        """Test unreadable files become warnings"""
        for i in range(3):
            _write_png(tmp_path / f'{i}.png', np.full((8, 8, 3), 50 * i, dtype=np.uint8))
        (tmp_path / '3.png').write_bytes(b'not an image')
        (tmp_path / '4.png').write_bytes(b'\x89PNG\r\n\x1a\n')
        manifest = load_synthetic_images(tmp_path)
        assert manifest.ids == ['0', '1', '2']
        assert len(manifest.warnings) == 2

    def test_optional_labels_and_masks(self, tmp_path):
        """Test labels/ and mask/ files are picked up by name"""
        _write_png(tmp_path / 'a.png', np.zeros((8, 8, 3), dtype=np.uint8))
        _write_png(tmp_path / 'b.png', np.zeros((8, 8, 3), dtype=np.uint8))
        label = np.zeros((8, 8), dtype=np.uint8)
        label[2:4, 2:4] = 255
        _write_png(tmp_path / 'labels' / 'a.png', label)
        fov = np.zeros((8, 8), dtype=np.uint8)
        fov[1:7, 1:7] = 255
        _write_png(tmp_path / 'mask' / 'a.png', fov)

        manifest = load_synthetic_images(tmp_path)
        a, b = manifest
        assert a.is_labeled and a.vessel_mask.sum() == 4
        assert a.fov_mask.sum() == 36
        assert not b.is_labeled and b.fov_mask.all()

    def test_limit(self, tmp_path):
        """Test the limit keeps the first files"""
        for i in range(4):
            _write_png(tmp_path / f'{i}.png', np.zeros((8, 8, 3), dtype=np.uint8))
        assert load_synthetic_images(tmp_path, limit=2).ids == ['0', '1']

    def test_empty_directory(self, tmp_path):
        """Test zero readable images"""
        (tmp_path / 'bad.png').write_bytes(b'junk')
        with pytest.raises(EmptyManifestError):
            load_synthetic_images(tmp_path)

    def test_missing_directory(self, tmp_path):
        """Test a missing directory"""
        with pytest.raises(DatasetLayoutError):
            load_synthetic_images(tmp_path / 'absent')

    def test_written_layout_round_trip(self, tmp_path):
        """Test write_synthetic_dir output loads back with reference masks"""
        generated = toy_generate(3, seed=4, size=32)
        write_synthetic_dir(generated, tmp_path)
        loaded = load_synthetic_images(tmp_path)
        assert loaded.ids == generated.ids
        for original, sample in zip(generated, loaded):
            assert not sample.is_labeled
            np.testing.assert_array_equal(sample.reference_mask, original.reference_mask)
            np.testing.assert_array_equal(sample.fov_mask, original.fov_mask)
            np.testing.assert_allclose(sample.image, original.image, atol=0.5 / 255 + 1e-6)


class TestPreprocess:
    """Test resizing"""

    def test_resizes_to_square(self):
        """Test a 58 x 56 sample becomes 32 x 32 with binary masks"""
        rng = np.random.default_rng(3)
        sample = _sample(58, 56, vessel=(rng.random((58, 56)) > 0.8).astype(np.uint8))
        out = preprocess(sample, 32)
        assert out.shape == (32, 32)
        assert out.image.shape == (32, 32, 3)
        assert set(np.unique(out.vessel_mask)) <= {0, 1}
        assert out.fov_mask.all()

    def test_same_size_masks_identical(self):
        """Test resizing to the current size keeps masks bitwise"""
        rng = np.random.default_rng(4)
        vessel = (rng.random((16, 16)) > 0.5).astype(np.uint8)
        out = preprocess(_sample(16, 16, vessel=vessel), 16)
        np.testing.assert_array_equal(out.vessel_mask, vessel)

    def test_nearest_neighbor_downsample(self):
        """Test a 4 x 4 mask to 2 x 2 picks rows and columns 0 and 2"""
        mask = np.array([[1, 0, 0, 1],
                         [0, 0, 1, 1],
                         [0, 1, 1, 0],
                         [1, 1, 0, 0]], dtype=np.uint8)
        out = preprocess(_sample(4, 4, vessel=mask), 2)
        np.testing.assert_array_equal(out.vessel_mask, [[1, 0], [0, 1]])

    def test_mask_idempotent(self):
        """Test preprocessing twice leaves masks unchanged"""
        rng = np.random.default_rng(5)
        once = preprocess(_sample(40, 40, vessel=(rng.random((40, 40)) > 0.7).astype(np.uint8)), 16)
        twice = preprocess(once, 16)
        np.testing.assert_array_equal(once.vessel_mask, twice.vessel_mask)
        np.testing.assert_array_equal(once.fov_mask, twice.fov_mask)

    @pytest.mark.parametrize('size', [0, 500, 3])
    def test_non_power_of_two(self, size):
        """Test target sizes must be powers of two"""
        with pytest.raises(ConfigurationError):
            preprocess(_sample(), size)

    def test_manifest(self, drive_root):
        """Test manifests record their target size"""
        manifest = preprocess_manifest(load_drive_dataset(drive_root, 'train'), 32)
        assert manifest.target_size == 32
        assert {s.shape for s in manifest} == {(32, 32)}


class TestAugment:
    """Test augmentation"""

    def test_disabled_is_identity(self):
        """Test a disabled spec returns the input"""
        sample = _sample(vessel=np.eye(8, dtype=np.uint8))
        assert augment(sample, AugmentationSpec.disabled(), 3) is sample

    def test_horizontal_flip(self):
        """Test a forced horizontal flip reverses columns and is an involution"""
        spec = AugmentationSpec(**{**STILL, 'horizontal_flip': True}, flip_probability=1.0)
        sample = _sample(vessel=np.tril(np.ones((8, 8), dtype=np.uint8)))
        flipped = augment(sample, spec, 0)
        np.testing.assert_array_equal(flipped.image, sample.image[:, ::-1])
        np.testing.assert_array_equal(flipped.vessel_mask, sample.vessel_mask[:, ::-1])
        restored = augment(flipped, spec, 1)
        np.testing.assert_array_equal(restored.image, sample.image)

    def test_rotation_by_90(self):
        """Test an asymmetric 3-pixel mask rotated 90 degrees counter-clockwise"""
        spec = AugmentationSpec(**{**STILL, 'rotation_degrees': (90.0, 90.0)})
        mask = np.zeros((4, 4), dtype=np.uint8)
        for r, c in ((0, 1), (0, 2), (1, 2)):
            mask[r, c] = 1
        out = augment(_sample(4, 4, vessel=mask), spec, 0)
        # (r, c) -> (n - 1 - c, r)
        expected = {(2, 0), (1, 0), (1, 1)}
        assert {tuple(p) for p in np.argwhere(out.vessel_mask)} == expected

    def test_image_and_mask_share_geometry(self):
        """Test a block marked in image and mask lands in the same place"""
        spec = AugmentationSpec(**{**STILL, 'horizontal_flip': True, 'vertical_flip': True,
                                   'rotation_degrees': (-15.0, 15.0), 'scale': (0.9, 1.1),
                                   'translate': 0.1})
        image = np.zeros((32, 32, 3), dtype=np.float32)
        image[14:17, 12:15] = 1.0
        mask = np.zeros((32, 32), dtype=np.uint8)
        mask[14:17, 12:15] = 1
        sample = RetinalSample(id='d', image=image, fov_mask=np.ones((32, 32)), vessel_mask=mask)
        for seed in range(20):
            out = augment(sample, spec, seed)
            peak = np.unravel_index(np.argmax(out.image[..., 0]), (32, 32))
            assert out.vessel_mask[peak] == 1

    def test_color_only_touches_image(self):
        """Test color jitter leaves masks alone"""
        spec = AugmentationSpec(**{**STILL, 'brightness': (0.5, 0.5)})
        sample = _sample(vessel=np.eye(8, dtype=np.uint8))
        out = augment(sample, spec, 0)
        np.testing.assert_array_equal(out.vessel_mask, sample.vessel_mask)
        np.testing.assert_array_equal(out.fov_mask, sample.fov_mask)
        np.testing.assert_allclose(out.image, sample.image * 0.5, atol=1e-6)

    def test_reproducible(self):
        """Test equal seeds give equal outputs"""
        spec = AugmentationSpec(translate=0.1)
        sample = _sample(16, 16, vessel=np.eye(16, dtype=np.uint8))
        a, b = augment(sample, spec, 42), augment(sample, spec, 42)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.vessel_mask, b.vessel_mask)
        assert not np.array_equal(a.image, augment(sample, spec, 43).image)


class TestManifestDataset:
    """Test the torch dataset view"""

    def test_tensors(self, toy_train):
        """Test tensor shapes and dtypes"""
        image, vessel, fov = ManifestDataset(toy_train)[0]
        assert image.shape == (3, 32, 32) and image.dtype == torch.float32
        assert vessel.shape == (1, 32, 32) and fov.shape == (1, 32, 32)

    def test_augmentation_respects_sources(self, toy_train):
        """Test samples whose source is excluded are never augmented"""
        spec = AugmentationSpec(**{**STILL, 'horizontal_flip': True}, flip_probability=1.0)
        untouched = ManifestDataset(toy_train, spec, augment_sources=[])
        flipped = ManifestDataset(toy_train, spec, augment_sources=[SOURCE_REAL])
        assert torch.equal(untouched[0][0], sample_tensors(toy_train[0])[0])
        assert torch.equal(flipped[0][0], torch.flip(sample_tensors(toy_train[0])[0], dims=[-1]))

    def test_unlabeled(self):
        """Test unlabeled samples are refused"""
        with pytest.raises(DataError):
            ManifestDataset(toy_generate(1, seed=0, size=16))


class TestManifestFiles:
    """Test manifest persistence"""

    def test_round_trip(self, tmp_path, toy_train):
        """Test a written manifest reloads its samples"""
        written = write_drive_layout(toy_train, tmp_path / 'data')
        path = save_manifest(written, tmp_path / 'data' / 'manifest.json')
        loaded = load_manifest(path)
        assert loaded.ids == toy_train.ids
        assert loaded.split == toy_train.split
        for original, sample in zip(toy_train, loaded):
            np.testing.assert_array_equal(sample.vessel_mask, original.vessel_mask)
            np.testing.assert_array_equal(sample.fov_mask, original.fov_mask)

    def test_paths_are_relative(self, tmp_path, toy_train):
        """Test stored paths are relative to the manifest"""
        written = write_drive_layout(toy_train, tmp_path)
        path = save_manifest(written, tmp_path / 'manifest.json')
        entry = json.loads(path.read_text())['samples'][0]
        assert entry['paths']['image'] == 'training/images/0000_train.png'

    def test_unwritten_sample(self, tmp_path):
        """Test samples without files cannot be listed"""
        with pytest.raises(DataError):
            save_manifest(DatasetManifest([_sample()]), tmp_path / 'm.json')

    def test_missing_manifest(self, tmp_path):
        """Test a missing manifest file"""
        with pytest.raises(DatasetLayoutError):
            load_manifest(tmp_path / 'absent.json')


class TestSplitValidation:
    """Test the held-out validation split"""

    def test_split(self):
        """Test sizes, disjointness and determinism"""
        manifest = toy_generate(10, seed=1, size=16)
        train_a, val_a = split_validation(manifest, 0.2, seed=5)
        train_b, val_b = split_validation(manifest, 0.2, seed=5)
        assert len(val_a) == 2 and len(train_a) == 8
        assert set(train_a.ids).isdisjoint(val_a.ids)
        assert val_a.ids == val_b.ids and train_a.ids == train_b.ids

    def test_keeps_one_each(self):
        """Test tiny manifests keep a sample on each side"""
        train_part, val_part = split_validation(toy_generate(2, seed=1, size=16), 0.9, seed=0)
        assert len(train_part) == 1 and len(val_part) == 1

    def test_too_small(self):
        """Test a single sample cannot be split"""
        with pytest.raises(EmptyManifestError):
            split_validation(toy_generate(1, seed=1, size=16), 0.1, seed=0)

