"""
Dataset service: DRIVE and synthetic ingestion, resizing, augmentation
and manifest persistence.
"""

import os
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
import torch
import torch.nn.functional as F
import torchvision.transforms.functional as TF
from joblib import Parallel, delayed
from torch.utils.data import Dataset
from torchvision.transforms import InterpolationMode

from retseg.models.sample import (
    SOURCE_REAL,
    SOURCE_SYNTHETIC,
    SPLIT_TEST,
    SPLIT_TRAIN,
    DatasetManifest,
    RetinalSample,
)
from retseg.utilities.config import AugmentationSpec, num_workers
from retseg.utilities.exceptions import (
    DataError,
    DataIntegrityError,
    DatasetLayoutError,
    EmptyManifestError,
)
from retseg.utilities.io import (
    atomic_write_json,
    read_json,
    read_mask,
    read_probability_png16,
    read_rgb,
    write_mask,
    write_probability_png16,
    write_rgb,
)
from retseg.utilities.seeding import derive_seed
from retseg.utilities.validators import validate_choice, validate_power_of_two

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]

IMAGE_SUFFIXES = ('.tif', '.tiff', '.png', '.jpg', '.jpeg')
MASK_SUFFIXES = ('.gif', '.png', '.tif', '.tiff')
DRIVE_IMAGES = 'images'
DRIVE_MANUAL = '1st_manual'
DRIVE_FOV = 'mask'
SPLIT_DIRS = {SPLIT_TRAIN: ('train', 'training'), SPLIT_TEST: ('test',)}
SYNTH_LABELS = 'labels'
SYNTH_FOV = 'mask'
SYNTH_REFERENCE = 'reference'

_PREFIX = re.compile(r'^(\d+)')


def pairing_key(path: Path) -> str:
    """Shared numeric filename prefix ('21_training.tif' -> '21'), else the stem."""
    match = _PREFIX.match(path.name)
    return match.group(1) if match else path.stem.split('_')[0]


def _list_files(directory: Path, suffixes: Sequence[str]) -> List[Path]:
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in suffixes)


def _parallel(tasks: List[Any]) -> List[Any]:
    workers = num_workers()
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*args, **kwargs) for fn, args, kwargs in tasks]
    return Parallel(n_jobs=workers, prefer='threads')(tasks)


def resolve_split_dir(root: PathLike, split: str) -> Path:
    validate_choice(split, SPLIT_DIRS, 'split')
    root = Path(root)
    if not root.is_dir():
        raise DatasetLayoutError(f"Dataset root does not exist: {root}", missing=str(root))
    for name in SPLIT_DIRS[split]:
        if (root / name).is_dir():
            return root / name
    raise DatasetLayoutError(
        f"Dataset root {root} has no '{'/'.join(SPLIT_DIRS[split])}' directory",
        missing=SPLIT_DIRS[split][0],
    )


# ==================== LOADING ====================


def _read_drive_triple(sample_id: str, image: Path, manual: Path, fov: Path) -> RetinalSample:
    return RetinalSample(
        id=sample_id,
        image=read_rgb(image),
        vessel_mask=read_mask(manual),
        fov_mask=read_mask(fov),
        source=SOURCE_REAL,
        paths={'image': str(image), 'vessel_mask': str(manual), 'fov_mask': str(fov)},
    )


def load_drive_dataset(root: PathLike, split: str = SPLIT_TRAIN) -> DatasetManifest:
    """
    Load one split of a DRIVE-format dataset.

    Args:
        root: Directory holding <split>/{images,1st_manual,mask}
        split: 'train' or 'test'

    Returns:
        Manifest with one labeled real sample per image, ordered by filename

    Raises:
        DatasetLayoutError: If a directory is missing or holds no images
        DataIntegrityError: If a sample lacks a partner file or sizes disagree
    """
    split_dir = resolve_split_dir(root, split)
    dirs = {name: split_dir / name for name in (DRIVE_IMAGES, DRIVE_MANUAL, DRIVE_FOV)}
    for name, directory in dirs.items():
        if not directory.is_dir():
            raise DatasetLayoutError(f"Missing directory {directory}", missing=name)

    images = _list_files(dirs[DRIVE_IMAGES], IMAGE_SUFFIXES)
    if not images:
        raise DatasetLayoutError(f"No images found in {dirs[DRIVE_IMAGES]}", missing=DRIVE_IMAGES)
    manuals = {pairing_key(p): p for p in _list_files(dirs[DRIVE_MANUAL], MASK_SUFFIXES)}
    fovs = {pairing_key(p): p for p in _list_files(dirs[DRIVE_FOV], MASK_SUFFIXES)}

    tasks = []
    for image in images:
        key = pairing_key(image)
        for name, lookup in ((DRIVE_MANUAL, manuals), (DRIVE_FOV, fovs)):
            if key not in lookup:
                raise DataIntegrityError(f"Sample {key}: no file in {name}/", sample_id=key)
        tasks.append(delayed(_read_drive_triple)(key, image, manuals[key], fovs[key]))

    samples = _parallel(tasks)
    logger.info('drive_dataset_loaded', root=str(root), split=split, samples=len(samples))
    return DatasetManifest(samples=samples, split=split, metadata={'root': str(root)})


def _read_synthetic(image: Path, directory: Path) -> RetinalSample:
    rgb = read_rgb(image)
    extras: Dict[str, Any] = {}
    paths = {'image': str(image)}
    for key, sub in (('vessel_mask', SYNTH_LABELS), ('fov_mask', SYNTH_FOV), ('reference_mask', SYNTH_REFERENCE)):
        candidate = directory / sub / f'{image.stem}.png'
        if candidate.exists():
            extras[key] = read_mask(candidate)
            paths[key] = str(candidate)
    fov = extras.pop('fov_mask', None)
    if fov is None:
        fov = np.ones(rgb.shape[:2], dtype=np.uint8)
    return RetinalSample(
        id=image.stem,
        image=rgb,
        fov_mask=fov,
        source=SOURCE_SYNTHETIC,
        paths=paths,
        **extras,
    )


def _try_read_synthetic(image: Path, directory: Path) -> Tuple[Optional[RetinalSample], Optional[str]]:
    try:
        return _read_synthetic(image, directory), None
    except (OSError, ValueError, SyntaxError) as exc:
        return None, f'{image.name}: {exc}'


def load_synthetic_images(
    directory: PathLike,
    limit: Optional[int] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> DatasetManifest:
    """
    Load generated images from <dir>/*.png.

    Optional <dir>/labels/<name>.png are vessel labels and <dir>/mask/<name>.png
    field-of-view masks; a missing mask means the full frame. Unreadable files
    are skipped and listed in metadata['warnings'].

    Raises:
        DatasetLayoutError: If the directory does not exist
        EmptyManifestError: If no image could be read
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetLayoutError(f"Synthetic image directory does not exist: {directory}", missing=str(directory))

    images = sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() == '.png')
    results = _parallel([delayed(_try_read_synthetic)(p, directory) for p in images])
    samples = [s for s, _ in results if s is not None]
    warnings = [w for _, w in results if w is not None]
    for warning in warnings:
        logger.warning('synthetic_image_skipped', reason=warning)
    if limit is not None:
        samples = samples[:limit]
    if not samples:
        raise EmptyManifestError(f"No readable images in {directory}")

    meta = dict(metadata or {})
    meta.update({'source_dir': str(directory), 'warnings': warnings})
    logger.info('synthetic_images_loaded', directory=str(directory), samples=len(samples), skipped=len(warnings))
    return DatasetManifest(samples=samples, split=SPLIT_TRAIN, metadata=meta)


# ==================== PREPROCESSING ====================


def _resize_image(array: np.ndarray, size: int) -> np.ndarray:
    tensor = torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32))
    tensor = tensor.permute(2, 0, 1).unsqueeze(0) if tensor.dim() == 3 else tensor[None, None]
    if tuple(tensor.shape[-2:]) != (size, size):
        tensor = F.interpolate(tensor, size=(size, size), mode='bilinear', align_corners=False)
    out = tensor[0].permute(1, 2, 0) if array.ndim == 3 else tensor[0, 0]
    return np.clip(out.numpy(), 0.0, 1.0).astype(np.float32)


def _resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    tensor = torch.from_numpy(np.asarray(mask, dtype=np.float32))[None, None]
    if tuple(tensor.shape[-2:]) != (size, size):
        tensor = F.interpolate(tensor, size=(size, size), mode='nearest')
    return (tensor[0, 0].numpy() > 0.5).astype(np.uint8)


def preprocess(sample: RetinalSample, target_size: int) -> RetinalSample:
    """Resize to target_size x target_size: bilinear for images, nearest for masks."""
    size = validate_power_of_two(target_size, 'target_size')
    changes: Dict[str, Any] = {'image': _resize_image(sample.image, size)}
    for name in ('vessel_mask', 'fov_mask', 'reference_mask'):
        value = getattr(sample, name)
        if value is not None:
            changes[name] = _resize_mask(value, size)
    if sample.probability_map is not None:
        changes['probability_map'] = _resize_image(sample.probability_map, size)
    return sample.with_updates(**changes)


def preprocess_manifest(manifest: DatasetManifest, target_size: int) -> DatasetManifest:
    size = validate_power_of_two(target_size, 'target_size')
    samples = _parallel([delayed(preprocess)(s, size) for s in manifest.samples])
    return DatasetManifest(samples=samples, split=manifest.split, target_size=size,
                           metadata=dict(manifest.metadata))


# ==================== AUGMENTATION ====================


def draw_augmentation(spec: AugmentationSpec, rng_seed: int, side: int) -> Dict[str, Any]:
    """Draw every random parameter in a fixed order so the stream never depends on the flags."""
    rng = np.random.default_rng(rng_seed)
    hflip = rng.random() < spec.flip_probability
    vflip = rng.random() < spec.flip_probability
    angle = float(rng.uniform(*spec.rotation_degrees))
    scale = float(rng.uniform(*spec.scale))
    shift = rng.uniform(-spec.translate, spec.translate, size=2) * side
    brightness = float(rng.uniform(*spec.brightness))
    contrast = float(rng.uniform(*spec.contrast))
    return {
        'hflip': bool(spec.horizontal_flip and hflip),
        'vflip': bool(spec.vertical_flip and vflip),
        'angle': angle,
        'scale': scale,
        'shift': (int(np.rint(shift[0])), int(np.rint(shift[1]))),
        'brightness': brightness,
        'contrast': contrast,
    }


def _shift(tensor: torch.Tensor, dx: int, dy: int) -> torch.Tensor:
    """Integer translation with zero fill."""
    out = torch.zeros_like(tensor)
    h, w = tensor.shape[-2:]
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_y = slice(max(-dy, 0), h - max(dy, 0))
    dst_y = slice(max(dy, 0), h - max(-dy, 0))
    src_x = slice(max(-dx, 0), w - max(dx, 0))
    dst_x = slice(max(dx, 0), w - max(-dx, 0))
    out[..., dst_y, dst_x] = tensor[..., src_y, src_x]
    return out


def _geometric(tensor: torch.Tensor, params: Dict[str, Any], interpolation: InterpolationMode) -> torch.Tensor:
    if params['hflip']:
        tensor = torch.flip(tensor, dims=[-1])
    if params['vflip']:
        tensor = torch.flip(tensor, dims=[-2])

    angle, scale = params['angle'], params['scale']
    square = tensor.shape[-1] == tensor.shape[-2]
    if scale == 1.0 and angle % 90.0 == 0.0 and (square or angle % 180.0 == 0.0):
        turns = int(round(angle / 90.0)) % 4
        if turns:
            # counter-clockwise, matching TF.affine's sign convention
            tensor = torch.rot90(tensor, k=turns, dims=(-2, -1))
    else:
        tensor = TF.affine(tensor, angle=angle, translate=[0, 0], scale=scale, shear=[0.0, 0.0],
                           interpolation=interpolation, fill=0.0)

    dx, dy = params['shift']
    if dx or dy:
        tensor = _shift(tensor, dx, dy)
    return tensor


def augment(sample: RetinalSample, spec: AugmentationSpec, rng_seed: int) -> RetinalSample:
    """
    Apply one random geometric map to image and masks, and color jitter to the image.

    Deterministic for a given rng_seed; the identity when spec.enabled is False.
    """
    if not spec.enabled:
        return sample
    params = draw_augmentation(spec, rng_seed, max(sample.shape))

    image = torch.from_numpy(np.ascontiguousarray(sample.image.transpose(2, 0, 1)))
    image = _geometric(image, params, InterpolationMode.BILINEAR)
    if params['brightness'] != 1.0:
        image = TF.adjust_brightness(image, params['brightness'])
    if params['contrast'] != 1.0:
        image = TF.adjust_contrast(image, params['contrast'])
    changes: Dict[str, Any] = {
        'image': image.clamp(0.0, 1.0).permute(1, 2, 0).numpy().astype(np.float32),
    }

    for name in ('vessel_mask', 'fov_mask', 'reference_mask'):
        value = getattr(sample, name)
        if value is not None:
            tensor = torch.from_numpy(value.astype(np.float32))[None]
            tensor = _geometric(tensor, params, InterpolationMode.NEAREST)
            changes[name] = (tensor[0].numpy() > 0.5).astype(np.uint8)
    if sample.probability_map is not None:
        tensor = torch.from_numpy(sample.probability_map.astype(np.float32))[None]
        changes['probability_map'] = _geometric(tensor, params, InterpolationMode.BILINEAR)[0].numpy()
    return sample.with_updates(**changes)


class ManifestDataset(Dataset):
    """
    Torch view of a manifest yielding (image, vessel, fov) tensors.

    Augmentation is seeded per (epoch, index) from `seed`; call set_epoch()
    before each epoch. Only samples whose source is in `augment_sources` are
    augmented.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        augmentation: Optional[AugmentationSpec] = None,
        seed: int = 0,
        augment_sources: Optional[Iterable[str]] = None,
        require_labels: bool = True,
    ):
        if require_labels:
            for sample in manifest:
                if not sample.is_labeled:
                    raise DataError(f"Sample {sample.id} has no vessel label", sample_id=sample.id,
                                    error_code='UNLABELED_SAMPLE')
        self.manifest = manifest
        self.augmentation = augmentation or AugmentationSpec.disabled()
        self.seed = seed
        self.augment_sources = set(augment_sources) if augment_sources is not None \
            else {SOURCE_REAL, SOURCE_SYNTHETIC}
        self.require_labels = require_labels
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.manifest)

    def __getitem__(self, index: int):
        sample = self.manifest[index]
        if self.augmentation.enabled and sample.source in self.augment_sources:
            sample = augment(sample, self.augmentation, derive_seed(self.seed, 'augment', self.epoch, index))
        return sample_tensors(sample)


def sample_tensors(sample: RetinalSample) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    image = torch.from_numpy(np.ascontiguousarray(sample.image.transpose(2, 0, 1)))
    vessel = sample.vessel_mask if sample.vessel_mask is not None else np.zeros(sample.shape, np.uint8)
    return (
        image,
        torch.from_numpy(vessel.astype(np.float32))[None],
        torch.from_numpy(sample.fov_mask.astype(np.float32))[None],
    )


# ==================== PERSISTENCE ====================


def _relative(path: str, base: Path) -> str:
    return Path(os.path.relpath(Path(path).resolve(), base.resolve())).as_posix()


def save_manifest(manifest: DatasetManifest, path: PathLike) -> Path:
    """
    Write the manifest JSON; sample paths are stored relative to its directory.

    Raises:
        DataError: If a sample was never written to disk
    """
    path = Path(path)
    base = path.parent
    base.mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in manifest:
        if 'image' not in sample.paths:
            raise DataError(f"Sample {sample.id} has no file on disk", sample_id=sample.id)
        entry = sample.to_dict()
        entry['paths'] = {k: _relative(v, base) for k, v in sorted(sample.paths.items())}
        entries.append(entry)
    payload = {
        'split': manifest.split,
        'target_size': manifest.target_size,
        'metadata': manifest.metadata,
        'samples': entries,
    }
    return atomic_write_json(path, payload)


def _read_entry(entry: Dict[str, Any], base: Path) -> RetinalSample:
    paths = {k: str((base / v) if not Path(v).is_absolute() else Path(v)) for k, v in entry['paths'].items()}
    image = read_rgb(paths['image'])
    fov = read_mask(paths['fov_mask']) if 'fov_mask' in paths else np.ones(image.shape[:2], np.uint8)
    return RetinalSample(
        id=entry['id'],
        image=image,
        fov_mask=fov,
        vessel_mask=read_mask(paths['vessel_mask']) if 'vessel_mask' in paths else None,
        reference_mask=read_mask(paths['reference_mask']) if 'reference_mask' in paths else None,
        probability_map=read_probability_png16(paths['probability_map']) if 'probability_map' in paths else None,
        source=entry.get('source', SOURCE_REAL),
        paths=paths,
    )


def load_manifest(path: PathLike) -> DatasetManifest:
    """Read a manifest JSON written by save_manifest, loading every sample's files."""
    path = Path(path)
    if not path.exists():
        raise DatasetLayoutError(f"Manifest not found: {path}", missing=str(path))
    payload = read_json(path)
    base = path.parent
    samples = _parallel([delayed(_read_entry)(entry, base) for entry in payload.get('samples', [])])
    if not samples:
        raise EmptyManifestError(f"Manifest {path} lists no samples")
    return DatasetManifest(
        samples=samples,
        split=payload.get('split', SPLIT_TRAIN),
        target_size=payload.get('target_size'),
        metadata=payload.get('metadata', {}),
    )


def write_drive_layout(manifest: DatasetManifest, root: PathLike) -> DatasetManifest:
    """
    Write labeled samples as <root>/<split>/{images,1st_manual,mask} PNG triples.

    Returns the manifest with sample paths pointing at the written files.
    """
    split_dir = Path(root) / ('training' if manifest.split == SPLIT_TRAIN else 'test')
    written = []
    for sample in manifest:
        if not sample.is_labeled:
            raise DataError(f"Sample {sample.id} has no vessel label", sample_id=sample.id,
                            error_code='UNLABELED_SAMPLE')
        stem = f'{sample.id}_{manifest.split}'
        paths = {
            'image': str(write_rgb(split_dir / DRIVE_IMAGES / f'{stem}.png', sample.image)),
            'vessel_mask': str(write_mask(split_dir / DRIVE_MANUAL / f'{sample.id}_manual1.png', sample.vessel_mask)),
            'fov_mask': str(write_mask(split_dir / DRIVE_FOV / f'{stem}_mask.png', sample.fov_mask)),
        }
        written.append(sample.with_updates(paths=paths))
    logger.info('drive_layout_written', root=str(root), split=manifest.split, samples=len(written))
    return DatasetManifest(samples=written, split=manifest.split, target_size=manifest.target_size,
                           metadata=dict(manifest.metadata))


def write_synthetic_dir(manifest: DatasetManifest, directory: PathLike) -> DatasetManifest:
    """Write samples in the synthetic layout: <dir>/<id>.png plus labels/, mask/ and reference/."""
    directory = Path(directory)
    written = []
    for sample in manifest:
        paths = {
            'image': str(write_rgb(directory / f'{sample.id}.png', sample.image)),
            'fov_mask': str(write_mask(directory / SYNTH_FOV / f'{sample.id}.png', sample.fov_mask)),
        }
        if sample.vessel_mask is not None:
            paths['vessel_mask'] = str(write_mask(directory / SYNTH_LABELS / f'{sample.id}.png', sample.vessel_mask))
        if sample.reference_mask is not None:
            paths['reference_mask'] = str(
                write_mask(directory / SYNTH_REFERENCE / f'{sample.id}.png', sample.reference_mask))
        if sample.probability_map is not None:
            paths['probability_map'] = str(
                write_probability_png16(directory / SYNTH_LABELS / f'{sample.id}_prob.png', sample.probability_map))
        written.append(sample.with_updates(paths=paths))
    return DatasetManifest(samples=written, split=manifest.split, target_size=manifest.target_size,
                           metadata=dict(manifest.metadata))


def split_validation(manifest: DatasetManifest, fraction: float, seed: int) -> Tuple[DatasetManifest, DatasetManifest]:
    """Hold out a seeded fraction (at least one sample) for validation; keeps one for training."""
    n = len(manifest)
    if n < 2:
        raise EmptyManifestError("Need at least two samples to hold out a validation split")
    n_val = min(max(1, int(round(n * fraction))), n - 1)
    order = np.random.default_rng(derive_seed(seed, 'validation_split')).permutation(n)
    val_idx = sorted(int(i) for i in order[:n_val])
    train_idx = sorted(int(i) for i in order[n_val:])
    return manifest.subset(train_idx), manifest.subset(val_idx)
