"""
Synthetic image sources.

Generated images arrive either from an external directory (pre-sampled by
a GAN, with truncation and tick count recorded as metadata only) or from
the built-in procedural toy generator.
"""

from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import structlog

from retseg.models.sample import SOURCE_REAL, SOURCE_SYNTHETIC, SPLIT_TEST, SPLIT_TRAIN, DatasetManifest, RetinalSample
from retseg.services.dataset import load_synthetic_images, write_drive_layout
from retseg.utilities.config import PipelineConfig
from retseg.utilities.exceptions import ConfigurationError, EmptyManifestError
from retseg.utilities.seeding import derive_seed
from retseg.utilities.validators import validate_positive_int

logger = structlog.get_logger(__name__)


class ToyRetinaGenerator:
    """
    Procedural fundus-like images: a reddish disk field on black with
    dark branching vessel trees grown by random walks from an optic disc.
    """

    FOV_RADIUS = 0.45
    DISC_RADIUS = 0.07
    BASE_COLOR = np.array([0.62, 0.28, 0.12], dtype=np.float32)
    VESSEL_DARKENING = 0.5
    NOISE = 0.02
    BRANCH_PROB = 0.05
    TURN_STD = 0.22

    def __init__(self, size: int = 64):
        self.size = validate_positive_int(size, 'pipeline.toy_size')
        yy, xx = np.mgrid[0:size, 0:size]
        self._yy = yy.astype(np.float32)
        self._xx = xx.astype(np.float32)

    def _stamp(self, mask: np.ndarray, x: float, y: float, radius: float) -> None:
        r = int(np.ceil(radius)) + 1
        y0, y1 = max(int(y) - r, 0), min(int(y) + r + 1, self.size)
        x0, x1 = max(int(x) - r, 0), min(int(x) + r + 1, self.size)
        if y0 >= y1 or x0 >= x1:
            return
        dist2 = (self._xx[y0:y1, x0:x1] - x) ** 2 + (self._yy[y0:y1, x0:x1] - y) ** 2
        mask[y0:y1, x0:x1] |= dist2 <= radius ** 2

    def _grow_tree(self, rng: np.random.Generator, fov: np.ndarray, origin: Tuple[float, float]) -> np.ndarray:
        size = self.size
        mask = np.zeros((size, size), dtype=bool)
        step = max(size / 64.0, 0.5)
        walkers: List[List[float]] = []
        for _ in range(int(rng.integers(3, 6))):
            walkers.append([origin[0], origin[1], float(rng.uniform(0, 2 * np.pi)), max(1.1 * size / 64.0, 0.6)])

        max_steps = 4 * size
        walkers_left = 60
        while walkers and walkers_left > 0:
            x, y, angle, radius = walkers.pop()
            walkers_left -= 1
            for _ in range(max_steps):
                self._stamp(mask, x, y, radius)
                angle += float(rng.normal(0.0, self.TURN_STD))
                x += step * np.cos(angle)
                y += step * np.sin(angle)
                ix, iy = int(round(x)), int(round(y))
                if not (0 <= ix < size and 0 <= iy < size) or not fov[iy, ix]:
                    break
                if rng.random() < self.BRANCH_PROB and radius > 0.5:
                    turn = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.4, 0.9))
                    walkers.append([x, y, angle + turn, radius * 0.75])
                    radius *= 0.9
        return mask & fov.astype(bool)

    def generate(self, seed: int, sample_id: str) -> RetinalSample:
        """One image; the vessel tree is kept as reference_mask only."""
        size = self.size
        rng = np.random.default_rng(seed)
        center = (size - 1) / 2.0 + rng.uniform(-0.02, 0.02, size=2) * size
        radius = self.FOV_RADIUS * size
        dist = np.hypot(self._xx - center[0], self._yy - center[1])
        fov = dist <= radius

        disc_angle = rng.uniform(0, 2 * np.pi)
        disc = (center[0] + 0.25 * radius * np.cos(disc_angle), center[1] + 0.25 * radius * np.sin(disc_angle))
        vessels = self._grow_tree(rng, fov, disc)

        shade = 1.0 - 0.45 * (dist / radius) ** 2
        image = self.BASE_COLOR[None, None, :] * shade[..., None]
        disc_dist = np.hypot(self._xx - disc[0], self._yy - disc[1])
        glow = np.exp(-(disc_dist / (self.DISC_RADIUS * size)) ** 2)
        image = image + 0.3 * glow[..., None]
        image = image * np.where(vessels, self.VESSEL_DARKENING, 1.0)[..., None]
        image = image + rng.normal(0.0, self.NOISE, size=image.shape)
        image = np.clip(image * fov[..., None], 0.0, 1.0).astype(np.float32)

        return RetinalSample(
            id=sample_id,
            image=image,
            fov_mask=fov.astype(np.uint8),
            vessel_mask=None,
            reference_mask=vessels.astype(np.uint8),
            source=SOURCE_SYNTHETIC,
            metadata={'generator': 'toy_procedural', 'seed': int(seed)},
        )


def toy_generate(count: int, seed: int, size: int = 64) -> DatasetManifest:
    """
    Generate `count` unlabeled synthetic samples, deterministic in `seed`.

    Each sample's seed is derived from (seed, index), so the first k images
    do not depend on count.
    """
    validate_positive_int(count, 'count')
    generator = ToyRetinaGenerator(size)
    samples = [generator.generate(derive_seed(seed, 'toy', i), f'{i:04d}') for i in range(count)]
    logger.info('toy_images_generated', count=count, seed=seed, size=size)
    return DatasetManifest(
        samples=samples,
        split=SPLIT_TRAIN,
        metadata={'generator': 'toy_procedural', 'seed': seed, 'size': size},
    )


def as_labeled_real(manifest: DatasetManifest, split: str) -> DatasetManifest:
    """Promote toy samples to labeled 'real' data, using the generated tree as ground truth."""
    samples = [
        s.with_updates(vessel_mask=s.reference_mask, source=SOURCE_REAL)
        for s in manifest
    ]
    return DatasetManifest(samples=samples, split=split, target_size=manifest.target_size,
                           metadata=dict(manifest.metadata))


def write_toy_drive(root, n_train: int, n_test: int, seed: int, size: int = 64) -> Dict[str, DatasetManifest]:
    """Write a DRIVE-layout toy dataset under root; returns the written manifests per split."""
    written = {}
    for split, count in ((SPLIT_TRAIN, n_train), (SPLIT_TEST, n_test)):
        manifest = toy_generate(count, derive_seed(seed, 'toy_drive', split), size)
        written[split] = write_drive_layout(as_labeled_real(manifest, split), root)
    return written


class SyntheticSource:
    """Provides unlabeled synthetic images for the pipeline."""

    name = 'base'

    def __init__(self, config: PipelineConfig):
        self.config = config

    def provenance(self) -> Dict[str, Any]:
        return {
            'generator_source': self.name,
            'truncation_psi': self.config.truncation_psi,
            'generator_ticks': self.config.generator_ticks,
        }

    def sample(self, count: int, seed: int) -> DatasetManifest:
        raise NotImplementedError


class ToyProceduralSource(SyntheticSource):
    name = 'toy_procedural'

    def sample(self, count: int, seed: int) -> DatasetManifest:
        manifest = toy_generate(count, seed, self.config.toy_size)
        manifest.metadata.update(self.provenance())
        return manifest


class ExternalDirSource(SyntheticSource):
    name = 'external_dir'

    def __init__(self, config: PipelineConfig, directory: Optional[str] = None):
        super().__init__(config)
        self.directory = directory or config.synthetic_dir
        if not self.directory:
            raise ConfigurationError("pipeline.synthetic_dir is required for external_dir", 'pipeline.synthetic_dir')

    def sample(self, count: int, seed: int) -> DatasetManifest:
        manifest = load_synthetic_images(self.directory, metadata=self.provenance())
        available = len(manifest)
        if count > available:
            raise EmptyManifestError(
                f"pipeline.synthetic_count={count} exceeds the {available} images in {self.directory}"
            )
        # the directory is a fixed pool; seed only picks which images, order stays by filename
        if count < available:
            rng = np.random.default_rng(derive_seed(seed, 'external_pick'))
            picked = sorted(int(i) for i in rng.choice(available, size=count, replace=False))
            manifest = manifest.subset(picked)
        return manifest


def get_source(config: PipelineConfig, directory: Optional[str] = None) -> SyntheticSource:
    if config.generator_source == 'external_dir':
        return ExternalDirSource(config, directory)
    if config.generator_source == 'toy_procedural':
        return ToyProceduralSource(config)
    raise ConfigurationError(f"Unknown generator source {config.generator_source!r}", 'pipeline.generator_source')


def unique_images(manifest: DatasetManifest) -> int:
    return len({s.image.tobytes() for s in manifest})
