"""
Retinal sample and dataset manifest records.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterator, List, Optional

import numpy as np

from retseg.utilities.exceptions import DataIntegrityError
from retseg.utilities.validators import validate_binary

SOURCE_REAL = 'real'
SOURCE_SYNTHETIC = 'synthetic'
SPLIT_TRAIN = 'train'
SPLIT_TEST = 'test'
SPLITS = (SPLIT_TRAIN, SPLIT_TEST)


@dataclass
class RetinalSample:
    """One fundus image with its vessel label, field-of-view mask and provenance."""
    id: str
    image: np.ndarray
    fov_mask: np.ndarray
    vessel_mask: Optional[np.ndarray] = None
    source: str = SOURCE_REAL
    # harness-only ground truth (toy generator); never fed to training
    reference_mask: Optional[np.ndarray] = None
    probability_map: Optional[np.ndarray] = None
    paths: Dict[str, str] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DataIntegrityError(f"Sample {self.id}: image must be H x W x 3, got {self.image.shape}",
                                     sample_id=self.id)
        if self.image.size == 0:
            raise DataIntegrityError(f"Sample {self.id}: image is empty", sample_id=self.id)
        self.fov_mask = validate_binary(self.fov_mask, 'fov_mask')
        if self.vessel_mask is not None:
            self.vessel_mask = validate_binary(self.vessel_mask, 'vessel_mask')
        if self.reference_mask is not None:
            self.reference_mask = validate_binary(self.reference_mask, 'reference_mask')
        for name in ('fov_mask', 'vessel_mask', 'reference_mask', 'probability_map'):
            value = getattr(self, name)
            if value is not None and value.shape != self.shape:
                raise DataIntegrityError(
                    f"Sample {self.id}: {name} shape {value.shape} differs from image {self.shape}",
                    sample_id=self.id,
                )

    @property
    def shape(self):
        return self.image.shape[:2]

    @property
    def is_labeled(self) -> bool:
        return self.vessel_mask is not None

    def with_updates(self, **changes) -> 'RetinalSample':
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'source': self.source,
            'height': int(self.shape[0]),
            'width': int(self.shape[1]),
            'labeled': self.is_labeled,
            'paths': dict(sorted(self.paths.items())),
        }


@dataclass
class DatasetManifest:
    """Ordered collection of samples for one split."""
    samples: List[RetinalSample]
    split: str = SPLIT_TRAIN
    target_size: Optional[int] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[RetinalSample]:
        return iter(self.samples)

    def __getitem__(self, index: int) -> RetinalSample:
        return self.samples[index]

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.samples]

    @property
    def warnings(self) -> List[str]:
        return list(self.metadata.get('warnings', []))

    def is_labeled(self) -> bool:
        return all(s.is_labeled for s in self.samples)

    def subset(self, indices) -> 'DatasetManifest':
        return DatasetManifest(
            samples=[self.samples[i] for i in indices],
            split=self.split,
            target_size=self.target_size,
            metadata=dict(self.metadata),
        )

    def concat(self, other: 'DatasetManifest') -> 'DatasetManifest':
        return DatasetManifest(
            samples=list(self.samples) + list(other.samples),
            split=self.split,
            target_size=self.target_size if self.target_size == other.target_size else None,
            metadata={**other.metadata, **self.metadata},
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'split': self.split,
            'target_size': self.target_size,
            'metadata': self.metadata,
            'samples': [s.to_dict() for s in self.samples],
        }
