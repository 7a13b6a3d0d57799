"""
Evaluation records: confusion counts, metric reports and feature statistics.
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List

import numpy as np

REPORT_COLUMNS = ['method', 'se', 'sp', 'acc', 'auc', 'f1', 'precision']


@dataclass(frozen=True)
class ConfusionCounts:
    """Pixel counts inside the field of view; vessels are the positive class."""
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    def __add__(self, other: 'ConfusionCounts') -> 'ConfusionCounts':
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
        )

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)


@dataclass
class MetricsReport:
    """Scalar metrics in the comparison-table schema."""
    se: float
    sp: float
    acc: float
    precision: float
    f1: float
    auc: float = float('nan')
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)
    n_images: int = 0
    threshold: float = 0.5
    method: str = 'model'

    def to_dict(self) -> Dict[str, Any]:
        return {
            'method': self.method,
            'se': self.se,
            'sp': self.sp,
            'acc': self.acc,
            'auc': self.auc,
            'f1': self.f1,
            'precision': self.precision,
            'counts': self.counts.to_dict(),
            'n_images': self.n_images,
            'threshold': self.threshold,
        }

    def to_csv_row(self) -> List[Any]:
        return [self.method, self.se, self.sp, self.acc, self.auc, self.f1, self.precision]

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MetricsReport':
        return cls(
            se=data['se'],
            sp=data['sp'],
            acc=data['acc'],
            precision=data['precision'],
            f1=data['f1'],
            auc=data.get('auc', float('nan')),
            counts=ConfusionCounts(**data.get('counts', {})),
            n_images=data.get('n_images', 0),
            threshold=data.get('threshold', 0.5),
            method=data.get('method', 'model'),
        )


@dataclass
class FeatureStats:
    """Gaussian fit of an image set in feature space."""
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    @property
    def dim(self) -> int:
        return int(self.mu.shape[0])
