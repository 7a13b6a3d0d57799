"""
Per-epoch training history.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd

from retseg.models.report import MetricsReport

RECORD_COLUMNS = ['epoch', 'lr', 'loss', 'se', 'sp', 'acc', 'auc', 'f1', 'precision',
                  'phase', 'val_loss', 'train_dice']


@dataclass
class TrainRecord:
    """One row per completed epoch plus the best-F1 checkpoint."""
    rows: List[Dict[str, Any]] = field(default_factory=list)
    best_checkpoint: Optional[str] = None
    best_f1: float = float('-inf')
    best_epoch: Optional[int] = None

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, epoch: int, phase: int, lr: float, loss: float, val_loss: float,
               train_dice: float, report: MetricsReport) -> Dict[str, Any]:
        row = {
            'epoch': epoch,
            'lr': lr,
            'loss': loss,
            'se': report.se,
            'sp': report.sp,
            'acc': report.acc,
            'auc': report.auc,
            'f1': report.f1,
            'precision': report.precision,
            'phase': phase,
            'val_loss': val_loss,
            'train_dice': train_dice,
        }
        self.rows.append(row)
        return row

    def improves(self, f1: float) -> bool:
        return f1 > self.best_f1

    def mark_best(self, epoch: int, f1: float, checkpoint: Optional[str]) -> None:
        self.best_f1 = f1
        self.best_epoch = epoch
        self.best_checkpoint = checkpoint

    @property
    def last(self) -> Optional[Dict[str, Any]]:
        return self.rows[-1] if self.rows else None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=RECORD_COLUMNS)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format='%.10g')
        return path

    def to_dict(self) -> Dict[str, Any]:
        return {
            'epochs': len(self.rows),
            'best_checkpoint': self.best_checkpoint,
            'best_epoch': self.best_epoch,
            'best_f1': self.best_f1 if self.best_epoch is not None else None,
        }
