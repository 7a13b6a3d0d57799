"""
Persistent state of the synthetic-data pipeline.
"""

from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from retseg.utilities.exceptions import ConfigurationError
from retseg.utilities.io import atomic_write_json, read_json

STATE_FILENAME = 'pipeline_state.json'


class PipelineStage(str, Enum):
    """Stages in execution order; generate through finetune repeat per iteration."""
    BASE_TRAIN = 'base_train'
    GENERATE = 'generate'
    PSEUDO_LABEL = 'pseudo_label'
    RETRAIN = 'retrain'
    FINETUNE = 'finetune'
    DONE = 'done'


@dataclass
class PipelineState:
    """Where a pipeline run stands; `stage` is the next stage still to execute."""
    config_hash: str
    iteration: int = 1
    stage: PipelineStage = PipelineStage.BASE_TRAIN
    artifacts: Dict[str, str] = field(default_factory=dict)
    checkpoints: List[str] = field(default_factory=list)
    reports: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    fid: Dict[str, float] = field(default_factory=dict)
    completed: List[str] = field(default_factory=list)

    @property
    def is_done(self) -> bool:
        return self.stage == PipelineStage.DONE

    @property
    def latest_checkpoint(self) -> Optional[str]:
        return self.checkpoints[-1] if self.checkpoints else None

    def artifact_key(self, stage: PipelineStage, iteration: Optional[int] = None) -> str:
        if stage == PipelineStage.BASE_TRAIN:
            return stage.value
        return f'{stage.value}_{self.iteration if iteration is None else iteration}'

    def advance(self, next_stage: PipelineStage, iteration: Optional[int] = None) -> 'PipelineState':
        """Mark the current stage complete and move to next_stage."""
        self.completed.append(self.artifact_key(self.stage))
        self.stage = next_stage
        if iteration is not None:
            self.iteration = iteration
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['stage'] = self.stage.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PipelineState':
        try:
            stage = PipelineStage(data.get('stage', PipelineStage.BASE_TRAIN.value))
        except ValueError:
            raise ConfigurationError(f"Unknown pipeline stage {data.get('stage')!r}", 'stage')
        return cls(
            config_hash=data['config_hash'],
            iteration=int(data.get('iteration', 1)),
            stage=stage,
            artifacts=dict(data.get('artifacts', {})),
            checkpoints=list(data.get('checkpoints', [])),
            reports=dict(data.get('reports', {})),
            fid={k: float(v) for k, v in data.get('fid', {}).items()},
            completed=list(data.get('completed', [])),
        )

    def save(self, run_dir: Union[str, Path]) -> Path:
        return atomic_write_json(Path(run_dir) / STATE_FILENAME, self.to_dict())

    @classmethod
    def load(cls, run_dir: Union[str, Path]) -> Optional['PipelineState']:
        path = Path(run_dir) / STATE_FILENAME
        if not path.exists():
            return None
        return cls.from_dict(read_json(path))
