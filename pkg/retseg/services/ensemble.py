"""
Ensembles: per-pixel fusion of several networks' probability maps.
"""

from typing import Callable, List, Optional, Sequence, Tuple

import structlog
import torch

from retseg.ai.checkpoint import load_checkpoint
from retseg.services.metrics import Predictor, as_predictor
from retseg.utilities.config import ENSEMBLE_MODES, EnsembleSpec, SAUNetConfig
from retseg.utilities.exceptions import EnsembleError
from retseg.utilities.validators import validate_choice

logger = structlog.get_logger(__name__)

MIN_MEMBERS = 2


def combine_probabilities(probabilities: Sequence[torch.Tensor], mode: str = 'mean',
                          threshold: float = 0.5) -> torch.Tensor:
    """
    Fuse member outputs pixel by pixel.

    mean, max and min act on probabilities; vote returns the fraction of
    members whose binarized output (p >= threshold) is positive.

    Raises:
        EnsembleError: If fewer than two members are given or shapes differ
    """
    validate_choice(mode, ENSEMBLE_MODES, 'ensemble.mode')
    if len(probabilities) < MIN_MEMBERS:
        raise EnsembleError(f"An ensemble needs at least {MIN_MEMBERS} members, got {len(probabilities)}")
    shapes = {tuple(p.shape) for p in probabilities}
    if len(shapes) > 1:
        raise EnsembleError(f"Member outputs differ in shape: {sorted(shapes)}")
    stacked = torch.stack(list(probabilities))
    if mode == 'mean':
        return stacked.mean(dim=0)
    if mode == 'max':
        return stacked.amax(dim=0)
    if mode == 'min':
        return stacked.amin(dim=0)
    return (stacked >= threshold).to(stacked.dtype).mean(dim=0)


class Ensemble:
    """Callable predictor over several members; usable wherever a network is."""

    def __init__(self, members: Sequence[Predictor], mode: str = 'mean', threshold: float = 0.5,
                 names: Optional[Sequence[str]] = None):
        if len(members) < MIN_MEMBERS:
            raise EnsembleError(f"An ensemble needs at least {MIN_MEMBERS} members, got {len(members)}")
        self.mode = validate_choice(mode, ENSEMBLE_MODES, 'ensemble.mode')
        self.threshold = threshold
        self.members = list(members)
        self.names = list(names) if names else [f'member_{i}' for i in range(len(members))]
        self._runners: List[Callable[[torch.Tensor], torch.Tensor]] = [as_predictor(m) for m in self.members]

    @classmethod
    def from_spec(cls, spec: EnsembleSpec, expected_config: Optional[SAUNetConfig] = None) -> 'Ensemble':
        spec.validate()
        if len(spec.members) < MIN_MEMBERS:
            raise EnsembleError(f"An ensemble needs at least {MIN_MEMBERS} members, got {len(spec.members)}")
        nets = [load_checkpoint(path, expected_config) for path in spec.members]
        logger.info('ensemble_loaded', members=len(nets), mode=spec.mode)
        return cls(nets, spec.mode, spec.threshold, names=spec.members)

    def member_probabilities(self, batch: torch.Tensor) -> List[torch.Tensor]:
        with torch.no_grad():
            return [run(batch) for run in self._runners]

    def __call__(self, batch: torch.Tensor) -> torch.Tensor:
        return combine_probabilities(self.member_probabilities(batch), self.mode, self.threshold)

    def predict(self, batch: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        combined = self(batch)
        return combined, (combined >= self.threshold).to(torch.uint8)


def ensemble_predict(
    spec: EnsembleSpec,
    batch: torch.Tensor,
    members: Optional[Sequence[Predictor]] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Combined probability maps and binary maps (combined >= threshold) for a batch.

    Members default to the checkpoints listed in spec.
    """
    ensemble = Ensemble(members, spec.mode, spec.threshold) if members is not None else Ensemble.from_spec(spec)
    return ensemble.predict(batch)
