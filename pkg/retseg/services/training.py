"""
Training service: Dice + BCE loss and the two-phase Adam schedule.
"""

from dataclasses import replace
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
import structlog
import torch
from torch.optim import Adam
from torch.optim.lr_scheduler import ReduceLROnPlateau
from torch.utils.data import DataLoader

from retseg.ai.checkpoint import load_weights_into, save_checkpoint
from retseg.ai.saunet import SAUNet
from retseg.models.sample import DatasetManifest
from retseg.models.train_record import TrainRecord
from retseg.services.dataset import ManifestDataset, sample_tensors, split_validation
from retseg.services.metrics import evaluate_model
from retseg.utilities.config import TrainConfig, num_workers
from retseg.utilities.exceptions import ConfigurationError, DataError, ShapeError
from retseg.utilities.seeding import derive_seed, seed_everything, torch_generator

logger = structlog.get_logger(__name__)

PROB_CLAMP = 1e-7
DICE_EPS = 1e-6
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
RECORD_FILENAME = 'train_record.csv'


def combined_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    weights: Tuple[float, float] = (0.5, 0.5),
    eps: float = DICE_EPS,
) -> torch.Tensor:
    """
    w_dice * (1 - soft Dice) + w_bce * BCE over the whole batch.

    Probabilities are clamped to [1e-7, 1 - 1e-7] first.

    Raises:
        ShapeError: If pred and target shapes differ
    """
    if pred.shape != target.shape:
        raise ShapeError(
            f"prediction shape {tuple(pred.shape)} differs from target {tuple(target.shape)}",
            expected=tuple(target.shape),
            actual=tuple(pred.shape),
        )
    p = pred.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    g = target.to(p.dtype)
    dice = 1.0 - (2.0 * (p * g).sum() + eps) / (p.sum() + g.sum() + eps)
    bce = -(g * torch.log(p) + (1.0 - g) * torch.log(1.0 - p)).mean()
    w_dice, w_bce = weights
    return w_dice * dice + w_bce * bce


def _require_labels(manifest: DatasetManifest) -> None:
    for sample in manifest:
        if not sample.is_labeled:
            raise DataError(f"Sample {sample.id} has no vessel label", sample_id=sample.id,
                            error_code='UNLABELED_SAMPLE')


class Trainer:
    """
    Epoch loop shared by train and fine_tune.

    Each phase starts its own ReduceLROnPlateau on validation loss; the Adam
    moment estimates carry over between phases, only the learning rate resets.
    """

    def __init__(
        self,
        net: SAUNet,
        cfg: TrainConfig,
        checkpoint_dir: Optional[Union[str, Path]] = None,
        augment_sources: Optional[Iterable[str]] = None,
    ):
        self.net = net
        self.cfg = cfg
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.augment_sources = augment_sources
        self.device = next(net.parameters()).device
        self.optimizer = Adam(net.parameters(), lr=cfg.lr_phase1, betas=ADAM_BETAS, eps=ADAM_EPS)

    def _has_one_pixel_bottleneck(self, data: DatasetManifest) -> bool:
        """Batch norm at a 1 x 1 bottleneck sees one value per channel for one-sample batches."""
        side = data.samples[0].image.shape[0] if len(data) else 0
        return side // self.net.config.size_multiple < 2

    def _loader(self, data: DatasetManifest) -> Tuple[ManifestDataset, DataLoader]:
        dataset = ManifestDataset(data, self.cfg.augmentation, seed=self.cfg.seed,
                                  augment_sources=self.augment_sources)
        drop_last = False
        if self._has_one_pixel_bottleneck(data):
            if len(data) == 1 or self.cfg.batch_size == 1:
                raise ConfigurationError(
                    f"a 1 x 1 bottleneck needs batches of at least 2 samples, got {len(data)} sample(s) "
                    f"with batch_size {self.cfg.batch_size}",
                    'training.batch_size',
                )
            drop_last = len(data) % self.cfg.batch_size == 1
        loader = DataLoader(
            dataset,
            batch_size=self.cfg.batch_size,
            shuffle=True,
            generator=torch_generator(derive_seed(self.cfg.seed, 'shuffle')),
            num_workers=num_workers(),
            drop_last=drop_last,
        )
        return dataset, loader

    def _train_epoch(self, loader: DataLoader) -> Tuple[float, float]:
        """Returns (mean loss, pooled hard Dice) over training-mode batches."""
        self.net.train()
        total_loss, seen = 0.0, 0
        overlap, volume = 0.0, 0.0
        for image, vessel, _ in loader:
            image, vessel = image.to(self.device), vessel.to(self.device)
            self.optimizer.zero_grad()
            pred = self.net(image)
            loss = combined_loss(pred, vessel, self.cfg.loss_weights)
            loss.backward()
            self.optimizer.step()

            total_loss += float(loss.detach()) * image.shape[0]
            seen += image.shape[0]
            hard = (pred.detach() >= self.cfg.threshold).to(vessel.dtype)
            overlap += float((hard * vessel).sum())
            volume += float(hard.sum() + vessel.sum())
        dice = 2.0 * overlap / volume if volume else 1.0
        return total_loss / max(seen, 1), dice

    def _validation_loss(self, validation: DatasetManifest) -> float:
        self.net.eval()
        total, seen = 0.0, 0
        with torch.no_grad():
            for start in range(0, len(validation), self.cfg.batch_size):
                tensors = [sample_tensors(s) for s in validation.samples[start:start + self.cfg.batch_size]]
                image = torch.stack([t[0] for t in tensors]).to(self.device)
                vessel = torch.stack([t[1] for t in tensors]).to(self.device)
                loss = combined_loss(self.net(image), vessel, self.cfg.loss_weights)
                total += float(loss) * image.shape[0]
                seen += image.shape[0]
        return total / max(seen, 1)

    def _set_lr(self, lr: float) -> None:
        for group in self.optimizer.param_groups:
            group['lr'] = lr

    def _current_lr(self) -> float:
        return float(self.optimizer.param_groups[0]['lr'])

    def fit(
        self,
        data: DatasetManifest,
        validation: DatasetManifest,
        phases: List[Tuple[int, int, float]],
        epoch_offset: int = 0,
    ) -> TrainRecord:
        """Run (phase, epochs, lr) phases; checkpoints and the record go to checkpoint_dir."""
        record = TrainRecord()
        dataset, loader = self._loader(data)
        epoch = epoch_offset
        for phase, epochs, lr in phases:
            if epochs == 0:
                continue
            self._set_lr(lr)
            scheduler = ReduceLROnPlateau(self.optimizer, mode='min', factor=self.cfg.plateau_factor,
                                          patience=self.cfg.plateau_patience)
            logger.info('training_phase_started', phase=phase, epochs=epochs, lr=lr, samples=len(data))
            for _ in range(epochs):
                epoch += 1
                dataset.set_epoch(epoch)
                lr_used = self._current_lr()
                loss, train_dice = self._train_epoch(loader)
                val_loss = self._validation_loss(validation)
                report = evaluate_model(self.net, validation, self.cfg.threshold, batch_size=self.cfg.batch_size)
                scheduler.step(val_loss)
                record.append(epoch, phase, lr_used, loss, val_loss, train_dice, report)

                if record.improves(report.f1):
                    path = None
                    if self.checkpoint_dir is not None:
                        path = str(save_checkpoint(self.net, self.checkpoint_dir / 'best', epoch,
                                                   self.cfg.seed, report.to_dict()))
                    record.mark_best(epoch, report.f1, path)
                logger.info('epoch_completed', epoch=epoch, phase=phase, lr=lr_used, loss=round(loss, 6),
                            val_loss=round(val_loss, 6), val_f1=round(report.f1, 6), train_dice=round(train_dice, 6))

        if self.checkpoint_dir is not None and len(record):
            save_checkpoint(self.net, self.checkpoint_dir / 'last', epoch, self.cfg.seed,
                            {k: v for k, v in record.last.items() if k != 'phase'})
            record.to_csv(self.checkpoint_dir / RECORD_FILENAME)
        return record


def _resolve_validation(data: DatasetManifest, cfg: TrainConfig,
                        validation: Optional[DatasetManifest]) -> Tuple[DatasetManifest, DatasetManifest]:
    if validation is None:
        data, validation = split_validation(data, cfg.validation_fraction, cfg.seed)
    _require_labels(validation)
    return data, validation


def train(
    net: SAUNet,
    data: DatasetManifest,
    cfg: TrainConfig,
    validation: Optional[DatasetManifest] = None,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    augment_sources: Optional[Iterable[str]] = None,
) -> TrainRecord:
    """
    Phase 1 at lr_phase1 then phase 2 at lr_phase2.

    Without an explicit validation manifest a seeded validation_fraction of
    data is held out.

    Raises:
        ConfigurationError: If the schedule has no epochs or invalid values
        DataError: If a sample is unlabeled
    """
    cfg.validate()
    _require_labels(data)
    data, validation = _resolve_validation(data, cfg, validation)
    seed_everything(derive_seed(cfg.seed, 'train'))
    trainer = Trainer(net, cfg, checkpoint_dir, augment_sources)
    record = trainer.fit(data, validation, [(1, cfg.epochs_phase1, cfg.lr_phase1),
                                            (2, cfg.epochs_phase2, cfg.lr_phase2)])
    logger.info('training_completed', epochs=len(record), best_epoch=record.best_epoch,
                best_f1=record.best_f1 if record.best_epoch else None)
    return record


def fine_tune(
    net: SAUNet,
    data: DatasetManifest,
    cfg: TrainConfig,
    checkpoint: Optional[Union[str, Path]] = None,
    validation: Optional[DatasetManifest] = None,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    augment_sources: Optional[Iterable[str]] = None,
) -> TrainRecord:
    """
    Continue optimizing for epochs_phase2 epochs at lr_phase2.

    Zero epochs or a zero learning rate leave the parameters untouched.

    Raises:
        CheckpointError: If checkpoint was built for a different network config
        DataError: If a sample is unlabeled
    """
    cfg.validate(allow_empty=True, allow_zero_lr=True)
    if checkpoint is not None:
        load_weights_into(net, checkpoint)
    if cfg.epochs_phase2 == 0:
        return TrainRecord()
    _require_labels(data)
    data, validation = _resolve_validation(data, cfg, validation)
    seed_everything(derive_seed(cfg.seed, 'fine_tune'))
    trainer = Trainer(net, replace(cfg, lr_phase1=cfg.lr_phase2), checkpoint_dir, augment_sources)
    record = trainer.fit(data, validation, [(2, cfg.epochs_phase2, cfg.lr_phase2)])
    logger.info('fine_tune_completed', epochs=len(record), best_epoch=record.best_epoch)
    return record


def parameter_snapshot(net: SAUNet) -> List[np.ndarray]:
    return [p.detach().cpu().numpy().copy() for p in net.parameters()]
