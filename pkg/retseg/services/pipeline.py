"""
Synthetic-data pipeline, experiment grid and pseudo-labeling.

Stages: base training on real data, synthetic image acquisition,
pseudo-labeling with the latest model, retraining on the configured
ordering and fine-tuning on the second dataset. Acquisition through
fine-tuning repeat for `iterations` rounds; the state file is written
after every stage so an interrupted run resumes at its pending stage.
"""

import hashlib
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
import structlog

from retseg.ai.checkpoint import load_checkpoint
from retseg.ai.saunet import SAUNet, build_saunet
from retseg.models.pipeline_state import PipelineStage, PipelineState
from retseg.models.report import REPORT_COLUMNS, ConfusionCounts, MetricsReport
from retseg.models.sample import SOURCE_REAL, SOURCE_SYNTHETIC, SPLIT_TEST, SPLIT_TRAIN, DatasetManifest
from retseg.services.dataset import (
    load_drive_dataset,
    load_manifest,
    load_synthetic_images,
    preprocess_manifest,
    save_manifest,
    split_validation,
    write_synthetic_dir,
)
from retseg.services.ensemble import Ensemble
from retseg.services.fid import fid_report
from retseg.services.generator import get_source
from retseg.services.metrics import Predictor, binarize, confusion, evaluate_model, predict_manifest
from retseg.services.training import fine_tune, train
from retseg.utilities.config import AugmentationSpec, PipelineConfig, SAUNetConfig, TrainConfig
from retseg.utilities.exceptions import (
    ConfigurationError,
    PipelineStageError,
    PreconditionError,
    RetSegException,
)
from retseg.utilities.io import atomic_write_json, dumps_json, write_mask, write_probability_png16
from retseg.utilities.seeding import derive_seed, seed_everything

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]

FINAL_REPORT = 'final_report.json'
PSEUDO_LABEL_DIR = 'pseudo_labels'


def pseudo_label(
    net: Predictor,
    synth: DatasetManifest,
    threshold: float = 0.5,
    out_dir: Optional[PathLike] = None,
    batch_size: int = 2,
) -> DatasetManifest:
    """
    Label synthetic samples with p >= threshold and keep the soft map.

    With out_dir, writes <id>.png masks and <id>_prob.png 16-bit soft maps.

    Raises:
        PreconditionError: If a sample already carries a vessel label
    """
    for sample in synth:
        if sample.is_labeled:
            raise PreconditionError(f"Sample {sample.id} already has a vessel label", sample_id=sample.id)

    probabilities = predict_manifest(net, synth, batch_size)
    labeled = []
    for sample, prob in zip(synth, probabilities):
        paths = dict(sample.paths)
        mask = binarize(prob, threshold)
        if out_dir is not None:
            out = Path(out_dir)
            paths['vessel_mask'] = str(write_mask(out / f'{sample.id}.png', mask))
            paths['probability_map'] = str(write_probability_png16(out / f'{sample.id}_prob.png', prob))
        labeled.append(sample.with_updates(vessel_mask=mask, probability_map=prob, paths=paths))

    metadata = dict(synth.metadata)
    metadata['pseudo_label_threshold'] = threshold
    logger.info('pseudo_labels_created', samples=len(labeled), threshold=threshold)
    return DatasetManifest(samples=labeled, split=synth.split, target_size=synth.target_size, metadata=metadata)


def reference_agreement(labeled: DatasetManifest) -> Optional[float]:
    """Pooled F1 of pseudo-labels against generator reference trees, if every sample has one."""
    if not labeled.samples or any(s.reference_mask is None for s in labeled):
        return None
    counts = ConfusionCounts()
    for sample in labeled:
        counts = counts + confusion(sample.vessel_mask, sample.reference_mask, sample.fov_mask)
    denominator = 2 * counts.tp + counts.fp + counts.fn
    return 2 * counts.tp / denominator if denominator else 1.0


def ordering(order: str, real: DatasetManifest,
             synth: DatasetManifest) -> Tuple[DatasetManifest, Optional[DatasetManifest]]:
    """(retrain data, fine-tune data) for an ordering."""
    if order == 'real_then_synth':
        return real, synth
    if order == 'synth_then_real':
        return synth, real
    if order == 'mixed':
        return real.concat(synth), real
    if order == 'synth_only':
        return synth, None
    raise ConfigurationError(f"Unknown pipeline order {order!r}", 'pipeline.order')


def config_hash(*parts: Any) -> str:
    payload = dumps_json([asdict(p) if hasattr(p, '__dataclass_fields__') else p for p in parts])
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()[:16]


class SegmentationPipeline:
    """Runs and resumes one pipeline in run_dir."""

    def __init__(
        self,
        cfg: PipelineConfig,
        train_cfg: TrainConfig,
        data_root: PathLike,
        run_dir: PathLike,
        model_config: SAUNetConfig,
        target_size: int,
        seed: int = 0,
        synthetic_dir: Optional[PathLike] = None,
    ):
        self.cfg = cfg.validate()
        self.train_cfg = train_cfg.validate()
        self.model_config = model_config.validate()
        self.data_root = Path(data_root)
        self.run_dir = Path(run_dir)
        self.target_size = target_size
        self.seed = seed
        self.synthetic_dir = str(synthetic_dir) if synthetic_dir else None
        self.hash = config_hash(cfg, train_cfg, model_config, target_size, seed, str(self.data_root))
        self.log = logger.bind(run_dir=str(self.run_dir))
        self._real: Optional[DatasetManifest] = None
        self._validation: Optional[DatasetManifest] = None
        self._test: Optional[DatasetManifest] = None

    # ---------- data ----------

    def _load_data(self) -> None:
        if self._real is not None:
            return
        real = preprocess_manifest(load_drive_dataset(self.data_root, SPLIT_TRAIN), self.target_size)
        self._test = preprocess_manifest(load_drive_dataset(self.data_root, SPLIT_TEST), self.target_size)
        if self.cfg.validate_on_test:
            self._real, self._validation = real, self._test
        else:
            self._real, self._validation = split_validation(
                real, self.train_cfg.validation_fraction, derive_seed(self.seed, 'validation'))

    @property
    def real(self) -> DatasetManifest:
        self._load_data()
        return self._real

    @property
    def validation(self) -> DatasetManifest:
        self._load_data()
        return self._validation

    @property
    def test(self) -> DatasetManifest:
        self._load_data()
        return self._test

    def _augmentation(self) -> Tuple[AugmentationSpec, List[str]]:
        sources = []
        if self.cfg.augment_real:
            sources.append(SOURCE_REAL)
        if self.cfg.augment_synth:
            sources.append(SOURCE_SYNTHETIC)
        spec = self.train_cfg.augmentation
        if sources and not spec.enabled:
            spec = replace(spec, enabled=True)
        return spec, sources

    def _stage_cfg(self, key: str, **changes) -> TrainConfig:
        augmentation, _ = self._augmentation()
        return replace(self.train_cfg, seed=derive_seed(self.seed, key), augmentation=augmentation, **changes)

    def _fresh_net(self, key: str) -> SAUNet:
        seed_everything(derive_seed(self.seed, 'init', key))
        return build_saunet(self.model_config)

    def _evaluate(self, net: Predictor, method: str) -> Dict[str, Any]:
        return evaluate_model(net, self.test, self.train_cfg.threshold,
                              batch_size=self.train_cfg.batch_size, method=method).to_dict()

    # ---------- stages ----------

    def _base_train(self, state: PipelineState) -> None:
        key = state.artifact_key(PipelineStage.BASE_TRAIN)
        net = self._fresh_net(key)
        _, sources = self._augmentation()
        record = train(net, self.real, self._stage_cfg(key), self.validation,
                       checkpoint_dir=self.run_dir / key, augment_sources=sources)
        best = load_checkpoint(record.best_checkpoint)
        state.checkpoints.append(record.best_checkpoint)
        state.artifacts[key] = record.best_checkpoint
        state.reports[key] = self._evaluate(best, 'base')
        state.advance(PipelineStage.GENERATE)

    def _generate(self, state: PipelineState) -> None:
        key = state.artifact_key(PipelineStage.GENERATE)
        source = get_source(self.cfg, self.synthetic_dir)
        synth = source.sample(self.cfg.synthetic_count, derive_seed(self.seed, key))
        synth = preprocess_manifest(synth, self.target_size)
        directory = self.run_dir / f'synthetic_{state.iteration}'
        synth = write_synthetic_dir(synth, directory)
        save_manifest(synth, directory / 'manifest.json')
        state.artifacts[key] = str(directory)

        if len(synth) >= 2:
            report = fid_report(self.real.samples, synth.samples)
            state.fid[str(state.iteration)] = report['value']
        else:
            self.log.warning('fid_skipped', reason='fewer than two synthetic images')
        state.advance(PipelineStage.PSEUDO_LABEL)

    def _pseudo_label(self, state: PipelineState) -> None:
        key = state.artifact_key(PipelineStage.PSEUDO_LABEL)
        directory = Path(state.artifacts[state.artifact_key(PipelineStage.GENERATE)])
        synth = load_synthetic_images(directory)
        synth.target_size = self.target_size
        net = load_checkpoint(state.latest_checkpoint, self.model_config)
        out_dir = self.run_dir / PSEUDO_LABEL_DIR / f'iter_{state.iteration}'
        labeled = pseudo_label(net, synth, self.cfg.pseudo_label_threshold, out_dir, self.train_cfg.batch_size)
        manifest_path = save_manifest(labeled, out_dir / 'manifest.json')
        state.artifacts[key] = str(manifest_path)
        agreement = reference_agreement(labeled)
        if agreement is not None:
            state.reports[key] = {'reference_f1': agreement}
        state.advance(PipelineStage.RETRAIN)

    def _datasets(self, state: PipelineState) -> Tuple[DatasetManifest, Optional[DatasetManifest]]:
        synth = load_manifest(state.artifacts[state.artifact_key(PipelineStage.PSEUDO_LABEL)])
        return ordering(self.cfg.order, self.real, synth)

    def _retrain(self, state: PipelineState) -> None:
        key = state.artifact_key(PipelineStage.RETRAIN)
        first, _ = self._datasets(state)
        if self.cfg.warm_start:
            net = load_checkpoint(state.latest_checkpoint, self.model_config)
        else:
            net = self._fresh_net(key)
        _, sources = self._augmentation()
        record = train(net, first, self._stage_cfg(key, epochs_phase2=0), self.validation,
                       checkpoint_dir=self.run_dir / key, augment_sources=sources)
        state.checkpoints.append(record.best_checkpoint)
        state.artifacts[key] = record.best_checkpoint
        state.advance(PipelineStage.FINETUNE)

    def _finetune(self, state: PipelineState) -> None:
        key = state.artifact_key(PipelineStage.FINETUNE)
        _, second = self._datasets(state)
        checkpoint = state.latest_checkpoint
        if second is not None and self.train_cfg.epochs_phase2 > 0:
            net = load_checkpoint(checkpoint, self.model_config)
            _, sources = self._augmentation()
            record = fine_tune(net, second, self._stage_cfg(key), validation=self.validation,
                               checkpoint_dir=self.run_dir / key, augment_sources=sources)
            checkpoint = record.best_checkpoint
            state.checkpoints.append(checkpoint)
        state.artifacts[key] = checkpoint
        state.reports[key] = self._evaluate(load_checkpoint(checkpoint), f'iteration_{state.iteration}')

        if state.iteration < self.cfg.iterations:
            state.advance(PipelineStage.GENERATE, iteration=state.iteration + 1)
        else:
            state.reports['final'] = dict(state.reports[key], method='final')
            state.advance(PipelineStage.DONE)

    # ---------- driver ----------

    def _initial_state(self) -> PipelineState:
        state = PipelineState.load(self.run_dir)
        if state is None:
            return PipelineState(config_hash=self.hash)
        if state.config_hash != self.hash:
            raise ConfigurationError(
                f"{self.run_dir} holds a run with a different configuration; choose another output directory",
                'output_dir',
            )
        self.log.info('pipeline_resumed', stage=state.stage.value, iteration=state.iteration)
        return state

    def run(self) -> PipelineState:
        """
        Execute pending stages until done.

        Raises:
            PipelineStageError: If a stage fails; the state file keeps the last completed stage
        """
        self.run_dir.mkdir(parents=True, exist_ok=True)
        state = self._initial_state()
        stages: Dict[PipelineStage, Callable[[PipelineState], None]] = {
            PipelineStage.BASE_TRAIN: self._base_train,
            PipelineStage.GENERATE: self._generate,
            PipelineStage.PSEUDO_LABEL: self._pseudo_label,
            PipelineStage.RETRAIN: self._retrain,
            PipelineStage.FINETUNE: self._finetune,
        }
        while not state.is_done:
            stage, iteration = state.stage, state.iteration
            self.log.info('pipeline_stage_started', stage=stage.value, iteration=iteration)
            try:
                stages[stage](state)
            except RetSegException as exc:
                self.log.error('pipeline_stage_failed', stage=stage.value, iteration=iteration,
                               error_code=exc.error_code)
                raise PipelineStageError(stage.value, iteration, exc) from exc
            except Exception as exc:
                self.log.exception('pipeline_stage_crashed', stage=stage.value, iteration=iteration)
                raise PipelineStageError(stage.value, iteration, exc) from exc
            state.save(self.run_dir)
            self.log.info('pipeline_stage_completed', stage=stage.value, iteration=iteration)

        atomic_write_json(self.run_dir / FINAL_REPORT, state.reports['final'])
        return state


def run_pipeline(
    cfg: PipelineConfig,
    train_cfg: TrainConfig,
    data_root: PathLike,
    *,
    run_dir: PathLike,
    model_config: Optional[SAUNetConfig] = None,
    target_size: int = 512,
    seed: int = 0,
    synthetic_dir: Optional[PathLike] = None,
) -> PipelineState:
    """Run, or resume, the synthetic-data pipeline in run_dir."""
    pipeline = SegmentationPipeline(cfg, train_cfg, data_root, run_dir,
                                    model_config or SAUNetConfig(), target_size, seed, synthetic_dir)
    return pipeline.run()


# ==================== EXPERIMENT GRID ====================

GRID_COUNTS = (50, 200, 500, 1000)
GRID_ORDERS = ('real_then_synth', 'synth_then_real')
GRID_AUGMENTATIONS = (
    ('none', False, False),
    ('real', True, False),
    ('synth', False, True),
    ('both', True, True),
)


def experiment_grid(
    base: PipelineConfig,
    synthetic_counts: Sequence[int] = GRID_COUNTS,
    orders: Sequence[str] = GRID_ORDERS,
    augmentations: Sequence[Tuple[str, bool, bool]] = GRID_AUGMENTATIONS,
) -> List[Tuple[str, PipelineConfig]]:
    """Every (order, augmentation, count) combination as a named pipeline config."""
    grid = []
    for order in orders:
        for label, augment_real, augment_synth in augmentations:
            for count in synthetic_counts:
                cfg = replace(base, order=order, synthetic_count=count,
                              augment_real=augment_real, augment_synth=augment_synth)
                grid.append((f'{order}-aug_{label}-n{count}', cfg.validate()))
    return grid


def run_experiment_grid(
    grid: Sequence[Tuple[str, PipelineConfig]],
    train_cfg: TrainConfig,
    data_root: PathLike,
    *,
    run_dir: PathLike,
    model_config: Optional[SAUNetConfig] = None,
    target_size: int = 512,
    seed: int = 0,
    synthetic_dir: Optional[PathLike] = None,
    ensemble_modes: Sequence[str] = ('mean', 'max'),
) -> pd.DataFrame:
    """
    Run each configuration and collect a comparison table.

    Besides one row per configuration, every pipeline model is fused with
    its base model under each of ensemble_modes.
    """
    run_dir = Path(run_dir)
    model_config = model_config or SAUNetConfig()
    rows: List[List[Any]] = []
    for name, cfg in grid:
        pipeline = SegmentationPipeline(cfg, train_cfg, data_root, run_dir / name, model_config,
                                        target_size, seed, synthetic_dir)
        state = pipeline.run()
        if not rows:
            rows.append(MetricsReport.from_dict(state.reports['base_train']).to_csv_row())
        rows.append(MetricsReport.from_dict(dict(state.reports['final'], method=name)).to_csv_row())

        base_net = load_checkpoint(state.artifacts['base_train'])
        final_net = load_checkpoint(state.latest_checkpoint)
        for mode in ensemble_modes:
            ensemble = Ensemble([final_net, base_net], mode, train_cfg.threshold)
            report = evaluate_model(ensemble, pipeline.test, train_cfg.threshold,
                                    batch_size=train_cfg.batch_size, method=f'{name}+base-{mode}')
            rows.append(report.to_csv_row())

    table = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    run_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(run_dir / 'comparison.csv', index=False, float_format='%.10g')
    logger.info('experiment_grid_completed', configurations=len(grid), rows=len(table))
    return table
