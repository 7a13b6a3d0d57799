"""
Model commands: train, evaluate, pseudolabel and ensemble.
"""

from dataclasses import replace
from pathlib import Path

import click
import structlog

from retseg.ai.checkpoint import load_checkpoint
from retseg.ai.saunet import build_saunet, count_parameters
from retseg.cli.common import common_options, emit, load_split, report_method, resolve_run_config
from retseg.models.sample import SPLIT_TEST, SPLIT_TRAIN
from retseg.services.dataset import load_synthetic_images, preprocess_manifest, save_manifest, split_validation
from retseg.services.ensemble import Ensemble
from retseg.services.metrics import evaluate_model
from retseg.services.pipeline import PSEUDO_LABEL_DIR, pseudo_label, reference_agreement
from retseg.services.training import train as train_network
from retseg.utilities.config import ENSEMBLE_MODES, EnsembleSpec
from retseg.utilities.decorators import handle_errors, log_duration
from retseg.utilities.exceptions import ConfigurationError
from retseg.utilities.seeding import derive_seed, seed_everything

logger = structlog.get_logger(__name__)


@click.command()
@common_options
@click.option('--drive-root', type=click.Path(), help='DRIVE dataset root (overrides drive_root).')
@handle_errors
@log_duration('train')
def train(config_path, output_dir, seed, as_json, threshold, drive_root):
    """Train SA-UNet on the DRIVE training split and evaluate on the test split."""
    run = resolve_run_config(config_path, output_dir, seed, threshold, drive_root=drive_root)
    data = load_split(run, SPLIT_TRAIN)
    test = load_split(run, SPLIT_TEST)
    if run.pipeline.validate_on_test:
        validation = test
    else:
        data, validation = split_validation(data, run.training.validation_fraction,
                                            derive_seed(run.seed, 'validation'))

    seed_everything(derive_seed(run.seed, 'init', 'train'))
    net = build_saunet(run.model)
    logger.info('network_built', parameters=count_parameters(net))
    record = train_network(net, data, run.training, validation, checkpoint_dir=run.output_dir)

    best = load_checkpoint(record.best_checkpoint, run.model)
    report = evaluate_model(best, test, run.training.threshold, batch_size=run.training.batch_size,
                            method='sa_unet').to_dict()
    report['best_epoch'] = record.best_epoch
    report['checkpoint'] = Path(record.best_checkpoint).name
    emit(run, report, as_json)


@click.command()
@common_options
@click.option('--checkpoint', required=True, type=click.Path(dir_okay=False), help='Weights file (.pt).')
@click.option('--data', default=SPLIT_TEST, show_default=True,
              help='Split name, manifest .json or DRIVE root.')
@click.option('--full-frame', is_flag=True, help='Count every pixel instead of the field of view only.')
@handle_errors
def evaluate(config_path, output_dir, seed, as_json, threshold, checkpoint, data, full_frame):
    """Evaluate a checkpoint; the report uses the comparison-table columns."""
    run = resolve_run_config(config_path, output_dir, seed, threshold)
    net = load_checkpoint(checkpoint)
    manifest = load_split(run, data)
    report = evaluate_model(net, manifest, run.training.threshold, use_fov=not full_frame,
                            batch_size=run.training.batch_size, method=report_method([checkpoint]))
    emit(run, report.to_dict(), as_json)


@click.command()
@common_options
@click.option('--checkpoint', required=True, type=click.Path(dir_okay=False), help='Weights file (.pt).')
@click.option('--synthetic-dir', type=click.Path(), help='Unlabeled images (overrides synthetic_dir).')
@handle_errors
def pseudolabel(config_path, output_dir, seed, as_json, threshold, checkpoint, synthetic_dir):
    """Label generated images with a trained network."""
    def adjust(run):
        if threshold is not None:
            run.pipeline = replace(run.pipeline, pseudo_label_threshold=threshold)

    run = resolve_run_config(config_path, output_dir, seed, None, adjust, required_paths=('synthetic_dir',),
                             synthetic_dir=synthetic_dir)
    net = load_checkpoint(checkpoint)
    synth = preprocess_manifest(load_synthetic_images(run.synthetic_dir), run.target_size)
    out_dir = Path(run.output_dir) / PSEUDO_LABEL_DIR
    labeled = pseudo_label(net, synth, run.pipeline.pseudo_label_threshold, out_dir, run.training.batch_size)
    save_manifest(labeled, out_dir / 'manifest.json')
    emit(run, {
        'samples': len(labeled),
        'threshold': run.pipeline.pseudo_label_threshold,
        'reference_f1': reference_agreement(labeled),
    }, as_json, name='pseudolabel.json')


@click.command()
@common_options
@click.option('--members', help='Comma-separated checkpoint paths (overrides ensemble.members).')
@click.option('--mode', type=click.Choice(ENSEMBLE_MODES), help='Fusion rule (overrides ensemble.mode).')
@click.option('--data', default=SPLIT_TEST, show_default=True,
              help='Split name, manifest .json or DRIVE root.')
@handle_errors
def ensemble(config_path, output_dir, seed, as_json, threshold, members, mode, data):
    """Evaluate a fused ensemble of checkpoints."""
    def adjust(run):
        spec = run.ensemble or EnsembleSpec()
        if members:
            spec = replace(spec, members=[m.strip() for m in members.split(',') if m.strip()])
        if mode:
            spec = replace(spec, mode=mode)
        if threshold is not None:
            spec = replace(spec, threshold=threshold)
        run.ensemble = spec

    run = resolve_run_config(config_path, output_dir, seed, threshold, adjust)
    spec = run.ensemble
    if not spec.members:
        raise ConfigurationError("ensemble.members is empty; pass --members", 'ensemble.members')

    fused = Ensemble.from_spec(spec)
    manifest = load_split(run, data)
    report = evaluate_model(fused, manifest, spec.threshold, batch_size=run.training.batch_size,
                            method=report_method(spec.members, spec.mode))
    emit(run, report.to_dict(), as_json)


def register_model_commands(group: click.Group) -> None:
    group.add_command(train)
    group.add_command(evaluate)
    group.add_command(pseudolabel)
    group.add_command(ensemble)
