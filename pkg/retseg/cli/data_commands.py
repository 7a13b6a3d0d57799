"""
Data commands: prepare, toy and fid.
"""

from pathlib import Path

import click
import structlog

from retseg.cli.common import common_options, emit, resolve_run_config
from retseg.models.sample import SPLITS
from retseg.services.dataset import (
    load_drive_dataset,
    load_synthetic_images,
    preprocess_manifest,
    save_manifest,
    write_drive_layout,
)
from retseg.services.fid import fid_report, get_extractor
from retseg.services.generator import write_toy_drive
from retseg.utilities.decorators import handle_errors, log_duration
from retseg.utilities.exceptions import ConfigurationError

logger = structlog.get_logger(__name__)


@click.command()
@common_options
@click.option('--drive-root', type=click.Path(), help='DRIVE dataset root (overrides drive_root).')
@click.option('--size', 'target_size', type=int, help='Square side to resize to; a power of two.')
@handle_errors
@log_duration('prepare')
def prepare(config_path, output_dir, seed, as_json, threshold, drive_root, target_size):
    """Resize DRIVE to the target size and write it with manifest_<split>.json files."""
    run = resolve_run_config(config_path, output_dir, seed, threshold, required_paths=('drive_root',),
                             drive_root=drive_root, target_size=target_size)
    out = Path(run.output_dir)
    report = {'target_size': run.target_size}
    for split in SPLITS:
        manifest = preprocess_manifest(load_drive_dataset(run.drive_root, split), run.target_size)
        written = write_drive_layout(manifest, out)
        save_manifest(written, out / f'manifest_{split}.json')
        report[split] = len(written)
    emit(run, report, as_json, name='prepare.json')


@click.command()
@common_options
@click.option('--n-train', type=int, default=8, show_default=True)
@click.option('--n-test', type=int, default=4, show_default=True)
@click.option('--size', type=int, default=64, show_default=True)
@handle_errors
def toy(config_path, output_dir, seed, as_json, threshold, n_train, n_test, size):
    """Write a procedural DRIVE-layout dataset into --out."""
    run = resolve_run_config(config_path, output_dir, seed, threshold)
    if n_train < 1 or n_test < 1:
        raise ConfigurationError("--n-train and --n-test must be >= 1", 'n_train')
    written = write_toy_drive(run.output_dir, n_train, n_test, run.seed, size)
    out = Path(run.output_dir)
    for split, manifest in written.items():
        save_manifest(manifest, out / f'manifest_{split}.json')
    report = {split: len(m) for split, m in written.items()}
    report['size'] = size
    emit(run, report, as_json, name='toy.json')


@click.command()
@common_options
@click.option('--real', 'real_root', type=click.Path(), help='DRIVE root for the real set (default drive_root).')
@click.option('--synthetic', 'synthetic_dir', type=click.Path(),
              help='Directory of generated images (default synthetic_dir).')
@click.option('--split', type=click.Choice(SPLITS), default='train', show_default=True)
@click.option('--extractor', default='raw', show_default=True, help='Feature extractor name.')
@handle_errors
def fid(config_path, output_dir, seed, as_json, threshold, real_root, synthetic_dir, split, extractor):
    """Frechet distance between real and generated images."""
    get_extractor(extractor)
    run = resolve_run_config(config_path, output_dir, seed, threshold,
                             required_paths=('drive_root', 'synthetic_dir'),
                             drive_root=real_root, synthetic_dir=synthetic_dir)
    real = preprocess_manifest(load_drive_dataset(run.drive_root, split), run.target_size)
    synthetic = preprocess_manifest(load_synthetic_images(run.synthetic_dir), run.target_size)
    emit(run, fid_report(real.samples, synthetic.samples, extractor), as_json, name='fid.json')


def register_data_commands(group: click.Group) -> None:
    group.add_command(prepare)
    group.add_command(toy)
    group.add_command(fid)
