"""
Shared command plumbing: common flags, run config resolution and report output.
"""

from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

import click
import structlog

from retseg.models.sample import SPLITS, DatasetManifest
from retseg.services.dataset import load_drive_dataset, load_manifest, preprocess_manifest
from retseg.utilities.config import RunConfig
from retseg.utilities.io import atomic_write_json, atomic_write_text, dumps_json
from retseg.utilities.schemas import dump_run_config, load_run_config

logger = structlog.get_logger(__name__)

RESOLVED_CONFIG = 'resolved_config.json'


def common_options(f):
    """--config, --out, --seed, --json and --threshold, shared by every command."""
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False),
                     help='Run config JSON file.'),
        click.option('--out', 'output_dir', type=click.Path(file_okay=False),
                     help='Output directory (overrides output_dir).'),
        click.option('--seed', type=int, help='Global seed (overrides seed and training.seed).'),
        click.option('--json', 'as_json', is_flag=True, help='Print the report as JSON on stdout.'),
        click.option('--threshold', type=float, help='Binarization threshold.'),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def resolve_run_config(
    config_path: Optional[str],
    output_dir: Optional[str],
    seed: Optional[int],
    threshold: Optional[float] = None,
    adjust: Optional[Callable[[RunConfig], None]] = None,
    required_paths: Sequence[str] = (),
    **overrides: Any,
) -> RunConfig:
    """
    Load the config file, apply flag overrides, validate and snapshot it.

    `adjust` edits nested sections in place before validation. Settings named
    in `required_paths` must exist before anything is written. The snapshot
    goes to <out>/resolved_config.json; replaying it with --config
    reproduces the run.

    Raises:
        ConfigurationError: If the file or an overridden value is invalid
    """
    run = load_run_config(config_path) if config_path else RunConfig()
    if output_dir:
        run.output_dir = output_dir
    if seed is not None:
        run.seed = seed
        run.training = replace(run.training, seed=seed)
    if threshold is not None:
        run.training = replace(run.training, threshold=threshold)
    for name, value in overrides.items():
        if value is not None:
            setattr(run, name, value)
    if adjust is not None:
        adjust(run)
    run.validate()
    run.validate_paths(*required_paths)

    out = Path(run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / RESOLVED_CONFIG, dumps_json(dump_run_config(run)))
    logger.info('run_config_resolved', output_dir=str(out), seed=run.seed)
    return run


def load_split(run: RunConfig, data: str) -> DatasetManifest:
    """
    A split name reads from drive_root; a .json path is a saved manifest;
    any other path is a DRIVE root whose test split is used.
    """
    if data in SPLITS:
        run.validate_paths('drive_root')
        manifest = load_drive_dataset(run.drive_root, data)
    elif data.endswith('.json'):
        manifest = load_manifest(data)
    else:
        manifest = load_drive_dataset(data, 'test')
    return preprocess_manifest(manifest, run.target_size)


def emit(run: RunConfig, report: Dict[str, Any], as_json: bool, name: str = 'report.json') -> None:
    """Persist the report next to the run and print it."""
    atomic_write_json(Path(run.output_dir) / name, report)
    if as_json:
        click.echo(dumps_json(report), nl=False)
        return
    for key, value in report.items():
        if isinstance(value, float):
            click.echo(f'{key}: {value:.4f}')
        elif not isinstance(value, (dict, list)):
            click.echo(f'{key}: {value}')


def report_method(checkpoints: Sequence[str], mode: Optional[str] = None) -> str:
    """
    Report label for a checkpoint or an ensemble of checkpoints.

    Members that are all the same file fuse to that model under every mode,
    so they get the single checkpoint's label.
    """
    stems = list(dict.fromkeys(Path(c).stem for c in checkpoints))
    if len(stems) == 1:
        return stems[0]
    return f"ensemble-{mode}-{'+'.join(stems)}"
