"""
Pipeline commands: pipeline and grid.
"""

from typing import List, Optional

import click
import structlog

from retseg.cli.common import common_options, emit, resolve_run_config
from retseg.services.pipeline import GRID_COUNTS, GRID_ORDERS, experiment_grid, run_experiment_grid, run_pipeline
from retseg.utilities.decorators import handle_errors, log_duration
from retseg.utilities.exceptions import ConfigurationError

logger = structlog.get_logger(__name__)


def _int_list(value: Optional[str], default, setting: str) -> List[int]:
    if not value:
        return list(default)
    try:
        return [int(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise ConfigurationError(f"--{setting} expects comma-separated integers, got {value!r}", setting)


@click.command()
@common_options
@click.option('--drive-root', type=click.Path(), help='DRIVE dataset root (overrides drive_root).')
@handle_errors
@log_duration('pipeline')
def pipeline(config_path, output_dir, seed, as_json, threshold, drive_root):
    """
    Base training, synthetic images, pseudo-labels, retraining and fine-tuning.

    Re-running with the same --out resumes at the first unfinished stage.
    """
    run = resolve_run_config(config_path, output_dir, seed, threshold, required_paths=('drive_root',),
                             drive_root=drive_root)
    state = run_pipeline(
        run.pipeline,
        run.training,
        run.drive_root,
        run_dir=run.output_dir,
        model_config=run.model,
        target_size=run.target_size,
        seed=run.seed,
        synthetic_dir=run.synthetic_dir or run.pipeline.synthetic_dir,
    )
    report = dict(state.reports['final'])
    report['base'] = state.reports['base_train']
    report['fid'] = state.fid
    report['stage'] = state.stage.value
    emit(run, report, as_json, name='pipeline_report.json')


@click.command()
@common_options
@click.option('--drive-root', type=click.Path(), help='DRIVE dataset root (overrides drive_root).')
@click.option('--counts', help='Comma-separated synthetic counts.')
@click.option('--orders', help='Comma-separated orderings.')
@handle_errors
@log_duration('grid')
def grid(config_path, output_dir, seed, as_json, threshold, drive_root, counts, orders):
    """Run every order x augmentation x count configuration and write comparison.csv."""
    run = resolve_run_config(config_path, output_dir, seed, threshold, required_paths=('drive_root',),
                             drive_root=drive_root)
    order_list = [o.strip() for o in orders.split(',')] if orders else list(GRID_ORDERS)
    configurations = experiment_grid(run.pipeline, _int_list(counts, GRID_COUNTS, 'counts'), order_list)
    table = run_experiment_grid(
        configurations,
        run.training,
        run.drive_root,
        run_dir=run.output_dir,
        model_config=run.model,
        target_size=run.target_size,
        seed=run.seed,
        synthetic_dir=run.synthetic_dir or run.pipeline.synthetic_dir,
    )
    if as_json:
        emit(run, {'rows': table.to_dict(orient='records')}, True, name='grid.json')
    else:
        click.echo(table.to_string(index=False, float_format=lambda v: f'{v:.4f}'))


def register_pipeline_commands(group: click.Group) -> None:
    group.add_command(pipeline)
    group.add_command(grid)
