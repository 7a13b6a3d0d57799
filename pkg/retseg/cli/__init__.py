"""CLI module for retseg"""

import click

from retseg import __version__
from retseg.app import create_app
from retseg.cli.data_commands import register_data_commands
from retseg.cli.model_commands import register_model_commands
from retseg.cli.pipeline_commands import register_pipeline_commands
from retseg.utilities.decorators import handle_errors


@click.group()
@click.version_option(__version__, prog_name='retseg')
@click.pass_context
@handle_errors
def cli(ctx):
    """Retinal vessel segmentation with SA-UNet and synthetic training data."""
    ctx.obj = create_app()


register_data_commands(cli)
register_model_commands(cli)
register_pipeline_commands(cli)


def main():
    cli(prog_name='retseg')


__all__ = ['cli', 'main']
