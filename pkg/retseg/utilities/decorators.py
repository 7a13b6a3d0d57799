"""
Decorators for command entry points and pipeline stages.
"""

import time
from functools import wraps

import click
import structlog

from retseg.utilities.exceptions import EXIT_RUNTIME, RetSegException

logger = structlog.get_logger(__name__)


def handle_errors(f):
    """Translate retseg exceptions into exit codes and a one-line message on stderr."""
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except RetSegException as exc:
            logger.error('command_failed', error_code=exc.error_code, details=exc.details)
            click.echo(f"error [{exc.error_code}]: {exc.message}", err=True)
            raise SystemExit(exc.exit_code)
        except (click.exceptions.Exit, click.ClickException, SystemExit):
            raise
        except Exception as exc:
            logger.exception('command_crashed', error=str(exc))
            click.echo(f"error [INTERNAL_ERROR]: {exc}", err=True)
            raise SystemExit(EXIT_RUNTIME)
    return decorated_function


def log_duration(event: str):
    """Log start and completion of the wrapped call with its wall time."""
    def decorator(f):
        @wraps(f)
        def decorated_function(*args, **kwargs):
            started = time.perf_counter()
            logger.info(f'{event}_started')
            result = f(*args, **kwargs)
            logger.info(f'{event}_completed', seconds=round(time.perf_counter() - started, 3))
            return result
        return decorated_function
    return decorator
