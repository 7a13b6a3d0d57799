"""
Application bootstrap: configuration, structured logging and torch setup.
"""

import logging
import sys
from typing import Optional

import structlog
import torch

from retseg.utilities.config import Config, get_config


def configure_logging(config: Config) -> None:
    """Configure structlog on top of stdlib logging; logs go to stderr."""
    level = getattr(logging, str(config.LOG_LEVEL).upper(), logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter('%(message)s'))
    root = logging.getLogger()
    root.handlers = [handler]
    root.setLevel(level)

    renderer = (
        structlog.processors.JSONRenderer(sort_keys=True)
        if config.LOG_FORMAT == 'json'
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            renderer,
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=False,
    )


def create_app(config_name: Optional[str] = None) -> Config:
    """Load settings for the environment and apply them process-wide."""
    config = get_config(config_name)
    configure_logging(config)
    if config.TORCH_THREADS:
        torch.set_num_threads(config.TORCH_THREADS)

    logger = structlog.get_logger(__name__)
    logger.debug('app_configured', **config.to_dict())
    return config
