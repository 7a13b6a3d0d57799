"""
Shared utilities: configuration, errors, validation, seeding and file IO.
"""

from retseg.utilities.exceptions import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_RUNTIME,
    CheckpointError,
    ConfigurationError,
    DataError,
    DataIntegrityError,
    DatasetLayoutError,
    EmptyFOVError,
    EmptyManifestError,
    EnsembleError,
    InsufficientSamplesError,
    NumericalError,
    PipelineStageError,
    PreconditionError,
    RetSegException,
    ShapeError,
    UndefinedMetricError,
    ValidationError,
)
from retseg.utilities.seeding import derive_seed, seed_everything, torch_generator

__all__ = [
    'EXIT_CONFIG', 'EXIT_DATA', 'EXIT_RUNTIME',
    'CheckpointError', 'ConfigurationError', 'DataError', 'DataIntegrityError',
    'DatasetLayoutError', 'EmptyFOVError', 'EmptyManifestError', 'EnsembleError',
    'InsufficientSamplesError', 'NumericalError', 'PipelineStageError', 'PreconditionError',
    'RetSegException', 'ShapeError', 'UndefinedMetricError', 'ValidationError',
    'derive_seed', 'seed_everything', 'torch_generator',
]
