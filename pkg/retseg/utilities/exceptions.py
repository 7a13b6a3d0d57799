"""
Custom exception classes for retseg.

Provides structured error handling with process exit codes and
detailed error information for debugging and command-line feedback.
"""

from typing import Any, Dict, Optional

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class RetSegException(Exception):
    """Base exception class for retseg."""

    def __init__(
        self,
        message: str,
        exit_code: int = EXIT_RUNTIME,
        error_code: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.message = message
        self.exit_code = exit_code
        self.error_code = error_code or self.__class__.__name__.upper()
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to dictionary for JSON output."""
        return {
            'success': False,
            'error': {
                'code': self.error_code,
                'message': self.message,
                'exit_code': self.exit_code,
                'details': self.details,
            },
        }


# ==================== CONFIGURATION ERRORS (exit 2) ====================


class ConfigurationError(RetSegException):
    """Raised when configuration is invalid or missing."""

    def __init__(self, message: str = "Configuration error", setting: Optional[str] = None):
        super().__init__(
            message=message,
            exit_code=EXIT_CONFIG,
            error_code='CONFIGURATION_ERROR',
            details={'setting': setting},
        )
        self.setting = setting


class CheckpointError(RetSegException):
    """Raised when a checkpoint is missing or incompatible with the network config."""

    def __init__(self, message: str = "Checkpoint error", path: Optional[str] = None):
        super().__init__(
            message=message,
            exit_code=EXIT_CONFIG,
            error_code='CHECKPOINT_ERROR',
            details={'path': path},
        )


# ==================== DATA ERRORS (exit 3) ====================


class ValidationError(RetSegException):
    """Raised when input validation fails."""

    def __init__(
        self,
        message: str = "Validation failed",
        field_errors: Optional[Dict[str, list]] = None,
    ):
        details = {'field_errors': field_errors} if field_errors else {}
        super().__init__(
            message=message,
            exit_code=EXIT_DATA,
            error_code='VALIDATION_ERROR',
            details=details,
        )


class DataError(RetSegException):
    """Raised when a sample cannot be used for the requested operation."""

    def __init__(self, message: str, sample_id: Optional[str] = None, error_code: Optional[str] = None):
        super().__init__(
            message=message,
            exit_code=EXIT_DATA,
            error_code=error_code or 'DATA_ERROR',
            details={'sample_id': sample_id},
        )
        self.sample_id = sample_id


class DatasetLayoutError(DataError):
    """Raised when a dataset directory does not follow the expected layout."""

    def __init__(self, message: str, missing: Optional[str] = None):
        super().__init__(message, error_code='DATASET_LAYOUT_ERROR')
        self.details['missing'] = missing
        self.missing = missing


class DataIntegrityError(DataError):
    """Raised when files of one sample disagree (missing partner, size mismatch)."""

    def __init__(self, message: str, sample_id: Optional[str] = None):
        super().__init__(message, sample_id=sample_id, error_code='DATA_INTEGRITY_ERROR')


class EmptyManifestError(DataError):
    """Raised when a manifest would contain no samples."""

    def __init__(self, message: str = "No readable samples"):
        super().__init__(message, error_code='EMPTY_MANIFEST_ERROR')


class PreconditionError(DataError):
    """Raised when an operation would overwrite data it must not touch."""

    def __init__(self, message: str, sample_id: Optional[str] = None):
        super().__init__(message, sample_id=sample_id, error_code='PRECONDITION_ERROR')


# ==================== RUNTIME ERRORS (exit 4) ====================


class ShapeError(RetSegException):
    """Raised when tensor shapes are incompatible."""

    def __init__(self, message: str, expected: Any = None, actual: Any = None):
        super().__init__(
            message=message,
            exit_code=EXIT_RUNTIME,
            error_code='SHAPE_ERROR',
            details={'expected': _jsonable(expected), 'actual': _jsonable(actual)},
        )


class NumericalError(RetSegException):
    """Raised when a numerical routine receives input outside its domain."""

    def __init__(self, message: str, error_code: Optional[str] = None):
        super().__init__(
            message=message,
            exit_code=EXIT_RUNTIME,
            error_code=error_code or 'NUMERICAL_ERROR',
        )


class EmptyFOVError(NumericalError):
    """Raised when no pixel falls inside the field of view."""

    def __init__(self, message: str = "No pixels inside the field of view"):
        super().__init__(message, error_code='EMPTY_FOV_ERROR')


class UndefinedMetricError(NumericalError):
    """Raised when a metric has a zero denominator with no defined sentinel."""

    def __init__(self, metric: str, message: Optional[str] = None):
        super().__init__(message or f"Metric '{metric}' is undefined for these counts",
                         error_code='UNDEFINED_METRIC_ERROR')
        self.details['metric'] = metric
        self.metric = metric


class InsufficientSamplesError(NumericalError):
    """Raised when a statistic needs more samples than were given."""

    def __init__(self, required: int, actual: int):
        super().__init__(f"At least {required} samples required, got {actual}",
                         error_code='INSUFFICIENT_SAMPLES_ERROR')
        self.details.update({'required': required, 'actual': actual})


class EnsembleError(RetSegException):
    """Raised when ensemble members cannot be combined."""

    def __init__(self, message: str):
        super().__init__(message=message, exit_code=EXIT_RUNTIME, error_code='ENSEMBLE_ERROR')


class PipelineStageError(RetSegException):
    """Raised when a pipeline stage fails; the state file keeps the last completed stage."""

    def __init__(self, stage: str, iteration: int, cause: Exception):
        super().__init__(
            message=f"Pipeline stage '{stage}' failed at iteration {iteration}: {cause}",
            exit_code=getattr(cause, 'exit_code', EXIT_RUNTIME),
            error_code='PIPELINE_STAGE_ERROR',
            details={'stage': stage, 'iteration': iteration},
        )
        self.stage = stage
        self.iteration = iteration


def _jsonable(value: Any) -> Any:
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if value is None or isinstance(value, (int, float, str, bool)):
        return value
    return str(value)
