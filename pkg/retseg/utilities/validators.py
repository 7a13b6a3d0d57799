"""
Input validation utilities for retseg.

Provides validation functions for configuration values and array inputs
with proper error handling.
"""

from typing import Any, Iterable, Optional, Sequence, Tuple

import numpy as np

from retseg.utilities.exceptions import ConfigurationError, ValidationError


def is_power_of_two(value: int) -> bool:
    """Return True for positive integer powers of two (1, 2, 4, ...)."""
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool) \
        and value > 0 and (value & (value - 1)) == 0


def validate_power_of_two(value: Any, setting: str = 'target_size') -> int:
    """
    Validate a square training resolution.

    Args:
        value: Candidate size in pixels
        setting: Name of the setting, reported in the error

    Returns:
        The validated size

    Raises:
        ConfigurationError: If value is not a positive power of two
    """
    if not is_power_of_two(value):
        raise ConfigurationError(f"{setting} must be a positive power of two, got {value!r}", setting)
    return int(value)


def validate_positive_int(value: Any, setting: str, allow_zero: bool = False) -> int:
    """
    Validate an integer count.

    Raises:
        ConfigurationError: If value is not an int or is out of range
    """
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigurationError(f"{setting} must be an integer, got {value!r}", setting)
    if value < 0 or (value == 0 and not allow_zero):
        bound = '>= 0' if allow_zero else '> 0'
        raise ConfigurationError(f"{setting} must be {bound}, got {value}", setting)
    return int(value)


def validate_odd(value: Any, setting: str) -> int:
    """
    Validate an odd positive kernel or block size.

    Raises:
        ConfigurationError: If value is even or not positive
    """
    value = validate_positive_int(value, setting)
    if value % 2 == 0:
        raise ConfigurationError(f"{setting} must be odd, got {value}", setting)
    return value


def validate_unit_interval(
    value: Any,
    setting: str,
    low_inclusive: bool = False,
    high_inclusive: bool = False,
) -> float:
    """
    Validate a real value inside (0, 1) with optional closed ends.

    Raises:
        ConfigurationError: If value falls outside the interval
    """
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{setting} must be a number, got {value!r}", setting)
    low_ok = value >= 0.0 if low_inclusive else value > 0.0
    high_ok = value <= 1.0 if high_inclusive else value < 1.0
    if not (low_ok and high_ok):
        left = '[' if low_inclusive else '('
        right = ']' if high_inclusive else ')'
        raise ConfigurationError(f"{setting} must lie in {left}0, 1{right}, got {value}", setting)
    return value


def validate_range(value: Sequence[float], setting: str) -> Tuple[float, float]:
    """
    Validate a (lo, hi) pair with lo <= hi.

    Raises:
        ConfigurationError: If value is not an ordered pair of numbers
    """
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{setting} must be a (lo, hi) pair, got {value!r}", setting)
    if lo > hi:
        raise ConfigurationError(f"{setting} must satisfy lo <= hi, got ({lo}, {hi})", setting)
    return lo, hi


def validate_choice(value: Any, choices: Iterable[str], setting: str) -> str:
    """
    Validate an enumerated string value.

    Raises:
        ConfigurationError: If value is not one of choices
    """
    choices = tuple(choices)
    if value not in choices:
        raise ConfigurationError(f"{setting} must be one of {', '.join(choices)}, got {value!r}", setting)
    return value


def validate_binary(array: np.ndarray, name: str) -> np.ndarray:
    """
    Validate that an array only contains 0 and 1.

    Args:
        array: Array-like of any numeric or boolean dtype
        name: Field name reported in the error

    Returns:
        The array as uint8

    Raises:
        ValidationError: If any value is not 0 or 1
    """
    array = np.asarray(array)
    if array.dtype == bool:
        return array.astype(np.uint8)
    if array.size and not np.isin(array, (0, 1)).all():
        raise ValidationError(f"{name} must be binary", {name: ['values outside {0, 1}']})
    return array.astype(np.uint8)


def validate_same_shape(*arrays: Optional[np.ndarray], names: Sequence[str]) -> Tuple[int, ...]:
    """
    Validate that all non-None arrays share one shape.

    Raises:
        ValidationError: If shapes differ
    """
    shapes = {name: tuple(np.shape(a)) for name, a in zip(names, arrays) if a is not None}
    if len(set(shapes.values())) > 1:
        raise ValidationError(
            "Input shapes differ",
            {name: [f'shape {shape}'] for name, shape in shapes.items()},
        )
    return next(iter(shapes.values())) if shapes else ()
