"""
Frechet distance between image sets in a pluggable feature space.
"""

from typing import Any, Callable, Dict, Iterable, List, Union

import numpy as np
import structlog
import torch
import torch.nn.functional as F

from retseg.models.report import FeatureStats
from retseg.models.sample import RetinalSample
from retseg.utilities.exceptions import ConfigurationError, InsufficientSamplesError, NumericalError, ValidationError

logger = structlog.get_logger(__name__)

Extractor = Callable[[np.ndarray], np.ndarray]
ImageLike = Union[np.ndarray, RetinalSample]

EIGEN_FLOOR = 1e-10
SYMMETRY_TOL = 1e-8
PSD_TOL = 1e-8

_EXTRACTORS: Dict[str, Extractor] = {}


def register_extractor(name: str):
    """Decorator registering an image -> 1-D feature vector function under name."""
    def decorator(fn: Extractor) -> Extractor:
        _EXTRACTORS[name] = fn
        return fn
    return decorator


def get_extractor(name: str) -> Extractor:
    try:
        return _EXTRACTORS[name]
    except KeyError:
        raise ConfigurationError(
            f"Unknown feature extractor {name!r}; available: {', '.join(sorted(_EXTRACTORS))}",
            'extractor',
        )


def available_extractors() -> List[str]:
    return sorted(_EXTRACTORS)


@register_extractor('raw')
def raw_features(image: np.ndarray) -> np.ndarray:
    """Grayscale image downsampled to 16 x 16 and flattened."""
    array = np.asarray(image, dtype=np.float32)
    gray = array.mean(axis=2) if array.ndim == 3 else array
    tensor = torch.from_numpy(np.ascontiguousarray(gray))[None, None]
    small = F.interpolate(tensor, size=(16, 16), mode='bilinear', align_corners=False, antialias=True)
    return small.reshape(-1).numpy().astype(np.float64)


@register_extractor('identity')
def identity_features(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64).reshape(-1)


def _image(item: ImageLike) -> np.ndarray:
    return item.image if isinstance(item, RetinalSample) else np.asarray(item)


def feature_stats(images: Iterable[ImageLike], extractor: Union[str, Extractor] = 'raw') -> FeatureStats:
    """
    Mean and sample covariance (ddof 1) of extracted features.

    Raises:
        InsufficientSamplesError: If fewer than two images are given
    """
    fn = get_extractor(extractor) if isinstance(extractor, str) else extractor
    items = list(images)
    if len(items) < 2:
        raise InsufficientSamplesError(required=2, actual=len(items))
    features = np.stack([np.asarray(fn(_image(item)), dtype=np.float64).reshape(-1) for item in items])
    n = features.shape[0]
    mu = features.mean(axis=0)
    centered = features - mu
    sigma = centered.T @ centered / (n - 1)
    return FeatureStats(mu=mu, sigma=sigma, n=n)


def _check_sigma(sigma: np.ndarray, name: str) -> np.ndarray:
    scale = max(1.0, float(np.abs(sigma).max()) if sigma.size else 1.0)
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=SYMMETRY_TOL * scale):
        raise NumericalError(f"{name} covariance is not symmetric", error_code='NON_SYMMETRIC_COVARIANCE')
    sigma = (sigma + sigma.T) / 2.0
    eigenvalues, eigenvectors = np.linalg.eigh(sigma)
    if eigenvalues.size and eigenvalues.min() < -PSD_TOL * scale:
        raise NumericalError(
            f"{name} covariance is not positive semidefinite (min eigenvalue {eigenvalues.min():.3g})",
            error_code='NON_PSD_COVARIANCE',
        )
    root = (eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.T
    return root


def fid(a: FeatureStats, b: FeatureStats) -> float:
    """
    ||mu_a - mu_b||^2 + Tr(sigma_a + sigma_b - 2 (sigma_a^1/2 sigma_b sigma_a^1/2)^1/2), clamped at 0.

    Raises:
        ValidationError: If feature dimensions differ
        NumericalError: If a covariance is not symmetric positive semidefinite
    """
    mu_a, mu_b = np.atleast_1d(a.mu).astype(np.float64), np.atleast_1d(b.mu).astype(np.float64)
    sigma_a, sigma_b = np.atleast_2d(a.sigma).astype(np.float64), np.atleast_2d(b.sigma).astype(np.float64)
    if mu_a.shape != mu_b.shape or sigma_a.shape != sigma_b.shape or sigma_a.shape != (mu_a.size, mu_a.size):
        raise ValidationError(
            "Feature dimensions differ",
            {'dim': [f'a={mu_a.size}', f'b={mu_b.size}']},
        )

    root_a = _check_sigma(sigma_a, 'a')
    _check_sigma(sigma_b, 'b')
    middle = root_a @ sigma_b @ root_a
    middle = (middle + middle.T) / 2.0
    eigenvalues = np.linalg.eigvalsh(middle)
    eigenvalues = np.where(eigenvalues < EIGEN_FLOOR, 0.0, eigenvalues)
    trace_sqrt = float(np.sqrt(eigenvalues).sum())

    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * trace_sqrt)
    return max(value, 0.0)


def fid_report(
    a_images: Iterable[ImageLike],
    b_images: Iterable[ImageLike],
    extractor: str = 'raw',
) -> Dict[str, Any]:
    a_images, b_images = list(a_images), list(b_images)
    stats_a = feature_stats(a_images, extractor)
    stats_b = feature_stats(b_images, extractor)
    value = fid(stats_a, stats_b)
    logger.info('fid_computed', value=value, extractor=extractor, n_a=stats_a.n, n_b=stats_b.n)
    return {'value': value, 'extractor': extractor, 'n_a': stats_a.n, 'n_b': stats_b.n}
