"""
Configuration management for retseg.

Process settings come from the environment (with .env support), experiment
settings from dataclasses that are serialized into a run config file.
"""

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from retseg.utilities.exceptions import ConfigurationError
from retseg.utilities.validators import (
    validate_choice,
    validate_odd,
    validate_positive_int,
    validate_power_of_two,
    validate_range,
    validate_unit_interval,
)

load_dotenv()

GENERATOR_SOURCES = ('external_dir', 'toy_procedural')
PIPELINE_ORDERS = ('real_then_synth', 'synth_then_real', 'mixed', 'synth_only')
ENSEMBLE_MODES = ('mean', 'max', 'min', 'vote')


@dataclass
class AugmentationSpec:
    """Geometric and color augmentation settings."""
    enabled: bool = True
    horizontal_flip: bool = True
    vertical_flip: bool = True
    flip_probability: float = 0.5
    rotation_degrees: Tuple[float, float] = (-15.0, 15.0)
    brightness: Tuple[float, float] = (0.8, 1.2)
    contrast: Tuple[float, float] = (0.8, 1.2)
    scale: Tuple[float, float] = (0.9, 1.1)
    translate: float = 0.0  # fraction of the image side

    @classmethod
    def disabled(cls) -> 'AugmentationSpec':
        return cls(enabled=False)

    def validate(self) -> 'AugmentationSpec':
        validate_unit_interval(self.flip_probability, 'augmentation.flip_probability',
                               low_inclusive=True, high_inclusive=True)
        self.rotation_degrees = validate_range(self.rotation_degrees, 'augmentation.rotation_degrees')
        self.brightness = validate_range(self.brightness, 'augmentation.brightness')
        self.contrast = validate_range(self.contrast, 'augmentation.contrast')
        self.scale = validate_range(self.scale, 'augmentation.scale')
        if self.brightness[0] < 0 or self.contrast[0] < 0 or self.scale[0] <= 0:
            raise ConfigurationError("augmentation factors must be positive", 'augmentation')
        validate_unit_interval(self.translate, 'augmentation.translate',
                               low_inclusive=True, high_inclusive=True)
        return self


@dataclass
class SAUNetConfig:
    """SA-UNet architecture hyperparameters."""
    in_channels: int = 3
    base_width: int = 16
    depth: int = 3
    dropblock_size: int = 7
    dropblock_keep_prob: float = 0.9
    attention_kernel: int = 7
    bn_momentum: float = 0.99  # Keras convention: running = m * running + (1 - m) * batch
    bn_eps: float = 1e-3

    def validate(self) -> 'SAUNetConfig':
        validate_positive_int(self.in_channels, 'model.in_channels')
        validate_positive_int(self.base_width, 'model.base_width')
        validate_positive_int(self.depth, 'model.depth')
        validate_odd(self.dropblock_size, 'model.dropblock_size')
        validate_unit_interval(self.dropblock_keep_prob, 'model.dropblock_keep_prob', high_inclusive=True)
        validate_odd(self.attention_kernel, 'model.attention_kernel')
        validate_unit_interval(self.bn_momentum, 'model.bn_momentum', low_inclusive=True)
        if not self.bn_eps > 0:
            raise ConfigurationError("model.bn_eps must be > 0", 'model.bn_eps')
        return self

    @property
    def size_multiple(self) -> int:
        """Input sides must be divisible by this value."""
        return 2 ** self.depth

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainConfig:
    """Two-phase training schedule."""
    epochs_phase1: int = 100
    lr_phase1: float = 1e-3
    epochs_phase2: int = 50
    lr_phase2: float = 1e-4
    batch_size: int = 2
    loss_weights: Tuple[float, float] = (0.5, 0.5)
    seed: int = 0
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec.disabled)
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    validation_fraction: float = 0.1
    threshold: float = 0.5

    @property
    def total_epochs(self) -> int:
        return self.epochs_phase1 + self.epochs_phase2

    def validate(self, allow_empty: bool = False, allow_zero_lr: bool = False) -> 'TrainConfig':
        validate_positive_int(self.epochs_phase1, 'training.epochs_phase1', allow_zero=True)
        validate_positive_int(self.epochs_phase2, 'training.epochs_phase2', allow_zero=True)
        if self.total_epochs == 0 and not allow_empty:
            raise ConfigurationError("training needs at least one epoch", 'training.epochs_phase1')
        for name in ('lr_phase1', 'lr_phase2'):
            lr = getattr(self, name)
            if not isinstance(lr, (int, float)) or lr < 0 or (lr == 0 and not allow_zero_lr):
                raise ConfigurationError(f"training.{name} must be > 0, got {lr!r}", f'training.{name}')
        validate_positive_int(self.batch_size, 'training.batch_size')
        w_dice, w_bce = (float(w) for w in self.loss_weights)
        if w_dice < 0 or w_bce < 0 or abs(w_dice + w_bce - 1.0) > 1e-9:
            raise ConfigurationError("training.loss_weights must be nonnegative and sum to 1",
                                     'training.loss_weights')
        self.loss_weights = (w_dice, w_bce)
        validate_unit_interval(self.plateau_factor, 'training.plateau_factor')
        validate_positive_int(self.plateau_patience, 'training.plateau_patience', allow_zero=True)
        validate_unit_interval(self.validation_fraction, 'training.validation_fraction')
        validate_unit_interval(self.threshold, 'training.threshold')
        self.augmentation.validate()
        return self


@dataclass
class PipelineConfig:
    """Synthetic-data pipeline settings."""
    generator_source: str = 'toy_procedural'
    synthetic_dir: Optional[str] = None
    synthetic_count: int = 1000
    order: str = 'real_then_synth'
    augment_real: bool = True
    augment_synth: bool = False
    iterations: int = 1
    pseudo_label_threshold: float = 0.5
    warm_start: bool = False
    validate_on_test: bool = False
    toy_size: int = 64
    truncation_psi: float = 0.7
    generator_ticks: Optional[int] = None

    def validate(self) -> 'PipelineConfig':
        validate_choice(self.generator_source, GENERATOR_SOURCES, 'pipeline.generator_source')
        if self.generator_source == 'external_dir' and not self.synthetic_dir:
            raise ConfigurationError("pipeline.synthetic_dir is required for external_dir",
                                     'pipeline.synthetic_dir')
        validate_positive_int(self.synthetic_count, 'pipeline.synthetic_count')
        validate_choice(self.order, PIPELINE_ORDERS, 'pipeline.order')
        validate_positive_int(self.iterations, 'pipeline.iterations')
        validate_unit_interval(self.pseudo_label_threshold, 'pipeline.pseudo_label_threshold')
        validate_power_of_two(self.toy_size, 'pipeline.toy_size')
        validate_unit_interval(self.truncation_psi, 'pipeline.truncation_psi', high_inclusive=True)
        return self


@dataclass
class EnsembleSpec:
    """Checkpoints fused into one prediction."""
    members: List[str] = field(default_factory=list)
    mode: str = 'mean'
    threshold: float = 0.5

    def validate(self) -> 'EnsembleSpec':
        validate_choice(self.mode, ENSEMBLE_MODES, 'ensemble.mode')
        validate_unit_interval(self.threshold, 'ensemble.threshold')
        return self


@dataclass
class RunConfig:
    """Everything one command invocation needs; persisted as resolved_config.json."""
    drive_root: Optional[str] = None
    synthetic_dir: Optional[str] = None
    target_size: int = 512
    model: SAUNetConfig = field(default_factory=SAUNetConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    ensemble: Optional[EnsembleSpec] = None
    output_dir: str = 'runs/default'
    seed: int = 0

    def validate(self) -> 'RunConfig':
        validate_power_of_two(self.target_size, 'target_size')
        self.model.validate()
        self.training.validate()
        self.pipeline.validate()
        if self.ensemble is not None:
            self.ensemble.validate()
        if self.target_size % self.model.size_multiple:
            raise ConfigurationError(
                f"target_size {self.target_size} is not divisible by 2**depth={self.model.size_multiple}",
                'target_size',
            )
        bottleneck = self.target_size // self.model.size_multiple
        if bottleneck < 2:
            raise ConfigurationError(
                f"target_size {self.target_size} leaves a {bottleneck} x {bottleneck} bottleneck at "
                f"depth {self.model.depth}; batch norm needs a side of at least 2",
                'target_size',
            )
        if self.model.dropblock_keep_prob < 1.0 and bottleneck < self.model.dropblock_size:
            raise ConfigurationError(
                f"model.dropblock_size {self.model.dropblock_size} exceeds the bottleneck side "
                f"{bottleneck}",
                'model.dropblock_size',
            )
        return self

    def validate_paths(self, *settings: str) -> 'RunConfig':
        """Check that the named path settings point at existing locations."""
        for setting in settings:
            value = getattr(self, setting)
            if not value or not Path(value).exists():
                raise ConfigurationError(f"{setting} does not exist: {value!r}", setting)
        return self


class Config:
    """Process-level settings read from the environment."""

    def __init__(self, environment: Optional[str] = None):
        self.environment = environment or os.getenv('RETSEG_ENV', 'development')
        self._load_config()
        self._validate_config()

    def _load_config(self):
        """Load configuration from environment variables."""
        self.APP_NAME = os.getenv('APP_NAME', 'retseg')
        self.VERSION = os.getenv('APP_VERSION', '0.1.0')
        self.DEBUG = self.environment == 'development'
        self.TESTING = self.environment == 'testing'

        self.LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
        self.LOG_FORMAT = os.getenv('LOG_FORMAT', 'json')

        self.NUM_WORKERS = int(os.getenv('RETSEG_NUM_WORKERS', '0'))
        threads = os.getenv('RETSEG_TORCH_THREADS')
        self.TORCH_THREADS = int(threads) if threads else None

    def _validate_config(self):
        """Validate configuration settings."""
        if self.NUM_WORKERS < 0:
            raise ConfigurationError("RETSEG_NUM_WORKERS must be >= 0", 'RETSEG_NUM_WORKERS')
        if self.LOG_FORMAT not in ('json', 'console'):
            raise ConfigurationError("LOG_FORMAT must be 'json' or 'console'", 'LOG_FORMAT')
        if self.TORCH_THREADS is not None and self.TORCH_THREADS < 1:
            raise ConfigurationError("RETSEG_TORCH_THREADS must be >= 1", 'RETSEG_TORCH_THREADS')

    def to_dict(self) -> Dict[str, Any]:
        return {
            'app_name': self.APP_NAME,
            'version': self.VERSION,
            'environment': self.environment,
            'debug': self.DEBUG,
            'testing': self.TESTING,
            'log_level': self.LOG_LEVEL,
            'log_format': self.LOG_FORMAT,
            'num_workers': self.NUM_WORKERS,
        }


class DevelopmentConfig(Config):
    """Development environment configuration."""

    def __init__(self):
        super().__init__('development')
        self.LOG_FORMAT = os.getenv('LOG_FORMAT', 'console')


class TestingConfig(Config):
    """Testing environment configuration."""

    def __init__(self):
        super().__init__('testing')
        self.NUM_WORKERS = 0
        self.LOG_LEVEL = 'WARNING'
        self.LOG_FORMAT = 'console'


class ProductionConfig(Config):
    """Production environment configuration."""

    def __init__(self):
        super().__init__('production')


_config_map = {
    'development': DevelopmentConfig,
    'testing': TestingConfig,
    'production': ProductionConfig,
}


def get_config(environment: Optional[str] = None) -> Config:
    """
    Get configuration instance for the specified environment.

    Args:
        environment: Environment name (development, testing, production)

    Returns:
        Configuration instance

    Raises:
        ConfigurationError: If environment is not supported
    """
    if environment is None:
        environment = os.getenv('RETSEG_ENV', 'development')

    config_class = _config_map.get(environment)
    if not config_class:
        raise ConfigurationError(f"Unsupported environment: {environment}", 'RETSEG_ENV')

    return config_class()


def num_workers() -> int:
    """Parallelism cap for data loading, read fresh from the environment."""
    value = int(os.getenv('RETSEG_NUM_WORKERS', '0'))
    return max(value, 0)
