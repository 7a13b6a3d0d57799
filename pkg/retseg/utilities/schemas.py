"""
Marshmallow schemas for the run config file.

Loading returns the config dataclasses; dumping returns plain JSON-able
dicts, so load -> dump -> load is the identity.
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

from marshmallow import RAISE, Schema, fields, post_load, validate
from marshmallow import ValidationError as MarshmallowValidationError

from retseg.utilities.config import (
    ENSEMBLE_MODES,
    GENERATOR_SOURCES,
    PIPELINE_ORDERS,
    AugmentationSpec,
    EnsembleSpec,
    PipelineConfig,
    RunConfig,
    SAUNetConfig,
    TrainConfig,
)
from retseg.utilities.exceptions import ConfigurationError


def _pair(**kwargs) -> fields.Tuple:
    return fields.Tuple((fields.Float(), fields.Float()), **kwargs)


class AugmentationSchema(Schema):
    class Meta:
        unknown = RAISE

    enabled = fields.Boolean(load_default=True)
    horizontal_flip = fields.Boolean(load_default=True)
    vertical_flip = fields.Boolean(load_default=True)
    flip_probability = fields.Float(load_default=0.5)
    rotation_degrees = _pair(load_default=(-15.0, 15.0))
    brightness = _pair(load_default=(0.8, 1.2))
    contrast = _pair(load_default=(0.8, 1.2))
    scale = _pair(load_default=(0.9, 1.1))
    translate = fields.Float(load_default=0.0)

    @post_load
    def make(self, data: Dict[str, Any], **kwargs) -> AugmentationSpec:
        return AugmentationSpec(**data)


class SAUNetSchema(Schema):
    class Meta:
        unknown = RAISE

    in_channels = fields.Integer(load_default=3)
    base_width = fields.Integer(load_default=16)
    depth = fields.Integer(load_default=3)
    dropblock_size = fields.Integer(load_default=7)
    dropblock_keep_prob = fields.Float(load_default=0.9)
    attention_kernel = fields.Integer(load_default=7)
    bn_momentum = fields.Float(load_default=0.99)
    bn_eps = fields.Float(load_default=1e-3)

    @post_load
    def make(self, data: Dict[str, Any], **kwargs) -> SAUNetConfig:
        return SAUNetConfig(**data)


class TrainSchema(Schema):
    class Meta:
        unknown = RAISE

    epochs_phase1 = fields.Integer(load_default=100)
    lr_phase1 = fields.Float(load_default=1e-3)
    epochs_phase2 = fields.Integer(load_default=50)
    lr_phase2 = fields.Float(load_default=1e-4)
    batch_size = fields.Integer(load_default=2)
    loss_weights = _pair(load_default=(0.5, 0.5))
    seed = fields.Integer(load_default=0)
    augmentation = fields.Nested(AugmentationSchema, load_default=AugmentationSpec.disabled)
    plateau_factor = fields.Float(load_default=0.5)
    plateau_patience = fields.Integer(load_default=10)
    validation_fraction = fields.Float(load_default=0.1)
    threshold = fields.Float(load_default=0.5)

    @post_load
    def make(self, data: Dict[str, Any], **kwargs) -> TrainConfig:
        return TrainConfig(**data)


class PipelineSchema(Schema):
    class Meta:
        unknown = RAISE

    generator_source = fields.String(load_default='toy_procedural',
                                     validate=validate.OneOf(GENERATOR_SOURCES))
    synthetic_dir = fields.String(load_default=None, allow_none=True)
    synthetic_count = fields.Integer(load_default=1000)
    order = fields.String(load_default='real_then_synth', validate=validate.OneOf(PIPELINE_ORDERS))
    augment_real = fields.Boolean(load_default=True)
    augment_synth = fields.Boolean(load_default=False)
    iterations = fields.Integer(load_default=1)
    pseudo_label_threshold = fields.Float(load_default=0.5)
    warm_start = fields.Boolean(load_default=False)
    validate_on_test = fields.Boolean(load_default=False)
    toy_size = fields.Integer(load_default=64)
    truncation_psi = fields.Float(load_default=0.7)
    generator_ticks = fields.Integer(load_default=None, allow_none=True)

    @post_load
    def make(self, data: Dict[str, Any], **kwargs) -> PipelineConfig:
        return PipelineConfig(**data)


class EnsembleSchema(Schema):
    class Meta:
        unknown = RAISE

    members = fields.List(fields.String(), load_default=list)
    mode = fields.String(load_default='mean', validate=validate.OneOf(ENSEMBLE_MODES))
    threshold = fields.Float(load_default=0.5)

    @post_load
    def make(self, data: Dict[str, Any], **kwargs) -> EnsembleSpec:
        return EnsembleSpec(**data)


class RunConfigSchema(Schema):
    class Meta:
        unknown = RAISE

    drive_root = fields.String(load_default=None, allow_none=True)
    synthetic_dir = fields.String(load_default=None, allow_none=True)
    target_size = fields.Integer(load_default=512)
    model = fields.Nested(SAUNetSchema, load_default=SAUNetConfig)
    training = fields.Nested(TrainSchema, load_default=TrainConfig)
    pipeline = fields.Nested(PipelineSchema, load_default=PipelineConfig)
    ensemble = fields.Nested(EnsembleSchema, load_default=None, allow_none=True)
    output_dir = fields.String(load_default='runs/default')
    seed = fields.Integer(load_default=0)

    @post_load
    def make(self, data: Dict[str, Any], **kwargs) -> RunConfig:
        return RunConfig(**data)


run_config_schema = RunConfigSchema()


def _error_path(messages: Any) -> Optional[str]:
    """Dotted path of the first failing field, e.g. model.base_width."""
    parts = []
    while isinstance(messages, dict) and messages:
        key = next(iter(messages))
        parts.append(str(key))
        messages = messages[key]
    return '.'.join(parts) or None


def load_run_config(source: Union[str, Path, Dict[str, Any]]) -> RunConfig:
    """
    Parse a run config from a JSON file path or an already-decoded dict.

    Raises:
        ConfigurationError: If the file is unreadable or a field is invalid
    """
    if isinstance(source, dict):
        payload = source
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigurationError(f"Config file not found: {path}", 'config')
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"Config file {path} is not valid JSON: {exc}", 'config')
    try:
        return run_config_schema.load(payload)
    except MarshmallowValidationError as exc:
        raise ConfigurationError(f"Invalid config: {exc.messages}", _error_path(exc.messages))


def dump_run_config(config: RunConfig) -> Dict[str, Any]:
    """Serialize a run config to plain JSON types."""
    return run_config_schema.dump(config)


def dumps_run_config(config: RunConfig) -> str:
    return json.dumps(dump_run_config(config), indent=2, sort_keys=True) + '\n'
