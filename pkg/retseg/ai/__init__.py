"""
Network code: SA-UNet, its blocks and checkpoint IO.
"""

from retseg.ai.blocks import (
    ConvBlock,
    DropBlock2d,
    DropBlockState,
    SpatialAttention,
    attention_gate,
    dropblock,
    dropblock_mask,
    spatial_attention,
)
from retseg.ai.checkpoint import load_checkpoint, load_weights_into, read_checkpoint_metadata, save_checkpoint
from retseg.ai.saunet import SAUNet, build_saunet, count_parameters, forward

__all__ = [
    'ConvBlock', 'DropBlock2d', 'DropBlockState', 'SpatialAttention',
    'attention_gate', 'dropblock', 'dropblock_mask', 'spatial_attention',
    'load_checkpoint', 'load_weights_into', 'read_checkpoint_metadata', 'save_checkpoint',
    'SAUNet', 'build_saunet', 'count_parameters', 'forward',
]
