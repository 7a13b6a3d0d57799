"""
Building blocks of SA-UNet: DropBlock, spatial attention and the conv block.
"""

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from retseg.utilities.exceptions import ConfigurationError
from retseg.utilities.seeding import torch_generator
from retseg.utilities.validators import validate_odd


@dataclass(frozen=True)
class DropBlockState:
    """Parameters of one DropBlock application."""
    keep_prob: float
    block_size: int
    rng_seed: Optional[int] = None


def dropblock_gamma(keep_prob: float, block_size: int, height: int, width: int) -> float:
    """Seed rate so that about (1 - keep_prob) of an H x W map ends up dropped."""
    valid = (height - block_size + 1) * (width - block_size + 1)
    return (1.0 - keep_prob) / block_size ** 2 * (height * width) / valid


def dropblock_mask(
    shape: torch.Size,
    state: DropBlockState,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    Sample a keep mask (1 = kept) for features of the given shape.

    Seeds are Bernoulli draws on the valid-center region; every seed zeroes
    the block_size x block_size square centered on it.
    """
    height, width = int(shape[-2]), int(shape[-1])
    b = state.block_size
    if b > min(height, width):
        raise ConfigurationError(
            f"dropblock block_size {b} exceeds feature map side {min(height, width)}",
            'model.dropblock_size',
        )
    if generator is None and state.rng_seed is not None:
        generator = torch_generator(state.rng_seed)

    gamma = dropblock_gamma(state.keep_prob, b, height, width)
    lead = tuple(int(s) for s in shape[:-2])
    planes = 1
    for s in lead:
        planes *= s
    seeds = (torch.rand(planes, 1, height - b + 1, width - b + 1, generator=generator) < gamma).float()
    half = b // 2
    seeds = F.pad(seeds, (half, half, half, half))
    dropped = F.max_pool2d(seeds, kernel_size=b, stride=1, padding=half)
    return (1.0 - dropped).reshape(*lead, height, width)


def dropblock(
    features: torch.Tensor,
    state: DropBlockState,
    training: bool,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    Structured dropout on the last two (spatial) dimensions.

    Args:
        features: Tensor shaped (..., H, W)
        state: Keep probability, block size and optional seed
        training: Identity when False
        generator: Explicit RNG; overrides state.rng_seed

    Returns:
        Features with dropped blocks zeroed and survivors rescaled by total / kept

    Raises:
        ConfigurationError: If block_size exceeds the feature side
    """
    if not training or state.keep_prob >= 1.0:
        return features
    keep = dropblock_mask(features.shape, state, generator).to(device=features.device, dtype=features.dtype)
    scale = keep.numel() / keep.sum().clamp_min(1.0)
    return features * keep * scale


class DropBlock2d(nn.Module):
    """DropBlock as a layer; draws from the global torch RNG."""

    def __init__(self, block_size: int = 7, keep_prob: float = 0.9):
        super().__init__()
        self.block_size = validate_odd(block_size, 'model.dropblock_size')
        self.keep_prob = keep_prob

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return dropblock(x, DropBlockState(self.keep_prob, self.block_size), self.training)

    def extra_repr(self) -> str:
        return f'block_size={self.block_size}, keep_prob={self.keep_prob}'


def attention_gate(features: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Gate in (0, 1) shaped N x 1 x H x W from channel mean and max maps."""
    kernel = int(weight.shape[-1])
    pooled = torch.cat(
        [features.mean(dim=1, keepdim=True), features.amax(dim=1, keepdim=True)],
        dim=1,
    )
    return torch.sigmoid(F.conv2d(pooled, weight, bias, padding=kernel // 2))


def spatial_attention(
    features: torch.Tensor,
    kernel: int,
    weight: torch.Tensor,
    bias: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Reweight features by a spatial gate shared across channels.

    Accepts C x H x W or N x C x H x W input; weight is 1 x 2 x kernel x kernel.
    """
    validate_odd(kernel, 'model.attention_kernel')
    if tuple(weight.shape) != (1, 2, kernel, kernel):
        raise ConfigurationError(
            f"attention weight must be 1x2x{kernel}x{kernel}, got {tuple(weight.shape)}",
            'model.attention_kernel',
        )
    unbatched = features.dim() == 3
    x = features.unsqueeze(0) if unbatched else features
    out = x * attention_gate(x, weight, bias)
    return out.squeeze(0) if unbatched else out


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.kernel_size = validate_odd(kernel_size, 'model.attention_kernel')
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=True)

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        return attention_gate(x, self.conv.weight, self.conv.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return spatial_attention(x, self.kernel_size, self.conv.weight, self.conv.bias)


class ConvBlock(nn.Sequential):
    """conv 3x3 -> DropBlock -> batch norm -> ReLU."""

    def __init__(self, in_channels: int, out_channels: int, block_size: int, keep_prob: float,
                 bn_momentum: float = 0.99, bn_eps: float = 1e-3):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1, bias=True),
            DropBlock2d(block_size, keep_prob),
            # torch momentum weights the batch statistic, Keras weights the running one
            nn.BatchNorm2d(out_channels, momentum=1.0 - bn_momentum, eps=bn_eps),
            nn.ReLU(inplace=True),
        )


class DoubleConv(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int, block_size: int, keep_prob: float,
                 bn_momentum: float = 0.99, bn_eps: float = 1e-3):
        super().__init__(
            ConvBlock(in_channels, out_channels, block_size, keep_prob, bn_momentum, bn_eps),
            ConvBlock(out_channels, out_channels, block_size, keep_prob, bn_momentum, bn_eps),
        )
