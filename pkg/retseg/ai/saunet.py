"""
SA-UNet: a U-Net with DropBlock conv blocks and spatial attention at the bottleneck.
"""

from typing import List

import structlog
import torch
import torch.nn as nn

from retseg.ai.blocks import ConvBlock, DoubleConv, SpatialAttention
from retseg.utilities.config import SAUNetConfig
from retseg.utilities.exceptions import ShapeError

logger = structlog.get_logger(__name__)


class SAUNet(nn.Module):
    """
    Encoder/decoder segmentation network.

    Encoder stage i has base_width * 2**i channels and ends in a 2x max-pool.
    The bottleneck is conv block -> spatial attention -> conv block. Each
    decoder stage upsamples with a stride-2 transposed convolution,
    concatenates the matching encoder output and applies two conv blocks.
    A 1x1 convolution and a sigmoid produce the vessel probability.
    """

    def __init__(self, config: SAUNetConfig):
        super().__init__()
        self.config = config.validate()
        widths = self.widths
        block = dict(
            block_size=config.dropblock_size,
            keep_prob=config.dropblock_keep_prob,
            bn_momentum=config.bn_momentum,
            bn_eps=config.bn_eps,
        )

        in_channels = config.in_channels
        self.encoders = nn.ModuleList()
        for width in widths[:-1]:
            self.encoders.append(DoubleConv(in_channels, width, **block))
            in_channels = width
        self.pool = nn.MaxPool2d(kernel_size=2, stride=2)

        self.bottleneck_in = ConvBlock(widths[-2], widths[-1], **block)
        self.attention = SpatialAttention(config.attention_kernel)
        self.bottleneck_out = ConvBlock(widths[-1], widths[-1], **block)

        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for i in reversed(range(config.depth)):
            self.upsamplers.append(nn.ConvTranspose2d(widths[i + 1], widths[i], kernel_size=2, stride=2))
            self.decoders.append(DoubleConv(2 * widths[i], widths[i], **block))

        self.head = nn.Conv2d(widths[0], 1, kernel_size=1)

    @property
    def widths(self) -> List[int]:
        return [self.config.base_width * 2 ** i for i in range(self.config.depth + 1)]

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected N x {self.config.in_channels} x S x S input, got {tuple(x.shape)}",
                expected=('N', self.config.in_channels, 'S', 'S'),
                actual=tuple(x.shape),
            )
        multiple = self.config.size_multiple
        if x.shape[-2] % multiple or x.shape[-1] % multiple:
            raise ShapeError(
                f"input size {tuple(x.shape[-2:])} is not divisible by 2**depth={multiple}",
                expected=multiple,
                actual=tuple(x.shape[-2:]),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        skips = []
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
            x = self.pool(x)

        x = self.bottleneck_out(self.attention(self.bottleneck_in(x)))

        for upsample, decoder, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            x = decoder(torch.cat([upsample(x), skip], dim=1))

        # saturated sigmoids round to exactly 0 or 1 in float32
        eps = torch.finfo(x.dtype).eps
        return torch.sigmoid(self.head(x)).clamp(eps, 1.0 - eps)


def build_saunet(config: SAUNetConfig) -> SAUNet:
    """Build a freshly initialized network; invalid fields raise ConfigurationError."""
    net = SAUNet(config)
    logger.debug('network_built', parameters=count_parameters(net), **config.to_dict())
    return net


def forward(net: SAUNet, batch: torch.Tensor, training: bool = False) -> torch.Tensor:
    """Run the network in the requested mode and restore its previous mode."""
    was_training = net.training
    net.train(training)
    try:
        if training:
            return net(batch)
        with torch.no_grad():
            return net(batch)
    finally:
        net.train(was_training)


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
