"""Backbone building blocks: conv/BN/ReLU stacks, encoder, middle and decoder."""

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


def upsample(x: torch.Tensor, scale: int = 2) -> torch.Tensor:
    """Bilinear upsampling by an integer factor; identity for factor 1."""
    if scale == 1:
        return x
    return F.interpolate(x, scale_factor=scale, mode="bilinear", align_corners=False)


def upsample_to(x: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    """Bilinear upsampling to the spatial size of ``reference``."""
    if x.shape[-2:] == reference.shape[-2:]:
        return x
    return F.interpolate(x, size=reference.shape[-2:], mode="bilinear", align_corners=False)


class ConvBNReLU(nn.Module):
    """Same-padded convolution, batch normalization, ReLU."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        dilation: int = 1,
    ) -> None:
        super().__init__()
        self.conv = nn.Conv2d(
            in_channels,
            out_channels,
            kernel_size,
            padding=dilation * (kernel_size // 2),
            dilation=dilation,
        )
        self.bn = nn.BatchNorm2d(out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.bn(self.conv(x)))


class TripleConv(nn.Module):
    """Three consecutive 3x3 ConvBNReLU layers (encoder, middle and decoder blocks)."""

    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.conv1 = ConvBNReLU(in_channels, out_channels)
        self.conv2 = ConvBNReLU(out_channels, out_channels)
        self.conv3 = ConvBNReLU(out_channels, out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv3(self.conv2(self.conv1(x)))


@dataclass(frozen=True)
class FeaturePyramid:
    """Backbone features; index 0 of each tuple is scale 1 (full resolution)."""

    encoder: tuple[torch.Tensor, ...]
    middle: torch.Tensor
    decoder: tuple[torch.Tensor, ...]


class Backbone(nn.Module):
    """U-shaped encoder/middle/decoder producing a four-scale feature pyramid.

    With ``skips`` the decoder concatenates the same-scale encoder features
    (plain U-Net); without, the fusion stream path carries that information.
    """

    def __init__(self, in_channels: int, base_width: int, skips: bool) -> None:
        super().__init__()
        self.skips = skips
        self.widths = [base_width * 2**i for i in range(4)]
        self.middle_width = base_width * 16

        self.enc = nn.ModuleDict()
        previous = in_channels
        for scale, width in enumerate(self.widths, start=1):
            self.enc[str(scale)] = TripleConv(previous, width)
            previous = width

        self.mid = TripleConv(self.widths[-1], self.middle_width)

        self.dec = nn.ModuleDict()
        deeper = self.middle_width
        for scale in (4, 3, 2, 1):
            width = self.widths[scale - 1]
            self.dec[str(scale)] = TripleConv(deeper + (width if skips else 0), width)
            deeper = width

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        encoder: list[torch.Tensor] = []
        for scale in range(1, 5):
            features = self.enc[str(scale)](x)
            encoder.append(features)
            x = F.max_pool2d(features, 2)

        middle = self.mid(x)

        decoder: dict[int, torch.Tensor] = {}
        deeper = middle
        for scale in (4, 3, 2, 1):
            lifted = upsample_to(deeper, encoder[scale - 1])
            if self.skips:
                lifted = torch.cat([lifted, encoder[scale - 1]], dim=1)
            deeper = self.dec[str(scale)](lifted)
            decoder[scale] = deeper

        return FeaturePyramid(
            encoder=tuple(encoder),
            middle=middle,
            decoder=tuple(decoder[scale] for scale in range(1, 5)),
        )
