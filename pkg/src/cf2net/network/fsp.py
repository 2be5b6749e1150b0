"""Fusion stream path: ASPP, cascade feature fusion, edge constraint and tiny U-Net units.

Modules run coarse to fine (scale 4 down to 1). Module i fuses the encoder
and decoder features of scale i with the output of the previous, coarser
module; the first module starts from the middle block.
"""

from collections.abc import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from cf2net.exceptions import ShapeError
from cf2net.network.blocks import ConvBNReLU, upsample, upsample_to


class ASPPUnit(nn.Module):
    """Parallel dilated 3x3 convolutions, ReLU per branch, summed."""

    def __init__(self, channels: int, rates: Sequence[int] = (2, 4, 6)) -> None:
        super().__init__()
        self.branches = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, padding=rate, dilation=rate) for rate in rates
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.stack([F.relu(branch(x)) for branch in self.branches]).sum(dim=0)


class CFFUnit(nn.Module):
    """Cascade feature fusion of same-scale encoder/decoder features with the coarser stream."""

    def __init__(
        self,
        encoder_channels: int,
        decoder_channels: int,
        previous_channels: int,
        width: int,
    ) -> None:
        super().__init__()
        self.coarse_conv = nn.Conv2d(previous_channels, width, 3, padding=2, dilation=2)
        self.coarse_bn = nn.BatchNorm2d(width)
        self.enc_proj = nn.Conv2d(encoder_channels, width, 1)
        self.dec_proj = nn.Conv2d(decoder_channels, width, 1)
        self.fuse = ConvBNReLU(3 * width, width)

    def forward(
        self, enc: torch.Tensor, dec: torch.Tensor, previous: torch.Tensor
    ) -> torch.Tensor:
        if enc.shape[-2:] != dec.shape[-2:]:
            raise ShapeError(
                f"Encoder {tuple(enc.shape[-2:])} and decoder {tuple(dec.shape[-2:])} "
                "features must share a scale"
            )
        if tuple(2 * s for s in previous.shape[-2:]) != tuple(enc.shape[-2:]):
            raise ShapeError(
                f"Previous stream {tuple(previous.shape[-2:])} must be half of "
                f"{tuple(enc.shape[-2:])}"
            )
        coarse = self.coarse_bn(self.coarse_conv(upsample_to(previous, enc)))
        return self.fuse(torch.cat([coarse, self.enc_proj(enc), self.dec_proj(dec)], dim=1))


class ECUnit(nn.Module):
    """Edge constraint: extracts edge features and the per-scale edge maps Em."""

    def __init__(self, width: int, em_channels: int) -> None:
        super().__init__()
        self.trunk1 = ConvBNReLU(width, width, kernel_size=1)
        self.trunk2 = ConvBNReLU(width, width, kernel_size=3)
        self.semantic = ConvBNReLU(width, width, kernel_size=1)
        self.em = nn.Conv2d(width, em_channels, 1)

    def forward(self, fused: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        edge = self.trunk2(self.trunk1(fused))
        return torch.cat([self.semantic(edge), fused], dim=1), self.em(edge)


class TinyUNet(nn.Module):
    """One-level pool/upsample block whose output is fused with its input."""

    def __init__(self, in_channels: int, width: int) -> None:
        super().__init__()
        self.conv1 = ConvBNReLU(in_channels, width)
        self.conv2 = ConvBNReLU(width, width)
        self.conv3 = ConvBNReLU(width, width)
        self.fuse = ConvBNReLU(width + in_channels, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        height, width = x.shape[-2:]
        if height % 2 or width % 2:
            raise ShapeError(f"Tiny U-Net needs even spatial sizes (got {height}x{width})")
        full = self.conv1(x)
        half = self.conv2(F.max_pool2d(full, 2))
        lifted = self.conv3(upsample_to(half, full))
        return self.fuse(torch.cat([lifted, x], dim=1))


class EdgeHead(nn.Module):
    """Upsample the four Em maps to full size, concatenate, 1x1 conv, sigmoid."""

    def __init__(self, em_channels: int, scales: int = 4) -> None:
        super().__init__()
        self.scales = scales
        self.proj = nn.Conv2d(scales * em_channels, 1, 1)

    def forward(self, edge_features: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(edge_features) != self.scales:
            raise ShapeError(f"Edge head expects {self.scales} maps (got {len(edge_features)})")
        size = tuple(edge_features[0].shape[-2:])
        lifted = []
        for index, features in enumerate(edge_features):
            rate = 2**index
            if tuple(s * rate for s in features.shape[-2:]) != size:
                raise ShapeError(
                    f"Em at scale {index + 1} has size {tuple(features.shape[-2:])}, "
                    f"expected {size} / {rate}"
                )
            lifted.append(upsample(features, rate))
        return torch.sigmoid(self.proj(torch.cat(lifted, dim=1)))


class FSPModule(nn.Module):
    """One fusion-stream module: [ASPP] -> CFF -> [EC] -> tiny U-Net."""

    def __init__(
        self,
        encoder_channels: int,
        decoder_channels: int,
        previous_channels: int,
        width: int,
        em_channels: int,
        aspp_rates: Sequence[int] | None,
        use_ec: bool,
    ) -> None:
        super().__init__()
        self.aspp: nn.ModuleDict | None = None
        if aspp_rates:
            self.aspp = nn.ModuleDict(
                {
                    "enc": ASPPUnit(encoder_channels, aspp_rates),
                    "dec": ASPPUnit(decoder_channels, aspp_rates),
                }
            )
        self.cff = CFFUnit(encoder_channels, decoder_channels, previous_channels, width)
        self.ec = ECUnit(width, em_channels) if use_ec else None
        self.tiny = TinyUNet(2 * width if use_ec else width, width)

    def forward(
        self, enc: torch.Tensor, dec: torch.Tensor, previous: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        if self.aspp is not None:
            enc = self.aspp["enc"](enc)
            dec = self.aspp["dec"](dec)
        fused = self.cff(enc, dec, previous)
        edge_features = None
        if self.ec is not None:
            fused, edge_features = self.ec(fused)
        return self.tiny(fused), edge_features
