"""CF2-Net: backbone U-Net, fusion stream path and the three output heads."""

import logging
from dataclasses import dataclass
from typing import Any

import torch
from pydantic import ValidationError
from torch import nn

from cf2net.config import ModelConfig
from cf2net.exceptions import ConfigurationError, ShapeError
from cf2net.network.blocks import Backbone, FeaturePyramid
from cf2net.network.fsp import EdgeHead, FSPModule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionSet:
    """Network outputs; probability maps are B x 1 x S x S."""

    fusion: torch.Tensor | None
    aux: torch.Tensor
    edge: torch.Tensor | None
    # Em^1..Em^4, empty when the edge constraint is disabled
    edge_features: tuple[torch.Tensor, ...]
    features: FeaturePyramid

    @property
    def segmentation(self) -> torch.Tensor:
        """The deliverable map: the fusion path, or the backbone head without FSP."""
        return self.fusion if self.fusion is not None else self.aux


class CF2Net(nn.Module):
    """Coarse-to-fine fusion network.

    Parameter names are part of the checkpoint contract:
    ``backbone.{enc,mid,dec}``, ``fsp.<scale>.{aspp,cff,ec,tiny}`` and
    ``head.{fusion,aux,edge}``.
    """

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        self.backbone = Backbone(config.input_channels, config.base_width, config.backbone_skips)

        self.fsp: nn.ModuleDict | None = None
        if config.use_fsp:
            self.fsp = nn.ModuleDict()
            previous = self.backbone.middle_width
            for scale in (4, 3, 2, 1):
                width = self.backbone.widths[scale - 1]
                self.fsp[str(scale)] = FSPModule(
                    encoder_channels=width,
                    decoder_channels=width,
                    previous_channels=previous,
                    width=config.fsp_width,
                    em_channels=config.em_channels,
                    aspp_rates=config.aspp_rates if config.use_aspp else None,
                    use_ec=config.use_ec,
                )
                previous = config.fsp_width

        heads: dict[str, nn.Module] = {"aux": nn.Conv2d(config.base_width, 1, 1)}
        if config.use_fsp:
            heads["fusion"] = nn.Conv2d(config.fsp_width, 1, 1)
        if config.use_ec:
            heads["edge"] = EdgeHead(config.em_channels)
        self.head = nn.ModuleDict(heads)

        self.reset_parameters()

    def reset_parameters(self) -> None:
        """He-normal convolutions, zero biases, identity batch norm."""
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, nn.BatchNorm2d):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4:
            raise ShapeError(f"Expected a B x C x H x W batch (got shape {tuple(x.shape)})")
        if x.shape[1] != self.config.input_channels:
            raise ShapeError(
                f"Expected {self.config.input_channels} input channels (got {x.shape[1]})"
            )
        height, width = x.shape[-2:]
        if height % 16 or width % 16:
            raise ShapeError(f"Spatial size must be a multiple of 16 (got {height}x{width})")

    def pyramid(self, x: torch.Tensor) -> FeaturePyramid:
        """Backbone features only."""
        self._check_input(x)
        return self.backbone(x)

    def forward(self, x: torch.Tensor) -> PredictionSet:
        features = self.pyramid(x)
        aux = torch.sigmoid(self.head["aux"](features.decoder[0]))

        if self.fsp is None:
            return PredictionSet(
                fusion=None, aux=aux, edge=None, edge_features=(), features=features
            )

        stream = features.middle
        edge_features: dict[int, torch.Tensor] = {}
        for scale in (4, 3, 2, 1):
            stream, em = self.fsp[str(scale)](
                features.encoder[scale - 1], features.decoder[scale - 1], stream
            )
            if em is not None:
                edge_features[scale] = em

        fusion = torch.sigmoid(self.head["fusion"](stream))
        ordered = tuple(edge_features[scale] for scale in sorted(edge_features))
        edge = self.head["edge"](ordered) if "edge" in self.head else None
        return PredictionSet(
            fusion=fusion, aux=aux, edge=edge, edge_features=ordered, features=features
        )


def build_model(config: ModelConfig | dict[str, Any]) -> CF2Net:
    """Build the network graph for a model configuration.

    Raises:
        ConfigurationError: If the configuration violates a model invariant.
    """
    if not isinstance(config, ModelConfig):
        try:
            config = ModelConfig.model_validate(config)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid model configuration: {e}") from e
    model = CF2Net(config)
    logger.debug("Built CF2Net with %d parameters", count_parameters(model))
    return model


def count_parameters(model: nn.Module) -> int:
    """Number of trainable parameters."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
