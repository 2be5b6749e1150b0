"""CF2-Net computation graph and checkpoint archive."""

from cf2net.network.blocks import Backbone, ConvBNReLU, FeaturePyramid, TripleConv
from cf2net.network.checkpoint import (
    LoadedCheckpoint,
    TrainingProgress,
    load_checkpoint,
    save_checkpoint,
)
from cf2net.network.fsp import ASPPUnit, CFFUnit, ECUnit, EdgeHead, FSPModule, TinyUNet
from cf2net.network.model import CF2Net, PredictionSet, build_model, count_parameters

__all__ = [
    "ASPPUnit",
    "Backbone",
    "CF2Net",
    "CFFUnit",
    "ConvBNReLU",
    "ECUnit",
    "EdgeHead",
    "FSPModule",
    "FeaturePyramid",
    "LoadedCheckpoint",
    "PredictionSet",
    "TinyUNet",
    "TrainingProgress",
    "build_model",
    "count_parameters",
    "load_checkpoint",
    "save_checkpoint",
]
