"""Checkpoint archive: model config, parameters, optimizer state and progress."""

import logging
import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch
from pydantic import BaseModel, ValidationError

from cf2net.config import ModelConfig, SuperpixelConfig
from cf2net.exceptions import CheckpointError
from cf2net.network.model import CF2Net, build_model

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class TrainingProgress(BaseModel):
    """Where in training a checkpoint was taken."""

    epoch: int
    fold: int | None = None
    # Fold count of the split ``fold`` indexes into
    folds: int | None = None
    sample_count: int | None = None
    seed: int
    validation_dsc: float | None = None


@dataclass
class LoadedCheckpoint:
    """A restored model together with the metadata stored beside it."""

    model: CF2Net
    model_config: ModelConfig
    superpixel: SuperpixelConfig
    band_radius: int
    progress: TrainingProgress
    optimizer_state: dict[str, Any] | None


def save_checkpoint(
    path: Path,
    model: CF2Net,
    superpixel: SuperpixelConfig,
    progress: TrainingProgress,
    optimizer: torch.optim.Optimizer | None = None,
    band_radius: int = 5,
) -> Path:
    """Write a checkpoint archive; the model's own config is stored as JSON text."""
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": FORMAT_VERSION,
        "model_config": model.config.model_dump_json(),
        "superpixel": superpixel.model_dump_json(),
        "band_radius": band_radius,
        "state_dict": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "progress": progress.model_dump(),
    }
    torch.save(payload, path)
    logger.debug("Saved checkpoint %s (epoch %d)", path, progress.epoch)
    return path


def load_checkpoint(path: Path, device: torch.device | str = "cpu") -> LoadedCheckpoint:
    """Restore a model from a checkpoint archive.

    Raises:
        CheckpointError: If the file is unreadable, malformed, or its
            parameters do not match the stored configuration.
    """
    if not path.is_file():
        raise CheckpointError(str(path), "file not found")
    try:
        payload = torch.load(path, map_location=device, weights_only=True)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as e:
        raise CheckpointError(str(path), f"unreadable archive: {e}") from e

    if not isinstance(payload, dict) or payload.get("format") != FORMAT_VERSION:
        raise CheckpointError(str(path), "unknown archive format")

    try:
        model_config = ModelConfig.model_validate_json(payload["model_config"])
        superpixel = SuperpixelConfig.model_validate_json(payload["superpixel"])
        progress = TrainingProgress.model_validate(payload["progress"])
    except (KeyError, ValidationError) as e:
        raise CheckpointError(str(path), f"invalid metadata: {e}") from e

    model = build_model(model_config)
    missing, unexpected = model.load_state_dict(payload["state_dict"], strict=False)
    if missing or unexpected:
        raise CheckpointError(
            str(path),
            f"parameter keys do not match the model (missing {sorted(missing)[:5]}, "
            f"unexpected {sorted(unexpected)[:5]})",
        )
    model.to(device)

    return LoadedCheckpoint(
        model=model,
        model_config=model_config,
        superpixel=superpixel,
        band_radius=int(payload.get("band_radius", 5)),
        progress=progress,
        optimizer_state=payload.get("optimizer"),
    )
