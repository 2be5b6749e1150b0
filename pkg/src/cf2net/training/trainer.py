"""Training loop, per-fold validation and four-fold cross validation."""

import logging
import math
import random
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from datetime import UTC, datetime
from pathlib import Path

import numpy as np
import torch
from pydantic import BaseModel, Field
from torch import nn
from torch.utils.data import DataLoader, Subset

from cf2net.config import ExperimentConfig, LossWeights, TrainConfig
from cf2net.data.models import FoldSplit
from cf2net.data.pipeline import make_folds
from cf2net.data.store import PreparedDataset
from cf2net.exceptions import ConfigMismatchError, ConfigurationError, NumericalError
from cf2net.losses import LossTerms, total_loss
from cf2net.metrics import (
    DECISION_THRESHOLD,
    REFERENCE_TARGETS,
    ImageMetrics,
    MetricsReport,
    aggregate_report,
    image_metrics,
)
from cf2net.network.checkpoint import TrainingProgress, load_checkpoint, save_checkpoint
from cf2net.network.model import CF2Net, build_model
from cf2net.training.inference import save_overlay

logger = logging.getLogger(__name__)

HISTORY_NAME = "history.jsonl"
BEST_CHECKPOINT = "best.pt"
FINAL_CHECKPOINT = "final.pt"


# =============================================================================
# Setup
# =============================================================================


def set_seed(seed: int, deterministic: bool = True) -> None:
    """Seed every generator in play and optionally pin deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.backends.cudnn.deterministic = True
        torch.backends.cudnn.benchmark = False
        torch.use_deterministic_algorithms(True, warn_only=True)


def resolve_device(name: str) -> torch.device:
    """Map ``auto`` to CUDA when available, otherwise use the name as given."""
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    try:
        return torch.device(name)
    except RuntimeError as e:
        raise ConfigurationError(f"Unknown device: {name}") from e


def build_optimizer(model: nn.Module, train: TrainConfig) -> torch.optim.Optimizer:
    """Optimizer named by the training config."""
    params = model.parameters()
    match train.optimizer:
        case "adagrad":
            return torch.optim.Adagrad(params, lr=train.learning_rate)
        case "sgd":
            return torch.optim.SGD(params, lr=train.learning_rate, momentum=train.momentum)
        case "adam":
            return torch.optim.Adam(params, lr=train.learning_rate)
    raise ConfigurationError(f"Unknown optimizer: {train.optimizer}")


# =============================================================================
# History
# =============================================================================


class EpochRecord(BaseModel):
    """Mean losses and validation score of one completed epoch."""

    epoch: int
    total: float
    fusion: float | None
    aux: float
    edge: float | None
    validation_dsc: float
    started_at: datetime
    finished_at: datetime


class TrainHistory(BaseModel):
    """Per-epoch records of one fold plus the ids seen by the optimizer."""

    fold: int | None
    records: list[EpochRecord] = Field(default_factory=list)
    train_ids: list[str] = Field(default_factory=list)
    best_epoch: int | None = None
    best_validation_dsc: float | None = None


@dataclass
class FoldResult:
    """Artifacts of one trained fold."""

    best_checkpoint: Path
    final_checkpoint: Path
    history: TrainHistory


# =============================================================================
# Steps
# =============================================================================


def _flip_batch(batch: dict, generator: torch.Generator) -> dict:
    flip = torch.rand(len(batch["id"]), generator=generator) < 0.5
    if not flip.any():
        return batch
    flipped = dict(batch)
    for key in ("image", "mask", "edge"):
        planes = batch[key].clone()
        planes[flip] = planes[flip].flip(-1)
        flipped[key] = planes
    return flipped


def training_step(
    model: CF2Net,
    optimizer: torch.optim.Optimizer,
    batch: dict,
    weights: LossWeights,
    device: torch.device,
    grad_clip_norm: float | None = None,
    epoch: int = 0,
    batch_index: int = 0,
) -> LossTerms:
    """One forward/backward/update pass.

    Raises:
        NumericalError: If a loss component or the gradient norm is not finite.
    """
    images = batch["image"].to(device)
    mask = batch["mask"].to(device)
    edge = batch["edge"].to(device)

    optimizer.zero_grad(set_to_none=True)
    terms = total_loss(model(images), mask, edge, weights)
    for component in ("fusion", "aux", "edge", "total"):
        value = getattr(terms, component)
        if value is not None and not torch.isfinite(value):
            raise NumericalError(component, list(batch["id"]), epoch, batch_index)

    terms.total.backward()
    max_norm = grad_clip_norm if grad_clip_norm is not None else math.inf
    grad_norm = torch.nn.utils.clip_grad_norm_(model.parameters(), max_norm)
    if not torch.isfinite(grad_norm):
        raise NumericalError("gradient", list(batch["id"]), epoch, batch_index)
    optimizer.step()
    return terms


def iterate_predictions(
    model: CF2Net,
    data: PreparedDataset,
    indices: Sequence[int],
    device: torch.device,
    batch_size: int = 4,
) -> Iterator[tuple[str, dict[str, np.ndarray]]]:
    """Yield (id, planes) for each sample: input image, mask, probability and edge maps."""
    loader = DataLoader(Subset(data, list(indices)), batch_size=batch_size, shuffle=False)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for batch in loader:
                preds = model(batch["image"].to(device))
                probability = preds.segmentation.cpu().numpy()
                edge = preds.edge.cpu().numpy() if preds.edge is not None else None
                for i, sample_id in enumerate(batch["id"]):
                    yield sample_id, {
                        "image": batch["image"][i, 0].numpy(),
                        "mask": batch["mask"][i, 0].numpy() > 0.5,
                        "probability": probability[i, 0],
                        "edge": edge[i, 0] if edge is not None else None,
                    }
    finally:
        model.train(was_training)


def evaluate(
    model: CF2Net,
    data: PreparedDataset,
    indices: Sequence[int],
    fold: int,
    device: torch.device,
    batch_size: int = 4,
) -> list[ImageMetrics]:
    """Per-image metrics of thresholded predictions on ``indices``."""
    return [
        image_metrics(
            sample_id, fold, planes["probability"] > DECISION_THRESHOLD, planes["mask"]
        )
        for sample_id, planes in iterate_predictions(model, data, indices, device, batch_size)
    ]


# =============================================================================
# Folds
# =============================================================================


def train_fold(
    config: ExperimentConfig,
    fold: int,
    folds: FoldSplit,
    data: PreparedDataset,
    run_dir: Path | None = None,
) -> FoldResult:
    """Train on every fold except ``fold`` and validate on it after each epoch.

    The best-by-validation-DSC and final checkpoints are written to
    ``run_dir``, and every finished epoch is appended to ``history.jsonl``.

    Raises:
        ConfigurationError: If ``fold`` is out of range.
        NumericalError: If a loss or gradient becomes non-finite.
    """
    if not 0 <= fold < folds.k:
        raise ConfigurationError(f"Fold {fold} out of range for {folds.k} folds")
    if len(folds.assignments) != len(data):
        raise ConfigurationError(
            f"Fold split covers {len(folds.assignments)} entries, dataset has {len(data)}"
        )
    if data.use_superpixel != config.model.use_superpixel:
        raise ConfigurationError("Dataset and model disagree on the super-pixel channel")

    run_dir = run_dir or config.out / f"fold_{fold}"
    run_dir.mkdir(parents=True, exist_ok=True)
    history_path = run_dir / HISTORY_NAME
    history_path.unlink(missing_ok=True)

    set_seed(config.seed, config.deterministic)
    device = resolve_device(config.device)
    model = build_model(config.model).to(device)
    optimizer = build_optimizer(model, config.train)

    train_indices = folds.training(fold)
    held_out = folds.held_out(fold)
    loader_generator = torch.Generator().manual_seed(config.seed)
    flip_generator = torch.Generator().manual_seed(config.seed + 1)
    loader = DataLoader(
        Subset(data, train_indices),
        batch_size=config.train.batch_size,
        shuffle=True,
        generator=loader_generator,
    )
    logger.info(
        "Fold %d: %d training / %d held-out samples, %d epochs",
        fold,
        len(train_indices),
        len(held_out),
        config.train.epochs,
    )

    history = TrainHistory(fold=fold)
    seen: set[str] = set()
    best_path = run_dir / BEST_CHECKPOINT
    final_path = run_dir / FINAL_CHECKPOINT

    for epoch in range(1, config.train.epochs + 1):
        started_at = datetime.now(UTC)
        model.train()
        sums: dict[str, float] = {}
        batches = 0
        for batch_index, batch in enumerate(loader):
            if config.data.horizontal_flip:
                batch = _flip_batch(batch, flip_generator)
            seen.update(batch["id"])
            terms = training_step(
                model,
                optimizer,
                batch,
                config.loss,
                device,
                config.train.grad_clip_norm,
                epoch,
                batch_index,
            )
            for name, value in terms.as_floats().items():
                if value is not None:
                    sums[name] = sums.get(name, 0.0) + value
            batches += 1
            logger.debug(
                "Fold %d epoch %d batch %d: loss %.5f",
                fold,
                epoch,
                batch_index,
                terms.total.item(),
            )

        means = {name: total / batches for name, total in sums.items()}
        validation = evaluate(model, data, held_out, fold, device, config.train.batch_size)
        validation_dsc = float(np.mean([m.dsc for m in validation]))

        record = EpochRecord(
            epoch=epoch,
            total=means["total"],
            fusion=means.get("fusion"),
            aux=means["aux"],
            edge=means.get("edge"),
            validation_dsc=validation_dsc,
            started_at=started_at,
            finished_at=datetime.now(UTC),
        )
        history.records.append(record)
        with history_path.open("a", encoding="utf-8") as f:
            f.write(record.model_dump_json() + "\n")

        progress = TrainingProgress(
            epoch=epoch,
            fold=fold,
            folds=folds.k,
            sample_count=len(data),
            seed=config.seed,
            validation_dsc=validation_dsc,
        )
        if history.best_validation_dsc is None or validation_dsc > history.best_validation_dsc:
            history.best_epoch = epoch
            history.best_validation_dsc = validation_dsc
            save_checkpoint(
                best_path, model, config.superpixel, progress, optimizer, config.data.band_radius
            )

        logger.info(
            "Fold %d epoch %d/%d: loss %.5f, validation DSC %.4f",
            fold,
            epoch,
            config.train.epochs,
            record.total,
            validation_dsc,
        )

    save_checkpoint(
        final_path,
        model,
        config.superpixel,
        TrainingProgress(
            epoch=config.train.epochs,
            fold=fold,
            folds=folds.k,
            sample_count=len(data),
            seed=config.seed,
            validation_dsc=history.records[-1].validation_dsc,
        ),
        optimizer,
        config.data.band_radius,
    )
    history.train_ids = sorted(seen)
    (run_dir / "history.json").write_text(history.model_dump_json(indent=2), encoding="utf-8")
    logger.info("Fold %d done; best epoch %s", fold, history.best_epoch)
    return FoldResult(best_checkpoint=best_path, final_checkpoint=final_path, history=history)


def _report_metadata(config: ExperimentConfig, folds: FoldSplit) -> dict:
    return {
        "checkpoint_selection": "best_validation_dsc",
        "folds": folds.k,
        "seed": config.seed,
        "reference_targets": REFERENCE_TARGETS,
    }


def cross_validate(
    config: ExperimentConfig,
    data: PreparedDataset,
    run_dir: Path | None = None,
) -> MetricsReport:
    """Train every fold, evaluate each best checkpoint on its held-out fold, aggregate.

    Returns:
        MetricsReport, also written as ``report.json`` / ``report.txt`` in ``run_dir``.
    """
    run_dir = run_dir or config.out
    folds = make_folds(data, config.train.folds, config.seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "folds.json").write_text(folds.model_dump_json(indent=2), encoding="utf-8")

    device = resolve_device(config.device)
    per_image: list[ImageMetrics] = []
    best_epochs: dict[str, int | None] = {}
    for fold in range(folds.k):
        result = train_fold(config, fold, folds, data, run_dir / f"fold_{fold}")
        best = load_checkpoint(result.best_checkpoint, device)
        per_image += evaluate(best.model, data, folds.held_out(fold), fold, device)
        best_epochs[str(fold)] = result.history.best_epoch

    metadata = _report_metadata(config, folds) | {"best_epochs": best_epochs}
    report = aggregate_report(per_image, metadata)
    report.write(run_dir)
    logger.info(
        "Cross validation: DSC %s, SEN %s, PPV %s",
        report.summary["dsc"].percent(),
        report.summary["sen"].percent(),
        report.summary["ppv"].percent(),
    )
    return report


def _checkpoint_folds(
    checkpoint: Path,
    progress: TrainingProgress,
    sample_count: int,
    folds: int | None,
    fallback: int,
) -> int:
    """Fold count of the split a checkpoint was trained on.

    Raises:
        ConfigMismatchError: If ``folds`` or the dataset size disagree with it.
    """
    if progress.folds is None:
        return folds if folds is not None else fallback
    if folds is not None and folds != progress.folds:
        raise ConfigMismatchError(
            str(checkpoint),
            f"trained on a {progress.folds}-fold split, evaluation asked for {folds} folds",
        )
    if progress.sample_count is not None and progress.sample_count != sample_count:
        raise ConfigMismatchError(
            str(checkpoint),
            f"trained on a split of {progress.sample_count} samples, "
            f"prepared data has {sample_count}",
        )
    return progress.folds


def evaluate_checkpoint(
    checkpoint: Path,
    config: ExperimentConfig,
    data: PreparedDataset,
    fold: int | None = None,
    overlay_dir: Path | None = None,
    folds: int | None = None,
) -> MetricsReport:
    """Evaluate a checkpoint on a held-out fold (or on every sample).

    The fold defaults to the one the checkpoint was trained for. The split is
    rebuilt from the seed and fold count stored in the checkpoint, so scored
    images are exactly the ones held out during training.

    Raises:
        CheckpointError: If the checkpoint cannot be loaded.
        ConfigMismatchError: If the checkpoint's image size differs from the data,
            or ``folds`` disagrees with the split it was trained on.
    """
    device = resolve_device(config.device)
    loaded = load_checkpoint(checkpoint, device)
    if data.samples and data.samples[0].size != loaded.model_config.image_size:
        raise ConfigMismatchError(
            str(checkpoint),
            f"trained at {loaded.model_config.image_size} px, "
            f"prepared data is {data.samples[0].size} px",
        )
    view = PreparedDataset(data.samples, use_superpixel=loaded.model_config.use_superpixel)

    fold = loaded.progress.fold if fold is None else fold
    metadata: dict = {"checkpoint": str(checkpoint), "epoch": loaded.progress.epoch}
    if fold is None:
        indices = list(range(len(view)))
        label = 0
    else:
        k = _checkpoint_folds(
            checkpoint, loaded.progress, len(view), folds, config.train.folds
        )
        split = make_folds(view, k, loaded.progress.seed)
        if not 0 <= fold < split.k:
            raise ConfigurationError(f"Fold {fold} out of range for {split.k} folds")
        indices = split.held_out(fold)
        label = fold
        metadata |= _report_metadata(config, split) | {"seed": loaded.progress.seed}

    per_image: list[ImageMetrics] = []
    for sample_id, planes in iterate_predictions(loaded.model, view, indices, device):
        prediction = planes["probability"] > DECISION_THRESHOLD
        per_image.append(image_metrics(sample_id, label, prediction, planes["mask"]))
        if overlay_dir is not None:
            save_overlay(
                overlay_dir / f"{sample_id}.png", planes["image"], prediction, planes["mask"]
            )

    return aggregate_report(per_image, metadata)
