"""Overlap metrics (DSC, SEN, PPV) and their per-fold aggregation."""

import logging
from collections import defaultdict
from pathlib import Path
from typing import Any

import numpy as np
import torch
from pydantic import BaseModel, Field

from cf2net.exceptions import ShapeError

logger = logging.getLogger(__name__)

METRIC_NAMES = ("dsc", "sen", "ppv")
DECISION_THRESHOLD = 0.5

# Published four-fold results on the 163-image dataset, kept for documentation
REFERENCE_TARGETS = {
    "dsc": "85.553±1.718",
    "sen": "85.211±1.342",
    "ppv": "88.198±1.988",
}


# =============================================================================
# Pixel Counts
# =============================================================================


class ConfusionCounts(BaseModel):
    """Pixelwise confusion counts of one prediction."""

    tp: int = Field(ge=0)
    fp: int = Field(ge=0)
    fn: int = Field(ge=0)
    tn: int = Field(ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _as_bool(values: np.ndarray | torch.Tensor) -> np.ndarray:
    if isinstance(values, torch.Tensor):
        values = values.detach().cpu().numpy()
    return np.asarray(values).astype(bool)


def confusion_counts(
    pred: np.ndarray | torch.Tensor, gt: np.ndarray | torch.Tensor
) -> ConfusionCounts:
    """Count TP, FP, FN, TN between a binary prediction and the ground truth.

    Raises:
        ShapeError: If the maps differ in shape.
    """
    pred, gt = _as_bool(pred), _as_bool(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction {pred.shape} and ground truth {gt.shape} differ")
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & gt)),
        fp=int(np.count_nonzero(pred & ~gt)),
        fn=int(np.count_nonzero(~pred & gt)),
        tn=int(np.count_nonzero(~pred & ~gt)),
    )


def dsc(c: ConfusionCounts) -> float:
    """2TP / (2TP + FP + FN); 1 when prediction and ground truth are both empty."""
    denominator = 2 * c.tp + c.fp + c.fn
    if denominator == 0:
        return 1.0
    return 2 * c.tp / denominator


def sen(c: ConfusionCounts) -> float:
    """TP / (TP + FN). With an empty ground truth: 1 if nothing was predicted, else 0."""
    if c.tp + c.fn == 0:
        return 1.0 if c.fp == 0 else 0.0
    return c.tp / (c.tp + c.fn)


def ppv(c: ConfusionCounts) -> float:
    """TP / (TP + FP). With an empty prediction: 1 if the ground truth is empty too, else 0."""
    if c.tp + c.fp == 0:
        return 1.0 if c.fn == 0 else 0.0
    return c.tp / (c.tp + c.fp)


# =============================================================================
# Reports
# =============================================================================


class ImageMetrics(BaseModel):
    """Metrics of one held-out image."""

    id: str
    fold: int
    dsc: float
    sen: float
    ppv: float


class MetricStat(BaseModel):
    """Mean and spread of one metric."""

    mean: float
    std: float

    def percent(self) -> str:
        return f"{100 * self.mean:.3f}±{100 * self.std:.3f}"


class FoldMetrics(BaseModel):
    """Per-fold means over images; per-image spread kept for transparency."""

    fold: int
    count: int
    dsc: MetricStat
    sen: MetricStat
    ppv: MetricStat


class MetricsReport(BaseModel):
    """Per-image, per-fold and summary metrics of one experiment."""

    per_image: list[ImageMetrics]
    per_fold: list[FoldMetrics]
    # Mean ± sample standard deviation across fold means
    summary: dict[str, MetricStat]
    metadata: dict[str, Any] = Field(default_factory=dict)

    def to_table(self, title: str | None = None) -> str:
        """Human-readable table in percent with three decimals."""
        header = f"{'':<8}" + "".join(f"{name.upper() + ' (%)':>20}" for name in METRIC_NAMES)
        lines = [title] if title else []
        lines += [header, "-" * len(header)]
        for fold in self.per_fold:
            cells = "".join(
                f"{100 * getattr(fold, name).mean:>20.3f}" for name in METRIC_NAMES
            )
            lines.append(f"{'fold ' + str(fold.fold):<8}{cells}")
        lines.append("-" * len(header))
        summary = "".join(f"{self.summary[name].percent():>20}" for name in METRIC_NAMES)
        lines.append(f"{'mean':<8}{summary}")
        return "\n".join(lines) + "\n"

    def write(self, directory: Path, stem: str = "report") -> tuple[Path, Path]:
        """Write ``<stem>.json`` and ``<stem>.txt`` into ``directory``."""
        directory.mkdir(parents=True, exist_ok=True)
        json_path = directory / f"{stem}.json"
        text_path = directory / f"{stem}.txt"
        json_path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        text_path.write_text(self.to_table(), encoding="utf-8")
        logger.info("Wrote metrics report %s", json_path)
        return json_path, text_path


def image_metrics(
    sample_id: str,
    fold: int,
    pred: np.ndarray | torch.Tensor,
    gt: np.ndarray | torch.Tensor,
) -> ImageMetrics:
    """All three metrics of one binary prediction."""
    counts = confusion_counts(pred, gt)
    return ImageMetrics(id=sample_id, fold=fold, dsc=dsc(counts), sen=sen(counts), ppv=ppv(counts))


def _stat(values: list[float]) -> MetricStat:
    array = np.asarray(values, dtype=np.float64)
    std = float(array.std(ddof=1)) if array.size > 1 else 0.0
    return MetricStat(mean=float(array.mean()), std=std)


def aggregate_report(
    per_image: list[ImageMetrics],
    metadata: dict[str, Any] | None = None,
) -> MetricsReport:
    """Average images within each fold, then summarize across folds.

    Raises:
        ValueError: If there are no per-image metrics.
    """
    if not per_image:
        raise ValueError("Cannot aggregate an empty set of image metrics")

    grouped: dict[int, list[ImageMetrics]] = defaultdict(list)
    for record in per_image:
        grouped[record.fold].append(record)

    per_fold = [
        FoldMetrics(
            fold=fold,
            count=len(records),
            **{name: _stat([getattr(r, name) for r in records]) for name in METRIC_NAMES},
        )
        for fold, records in sorted(grouped.items())
    ]
    summary = {
        name: _stat([getattr(fold, name).mean for fold in per_fold]) for name in METRIC_NAMES
    }

    return MetricsReport(
        per_image=per_image,
        per_fold=per_fold,
        summary=summary,
        metadata={"spread": "across_folds", "threshold": DECISION_THRESHOLD, **(metadata or {})},
    )
