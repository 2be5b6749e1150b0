"""Stepwise ablation variants and the combined comparison table."""

import json
import logging
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image
from pydantic import BaseModel

from cf2net.config import ExperimentConfig, write_resolved_config
from cf2net.data.pipeline import make_folds
from cf2net.data.store import PreparedDataset
from cf2net.metrics import DECISION_THRESHOLD, METRIC_NAMES, MetricsReport
from cf2net.network.checkpoint import load_checkpoint
from cf2net.training.inference import TRUTH_COLOR, Color, render_contours
from cf2net.training.trainer import (
    BEST_CHECKPOINT,
    cross_validate,
    iterate_predictions,
    resolve_device,
)

logger = logging.getLogger(__name__)


class AblationVariant(StrEnum):
    """Network/loss settings compared by adding one module at a time."""

    UNET = "unet"
    UNETW = "unetw"
    CF2C = "cf2c"
    CF2C_ASPP = "cf2c_aspp"
    CF2C_ASPP_EC = "cf2c_aspp_ec"
    CF2NET_FULL = "cf2net_full"

    @property
    def settings(self) -> dict[str, bool]:
        """Every field a variant pins, keyed as ``<section>.<field>``."""
        return VARIANT_SETTINGS[self]

    @property
    def label(self) -> str:
        return VARIANT_LABELS[self]

    def apply(self, config: ExperimentConfig) -> ExperimentConfig:
        """Copy of ``config`` with only this variant's settings changed."""
        sections: dict[str, dict[str, Any]] = {}
        for key, value in self.settings.items():
            section, field = key.split(".")
            sections.setdefault(section, {})[field] = value
        update = {
            section: getattr(config, section).model_copy(update=fields)
            for section, fields in sections.items()
        }
        return config.model_copy(update=update)

    def differs_from(self, other: "AblationVariant") -> set[str]:
        """Keys whose pinned values differ between two variants."""
        return {key for key, value in self.settings.items() if other.settings[key] != value}


_BACKBONE_ONLY = {
    "model.use_fsp": False,
    "model.use_aspp": False,
    "model.use_ec": False,
    "model.use_superpixel": False,
    "model.backbone_skips": True,
}
_FUSION_STREAM = {
    "model.use_fsp": True,
    "model.use_aspp": False,
    "model.use_ec": False,
    "model.use_superpixel": False,
    "model.backbone_skips": False,
    "loss.balanced": True,
}

VARIANT_SETTINGS: dict[AblationVariant, dict[str, bool]] = {
    AblationVariant.UNET: _BACKBONE_ONLY | {"loss.balanced": False},
    AblationVariant.UNETW: _BACKBONE_ONLY | {"loss.balanced": True},
    AblationVariant.CF2C: _FUSION_STREAM,
    AblationVariant.CF2C_ASPP: _FUSION_STREAM | {"model.use_aspp": True},
    AblationVariant.CF2C_ASPP_EC: _FUSION_STREAM | {"model.use_aspp": True, "model.use_ec": True},
    AblationVariant.CF2NET_FULL: _FUSION_STREAM
    | {"model.use_aspp": True, "model.use_ec": True, "model.use_superpixel": True},
}

VARIANT_LABELS = {
    AblationVariant.UNET: "U-Net",
    AblationVariant.UNETW: "U-NetW",
    AblationVariant.CF2C: "CF2-Net-C",
    AblationVariant.CF2C_ASPP: "CF2-Net-C + ASPP",
    AblationVariant.CF2C_ASPP_EC: "CF2-Net-C + ASPP + EC",
    AblationVariant.CF2NET_FULL: "CF2-Net",
}

# Contour colours in comparison overlays; ground truth stays green
VARIANT_COLORS: dict[AblationVariant, Color] = {
    AblationVariant.UNET: (0.0, 0.4, 1.0),
    AblationVariant.UNETW: (0.0, 1.0, 1.0),
    AblationVariant.CF2C: (1.0, 0.0, 1.0),
    AblationVariant.CF2C_ASPP: (1.0, 1.0, 0.0),
    AblationVariant.CF2C_ASPP_EC: (1.0, 0.5, 0.0),
    AblationVariant.CF2NET_FULL: (1.0, 0.0, 0.0),
}


def parse_variants(text: str) -> list[AblationVariant]:
    """Parse a comma-separated variant list.

    Raises:
        ValueError: If a name is unknown or the list is empty.
    """
    names = [name.strip() for name in text.split(",") if name.strip()]
    if not names:
        raise ValueError("No ablation variants given")
    return [AblationVariant(name) for name in names]


class AblationTable(BaseModel):
    """One cross-validation report per variant, in run order."""

    reports: dict[AblationVariant, MetricsReport]

    def to_table(self) -> str:
        header = f"{'Method':<24}" + "".join(
            f"{name.upper() + ' (%)':>20}" for name in METRIC_NAMES
        )
        lines = [header, "-" * len(header)]
        for variant, report in self.reports.items():
            cells = "".join(f"{report.summary[name].percent():>20}" for name in METRIC_NAMES)
            lines.append(f"{variant.label:<24}{cells}")
        return "\n".join(lines) + "\n"

    def write(self, directory: Path) -> tuple[Path, Path]:
        directory.mkdir(parents=True, exist_ok=True)
        json_path = directory / "ablation.json"
        text_path = directory / "ablation.txt"
        json_path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        text_path.write_text(self.to_table(), encoding="utf-8")
        return json_path, text_path


def held_out_masks(
    config: ExperimentConfig, data: PreparedDataset, run_dir: Path
) -> dict[str, np.ndarray]:
    """Binary masks predicted by each fold's best checkpoint on its held-out images."""
    device = resolve_device(config.device)
    folds = make_folds(data, config.train.folds, config.seed)
    masks: dict[str, np.ndarray] = {}
    for fold in range(folds.k):
        loaded = load_checkpoint(run_dir / f"fold_{fold}" / BEST_CHECKPOINT, device)
        predictions = iterate_predictions(loaded.model, data, folds.held_out(fold), device)
        for sample_id, planes in predictions:
            masks[sample_id] = planes["probability"] > DECISION_THRESHOLD
    return masks


def write_comparison_overlays(
    data: PreparedDataset,
    masks: dict[AblationVariant, dict[str, np.ndarray]],
    directory: Path,
) -> list[Path]:
    """One overlay per image: true contour plus every variant's contour in its colour.

    ``legend.json`` beside the images maps variant names to RGB colours.
    """
    directory.mkdir(parents=True, exist_ok=True)
    legend = {"ground_truth": TRUTH_COLOR} | {v.value: VARIANT_COLORS[v] for v in masks}
    (directory / "legend.json").write_text(json.dumps(legend, indent=2), encoding="utf-8")

    written = []
    for sample in data.samples:
        contours = [(sample.mask, TRUTH_COLOR)]
        contours += [
            (predicted[sample.id], VARIANT_COLORS[variant])
            for variant, predicted in masks.items()
            if sample.id in predicted
        ]
        path = directory / f"{sample.id}.png"
        Image.fromarray(render_contours(sample.image, contours)).save(path)
        written.append(path)
    logger.info("Wrote %d comparison overlays to %s", len(written), directory)
    return written


def run_ablation(
    config: ExperimentConfig,
    variants: list[AblationVariant],
    data: PreparedDataset,
    run_dir: Path | None = None,
    save_overlays: bool = False,
) -> AblationTable:
    """Cross-validate each variant under ``run_dir/<variant>`` and tabulate the results.

    With ``save_overlays`` every image also gets a qualitative comparison in
    ``run_dir/overlays``, drawn from the held-out predictions of each variant.

    Raises:
        ValueError: If ``variants`` is empty.
    """
    if not variants:
        raise ValueError("At least one ablation variant is required")
    run_dir = run_dir or config.out

    reports: dict[AblationVariant, MetricsReport] = {}
    masks: dict[AblationVariant, dict[str, np.ndarray]] = {}
    for variant in variants:
        variant_config = variant.apply(config)
        variant_dir = run_dir / variant.value
        logger.info("Ablation variant %s (%s)", variant, variant.label)
        write_resolved_config(variant_config, variant_dir)
        view = PreparedDataset(data.samples, use_superpixel=variant_config.model.use_superpixel)
        report = cross_validate(variant_config, view, variant_dir)
        report.metadata["variant"] = variant.value
        reports[variant] = report
        if save_overlays:
            masks[variant] = held_out_masks(variant_config, view, variant_dir)

    table = AblationTable(reports=reports)
    table.write(run_dir)
    if save_overlays:
        write_comparison_overlays(data, masks, run_dir / "overlays")
    logger.info("Ablation results:\n%s", table.to_table())
    return table
