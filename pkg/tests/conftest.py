"""Shared fixtures: tiny model configurations and a synthetic prepared dataset."""

import os
from pathlib import Path

import pytest
import torch

from cf2net.config import (
    DataConfig,
    ExperimentConfig,
    ModelConfig,
    SuperpixelConfig,
    TrainConfig,
)
from cf2net.data.store import PreparedDataset, load_prepared, prepare_dataset


@pytest.fixture(autouse=True)
def _isolate_environment(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    """Keep CF2NET_* variables and a stray .env out of every test."""
    for name in list(os.environ):
        if name.upper().startswith("CF2NET_"):
            monkeypatch.delenv(name)
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def tiny_model() -> ModelConfig:
    return ModelConfig(image_size=64, base_width=8, fsp_width=16, em_channels=8)


@pytest.fixture
def tiny_config(tmp_path: Path, tiny_model: ModelConfig) -> ExperimentConfig:
    return ExperimentConfig(
        seed=0,
        out=tmp_path / "runs",
        device="cpu",
        data=DataConfig(
            prepared_dir=tmp_path / "prepared",
            synthetic_count=8,
        ),
        superpixel=SuperpixelConfig(k=64, iterations=5),
        model=tiny_model,
        train=TrainConfig(optimizer="adam", learning_rate=1e-3, epochs=2, folds=2, batch_size=4),
    )


@pytest.fixture
def prepared(tiny_config: ExperimentConfig) -> PreparedDataset:
    prepare_dataset(tiny_config)
    return load_prepared(tiny_config)


@pytest.fixture
def generator() -> torch.Generator:
    return torch.Generator().manual_seed(0)
