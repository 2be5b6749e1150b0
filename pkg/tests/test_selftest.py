"""Tests for the built-in correctness checks."""

import numpy as np
import pytest
import torch

from cf2net.config import TrainConfig
from cf2net.data.pipeline import make_edge_target
from cf2net.training import selftest
from cf2net.training.selftest import (
    brute_force_edge_band,
    edge_oracle,
    gradient_checks,
    overfit_smoke_test,
    run_selftest,
    smoke_config,
)
from cf2net.training.trainer import build_optimizer


def test_loss_gradients_match_finite_differences() -> None:
    results = gradient_checks(seed=0)
    assert {result.name for result in results} >= {"weighted_dice", "total_loss"}
    assert all(result.passed for result in results), [r.detail for r in results if not r.passed]


def test_edge_band_agrees_with_brute_force() -> None:
    mask = np.zeros((24, 24), dtype=bool)
    mask[6:18, 8:20] = True
    assert np.array_equal(make_edge_target(mask, 3), brute_force_edge_band(mask, 3))
    assert edge_oracle(masks=20, size=24, band_radius=3).passed


def test_overfit_uses_the_configured_optimizer(monkeypatch: pytest.MonkeyPatch) -> None:
    seen: list[TrainConfig] = []

    def recording(model: torch.nn.Module, train: TrainConfig) -> torch.optim.Optimizer:
        seen.append(train)
        return build_optimizer(model, train)

    monkeypatch.setattr(selftest, "build_optimizer", recording)
    config = smoke_config()
    config = config.model_copy(
        update={"train": TrainConfig(optimizer="sgd", learning_rate=1e-9, momentum=0.0)}
    )
    result = overfit_smoke_test(config, steps=3, samples=2)
    assert [(train.optimizer, train.learning_rate) for train in seen] == [("sgd", 1e-9)]
    assert not result.passed
    assert result.steps == 3
    assert "not below" in result.reason


def test_quick_selftest_passes() -> None:
    results = run_selftest(include_overfit=False)
    assert results and all(result.passed for result in results)


@pytest.mark.slow
def test_overfit_smoke_test() -> None:
    result = overfit_smoke_test()
    assert result.passed, result.reason
    assert result.final_loss < 0.1 * result.initial_loss
    minima = result.window_minima(100)
    assert minima == sorted(minima, reverse=True)
