"""Tests for configuration defaults, invariants and source precedence."""

from pathlib import Path

import pytest
from pydantic import ValidationError

from cf2net.config import (
    RESOLVED_CONFIG_NAME,
    ExperimentConfig,
    ModelConfig,
    load_config,
    write_resolved_config,
)
from cf2net.exceptions import ConfigurationError


def test_published_training_defaults() -> None:
    config = ExperimentConfig()
    assert config.train.optimizer == "adagrad"
    assert config.train.learning_rate == pytest.approx(6e-4)
    assert config.train.batch_size == 4
    assert config.train.epochs == 500
    assert config.train.folds == 4
    assert (config.loss.lambda1, config.loss.lambda2, config.loss.lambda3) == (1.0, 1.0, 0.1)
    assert config.model.aspp_rates == [2, 4, 6]
    assert config.model.em_channels == 32


def test_input_channels_follow_superpixel_toggle() -> None:
    assert ModelConfig().input_channels == 2
    assert ModelConfig(use_superpixel=False).input_channels == 1


@pytest.mark.parametrize(
    ("fields", "message"),
    [
        ({"image_size": 100}, "image_size must be a positive multiple of 16"),
        ({"base_width": 0}, "base_width must be >= 1"),
        ({"aspp_rates": []}, "aspp_rates must be nonempty"),
        ({"use_fsp": False, "use_aspp": False, "use_ec": True}, "use_ec requires use_fsp"),
        ({"use_fsp": False, "use_ec": False}, "use_aspp requires use_fsp"),
    ],
)
def test_model_invariants_are_named(fields: dict, message: str) -> None:
    with pytest.raises(ValidationError, match=message):
        ModelConfig(**fields)


def test_file_overrides_environment_and_flags_override_file(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    config_file = tmp_path / "experiment.toml"
    config_file.write_text("seed = 3\n\n[train]\nepochs = 7\n", encoding="utf-8")
    monkeypatch.setenv("CF2NET_SEED", "5")
    monkeypatch.setenv("CF2NET_TRAIN__BATCH_SIZE", "2")

    from_file = load_config(config_file)
    assert from_file.seed == 3
    assert from_file.train.epochs == 7
    assert from_file.train.batch_size == 2

    flagged = load_config(config_file, {"seed": 9})
    assert flagged.seed == 9


def test_missing_config_file(tmp_path: Path) -> None:
    with pytest.raises(ConfigurationError, match="not found"):
        load_config(tmp_path / "absent.toml")


def test_invalid_value_is_a_configuration_error() -> None:
    with pytest.raises(ConfigurationError, match="Invalid configuration"):
        load_config(overrides={"train": {"learning_rate": 0}})


def test_resolved_config_reproduces_run(tmp_path: Path) -> None:
    original = load_config(overrides={"seed": 11, "model": {"base_width": 8}})
    path = write_resolved_config(original, tmp_path / "run")
    assert path.name == RESOLVED_CONFIG_NAME

    reloaded = load_config(path)
    assert reloaded.model_dump() == original.model_dump()
