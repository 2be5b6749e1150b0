"""Tests for the command line: flag mapping, run directories and exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from cf2net import cli
from cf2net.config import ExperimentConfig
from cf2net.exceptions import NumericalError


@pytest.fixture
def common_flags(tmp_path: Path) -> list[str]:
    return [
        "--prepared-dir",
        str(tmp_path / "prepared"),
        "--size",
        "64",
        "--base-width",
        "8",
        "--superpixel-k",
        "64",
        "--slic-iterations",
        "3",
        "--device",
        "cpu",
    ]


def test_flags_become_nested_overrides(tmp_path: Path) -> None:
    args = cli.parse_args(
        ["prepare", "--synthetic", "200", "--size", "128", "--seed", "4", "--no-superpixel"]
    )
    assert cli.config_overrides(args) == {
        "seed": 4,
        "data": {"synthetic_count": 200},
        "model": {"image_size": 128, "use_superpixel": False},
    }


def test_model_loss_and_train_flags_reach_the_config() -> None:
    argv = [
        "train",
        "--no-aspp",
        "--no-ec",
        "--backbone-skips",
        "--aspp-rates", "1", "3",
        "--fsp-width", "32",
        "--em-channels", "16",
        "--min-size", "9",
        "--lambda3", "0.5",
        "--mu2", "0",
        "--no-balanced",
        "--invert-balance",
        "--literal-dice",
        "--epsilon", "1e-4",
        "--momentum", "0.5",
        "--no-deterministic",
    ]  # fmt: skip
    config = ExperimentConfig(**cli.config_overrides(cli.parse_args(argv)))
    assert config.model.aspp_rates == [1, 3]
    assert (config.model.use_aspp, config.model.use_ec, config.model.use_fsp) == (
        False,
        False,
        True,
    )
    assert config.model.backbone_skips
    assert (config.model.fsp_width, config.model.em_channels) == (32, 16)
    assert config.superpixel.min_size == 9
    assert (config.loss.lambda3, config.loss.mu2, config.loss.epsilon) == (0.5, 0.0, 1e-4)
    assert not config.loss.balanced
    assert config.loss.invert_balance and config.loss.paper_literal_dice
    assert config.train.momentum == 0.5
    assert not config.deterministic


def test_unset_toggles_keep_defaults() -> None:
    overrides = cli.config_overrides(cli.parse_args(["train"]))
    assert overrides == {}


def test_predict_out_names_a_file(tmp_path: Path) -> None:
    args = cli.parse_args(
        ["predict", "--image", "x.png", "--checkpoint", "m.pt", "--out", str(tmp_path / "o.png")]
    )
    assert cli.config_overrides(args)["out"] == tmp_path


def test_prepare_writes_run_directory_and_is_idempotent(
    tmp_path: Path, common_flags: list[str]
) -> None:
    out = tmp_path / "runs"
    argv = ["prepare", "--synthetic", "6", "--out", str(out), *common_flags]
    assert cli.main(argv) == 0

    manifest = json.loads((tmp_path / "prepared" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["sample_count"] == 6
    assert len(list((tmp_path / "prepared" / "superpixels").glob("*.png"))) == 6
    resolved = json.loads((out / "resolved_config.json").read_text(encoding="utf-8"))
    assert resolved["model"]["image_size"] == 64
    assert (out / "run.log").is_file()

    assert cli.main(argv) == 0
    assert "up to date" in (out / "run.log").read_text(encoding="utf-8")


def test_missing_prepared_data_names_prepare(
    tmp_path: Path, common_flags: list[str]
) -> None:
    assert cli.main(["train", "--out", str(tmp_path / "runs"), *common_flags]) == 1
    assert "cf2net prepare" in (tmp_path / "runs" / "run.log").read_text(encoding="utf-8")


def test_invalid_configuration_exits_with_one(tmp_path: Path) -> None:
    assert cli.main(["prepare", "--size", "50", "--out", str(tmp_path)]) == 1


def test_unknown_variant_exits_with_one(tmp_path: Path, common_flags: list[str]) -> None:
    cli.main(["prepare", "--synthetic", "4", "--out", str(tmp_path / "p"), *common_flags])
    argv = ["ablate", "--variants", "unet,vgg", "--out", str(tmp_path / "a"), *common_flags]
    assert cli.main(argv) == 1


def test_missing_checkpoint_exits_with_one(tmp_path: Path, common_flags: list[str]) -> None:
    cli.main(["prepare", "--synthetic", "4", "--out", str(tmp_path / "p"), *common_flags])
    argv = ["eval", "--checkpoint", str(tmp_path / "none.pt"), "--out", str(tmp_path / "e")]
    assert cli.main([*argv, *common_flags]) == 1


@pytest.mark.parametrize(
    "error", [NumericalError("total", ["a"], 1, 0), RuntimeError("boom")]
)
def test_internal_failures_exit_with_two(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch, error: Exception
) -> None:
    def failing(config, args) -> int:
        raise error

    monkeypatch.setitem(cli.COMMANDS, "prepare", failing)
    assert cli.main(["prepare", "--out", str(tmp_path)]) == 2


def test_train_eval_predict_round(tmp_path: Path, common_flags: list[str]) -> None:
    training = ["--folds", "2", "--epochs", "1", "--optimizer", "adam", "--learning-rate", "1e-3"]
    prepare = ["prepare", "--synthetic", "6", "--out", str(tmp_path / "p")]
    assert cli.main([*prepare, *common_flags]) == 0

    train_out = tmp_path / "train"
    argv = ["train", "--fold", "0", "--out", str(train_out), *common_flags, *training]
    assert cli.main(argv) == 0
    checkpoint = train_out / "fold_0" / "best.pt"
    assert checkpoint.is_file()

    eval_out = tmp_path / "eval"
    argv = ["eval", "--checkpoint", str(checkpoint), "--save-overlays", "--out", str(eval_out)]
    assert cli.main([*argv, *common_flags, *training]) == 0
    assert (eval_out / "eval_best.json").is_file()
    assert list((eval_out / "overlays").glob("*.png"))

    image_path = tmp_path / "x.png"
    Image.fromarray(np.full((80, 80), 120, dtype=np.uint8)).save(image_path)
    overlay = tmp_path / "pred" / "overlay.png"
    argv = ["predict", "--image", str(image_path), "--checkpoint", str(checkpoint)]
    assert cli.main([*argv, "--out", str(overlay), "--device", "cpu"]) == 0
    assert overlay.is_file()
    assert (overlay.parent / "overlay_mask.png").is_file()


def test_selftest_without_overfit(tmp_path: Path) -> None:
    assert cli.main(["selftest", "--skip-overfit", "--out", str(tmp_path)]) == 0


@pytest.mark.slow
def test_full_selftest(tmp_path: Path) -> None:
    assert cli.main(["selftest", "--out", str(tmp_path)]) == 0
