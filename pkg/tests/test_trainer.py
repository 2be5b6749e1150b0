"""Tests for the training loop, cross validation and checkpoint evaluation."""

import json
from pathlib import Path

import pytest
import torch

from cf2net.config import DataConfig, ExperimentConfig, ModelConfig, TrainConfig
from cf2net.data.pipeline import make_folds
from cf2net.data.store import PreparedDataset, load_prepared, prepare_dataset
from cf2net.exceptions import ConfigMismatchError, ConfigurationError, NumericalError
from cf2net.losses import LossTerms
from cf2net.network.model import build_model
from cf2net.training import trainer
from cf2net.training.trainer import (
    _flip_batch,
    build_optimizer,
    cross_validate,
    evaluate_checkpoint,
    resolve_device,
    train_fold,
)


def _with_train(config: ExperimentConfig, **fields) -> ExperimentConfig:
    return config.model_copy(update={"train": config.train.model_copy(update=fields)})


def test_one_epoch_gives_one_record(
    tiny_config: ExperimentConfig, prepared: PreparedDataset, tmp_path: Path
) -> None:
    config = _with_train(tiny_config, epochs=1)
    folds = make_folds(prepared, 2, config.seed)
    result = train_fold(config, 0, folds, prepared, tmp_path / "fold_0")

    assert len(result.history.records) == 1
    assert result.history.best_epoch == 1
    assert result.best_checkpoint.is_file() and result.final_checkpoint.is_file()
    lines = (tmp_path / "fold_0" / "history.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["epoch"] == 1


def test_held_out_images_never_reach_the_optimizer(
    tiny_config: ExperimentConfig, prepared: PreparedDataset, tmp_path: Path
) -> None:
    config = _with_train(tiny_config, epochs=1)
    folds = make_folds(prepared, 2, config.seed)
    result = train_fold(config, 1, folds, prepared, tmp_path / "fold_1")

    held_out = {prepared.ids[i] for i in folds.held_out(1)}
    expected = {prepared.ids[i] for i in folds.training(1)}
    assert set(result.history.train_ids) == expected
    assert not held_out & set(result.history.train_ids)


def test_fold_out_of_range(tiny_config: ExperimentConfig, prepared: PreparedDataset) -> None:
    folds = make_folds(prepared, 2, 0)
    with pytest.raises(ConfigurationError, match="out of range"):
        train_fold(tiny_config, 2, folds, prepared)


def test_non_finite_loss_names_batch_and_component(
    tiny_config: ExperimentConfig,
    prepared: PreparedDataset,
    monkeypatch: pytest.MonkeyPatch,
) -> None:
    def broken_loss(preds, mask, edge, weights) -> LossTerms:
        nan = preds.aux.sum() * float("nan")
        return LossTerms(total=nan, fusion=preds.fusion.sum(), aux=nan, edge=None)

    monkeypatch.setattr(trainer, "total_loss", broken_loss)
    folds = make_folds(prepared, 2, 0)
    with pytest.raises(NumericalError) as excinfo:
        train_fold(_with_train(tiny_config, epochs=1), 0, folds, prepared)
    assert excinfo.value.component == "aux"
    assert excinfo.value.epoch == 1
    assert excinfo.value.batch_ids


def test_cross_validation_report(
    tiny_config: ExperimentConfig, prepared: PreparedDataset, tmp_path: Path
) -> None:
    config = _with_train(tiny_config, epochs=1)
    report = cross_validate(config, prepared, tmp_path / "cv")

    assert len(report.per_fold) == 2
    assert len(report.per_image) == len(prepared)
    assert set(report.summary) == {"dsc", "sen", "ppv"}
    assert report.metadata["checkpoint_selection"] == "best_validation_dsc"
    assert set(report.metadata["best_epochs"]) == {"0", "1"}
    for fold in (0, 1):
        assert (tmp_path / "cv" / f"fold_{fold}" / "best.pt").is_file()
    assert (tmp_path / "cv" / "report.json").is_file()
    assert (tmp_path / "cv" / "folds.json").is_file()


def test_same_seed_same_summary(
    tiny_config: ExperimentConfig, prepared: PreparedDataset, tmp_path: Path
) -> None:
    config = _with_train(tiny_config, epochs=1)
    first = cross_validate(config, prepared, tmp_path / "a")
    second = cross_validate(config, prepared, tmp_path / "b")
    assert first.summary == second.summary


def test_evaluate_checkpoint_on_its_fold(
    tiny_config: ExperimentConfig, prepared: PreparedDataset, tmp_path: Path
) -> None:
    config = _with_train(tiny_config, epochs=1)
    folds = make_folds(prepared, 2, config.seed)
    result = train_fold(config, 0, folds, prepared, tmp_path / "fold_0")

    overlays = tmp_path / "overlays"
    report = evaluate_checkpoint(result.best_checkpoint, config, prepared, overlay_dir=overlays)
    held_out = {prepared.ids[i] for i in folds.held_out(0)}
    assert {record.id for record in report.per_image} == held_out
    assert len(list(overlays.glob("*.png"))) == len(held_out)


def test_evaluation_uses_the_training_split(
    tiny_config: ExperimentConfig, prepared: PreparedDataset, tmp_path: Path
) -> None:
    config = _with_train(tiny_config, epochs=1, folds=2)
    folds = make_folds(prepared, 2, config.seed)
    result = train_fold(config, 1, folds, prepared, tmp_path / "fold_1")

    report = evaluate_checkpoint(
        result.best_checkpoint, _with_train(config, folds=4), prepared
    )
    scored = {record.id for record in report.per_image}
    assert scored == {prepared.ids[i] for i in folds.held_out(1)}
    assert not scored & set(result.history.train_ids)
    assert report.metadata["folds"] == 2


def test_evaluation_rejects_a_different_split(
    tiny_config: ExperimentConfig, prepared: PreparedDataset, tmp_path: Path
) -> None:
    config = _with_train(tiny_config, epochs=1, folds=2)
    folds = make_folds(prepared, 2, config.seed)
    checkpoint = train_fold(config, 0, folds, prepared, tmp_path / "fold_0").best_checkpoint

    with pytest.raises(ConfigMismatchError, match="2-fold"):
        evaluate_checkpoint(checkpoint, config, prepared, folds=4)
    smaller = PreparedDataset(prepared.samples[:-2], prepared.use_superpixel)
    with pytest.raises(ConfigMismatchError, match="samples"):
        evaluate_checkpoint(checkpoint, config, smaller)


def test_horizontal_flip_moves_planes_together(generator: torch.Generator) -> None:
    image = torch.arange(16.0).reshape(1, 1, 4, 4).repeat(8, 2, 1, 1)
    batch = {"id": [str(i) for i in range(8)], "image": image, "mask": image[:, :1] > 7}
    batch["edge"] = batch["mask"].clone()
    flipped = _flip_batch(batch, generator)
    for i in range(8):
        same = torch.equal(flipped["image"][i], image[i])
        assert same or torch.equal(flipped["image"][i], image[i].flip(-1))
        assert torch.equal(flipped["mask"][i, 0], flipped["image"][i, 0] > 7)


@pytest.mark.parametrize(
    ("name", "expected"),
    [("adagrad", torch.optim.Adagrad), ("sgd", torch.optim.SGD), ("adam", torch.optim.Adam)],
)
def test_optimizer_factory(tiny_config: ExperimentConfig, name: str, expected: type) -> None:
    model = build_model(tiny_config.model)
    optimizer = build_optimizer(model, TrainConfig(optimizer=name, learning_rate=1e-3))
    assert isinstance(optimizer, expected)
    assert optimizer.param_groups[0]["lr"] == 1e-3


def test_resolve_device() -> None:
    assert resolve_device("cpu") == torch.device("cpu")
    assert resolve_device("auto").type in {"cpu", "cuda"}


@pytest.mark.slow
def test_training_loss_decreases(
    tiny_config: ExperimentConfig, prepared: PreparedDataset, tmp_path: Path
) -> None:
    config = _with_train(tiny_config, epochs=20)
    folds = make_folds(prepared, 2, config.seed)
    history = train_fold(config, 0, folds, prepared, tmp_path / "fold_0").history
    assert history.records[-1].total < history.records[0].total


@pytest.mark.slow
def test_synthetic_benchmark_reaches_target_dsc(tmp_path: Path) -> None:
    config = ExperimentConfig(
        seed=0,
        out=tmp_path / "runs",
        device="auto",
        data=DataConfig(prepared_dir=tmp_path / "prepared", synthetic_count=200),
        model=ModelConfig(image_size=128, base_width=16),
        train=TrainConfig(optimizer="adam", learning_rate=1e-3, epochs=30, folds=2, batch_size=8),
    )
    prepare_dataset(config)
    report = cross_validate(config, load_prepared(config), tmp_path / "cv")
    assert report.summary["dsc"].mean >= 0.85
