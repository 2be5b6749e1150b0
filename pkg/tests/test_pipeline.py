"""Tests for dataset loading, preprocessing, edge targets and folds."""

import logging
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from cf2net.data.pipeline import (
    load_dataset,
    make_edge_target,
    make_folds,
    preprocess_sample,
    read_pair,
)
from cf2net.exceptions import DatasetError, ShapeError
from cf2net.training.selftest import brute_force_edge_band, edge_oracle


def _write(path: Path, array: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array.astype(np.uint8)).save(path)


@pytest.fixture
def dataset_root(tmp_path: Path) -> Path:
    root = tmp_path / "bus"
    rng = np.random.default_rng(0)
    for stem in ("case_b", "case_a"):
        _write(root / "images" / f"{stem}.png", rng.integers(0, 256, (40, 48)))
        mask = np.zeros((40, 48))
        mask[10:20, 12:30] = 255
        _write(root / "masks" / f"{stem}.png", mask)
    _write(root / "images" / "lonely.png", np.zeros((40, 48)))
    _write(root / "images" / "mismatch.png", np.zeros((40, 48)))
    _write(root / "masks" / "mismatch.png", np.zeros((20, 20)))
    return root


class TestLoadDataset:
    def test_pairs_orphans_and_rejections(self, dataset_root: Path) -> None:
        index = load_dataset(dataset_root)
        assert index.ids == ["case_a", "case_b"]
        assert index.source_tag == "real"
        assert index.orphans == ["images/lonely.png"]
        assert [r.id for r in index.rejected] == ["mismatch"]
        assert "differs" in index.rejected[0].reason

    def test_orphans_are_logged(
        self, dataset_root: Path, caplog: pytest.LogCaptureFixture
    ) -> None:
        with caplog.at_level(logging.WARNING):
            load_dataset(dataset_root)
        assert "lonely.png" in caplog.text

    def test_empty_directory(self, tmp_path: Path) -> None:
        (tmp_path / "images").mkdir()
        (tmp_path / "masks").mkdir()
        with pytest.raises(DatasetError, match="no samples found"):
            load_dataset(tmp_path)

    def test_missing_directory(self, tmp_path: Path) -> None:
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "nowhere")

    def test_read_pair_binarizes_mask(self, dataset_root: Path) -> None:
        index = load_dataset(dataset_root)
        image, mask = read_pair(index, index.entries[0])
        assert image.shape == mask.shape == (40, 48)
        assert mask.dtype == bool
        assert int(mask.sum()) == 10 * 18


class TestPreprocess:
    def test_resize_and_normalize(self) -> None:
        rng = np.random.default_rng(1)
        image = rng.uniform(0.2, 0.6, (50, 70))
        mask = np.zeros((50, 70), dtype=bool)
        mask[10:30, 20:50] = True

        sample = preprocess_sample(image, mask, target_size=64, sample_id="x")
        assert sample.size == 64
        assert sample.image.shape == sample.mask.shape == sample.edge.shape == (64, 64)
        assert sample.image.min() == pytest.approx(0.0)
        assert sample.image.max() == pytest.approx(1.0)
        assert sample.mask.dtype == bool
        assert sample.mask.any()

    def test_constant_image_becomes_zeros(self, caplog: pytest.LogCaptureFixture) -> None:
        with caplog.at_level(logging.WARNING):
            sample = preprocess_sample(
                np.full((32, 32), 0.4), np.zeros((32, 32)), 32, sample_id="flat"
            )
        assert not sample.image.any()
        assert "flat" in caplog.text

    def test_target_size_must_be_multiple_of_16(self) -> None:
        with pytest.raises(ShapeError):
            preprocess_sample(np.zeros((32, 32)), np.zeros((32, 32)), 50)

    def test_shape_mismatch(self) -> None:
        with pytest.raises(ShapeError):
            preprocess_sample(np.zeros((32, 32)), np.zeros((16, 32)), 32)


class TestEdgeTarget:
    def test_empty_mask_gives_empty_band(self) -> None:
        assert not make_edge_target(np.zeros((16, 16), dtype=bool)).any()

    def test_single_pixel_band_is_a_disc(self) -> None:
        mask = np.zeros((11, 11), dtype=bool)
        mask[5, 5] = True
        band = make_edge_target(mask, band_radius=1)
        assert int(band.sum()) == 5
        assert band[4, 5] and band[5, 4] and band[6, 5] and band[5, 6]
        assert not band[4, 4]

    def test_band_straddles_the_contour(self) -> None:
        mask = np.zeros((40, 40), dtype=bool)
        mask[10:30, 10:30] = True
        band = make_edge_target(mask, band_radius=3)
        assert band[20, 7]  # outside, 3 px from the contour
        assert not band[20, 6]
        assert band[20, 12]  # inside
        assert not band[20, 20]

    def test_frame_border_counts_as_background(self) -> None:
        band = make_edge_target(np.ones((20, 20), dtype=bool), band_radius=2)
        assert band[0, 10] and band[2, 10]
        assert not band[10, 10]

    def test_matches_brute_force(self) -> None:
        rng = np.random.default_rng(3)
        mask = rng.random((24, 24)) < 0.3
        assert np.array_equal(make_edge_target(mask, 4), brute_force_edge_band(mask, 4))
        assert edge_oracle(masks=20).passed


class TestFolds:
    def test_partition(self) -> None:
        folds = make_folds(range(10), k=4, seed=0)
        assert sorted(folds.fold_sizes) == [2, 2, 3, 3]
        for fold in range(4):
            held_out, training = set(folds.held_out(fold)), set(folds.training(fold))
            assert not held_out & training
            assert held_out | training == set(range(10))

    def test_deterministic_per_seed(self) -> None:
        assert make_folds(range(20), 4, seed=1) == make_folds(range(20), 4, seed=1)
        assert make_folds(range(20), 4, seed=1) != make_folds(range(20), 4, seed=2)

    @pytest.mark.parametrize("k", [1, 11])
    def test_invalid_fold_count(self, k: int) -> None:
        with pytest.raises(DatasetError):
            make_folds(range(10), k=k)
