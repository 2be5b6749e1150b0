"""Tests for the synthetic ultrasound-like data source."""

from pathlib import Path

import numpy as np
import pytest

from skimage.measure import label

from cf2net.config import ExperimentConfig
from cf2net.data.pipeline import read_pair
from cf2net.data.store import prepare_sample
from cf2net.data.synthetic import generate_synthetic, materialize_synthetic, synthetic_pair
from cf2net.exceptions import DatasetError


def test_pairs_are_deterministic_per_seed_and_index() -> None:
    image_a, mask_a = synthetic_pair(7, 3, 64)
    image_b, mask_b = synthetic_pair(7, 3, 64)
    assert np.array_equal(image_a, image_b)
    assert np.array_equal(mask_a, mask_b)
    assert not np.array_equal(synthetic_pair(7, 4, 64)[0], image_a)


@pytest.mark.parametrize("index", range(10))
def test_lesion_is_a_dark_interior_ellipse(index: int) -> None:
    image, mask = synthetic_pair(0, index, 128)
    assert image.shape == mask.shape == (128, 128)
    assert 0.0 <= image.min() and image.max() <= 1.0
    assert 0.004 <= mask.mean() <= 0.13
    assert not (mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any())
    assert image[mask].mean() < image[~mask].mean()


def test_generate_index() -> None:
    index = generate_synthetic(5, 64, seed=2)
    assert len(index) == 5
    assert index.ids == [f"syn_{i:04d}" for i in range(5)]
    assert index.source_tag == "synthetic"
    image, mask = read_pair(index, index.entries[2])
    expected_image, expected_mask = synthetic_pair(2, 2, 64)
    assert np.array_equal(image, expected_image)
    assert np.array_equal(mask, expected_mask)


def test_generate_rejects_empty_count() -> None:
    with pytest.raises(DatasetError):
        generate_synthetic(0, 64, seed=0)


def test_materialize_writes_standard_layout(tmp_path: Path) -> None:
    index = generate_synthetic(3, 32, seed=0)
    on_disk = materialize_synthetic(index, tmp_path / "synthetic")
    assert on_disk.source_tag == "synthetic"
    assert on_disk.ids == index.ids
    assert len(list((tmp_path / "synthetic" / "images").glob("*.png"))) == 3

    _, mask = read_pair(on_disk, on_disk.entries[0])
    assert np.array_equal(mask, synthetic_pair(0, 0, 32)[1])


def test_prepared_samples_hold_their_invariants(tiny_config: ExperimentConfig) -> None:
    index = generate_synthetic(100, 64, seed=5)
    for entry in index.entries:
        sample = prepare_sample(index, entry, tiny_config)
        assert sample.image.shape == sample.mask.shape == sample.edge.shape == (64, 64)
        assert sample.superpixel is not None and sample.superpixel.shape == (64, 64)
        assert 0.0 <= sample.image.min() and sample.image.max() <= 1.0
        assert 0.0 <= sample.superpixel.min() and sample.superpixel.max() <= 1.0
        assert sample.mask.dtype == bool and sample.edge.dtype == bool
        assert label(sample.mask, connectivity=1).max() == 1, entry.id
        assert sample.edge.any() and (sample.edge & sample.mask).any()


def test_each_lesion_is_one_component() -> None:
    for index in range(120):
        _, mask = synthetic_pair(1, index, 128)
        assert label(mask, connectivity=1).max() == 1, index
        assert 0.004 <= mask.mean() <= 0.45
