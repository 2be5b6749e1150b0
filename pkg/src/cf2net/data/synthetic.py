"""Synthetic ultrasound-like lesion images for desk-scale experiments.

Each sample is a dark, rotated ellipse on a brighter textured background. The
lesion boundary is blurred and the whole frame carries multiplicative
speckle, mimicking the low contrast and fuzzy edges of breast ultrasound.
"""

import logging
from pathlib import Path

import numpy as np
from PIL import Image
from skimage.draw import ellipse
from skimage.filters import gaussian

from cf2net.data.models import DatasetEntry, DatasetIndex
from cf2net.data.pipeline import SYNTHETIC_PREFIX, load_dataset, read_pair
from cf2net.exceptions import DatasetError

logger = logging.getLogger(__name__)

SYNTHETIC_ID_PREFIX = "syn_"

# Full ellipse axes as a fraction of the frame side
AXIS_RANGE = (0.08, 0.40)
# Shape parameter of the gamma speckle (mean 1)
SPECKLE_LOOKS = 6.0


def synthetic_pair(seed: int, index: int, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Generate sample ``index`` of the synthetic set; deterministic per (seed, index).

    Returns:
        (image in [0, 1], binary mask of the un-blurred ellipse)
    """
    rng = np.random.default_rng([seed, index])

    semi_axes = rng.uniform(*AXIS_RANGE, size=2) * size / 2
    rotation = rng.uniform(0.0, np.pi)
    margin = semi_axes.max() + 2
    center = rng.uniform(margin, size - margin, size=2)

    mask = np.zeros((size, size), dtype=bool)
    rows, cols = ellipse(
        center[0], center[1], semi_axes[0], semi_axes[1], shape=mask.shape, rotation=rotation
    )
    mask[rows, cols] = True

    background = rng.uniform(0.55, 0.8)
    lesion = rng.uniform(0.1, 0.3)
    texture = gaussian(rng.normal(size=mask.shape), sigma=size / 16)
    texture *= 0.1 / max(float(np.abs(texture).max()), 1e-12)

    base = np.where(mask, lesion, background) + texture
    blurred = gaussian(base, sigma=rng.uniform(1.0, 2.5))
    speckle = rng.gamma(SPECKLE_LOOKS, 1.0 / SPECKLE_LOOKS, size=mask.shape)
    image = np.clip(blurred * speckle, 0.0, 1.0)
    return image, mask


def generate_synthetic(count: int, size: int, seed: int) -> DatasetIndex:
    """Build an index of ``count`` synthetic samples of side ``size``.

    Raises:
        DatasetError: If count < 1.
    """
    if count < 1:
        raise DatasetError(f"Synthetic sample count must be at least 1 (got {count})")
    entries = [
        DatasetEntry(
            id=f"{SYNTHETIC_ID_PREFIX}{i:04d}",
            image=f"{SYNTHETIC_PREFIX}{i}",
            mask=f"{SYNTHETIC_PREFIX}{i}",
        )
        for i in range(count)
    ]
    return DatasetIndex(
        entries=entries,
        source_tag="synthetic",
        synthetic_seed=seed,
        synthetic_size=size,
    )


def materialize_synthetic(index: DatasetIndex, root: Path) -> DatasetIndex:
    """Write a synthetic index to the standard images/ + masks/ layout.

    Returns:
        The on-disk index of the written files (source_tag stays "synthetic").
    """
    image_dir, mask_dir = root / "images", root / "masks"
    image_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)

    for entry in index.entries:
        image, mask = read_pair(index, entry)
        Image.fromarray(np.round(image * 255).astype(np.uint8)).save(image_dir / f"{entry.id}.png")
        Image.fromarray(mask.astype(np.uint8) * 255).save(mask_dir / f"{entry.id}.png")

    logger.info("Materialized %d synthetic samples under %s", len(index), root)
    on_disk = load_dataset(root)
    return on_disk.model_copy(update={"source_tag": "synthetic"})
