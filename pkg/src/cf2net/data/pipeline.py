"""Dataset loading, preprocessing, edge-band targets and fold assignment."""

import logging
from collections.abc import Sized
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage
from skimage.transform import resize
from sklearn.model_selection import KFold

from cf2net.data.models import DatasetEntry, DatasetIndex, FoldSplit, RejectedEntry, Sample
from cf2net.exceptions import DatasetError, ShapeError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")
SYNTHETIC_PREFIX = "synthetic:"

# 4-connectivity; out-of-frame pixels count as background
_CROSS = ndimage.generate_binary_structure(2, 1)


# =============================================================================
# Loading
# =============================================================================


def _list_stems(directory: Path) -> dict[str, Path]:
    return {
        path.stem: path
        for path in sorted(directory.iterdir())
        if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES
    }


def read_gray(path: Path | str) -> np.ndarray:
    """Read an 8-bit image as a 2-D float array in [0, 1]."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def load_dataset(root: Path) -> DatasetIndex:
    """Index the image/mask pairs under ``root``.

    Layout: ``<root>/images/<stem>.png`` and ``<root>/masks/<stem>.png``.
    Files without a counterpart are reported as orphans; unreadable pairs or
    pairs whose image and mask sizes differ are rejected with a reason.

    Args:
        root: Dataset root directory.

    Returns:
        DatasetIndex with one entry per usable pair.

    Raises:
        DatasetError: If the directory is missing or holds no usable samples.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"Dataset directory not found: {root}")
    image_dir, mask_dir = root / "images", root / "masks"
    for directory in (image_dir, mask_dir):
        if not directory.is_dir():
            raise DatasetError(f"Missing {directory.name}/ directory under {root}")

    images = _list_stems(image_dir)
    masks = _list_stems(mask_dir)

    orphans = [f"images/{images[stem].name}" for stem in images if stem not in masks]
    orphans += [f"masks/{masks[stem].name}" for stem in masks if stem not in images]
    for orphan in orphans:
        logger.warning("Unmatched file skipped: %s", orphan)

    entries: list[DatasetEntry] = []
    rejected: list[RejectedEntry] = []
    for stem in sorted(images.keys() & masks.keys()):
        reason = _validate_pair(images[stem], masks[stem])
        if reason:
            logger.warning("Rejected sample %s: %s", stem, reason)
            rejected.append(RejectedEntry(id=stem, reason=reason))
            continue
        entries.append(DatasetEntry(id=stem, image=str(images[stem]), mask=str(masks[stem])))

    if not entries:
        raise DatasetError(f"no samples found in {root}")

    logger.info(
        "Indexed %d samples from %s (%d orphans, %d rejected)",
        len(entries),
        root,
        len(orphans),
        len(rejected),
    )
    return DatasetIndex(entries=entries, source_tag="real", orphans=orphans, rejected=rejected)


def _validate_pair(image_path: Path, mask_path: Path) -> str | None:
    try:
        with Image.open(image_path) as img, Image.open(mask_path) as mask:
            if img.size != mask.size:
                return f"image size {img.size} differs from mask size {mask.size}"
    except (OSError, UnidentifiedImageError) as e:
        return f"unreadable file ({e})"
    return None


def read_pair(index: DatasetIndex, entry: DatasetEntry) -> tuple[np.ndarray, np.ndarray]:
    """Resolve an entry to (image in [0, 1], binary mask)."""
    if entry.image.startswith(SYNTHETIC_PREFIX):
        from cf2net.data.synthetic import synthetic_pair

        if index.synthetic_seed is None or index.synthetic_size is None:
            raise DatasetError("Synthetic index is missing its seed or size")
        position = int(entry.image.removeprefix(SYNTHETIC_PREFIX))
        return synthetic_pair(index.synthetic_seed, position, index.synthetic_size)

    image = read_gray(entry.image)
    # Masks are binarized at 0.5 (foreground > 127 on 8-bit files)
    mask = read_gray(entry.mask) > 0.5
    return image, mask


# =============================================================================
# Preprocessing
# =============================================================================


def preprocess_sample(
    image: np.ndarray,
    mask: np.ndarray,
    target_size: int,
    band_radius: int = 5,
    sample_id: str = "",
) -> Sample:
    """Resize, normalize and attach the edge band to a raw image/mask pair.

    The super-pixel channel is added separately (see ``data.store``).

    Raises:
        ShapeError: If the pair is not 2-D with equal shapes, or the target
            size is not a multiple of 16.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    if image.ndim != 2 or image.shape != mask.shape:
        raise ShapeError(f"Image {image.shape} and mask {mask.shape} must be equal 2-D shapes")
    if target_size < 16 or target_size % 16:
        raise ShapeError(f"Target size must be a positive multiple of 16 (got {target_size})")

    shape = (target_size, target_size)
    resized = resize(image, shape, order=1, mode="edge", anti_aliasing=False, preserve_range=True)
    low, high = float(resized.min()), float(resized.max())
    if high > low:
        normalized = np.clip((resized - low) / (high - low), 0.0, 1.0)
    else:
        logger.warning("Constant image %s normalized to zeros", sample_id or "<unnamed>")
        normalized = np.zeros(shape)

    resized_mask = resize(
        mask.astype(np.float64), shape, order=0, anti_aliasing=False, preserve_range=True
    )
    binary_mask = resized_mask > 0.5

    return Sample(
        id=sample_id,
        image=normalized.astype(np.float32),
        mask=binary_mask,
        edge=make_edge_target(binary_mask, band_radius),
    )


def make_edge_target(mask: np.ndarray, band_radius: int = 5) -> np.ndarray:
    """Band of pixels within ``band_radius`` (Euclidean) of the mask contour.

    The contour is the set of mask pixels with a 4-neighbor outside the mask,
    out-of-frame counting as outside. The band straddles the contour.
    """
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=_CROSS, border_value=0)
    contour = mask & ~interior
    if not contour.any():
        return np.zeros_like(mask)
    return ndimage.distance_transform_edt(~contour) <= band_radius


# =============================================================================
# Cross Validation
# =============================================================================


def make_folds(index: Sized, k: int = 4, seed: int = 0) -> FoldSplit:
    """Shuffle the entries with ``seed`` and partition them into ``k`` folds.

    Raises:
        DatasetError: If k < 2 or k exceeds the number of entries.
    """
    count = len(index)
    if k < 2:
        raise DatasetError(f"Fold count must be at least 2 (got {k})")
    if k > count:
        raise DatasetError(f"Fold count {k} exceeds the number of entries ({count})")

    assignments = [0] * count
    splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
    for fold, (_, held_out) in enumerate(splitter.split(np.arange(count))):
        for position in held_out:
            assignments[int(position)] = fold
    return FoldSplit(k=k, seed=seed, assignments=assignments)
