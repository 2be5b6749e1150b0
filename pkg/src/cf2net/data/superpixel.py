"""SLIC super-pixels and the region-mean input channel."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.measure import label
from skimage.segmentation import slic

from cf2net.config import SuperpixelConfig
from cf2net.exceptions import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)

# Intensities in [0, 1] are scaled to the 8-bit range for the color distance
INTENSITY_SCALE = 255.0


@dataclass(frozen=True)
class LabelMap:
    """Dense region labels, contiguous in 0..region_count-1."""

    labels: np.ndarray
    region_count: int


def slic_segment(
    image: np.ndarray,
    k: int = 2000,
    compactness: float = 10.0,
    iterations: int = 10,
    min_size: int | None = None,
) -> LabelMap:
    """Segment a grayscale image into about ``k`` compact regions.

    Seeds sit on a regular grid with step s = sqrt(N / k); each round assigns
    pixels within a 2s window to the center minimizing
    D = sqrt(d_c^2 + (d_s / s)^2 * m^2), with d_c measured on the 8-bit
    intensity scale. Fragments are merged afterwards by ``enforce_connectivity``.

    Args:
        image: 2-D intensities in [0, 1].
        k: Target number of regions.
        compactness: Spatial weight m.
        iterations: Number of assignment/update rounds.
        min_size: Fragment size below which regions are merged;
            defaults to (N / k) / 4.

    Raises:
        ConfigurationError: If k is outside [1, N] or compactness <= 0.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"SLIC expects a 2-D image (got shape {image.shape})")
    pixel_count = image.size
    if not 1 <= k <= pixel_count:
        raise ConfigurationError(f"k must be in [1, {pixel_count}] (got {k})")
    if compactness <= 0:
        raise ConfigurationError(f"compactness must be positive (got {compactness})")
    if min_size is None:
        min_size = max(1, round(pixel_count / k / 4))

    if k == 1:
        return LabelMap(labels=np.zeros(image.shape, dtype=np.int64), region_count=1)

    labels = slic(
        image * INTENSITY_SCALE,
        n_segments=k,
        compactness=compactness,
        max_num_iter=iterations,
        sigma=0,
        channel_axis=None,
        start_label=0,
        enforce_connectivity=False,
    ).astype(np.int64)

    raw = LabelMap(labels=labels, region_count=int(labels.max()) + 1)
    segmented = enforce_connectivity(raw, min_size)
    logger.debug("SLIC produced %d regions for k=%d", segmented.region_count, k)
    return segmented


def enforce_connectivity(labels: LabelMap, min_size: int) -> LabelMap:
    """Split regions into 4-connected components and merge small fragments.

    Components smaller than ``min_size`` are merged, smallest first, into the
    largest adjacent component. The result is relabeled contiguously.
    """
    components = label(labels.labels + 1, background=0, connectivity=1)
    count = int(components.max())
    sizes = np.bincount(components.ravel(), minlength=count + 1).astype(np.int64)

    neighbors: list[set[int]] = [set() for _ in range(count + 1)]
    for a, b in _adjacent_pairs(components):
        neighbors[a].add(b)
        neighbors[b].add(a)

    parent = np.arange(count + 1)

    def find(node: int) -> int:
        while parent[node] != node:
            parent[node] = parent[parent[node]]
            node = int(parent[node])
        return node

    for component in np.argsort(sizes[1:], kind="stable") + 1:
        root = find(int(component))
        if sizes[root] >= min_size:
            continue
        candidates = {find(n) for n in neighbors[root]} - {root}
        if not candidates:
            continue
        target = max(candidates, key=lambda r: (sizes[r], -r))
        parent[root] = target
        sizes[target] += sizes[root]
        neighbors[target] |= neighbors[root]
        neighbors[root] = set()

    roots = np.array([find(node) for node in range(count + 1)])
    _, relabeled = np.unique(roots[components], return_inverse=True)
    relabeled = relabeled.reshape(components.shape).astype(np.int64)
    return LabelMap(labels=relabeled, region_count=int(relabeled.max()) + 1)


def _adjacent_pairs(components: np.ndarray) -> np.ndarray:
    horizontal = np.stack([components[:, :-1].ravel(), components[:, 1:].ravel()], axis=1)
    vertical = np.stack([components[:-1, :].ravel(), components[1:, :].ravel()], axis=1)
    pairs = np.concatenate([horizontal, vertical])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    if pairs.size == 0:
        return pairs
    return np.unique(np.sort(pairs, axis=1), axis=0)


def render_superpixel_image(image: np.ndarray, labels: LabelMap) -> np.ndarray:
    """Replace every pixel by the mean intensity of its region.

    Constant regions keep their value exactly, so rendering is idempotent.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape != labels.labels.shape:
        raise ShapeError(f"Image {image.shape} and labels {labels.labels.shape} differ")

    index = np.arange(labels.region_count)
    flat = labels.labels.ravel()
    counts = np.bincount(flat, minlength=labels.region_count)
    sums = np.bincount(flat, weights=image.ravel(), minlength=labels.region_count)
    lows = np.asarray(ndimage.minimum(image, labels.labels, index))
    highs = np.asarray(ndimage.maximum(image, labels.labels, index))

    means = np.clip(sums / np.maximum(counts, 1), lows, highs)
    means = np.where(lows == highs, lows, means)
    return means[labels.labels]


def superpixel_channel(image: np.ndarray, params: SuperpixelConfig) -> np.ndarray:
    """Super-pixel input channel of a normalized image."""
    segmented = slic_segment(
        image,
        k=params.k,
        compactness=params.compactness,
        iterations=params.iterations,
        min_size=params.min_size,
    )
    return render_superpixel_image(image, segmented)
