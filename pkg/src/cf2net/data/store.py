"""Prepared-dataset layout on disk and the torch Dataset reading it.

Layout under the prepared directory::

    images/<id>.png        resized, min-max normalized image
    masks/<id>.png         binary lesion mask (0 / 255)
    edges/<id>.png         binary edge band (0 / 255)
    superpixels/<id>.png   region-mean super-pixel channel
    manifest.json          PreparedManifest with the parameter hash
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset

from cf2net.config import ExperimentConfig
from cf2net.data.models import DatasetEntry, DatasetIndex, PreparedManifest, Sample
from cf2net.data.pipeline import load_dataset, preprocess_sample, read_gray, read_pair
from cf2net.data.superpixel import superpixel_channel
from cf2net.data.synthetic import (
    SYNTHETIC_ID_PREFIX,
    generate_synthetic,
    materialize_synthetic,
)
from cf2net.exceptions import ConfigurationError, PreparedDataMissingError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
SYNTHETIC_DIR_NAME = "synthetic"
PLANES = ("images", "masks", "edges", "superpixels")


def to_uint8(plane: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] or boolean plane to 8 bits."""
    if plane.dtype == bool:
        return plane.astype(np.uint8) * 255
    return np.round(np.clip(plane, 0.0, 1.0) * 255).astype(np.uint8)


def _parameter_hash(config: ExperimentConfig, source: dict[str, Any]) -> str:
    payload = {
        "source": source,
        "image_size": config.model.image_size,
        "band_radius": config.data.band_radius,
        "superpixel": config.superpixel.model_dump(),
    }
    encoded = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(encoded).hexdigest()[:16]


def read_manifest(prepared_dir: Path) -> PreparedManifest | None:
    """Load the manifest of a prepared directory, if there is one."""
    path = prepared_dir / MANIFEST_NAME
    if not path.is_file():
        return None
    return PreparedManifest.model_validate_json(path.read_text(encoding="utf-8"))


# =============================================================================
# Preparation
# =============================================================================


def synthetic_root(config: ExperimentConfig) -> Path:
    """Where generated samples are written: next to the prepared directory."""
    return config.data.prepared_dir.parent / SYNTHETIC_DIR_NAME


def _source_descriptor(config: ExperimentConfig) -> dict[str, Any] | None:
    data = config.data
    if data.synthetic_count:
        return {"kind": "synthetic", "count": data.synthetic_count, "seed": config.seed}
    if data.root is not None:
        return {"kind": "real", "root": str(data.root.resolve())}
    return None


def _resolve_source(config: ExperimentConfig) -> tuple[DatasetIndex, dict[str, Any], Path | None]:
    data = config.data
    descriptor = _source_descriptor(config)
    if descriptor is None:
        raise ConfigurationError("No dataset source: set data.root (--data-root) or --synthetic")

    if descriptor["kind"] == "synthetic":
        if data.root is not None:
            raise ConfigurationError(
                "data.root and --synthetic are exclusive: synthetic samples are written "
                f"to {synthetic_root(config)}, never into a dataset root"
            )
        target = synthetic_root(config)
        foreign = sorted(
            path.name
            for path in (target / "images").glob("*")
            if not path.stem.startswith(SYNTHETIC_ID_PREFIX)
        )
        if foreign:
            raise ConfigurationError(
                f"{target} holds non-synthetic images ({', '.join(foreign[:3])}); "
                "choose another --prepared-dir"
            )
        index = generate_synthetic(data.synthetic_count, config.model.image_size, config.seed)
        return index, descriptor, target

    if data.root.resolve() == data.prepared_dir.resolve():
        raise ConfigurationError("The prepared directory must differ from the dataset root")
    index = load_dataset(data.root)
    return index, descriptor | {"ids": index.ids}, None


def prepare_sample(
    index: DatasetIndex, entry: DatasetEntry, config: ExperimentConfig
) -> Sample:
    image, mask = read_pair(index, entry)
    sample = preprocess_sample(
        image,
        mask,
        target_size=config.model.image_size,
        band_radius=config.data.band_radius,
        sample_id=entry.id,
    )
    channel = superpixel_channel(sample.image.astype(np.float64), config.superpixel)
    return Sample(
        id=sample.id,
        image=sample.image,
        mask=sample.mask,
        edge=sample.edge,
        superpixel=channel.astype(np.float32),
    )


def _write_sample(prepared_dir: Path, sample: Sample) -> None:
    planes = {
        "images": sample.image,
        "masks": sample.mask,
        "edges": sample.edge,
        "superpixels": sample.superpixel,
    }
    for name, plane in planes.items():
        Image.fromarray(to_uint8(plane)).save(prepared_dir / name / f"{sample.id}.png")


def prepare_dataset(config: ExperimentConfig) -> PreparedManifest:
    """Materialize resized images, masks, edge bands and super-pixel channels.

    A rerun with unchanged parameters is a no-op. The source dataset
    directory is only read.

    Returns:
        The manifest of the prepared directory.
    """
    prepared_dir = config.data.prepared_dir
    index, source, synthetic_root = _resolve_source(config)
    parameter_hash = _parameter_hash(config, source)

    existing = read_manifest(prepared_dir)
    if existing is not None and existing.parameter_hash == parameter_hash:
        logger.info("Prepared dataset at %s is up to date (%s)", prepared_dir, parameter_hash)
        return existing

    if synthetic_root is not None:
        index = materialize_synthetic(index, synthetic_root)

    for name in PLANES:
        (prepared_dir / name).mkdir(parents=True, exist_ok=True)

    workers = config.data.num_workers
    if workers > 0:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(prepare_sample, index, entry, config) for entry in index.entries]
            samples = (future.result() for future in futures)
            for sample in samples:
                _write_sample(prepared_dir, sample)
    else:
        for entry in index.entries:
            _write_sample(prepared_dir, prepare_sample(index, entry, config))
            logger.debug("Prepared %s", entry.id)

    manifest = PreparedManifest(
        parameter_hash=parameter_hash,
        sample_count=len(index),
        source_tag=index.source_tag,
        image_size=config.model.image_size,
        band_radius=config.data.band_radius,
        superpixel_k=config.superpixel.k,
        superpixel_compactness=config.superpixel.compactness,
        superpixel_iterations=config.superpixel.iterations,
        superpixel_min_size=config.superpixel.min_size,
        source=_source_descriptor(config) or {},
        ids=index.ids,
        orphans=index.orphans,
        rejected=index.rejected,
    )
    (prepared_dir / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info("Prepared %d samples under %s", manifest.sample_count, prepared_dir)
    return manifest


# =============================================================================
# Reading
# =============================================================================


class PreparedDataset(Dataset):
    """In-memory view of a prepared directory as network-ready tensors."""

    def __init__(self, samples: list[Sample], use_superpixel: bool) -> None:
        self.samples = samples
        self.use_superpixel = use_superpixel

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def ids(self) -> list[str]:
        """Sample ids in dataset order."""
        return [sample.id for sample in self.samples]

    def __getitem__(self, index: int) -> dict[str, Any]:
        sample = self.samples[index]
        planes = [sample.image]
        if self.use_superpixel:
            if sample.superpixel is None:
                raise ConfigurationError(f"Sample {sample.id} has no super-pixel channel")
            planes.append(sample.superpixel)
        return {
            "id": sample.id,
            "image": torch.from_numpy(np.stack(planes).astype(np.float32)),
            "mask": torch.from_numpy(sample.mask[None].astype(np.float32)),
            "edge": torch.from_numpy(sample.edge[None].astype(np.float32)),
        }


def load_prepared(config: ExperimentConfig) -> PreparedDataset:
    """Load the prepared dataset named by the configuration.

    Raises:
        PreparedDataMissingError: If the directory has not been prepared.
        ConfigurationError: If it was prepared with different parameters.
    """
    prepared_dir = config.data.prepared_dir
    manifest = read_manifest(prepared_dir)
    if manifest is None:
        raise PreparedDataMissingError(str(prepared_dir))

    expected = {
        "image_size": config.model.image_size,
        "band_radius": config.data.band_radius,
        "superpixel_k": config.superpixel.k,
        "superpixel_compactness": config.superpixel.compactness,
        "superpixel_iterations": config.superpixel.iterations,
        "superpixel_min_size": config.superpixel.min_size,
    }
    stale = [name for name, value in expected.items() if getattr(manifest, name) != value]
    descriptor = _source_descriptor(config)
    if descriptor is not None and manifest.source != descriptor:
        stale.append("data source")
    if stale:
        raise ConfigurationError(
            f"Prepared dataset at {prepared_dir} was built with different {', '.join(stale)}; "
            "re-run `cf2net prepare` with the current configuration"
        )

    samples = [
        Sample(
            id=sample_id,
            image=read_gray(prepared_dir / "images" / f"{sample_id}.png").astype(np.float32),
            mask=read_gray(prepared_dir / "masks" / f"{sample_id}.png") > 0.5,
            edge=read_gray(prepared_dir / "edges" / f"{sample_id}.png") > 0.5,
            superpixel=read_gray(prepared_dir / "superpixels" / f"{sample_id}.png").astype(
                np.float32
            ),
        )
        for sample_id in manifest.ids
    ]
    logger.info("Loaded %d prepared samples from %s", len(samples), prepared_dir)
    return PreparedDataset(samples, use_superpixel=config.model.use_superpixel)
