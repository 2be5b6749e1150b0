"""Dataset pipeline, super-pixel channel and prepared-dataset storage."""

from cf2net.data.models import (
    DatasetEntry,
    DatasetIndex,
    FoldSplit,
    PreparedManifest,
    RejectedEntry,
    Sample,
)
from cf2net.data.pipeline import (
    load_dataset,
    make_edge_target,
    make_folds,
    preprocess_sample,
    read_pair,
)
from cf2net.data.superpixel import (
    LabelMap,
    enforce_connectivity,
    render_superpixel_image,
    slic_segment,
    superpixel_channel,
)
from cf2net.data.synthetic import generate_synthetic, materialize_synthetic, synthetic_pair

__all__ = [
    "DatasetEntry",
    "DatasetIndex",
    "FoldSplit",
    "LabelMap",
    "PreparedManifest",
    "RejectedEntry",
    "Sample",
    "enforce_connectivity",
    "generate_synthetic",
    "load_dataset",
    "make_edge_target",
    "make_folds",
    "materialize_synthetic",
    "preprocess_sample",
    "read_pair",
    "render_superpixel_image",
    "slic_segment",
    "superpixel_channel",
    "synthetic_pair",
]
