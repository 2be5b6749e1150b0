"""Data models for datasets, folds and prepared samples."""

from dataclasses import dataclass
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, Field, computed_field

# =============================================================================
# Dataset Index Models
# =============================================================================


class DatasetEntry(BaseModel):
    """One image/mask pair, on disk or synthetic."""

    id: str
    # File path for real data, "synthetic:<index>" for generated data
    image: str
    mask: str
    label: str | None = None


class RejectedEntry(BaseModel):
    """A pair that was found but could not be used."""

    id: str
    reason: str


class DatasetIndex(BaseModel):
    """Index of usable samples plus diagnostics from loading."""

    entries: list[DatasetEntry]
    source_tag: Literal["real", "synthetic"]
    orphans: list[str] = Field(default_factory=list)
    rejected: list[RejectedEntry] = Field(default_factory=list)
    # Regeneration parameters for synthetic indices
    synthetic_seed: int | None = None
    synthetic_size: int | None = None

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        """Entry ids in index order."""
        return [entry.id for entry in self.entries]


class FoldSplit(BaseModel):
    """Assignment of every index entry to one cross-validation fold."""

    k: int
    seed: int
    assignments: list[int]

    @computed_field
    @property
    def fold_sizes(self) -> list[int]:
        """Number of entries per fold."""
        return [self.assignments.count(fold) for fold in range(self.k)]

    def held_out(self, fold: int) -> list[int]:
        """Entry positions validated on in ``fold``."""
        return [i for i, assigned in enumerate(self.assignments) if assigned == fold]

    def training(self, fold: int) -> list[int]:
        """Entry positions trained on when ``fold`` is held out."""
        return [i for i, assigned in enumerate(self.assignments) if assigned != fold]


# =============================================================================
# Sample
# =============================================================================


@dataclass(frozen=True)
class Sample:
    """One preprocessed training example, all planes S x S."""

    id: str
    image: np.ndarray
    mask: np.ndarray
    edge: np.ndarray
    superpixel: np.ndarray | None = None

    @property
    def size(self) -> int:
        """Canonical side length S."""
        return int(self.image.shape[0])


# =============================================================================
# Prepared Dataset Manifest
# =============================================================================


class PreparedManifest(BaseModel):
    """Sidecar manifest of a prepared dataset directory."""

    parameter_hash: str
    sample_count: int
    source_tag: Literal["real", "synthetic"]
    image_size: int
    band_radius: int
    superpixel_k: int
    superpixel_compactness: float
    superpixel_iterations: int
    superpixel_min_size: int | None = None
    # Where the samples came from, without the per-sample id list
    source: dict[str, Any] = Field(default_factory=dict)
    ids: list[str]
    orphans: list[str] = Field(default_factory=list)
    rejected: list[RejectedEntry] = Field(default_factory=list)
