"""Weighted-balanced loss family.

All map-valued inputs are reduced per image over their last two dimensions
and then averaged over any leading (batch/channel) dimensions, so a batch
loss is the mean of per-image losses with per-image self-weights.

Balance weights follow the printed formula: the foreground term is weighted
by the lesion fraction w = N1 / (N1 + N0). ``invert_balance`` swaps the two
weights, which emphasizes the foreground instead.
"""

from dataclasses import dataclass

import numpy as np
import torch

from cf2net.config import LossWeights
from cf2net.exceptions import ShapeError
from cf2net.network.model import PredictionSet

_DIMS = (-2, -1)

# Edge weight used when the weighted-balanced scheme is switched off
UNBALANCED_EDGE_WEIGHT = 0.5


@dataclass(frozen=True)
class BalanceWeight:
    """Foreground fraction of one binary map, with its pixel counts."""

    w: float
    n1: int
    n0: int

    @property
    def total(self) -> int:
        return self.n1 + self.n0


@dataclass(frozen=True)
class LossTerms:
    """Total loss and the components it was assembled from."""

    total: torch.Tensor
    fusion: torch.Tensor | None
    aux: torch.Tensor
    edge: torch.Tensor | None

    def as_floats(self) -> dict[str, float | None]:
        return {
            "total": float(self.total.detach()),
            "fusion": None if self.fusion is None else float(self.fusion.detach()),
            "aux": float(self.aux.detach()),
            "edge": None if self.edge is None else float(self.edge.detach()),
        }


def balance_weight(y: torch.Tensor | np.ndarray, invert: bool = False) -> BalanceWeight:
    """Count foreground and background pixels of a binary map.

    Args:
        y: Binary map (any shape; every element is counted).
        invert: Return 1 - w instead of w.

    Returns:
        BalanceWeight with w = N1 / (N1 + N0).
    """
    values = y.detach().cpu().numpy() if isinstance(y, torch.Tensor) else np.asarray(y)
    n1 = int(np.count_nonzero(values))
    n0 = int(values.size) - n1
    w = n1 / (n1 + n0) if n1 + n0 else 0.0
    return BalanceWeight(w=1.0 - w if invert else w, n1=n1, n0=n0)


def _check_pair(p: torch.Tensor, y: torch.Tensor) -> None:
    if p.shape != y.shape:
        raise ShapeError(f"Prediction {tuple(p.shape)} and target {tuple(y.shape)} differ")
    if p.ndim < 2:
        raise ShapeError(f"Expected at least a 2-D map (got shape {tuple(p.shape)})")


def _as_weight(w: float | torch.Tensor | BalanceWeight, like: torch.Tensor) -> torch.Tensor:
    if isinstance(w, BalanceWeight):
        w = w.w
    return torch.as_tensor(w, dtype=like.dtype, device=like.device)


def per_image_balance(y: torch.Tensor, invert: bool = False) -> torch.Tensor:
    """Foreground fraction of every map in a batch (shape of the leading dims)."""
    w = y.to(torch.float64 if y.dtype == torch.float64 else torch.float32).mean(dim=_DIMS)
    return 1.0 - w if invert else w


def weighted_dice(
    p: torch.Tensor,
    y: torch.Tensor,
    w: float | torch.Tensor | BalanceWeight,
    epsilon: float = 1e-6,
    literal: bool = False,
) -> torch.Tensor:
    """Dice loss over foreground and background, mixed by the balance weight.

    Standard mode:
        1 - w (2 sum py + eps) / (sum(p + y) + eps)
          - (1 - w) (2 sum (1-p)(1-y) + eps) / (sum(2 - p - y) + eps)

    ``literal`` drops the two factors of 2, so p = y gives 0.5.
    """
    _check_pair(p, y)
    y = y.to(p.dtype)
    w = _as_weight(w, p)
    scale = 1.0 if literal else 2.0
    foreground = (scale * (p * y).sum(dim=_DIMS) + epsilon) / ((p + y).sum(dim=_DIMS) + epsilon)
    background = (scale * ((1 - p) * (1 - y)).sum(dim=_DIMS) + epsilon) / (
        (2 - p - y).sum(dim=_DIMS) + epsilon
    )
    return (1 - w * foreground - (1 - w) * background).mean()


def bce(p: torch.Tensor, y: torch.Tensor, epsilon: float = 1e-6) -> torch.Tensor:
    """Binary cross-entropy, -(1/N) sum [y log p + (1-y) log(1-p)], p clamped to [eps, 1-eps]."""
    _check_pair(p, y)
    y = y.to(p.dtype)
    p = p.clamp(epsilon, 1 - epsilon)
    per_image = -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean(dim=_DIMS)
    return per_image.mean()


def weighted_edge_bce(
    p: torch.Tensor,
    y: torch.Tensor,
    w: float | torch.Tensor | BalanceWeight,
    epsilon: float = 1e-6,
) -> torch.Tensor:
    """Edge cross-entropy weighted by the edge-band fraction, normalized by the pixel count."""
    _check_pair(p, y)
    y = y.to(p.dtype)
    w = _as_weight(w, p)
    p = p.clamp(epsilon, 1 - epsilon)
    count = p.shape[-1] * p.shape[-2]
    positive = (y * torch.log(p)).sum(dim=_DIMS)
    negative = ((1 - y) * torch.log(1 - p)).sum(dim=_DIMS)
    return (-(w * positive + (1 - w) * negative) / count).mean()


def region_loss(p: torch.Tensor, y: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """mu1 * weighted dice + mu2 * bce with per-image balance weights."""
    if weights.balanced:
        w: float | torch.Tensor = per_image_balance(y, weights.invert_balance).to(p.dtype)
    else:
        w = 1.0
    dice = weighted_dice(p, y, w, weights.epsilon, weights.paper_literal_dice)
    return weights.mu1 * dice + weights.mu2 * bce(p, y, weights.epsilon)


def edge_loss(p: torch.Tensor, y: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """Weighted edge cross-entropy with the per-image edge-band fraction."""
    if weights.balanced:
        w: float | torch.Tensor = per_image_balance(y, weights.invert_balance).to(p.dtype)
    else:
        w = UNBALANCED_EDGE_WEIGHT
    return weighted_edge_bce(p, y, w, weights.epsilon)


def total_loss(
    preds: PredictionSet,
    mask: torch.Tensor,
    edge: torch.Tensor,
    weights: LossWeights,
) -> LossTerms:
    """lambda1 L(fusion) + lambda2 L(aux) + lambda3 L(edge).

    Terms whose head is disabled (no FSP, no edge constraint) are left out
    of the sum rather than zeroed.
    """
    aux = region_loss(preds.aux, mask, weights)
    total = weights.lambda2 * aux

    fusion = None
    if preds.fusion is not None:
        fusion = region_loss(preds.fusion, mask, weights)
        total = total + weights.lambda1 * fusion

    edge_term = None
    if preds.edge is not None:
        edge_term = edge_loss(preds.edge, edge, weights)
        total = total + weights.lambda3 * edge_term

    return LossTerms(total=total, fusion=fusion, aux=aux, edge=edge_term)
