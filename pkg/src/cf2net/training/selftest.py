"""Self checks: loss gradients, metric and edge-target oracles, and an overfit smoke test."""

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import torch
from torch.autograd import gradcheck
from torch.utils.data import DataLoader

from cf2net.config import (
    ExperimentConfig,
    LossWeights,
    ModelConfig,
    SuperpixelConfig,
    TrainConfig,
)
from cf2net.data.pipeline import make_edge_target
from cf2net.data.store import PreparedDataset, prepare_sample
from cf2net.data.synthetic import generate_synthetic
from cf2net.exceptions import NumericalError
from cf2net.losses import bce, region_loss, total_loss, weighted_dice, weighted_edge_bce
from cf2net.metrics import confusion_counts, dsc, ppv, sen
from cf2net.network.blocks import FeaturePyramid
from cf2net.network.model import PredictionSet, build_model
from cf2net.training.trainer import build_optimizer, resolve_device, set_seed, training_step

logger = logging.getLogger(__name__)

GRADCHECK_EPS = 1e-5
GRADCHECK_RTOL = 1e-4
OVERFIT_RATIO = 0.1


@dataclass
class CheckResult:
    """Outcome of one named check."""

    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


# =============================================================================
# Gradient Suite
# =============================================================================


def _random_pair(rng: torch.Generator, shape: tuple[int, ...] = (4, 4)) -> tuple[torch.Tensor, ...]:
    p = (0.05 + 0.9 * torch.rand(shape, generator=rng, dtype=torch.float64)).requires_grad_()
    y = (torch.rand(shape, generator=rng, dtype=torch.float64) < 0.4).to(torch.float64)
    # keep both classes present
    y[..., 0, 0] = 1.0
    y[..., -1, -1] = 0.0
    return p, y


def _total_loss_fn(weights: LossWeights, mask: torch.Tensor, edge: torch.Tensor) -> Callable:
    empty = FeaturePyramid(encoder=(), middle=torch.empty(0), decoder=())

    def fn(fusion: torch.Tensor, aux: torch.Tensor, edge_map: torch.Tensor) -> torch.Tensor:
        preds = PredictionSet(
            fusion=fusion, aux=aux, edge=edge_map, edge_features=(), features=empty
        )
        return total_loss(preds, mask, edge, weights).total

    return fn


def gradient_checks(seed: int = 0) -> list[CheckResult]:
    """Compare analytic loss gradients with central finite differences in float64."""
    rng = torch.Generator().manual_seed(seed)
    weights = LossWeights()
    p, y = _random_pair(rng, (2, 1, 4, 4))
    w = y.mean(dim=(-2, -1))

    cases: dict[str, tuple[Callable, tuple[torch.Tensor, ...]]] = {
        "weighted_dice": (lambda q: weighted_dice(q, y, w), (p,)),
        "weighted_dice_literal": (lambda q: weighted_dice(q, y, w, literal=True), (p,)),
        "bce": (lambda q: bce(q, y), (p,)),
        "weighted_edge_bce": (lambda q: weighted_edge_bce(q, y, w), (p,)),
        "region_loss": (lambda q: region_loss(q, y, weights), (p,)),
    }
    fusion, _ = _random_pair(rng, (2, 1, 4, 4))
    aux, _ = _random_pair(rng, (2, 1, 4, 4))
    edge_map, edge = _random_pair(rng, (2, 1, 4, 4))
    cases["total_loss"] = (_total_loss_fn(weights, y, edge), (fusion, aux, edge_map))

    results = []
    for name, (fn, inputs) in cases.items():
        started = time.perf_counter()
        try:
            passed = gradcheck(fn, inputs, eps=GRADCHECK_EPS, atol=1e-8, rtol=GRADCHECK_RTOL)
            detail = ""
        except RuntimeError as e:
            passed, detail = False, str(e).splitlines()[0]
        results.append(CheckResult(name, passed, detail, time.perf_counter() - started))
    return results


# =============================================================================
# Oracles
# =============================================================================


def _brute_force_metrics(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float, float]:
    tp = fp = fn = 0
    for p_value, g_value in zip(pred.ravel().tolist(), gt.ravel().tolist(), strict=True):
        if p_value and g_value:
            tp += 1
        elif p_value:
            fp += 1
        elif g_value:
            fn += 1
    dice = 1.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
    recall = (1.0 if fp == 0 else 0.0) if tp + fn == 0 else tp / (tp + fn)
    precision = (1.0 if fn == 0 else 0.0) if tp + fp == 0 else tp / (tp + fp)
    return dice, recall, precision


def metric_oracle(pairs: int = 500, size: int = 16, seed: int = 0) -> CheckResult:
    """DSC/SEN/PPV against per-pixel counting, plus the harmonic-mean identity."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    for i in range(pairs):
        density = rng.uniform(0.0, 1.0, size=2)
        pred = rng.random((size, size)) < density[0]
        gt = rng.random((size, size)) < density[1]
        counts = confusion_counts(pred, gt)
        actual = (dsc(counts), sen(counts), ppv(counts))
        if actual != _brute_force_metrics(pred, gt):
            return CheckResult("metric_oracle", False, f"pair {i}: {actual}")
        d, s, p = actual
        if s > 0 and p > 0 and abs(2 * s * p / (s + p) - d) > 1e-12:
            return CheckResult("metric_oracle", False, f"pair {i}: harmonic mean {s}, {p} != {d}")
    return CheckResult("metric_oracle", True, seconds=time.perf_counter() - started)


def brute_force_edge_band(mask: np.ndarray, band_radius: int) -> np.ndarray:
    """Edge band by direct distance computation to every contour pixel."""
    height, width = mask.shape
    contour = []
    for r in range(height):
        for c in range(width):
            if not mask[r, c]:
                continue
            neighbors = ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))
            if any(
                not (0 <= nr < height and 0 <= nc < width) or not mask[nr, nc]
                for nr, nc in neighbors
            ):
                contour.append((r, c))
    if not contour:
        return np.zeros(mask.shape, dtype=bool)
    points = np.asarray(contour, dtype=np.int64)
    rows, cols = np.indices(mask.shape)
    squared = (rows[..., None] - points[:, 0]) ** 2 + (cols[..., None] - points[:, 1]) ** 2
    return squared.min(axis=-1) <= band_radius**2


def edge_oracle(
    masks: int = 100, size: int = 32, band_radius: int = 5, seed: int = 0
) -> CheckResult:
    """make_edge_target against the brute-force band on random masks."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    for i in range(masks):
        mask = rng.random((size, size)) < rng.uniform(0.0, 1.0)
        expected = brute_force_edge_band(mask, band_radius)
        if not np.array_equal(make_edge_target(mask, band_radius), expected):
            return CheckResult("edge_oracle", False, f"mask {i} differs")
    return CheckResult("edge_oracle", True, seconds=time.perf_counter() - started)


# =============================================================================
# Overfit Smoke Test
# =============================================================================


@dataclass
class OverfitResult:
    """Loss trajectory of the overfit smoke test."""

    passed: bool
    initial_loss: float
    final_loss: float
    steps: int
    losses: list[float] = field(default_factory=list)
    reason: str = ""

    def window_minima(self, window: int = 100) -> list[float]:
        """Running loss minimum at the end of every full ``window`` steps."""
        running = np.minimum.accumulate(np.asarray(self.losses))
        return [float(running[end - 1]) for end in range(window, len(running) + 1, window)]


def smoke_config(model: ModelConfig | None = None, seed: int = 0) -> ExperimentConfig:
    """Tiny setup: base width 8, 64 px images, 256 super-pixels, Adam at 1e-3."""
    model = model or ModelConfig(image_size=64, base_width=8)
    return ExperimentConfig(
        seed=seed,
        model=model,
        superpixel=SuperpixelConfig(k=256),
        train=TrainConfig(optimizer="adam", learning_rate=1e-3),
    )


def overfit_smoke_test(
    config: ExperimentConfig | None = None,
    steps: int = 500,
    samples: int = 4,
) -> OverfitResult:
    """Fit a few fixed synthetic samples and check the loss collapses.

    Passes iff the total loss falls below 10% of its initial value within
    ``steps`` full-batch steps and no gradient becomes non-finite. Failure
    is reported in the result rather than raised. The optimizer and learning
    rate are the ones ``config.train`` names.
    """
    config = config or smoke_config()
    set_seed(config.seed, config.deterministic)
    device = resolve_device(config.device)

    index = generate_synthetic(samples, config.model.image_size, config.seed)
    data = PreparedDataset(
        [prepare_sample(index, entry, config) for entry in index.entries],
        use_superpixel=config.model.use_superpixel,
    )
    batch = next(iter(DataLoader(data, batch_size=samples, shuffle=False)))

    model = build_model(config.model).to(device)
    optimizer = build_optimizer(model, config.train)

    losses: list[float] = []
    for step in range(steps):
        try:
            terms = training_step(model, optimizer, batch, config.loss, device, batch_index=step)
        except NumericalError as e:
            first = losses[0] if losses else float("nan")
            return OverfitResult(False, first, float("nan"), step, losses, str(e))
        losses.append(terms.total.item())
        if losses[-1] < OVERFIT_RATIO * losses[0]:
            break

    passed = losses[-1] < OVERFIT_RATIO * losses[0]
    reason = "" if passed else f"loss {losses[-1]:.5f} not below 10% of {losses[0]:.5f}"
    logger.info(
        "Overfit smoke test: %s after %d steps (loss %.5f -> %.5f)",
        "pass" if passed else "FAIL",
        len(losses),
        losses[0],
        losses[-1],
    )
    return OverfitResult(passed, losses[0], losses[-1], len(losses), losses, reason)


def run_selftest(include_overfit: bool = True, seed: int = 0) -> list[CheckResult]:
    """Run every check; the overfit smoke test is optional since it trains a network."""
    results = gradient_checks(seed)
    results.append(metric_oracle(seed=seed))
    results.append(edge_oracle(seed=seed))
    if include_overfit:
        started = time.perf_counter()
        outcome = overfit_smoke_test(smoke_config(seed=seed))
        results.append(
            CheckResult(
                "overfit_smoke_test",
                outcome.passed,
                outcome.reason or f"{outcome.initial_loss:.5f} -> {outcome.final_loss:.5f}",
                time.perf_counter() - started,
            )
        )
    for result in results:
        log = logger.info if result.passed else logger.error
        log("%-24s %s %s", result.name, "ok" if result.passed else "FAILED", result.detail)
    return results
