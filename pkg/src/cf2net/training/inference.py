"""Single-image prediction and contour overlays."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from skimage.segmentation import mark_boundaries

from cf2net.data.pipeline import preprocess_sample
from cf2net.data.store import to_uint8
from cf2net.data.superpixel import superpixel_channel
from cf2net.exceptions import ConfigMismatchError, ShapeError
from cf2net.metrics import DECISION_THRESHOLD
from cf2net.network.checkpoint import LoadedCheckpoint, load_checkpoint

logger = logging.getLogger(__name__)

Color = tuple[float, float, float]

PREDICTION_COLOR: Color = (1.0, 0.0, 0.0)
TRUTH_COLOR: Color = (0.0, 1.0, 0.0)


@dataclass(frozen=True)
class Prediction:
    """Outputs for one image at the checkpoint's resolution."""

    mask: np.ndarray
    probability: np.ndarray
    edge: np.ndarray | None
    overlay: np.ndarray


def render_contours(image: np.ndarray, contours: Sequence[tuple[np.ndarray, Color]]) -> np.ndarray:
    """RGB uint8 image with each mask's contour drawn in its colour, later ones on top."""
    canvas = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    for mask, color in contours:
        canvas = mark_boundaries(canvas, np.asarray(mask).astype(int), color=color)
    return to_uint8(canvas)


def render_overlay(
    image: np.ndarray,
    prediction: np.ndarray,
    truth: np.ndarray | None = None,
) -> np.ndarray:
    """RGB uint8 image with the predicted contour in red and the true one in green."""
    contours = [(truth, TRUTH_COLOR)] if truth is not None else []
    return render_contours(image, [*contours, (prediction, PREDICTION_COLOR)])


def save_overlay(
    path: Path,
    image: np.ndarray,
    prediction: np.ndarray,
    truth: np.ndarray | None = None,
) -> Path:
    """Write :func:`render_overlay` output as a PNG."""
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(render_overlay(image, prediction, truth)).save(path)
    return path


def _network_input(image: np.ndarray, checkpoint: LoadedCheckpoint) -> np.ndarray:
    """Same chain as ``cf2net prepare``, including the 8-bit round trip of stored planes."""
    config = checkpoint.model_config
    sample = preprocess_sample(
        image,
        np.zeros(np.shape(image), dtype=bool),
        target_size=config.image_size,
        band_radius=checkpoint.band_radius,
    )
    planes = [sample.image]
    if config.use_superpixel:
        planes.append(superpixel_channel(sample.image.astype(np.float64), checkpoint.superpixel))
    return np.stack([to_uint8(plane) / 255.0 for plane in planes]).astype(np.float32)


def predict(
    checkpoint: Path | LoadedCheckpoint,
    image: np.ndarray,
    use_superpixel: bool | None = None,
    device: torch.device | str = "cpu",
) -> Prediction:
    """Segment one raw 2-D image.

    Args:
        checkpoint: Checkpoint path, or an already loaded checkpoint.
        image: Raw grayscale image in [0, 1], any size.
        use_superpixel: Requested super-pixel setting; must agree with the
            checkpoint when given.
        device: Device to run on.

    Returns:
        Prediction at the checkpoint's image size.

    Raises:
        CheckpointError: If the checkpoint cannot be loaded.
        ConfigMismatchError: If ``use_superpixel`` disagrees with the checkpoint.
        ShapeError: If the image is not 2-D.
    """
    if isinstance(checkpoint, LoadedCheckpoint):
        loaded, source = checkpoint, "<loaded>"
    else:
        loaded, source = load_checkpoint(checkpoint, device), str(checkpoint)
    if use_superpixel is not None and use_superpixel != loaded.model_config.use_superpixel:
        raise ConfigMismatchError(
            source,
            f"checkpoint was trained with use_superpixel={loaded.model_config.use_superpixel}, "
            f"inference requested use_superpixel={use_superpixel}",
        )
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"Expected a 2-D grayscale image (got shape {image.shape})")

    x = torch.from_numpy(_network_input(image, loaded))[None]
    model = loaded.model
    model.eval()
    with torch.no_grad():
        preds = model(x.to(next(model.parameters()).device))

    probability = preds.segmentation[0, 0].cpu().numpy()
    mask = probability > DECISION_THRESHOLD
    edge = preds.edge[0, 0].cpu().numpy() if preds.edge is not None else None
    logger.debug("Predicted %d foreground pixels", int(mask.sum()))
    return Prediction(
        mask=mask,
        probability=probability,
        edge=edge,
        overlay=render_overlay(x[0, 0].numpy(), mask),
    )


def write_prediction(prediction: Prediction, out: Path) -> list[Path]:
    """Write the overlay to ``out`` and the mask and edge maps beside it."""
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(prediction.overlay).save(out)
    written = [out]

    mask_path = out.with_name(f"{out.stem}_mask.png")
    Image.fromarray(to_uint8(prediction.mask)).save(mask_path)
    written.append(mask_path)

    if prediction.edge is not None:
        edge_path = out.with_name(f"{out.stem}_edge.png")
        Image.fromarray(to_uint8(prediction.edge)).save(edge_path)
        written.append(edge_path)
    return written
