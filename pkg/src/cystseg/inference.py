"""Dense prediction: every pixel classified by the patch centered on it.

The frame is reflect-padded by half a patch so border pixels get full
11x11 contexts, patches are batched through the classifier in eval mode,
and the cyst-class softmax probability lands at each patch's center.
stride > 1 classifies every stride-th center and fills stride x stride
blocks with that center's result (smoke-test speedup, not the default).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MissingSpacingError, ShapeError
from .frames import Frame
from .imgio import write_rgb
from .nn import PatchClassifier, softmax


@dataclass
class PredictionMap:
    prob: np.ndarray
    mask: np.ndarray
    frame_index: int = 0


def predict_frame(model: PatchClassifier, pixels: np.ndarray, stride: int = 1,
                  batch_size: int = 4096, frame_index: int = 0) -> PredictionMap:
    if pixels.ndim != 2:
        raise ShapeError(f"frame must be 2-D, got shape {pixels.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    patch = 11
    pad = patch // 2
    height, width = pixels.shape
    if height <= pad or width <= pad:
        raise ShapeError(f"frame {height}x{width} too small to reflect-pad by {pad}")
    model.eval()
    padded = np.pad(pixels, pad, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (patch, patch))
    centers_y = np.arange(0, height, stride)
    centers_x = np.arange(0, width, stride)
    sampled = windows[centers_y[:, None], centers_x[None, :]]
    flat = sampled.reshape(-1, patch, patch)

    probs = np.empty(len(flat), dtype=np.float64)
    for start in range(0, len(flat), batch_size):
        chunk = flat[start:start + batch_size]
        logits = model.logits(chunk)
        probs[start:start + len(chunk)] = softmax(logits)[:, 1]
    grid = probs.reshape(len(centers_y), len(centers_x))

    if stride == 1:
        prob = grid
    else:
        prob = np.repeat(np.repeat(grid, stride, axis=0), stride, axis=1)
        prob = prob[:height, :width]
    mask = (prob > 0.5).astype(np.uint8)
    return PredictionMap(prob=prob, mask=mask, frame_index=frame_index)


def quantify_volume(masks: list[np.ndarray], pixel_size_x: float | None,
                    pixel_size_y: float | None,
                    slice_spacing: float | None) -> tuple[float, list[float]]:
    """Cyst volume in mm^3 plus per-frame areas in mm^2."""
    if pixel_size_x is None or pixel_size_y is None or slice_spacing is None:
        raise MissingSpacingError(
            "quantification needs pixel_size_x, pixel_size_y, and slice_spacing"
        )
    areas = [float(np.count_nonzero(m)) * pixel_size_x * pixel_size_y for m in masks]
    volume = sum(a * slice_spacing for a in areas)
    return volume, areas


def export_overlay(pixels: np.ndarray, mask: np.ndarray, path: str | Path) -> None:
    """Grayscale frame with predicted cyst pixels painted pure red."""
    if pixels.shape != mask.shape:
        raise ShapeError(f"frame {pixels.shape} and mask {mask.shape} differ")
    rgb = np.stack([pixels, pixels, pixels], axis=-1).astype(np.uint8)
    highlight = mask.astype(bool)
    rgb[highlight] = (255, 0, 0)
    write_rgb(rgb, path)


def prob_to_u8(prob: np.ndarray) -> np.ndarray:
    """Probability map as an 8-bit image (rounded prob*255)."""
    return np.rint(prob * 255.0).astype(np.uint8)


def frame_prediction(model: PatchClassifier, frame: Frame, stride: int = 1,
                     batch_size: int = 4096, frame_index: int = 0) -> PredictionMap:
    return predict_frame(model, frame.pixels, stride=stride,
                         batch_size=batch_size, frame_index=frame_index)
