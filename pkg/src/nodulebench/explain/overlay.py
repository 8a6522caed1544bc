"""Slice rendering: grayscale CT with a blue-to-red attention wash."""
from __future__ import annotations

import io

import numpy as np
from PIL import Image

from ..data.preprocess import WINDOW_HI, WINDOW_LO
from .gradcam import ExplainError

DEFAULT_WINDOW = (WINDOW_LO, WINDOW_HI)


def heat_palette(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] to a blue-to-red ramp; returns (..., 3) floats in [0, 255]."""
    v = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    return np.stack([255.0 * v, np.zeros_like(v), 255.0 * (1.0 - v)], axis=-1)


def overlay_rgb(slice_values: np.ndarray, heat: np.ndarray,
                window: tuple[float, float] = DEFAULT_WINDOW) -> np.ndarray:
    """Blend a windowed grayscale slice with the palette, alpha = heat value.

    Zero heat leaves the grayscale pixel untouched; heat 1 paints the pure
    palette color.
    """
    slice_values = np.asarray(slice_values, dtype=float)
    heat = np.asarray(heat, dtype=float)
    if slice_values.ndim != 2 or heat.ndim != 2:
        raise ExplainError("expected 2-D slices")
    if slice_values.shape != heat.shape:
        raise ExplainError(
            f"extent mismatch: slice {slice_values.shape}, heatmap {heat.shape}")
    if heat.min() < 0.0 or heat.max() > 1.0:
        raise ExplainError("heatmap values must lie in [0, 1]")
    lo, hi = window
    if not hi > lo:
        raise ExplainError(f"bad window {window}")
    gray = np.clip((slice_values - lo) / (hi - lo), 0.0, 1.0) * 255.0
    alpha = heat[..., None]
    rgb = gray[..., None] * (1.0 - alpha) + heat_palette(heat) * alpha
    return np.rint(rgb).astype(np.uint8)


def render_overlay(slice_values: np.ndarray, heat: np.ndarray,
                   window: tuple[float, float] = DEFAULT_WINDOW) -> bytes:
    """PNG bytes of the blended slice. Same inputs give identical bytes."""
    img = Image.fromarray(overlay_rgb(slice_values, heat, window), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG", compress_level=6)
    return buf.getvalue()
