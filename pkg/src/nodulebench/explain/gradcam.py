"""Gradient-weighted activation maps over branch feature volumes.

The decision logit for one class is backpropagated to a chosen spatial
feature map. Channel weights are the spatial means of that gradient; the map
is the ReLU of the weighted channel sum, peak-normalized, then trilinearly
upsampled to input resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..engine import zero_grads
from ..model import DeepFAN, ModelConfig

CLASS_INDEX = {"benign": 0, "malignant": 1}
TARGET_LAYERS = ("local", "global")


class ExplainError(ValueError):
    """Unsupported layer, degenerate input, or mismatched extents."""


@dataclass(frozen=True)
class Heatmap:
    values: np.ndarray      # feature-map resolution, in [0, 1]
    upsampled: np.ndarray   # (V, V, V) input resolution
    target_layer: str


def cam_from_arrays(feature: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Weighted channel sum, rectified and peak-normalized.

    Both arrays are (C, *spatial). A map that rectifies to all zeros is
    returned as-is, without normalization.
    """
    if feature.shape != grad.shape:
        raise ExplainError(f"feature {feature.shape} vs gradient {grad.shape}")
    if feature.ndim < 2:
        raise ExplainError("feature map needs a channel axis plus spatial axes")
    spatial = tuple(range(1, feature.ndim))
    weights = grad.mean(axis=spatial)
    cam = np.maximum(np.tensordot(weights, feature, axes=(0, 0)), 0.0)
    peak = cam.max()
    if peak > 0.0:
        cam = cam / peak
    return cam


def upsample_trilinear(values: np.ndarray, out_shape: tuple[int, ...]) -> np.ndarray:
    factors = [o / s for o, s in zip(out_shape, values.shape)]
    out = ndimage.zoom(values, factors, order=1, mode="nearest", grid_mode=True)
    if out.shape != tuple(out_shape):
        raise ExplainError(f"upsample produced {out.shape}, wanted {tuple(out_shape)}")
    return out


def _stitch_patches(arr: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(n_patches, C, q, q, q) per-patch maps -> (C, g*q, g*q, g*q) cube."""
    g, c, q = cfg.patch_grid, arr.shape[1], arr.shape[2]
    blocks = arr.reshape(g, g, g, c, q, q, q).transpose(3, 0, 4, 1, 5, 2, 6)
    return blocks.reshape(c, g * q, g * q, g * q)


def grad_cam_map(model: DeepFAN, x, target_layer: str = "local",
                 target_class: str = "malignant") -> Heatmap:
    if target_class not in CLASS_INDEX:
        raise ExplainError(f"unknown class {target_class!r}; use malignant or benign")
    if target_layer not in TARGET_LAYERS:
        raise ExplainError(f"unknown target layer {target_layer!r}; use local or global")
    outputs = model.forward(x)
    if outputs.score_logits is None:
        raise ExplainError("model has no decision head to attribute")
    if outputs.score_logits.shape[0] != 1:
        raise ExplainError("heatmaps are computed one case at a time")

    if target_layer == "local":
        acts = outputs.fg_activations
        if acts is None or acts.f_map is None:
            raise ExplainError("local branch exposes no spatial feature map")
        feature, per_patch = acts.f_map, False
    elif outputs.vit is not None:
        feature, per_patch = outputs.vit.embed_map, True
    else:
        gf = outputs.global_feats
        if gf is None or gf.f_map is None:
            raise ExplainError("global branch exposes no spatial feature map")
        feature, per_patch = gf.f_map, False

    zero_grads(model.params)
    outputs.score_logits[:, CLASS_INDEX[target_class]].sum().backward()
    if feature.grad is None:
        raise ExplainError("target layer received no gradient from the decision head")

    if per_patch:
        f = _stitch_patches(feature.data, model.cfg)
        g = _stitch_patches(feature.grad, model.cfg)
    else:
        f, g = feature.data[0], feature.grad[0]
    values = cam_from_arrays(f, g)
    v = model.cfg.input_vox
    return Heatmap(values=values, upsampled=upsample_trilinear(values, (v, v, v)),
                   target_layer=target_layer)
