"""Fine-grained branch: residual conv backbone, attention-drop layer,
bilinear attention pooling, and counterfactual attribute heads.

The attribute prediction is the difference between logits computed from the
real attention stream and from a random counterfactual attention stream, which
forces the heads to score what the attention actually found.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import Tensor, concat, global_avg_pool3d, softmax_probs
from .config import ConfigError, ModelConfig
from .layers import (conv_p, group_norm_p, init_conv, init_linear, init_norm,
                     l2_normalize, linear_p, signed_sqrt)

# (name, number of classes); density separates solid / part-solid / ground-glass
ATTRIBUTES: tuple[tuple[str, int], ...] = (
    ("lobulation", 2),
    ("spiculation", 2),
    ("density", 3),
)


@dataclass
class FineGrainedActivations:
    """Conv feature map and attention streams, kept for explainability."""
    f_map: Tensor                 # (B, C, s, s, s)
    attn: Tensor | None           # (B, 1, s, s, s) real attention, None without ADL
    attn_cf: Tensor | None        # counterfactual attention


@dataclass
class FineGrainedFeatures:
    h_attr: Tensor                # (B, 3, node_dim) real attribute features
    h_attr_cf: Tensor | None      # counterfactual stream, None without ADL
    h_diff: Tensor | None         # real minus counterfactual, the graph rows
    attr_logits: dict[str, Tensor]

    @property
    def graph_nodes(self) -> Tensor:
        return self.h_diff if self.h_diff is not None else self.h_attr

    @property
    def attr_probs(self) -> dict[str, np.ndarray]:
        return {k: softmax_probs(v) for k, v in self.attr_logits.items()}


# ---- backbone geometry --------------------------------------------------------


def backbone_widths(cfg: ModelConfig) -> tuple[int, tuple[int, int, int]]:
    """Stem width and the three stage widths, derived from backbone_channels."""
    bc = cfg.backbone_channels
    if bc % 8:
        raise ConfigError(f"backbone_channels must divide by 8, got {bc}")
    return bc // 8, (bc // 4, bc // 2, bc)


STAGE_STRIDES = (2, 2, 1)


def init_res_block(params: dict, rng: np.random.Generator, prefix: str,
                   c_in: int, c_out: int, stride: int) -> None:
    init_norm(params, f"{prefix}.norm1", c_in)
    init_conv(params, rng, f"{prefix}.conv1", c_out, c_in, 3)
    init_norm(params, f"{prefix}.norm2", c_out)
    init_conv(params, rng, f"{prefix}.conv2", c_out, c_out, 3)
    if c_in != c_out or stride != 1:
        init_conv(params, rng, f"{prefix}.proj", c_out, c_in, 1, bias=False)


def apply_res_block(params: dict, prefix: str, x: Tensor, stride: int) -> Tensor:
    """Pre-activation residual block; zero conv weights give an exact skip."""
    y = group_norm_p(params, f"{prefix}.norm1", x).relu()
    y = conv_p(params, f"{prefix}.conv1", y, stride=stride, padding=1)
    y = group_norm_p(params, f"{prefix}.norm2", y).relu()
    y = conv_p(params, f"{prefix}.conv2", y, stride=1, padding=1)
    skip = conv_p(params, f"{prefix}.proj", x, stride=stride) if f"{prefix}.proj.w" in params else x
    return skip + y


def init_backbone(params: dict, rng: np.random.Generator, cfg: ModelConfig,
                  prefix: str) -> None:
    stem, widths = backbone_widths(cfg)
    init_conv(params, rng, f"{prefix}.stem", stem, 1, 3)
    c_in = stem
    for s, (c_out, blocks) in enumerate(zip(widths, cfg.resnet_blocks)):
        for b in range(blocks):
            stride = STAGE_STRIDES[s] if b == 0 else 1
            init_res_block(params, rng, f"{prefix}.stage{s}.block{b}", c_in, c_out, stride)
            c_in = c_out
    init_norm(params, f"{prefix}.norm_out", widths[-1])


def backbone_forward(params: dict, prefix: str, cfg: ModelConfig, x: Tensor) -> Tensor:
    """(B, 1, V, V, V) -> F of shape (B, backbone_channels, s, s, s), s = V / 8."""
    if cfg.fg_spatial * 8 != cfg.input_vox:
        raise ConfigError(
            f"fg_spatial {cfg.fg_spatial} inconsistent with input {cfg.input_vox}"
            " (backbone downsamples by 8)")
    y = conv_p(params, f"{prefix}.stem", x, stride=2, padding=1)
    for s, blocks in enumerate(cfg.resnet_blocks):
        for b in range(blocks):
            stride = STAGE_STRIDES[s] if b == 0 else 1
            y = apply_res_block(params, f"{prefix}.stage{s}.block{b}", y, stride)
    return group_norm_p(params, f"{prefix}.norm_out", y).relu()


# ---- attention ------------------------------------------------------------------


def fg_attention(f: Tensor, cfg: ModelConfig, rng: np.random.Generator,
                 training: bool) -> tuple[Tensor, Tensor, Tensor]:
    """Attention-drop layer.

    A is the peak-normalized ReLU of the channel mean of F. The counterfactual
    map is uniform noise, peak-normalized, drawn from rng (always, so eval stays
    reproducible under a fixed seed). In training, each sample independently
    enters drop mode with probability adl_p_drop: voxels whose attention falls
    below adl_gamma times the peak are zeroed out of F. rng draw order is fixed:
    counterfactual map first, then the per-sample drop coin.
    """
    b = f.shape[0]
    spatial = f.shape[2:]
    m = f.mean(axis=1, keepdims=True).relu()
    peak = m.data.max(axis=(2, 3, 4), keepdims=True)
    a = m / Tensor(peak + 1e-12)

    u = rng.random((b, 1) + spatial)
    a_bar = Tensor(u / (u.max(axis=(2, 3, 4), keepdims=True) + 1e-12))

    f_used = f
    if training:
        drop = rng.random(b) < cfg.adl_p_drop
        if drop.any():
            a_peak = a.data.max(axis=(2, 3, 4), keepdims=True)
            keep = (a.data >= cfg.adl_gamma * a_peak).astype(np.float64)
            f_used = f * Tensor(np.where(drop.reshape(b, 1, 1, 1, 1), keep, 1.0))
    return a, a_bar, f_used


def bap_pool(f: Tensor, a: Tensor) -> Tensor:
    """Attention-weighted spatial average: (B, C, s, s, s) x (B, 1, ...) -> (B, C)."""
    return (f * a).mean(axis=(2, 3, 4))


def bap_project(pooled: Tensor) -> Tensor:
    """Sign-preserving sqrt then L2 normalization; zero input stays zero."""
    return l2_normalize(signed_sqrt(pooled))


# ---- attribute heads ---------------------------------------------------------------


def init_attribute_heads(params: dict, rng: np.random.Generator, cfg: ModelConfig,
                         prefix: str, in_dim: int, counterfactual: bool) -> None:
    for k, (_, n_classes) in enumerate(ATTRIBUTES):
        init_linear(params, rng, f"{prefix}.attr{k}", in_dim, cfg.node_dim)
        init_linear(params, rng, f"{prefix}.attr{k}.real", cfg.node_dim, n_classes)
        if counterfactual:
            init_linear(params, rng, f"{prefix}.attr{k}.cf", cfg.node_dim, n_classes)


def attribute_heads(params: dict, prefix: str, cfg: ModelConfig,
                    pooled: Tensor, pooled_bar: Tensor) -> FineGrainedFeatures:
    """Counterfactual heads: shared per-attribute FC maps both pooled streams to
    node_dim, then independent real/counterfactual FCs whose logit difference is
    the attribute prediction."""
    z, z_bar = bap_project(pooled), bap_project(pooled_bar)
    b = z.shape[0]
    h_rows, h_bar_rows, logits = [], [], {}
    for k, (name, _) in enumerate(ATTRIBUTES):
        h_k = linear_p(params, f"{prefix}.attr{k}", z)
        h_bar_k = linear_p(params, f"{prefix}.attr{k}", z_bar)
        logits[name] = (linear_p(params, f"{prefix}.attr{k}.real", h_k)
                        - linear_p(params, f"{prefix}.attr{k}.cf", h_bar_k))
        h_rows.append(h_k.reshape(b, 1, cfg.node_dim))
        h_bar_rows.append(h_bar_k.reshape(b, 1, cfg.node_dim))
    h_attr = concat(h_rows, axis=1)
    h_attr_cf = concat(h_bar_rows, axis=1)
    return FineGrainedFeatures(h_attr=h_attr, h_attr_cf=h_attr_cf,
                               h_diff=h_attr - h_attr_cf, attr_logits=logits)


def attribute_heads_plain(params: dict, prefix: str, cfg: ModelConfig,
                          feat: Tensor) -> FineGrainedFeatures:
    """Single-stream variant for branches without counterfactual attention."""
    b = feat.shape[0]
    h_rows, logits = [], {}
    for k, (name, _) in enumerate(ATTRIBUTES):
        h_k = linear_p(params, f"{prefix}.attr{k}", feat)
        logits[name] = linear_p(params, f"{prefix}.attr{k}.real", h_k)
        h_rows.append(h_k.reshape(b, 1, cfg.node_dim))
    return FineGrainedFeatures(h_attr=concat(h_rows, axis=1), h_attr_cf=None,
                               h_diff=None, attr_logits=logits)


def gap_features(f: Tensor) -> Tensor:
    return global_avg_pool3d(f)
