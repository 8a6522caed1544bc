"""Global transformer branch.

A cubic patch is split into patch_grid^3 sub-cubes, each embedded into one
token by projecting a combined descriptor: a small conv map, its pooled
energy, and parameter-free intensity statistics per sub-block. Average
pooling alone erases the texture that separates the classes, so the raw
moments ride along as constants and the projection learns how to mix them.
A learned class token plus learned positional embeddings feed a pre-norm
transformer. The class output drives the branch malignancy head and one node
vector; every patch output gets its own node FC.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import Tensor, avg_pool3d, concat, dropout, gelu, multi_head_attention, softmax_probs
from .config import ModelConfig
from .layers import conv_p, init_conv, init_embedding, init_linear, init_norm, linear_p, token_norm_p

EMBED_CHANNELS = 2
MOMENT_SUBGRID = 2       # statistics pooled over subgrid^3 blocks per patch
MOMENT_STATS = 3         # mean, spread, peak
MOMENT_FEATURES = MOMENT_SUBGRID ** 3 * MOMENT_STATS


def embed_width(cfg: ModelConfig) -> int:
    """Input width of the token projection for one patch."""
    p = cfg.input_vox // cfg.patch_grid
    return 2 * EMBED_CHANNELS * (p // 4) ** 3 + MOMENT_FEATURES


def patch_moments(patches: np.ndarray) -> np.ndarray:
    """(N, 1, p, p, p) -> (N, MOMENT_FEATURES) block intensity statistics."""
    n, _, p, _, _ = patches.shape
    s, h = MOMENT_SUBGRID, p // MOMENT_SUBGRID
    blocks = (patches.reshape(n, s, h, s, h, s, h)
                     .transpose(0, 1, 3, 5, 2, 4, 6)
                     .reshape(n, s ** 3, h ** 3))
    return np.concatenate(
        [blocks.mean(axis=2), blocks.std(axis=2), blocks.max(axis=2)], axis=1)


@dataclass
class VitFeatures:
    """Outputs of the global branch: node vectors plus the malignancy head."""
    h_class: Tensor    # (B, node_dim), from the class token
    h_patch: Tensor    # (B, n_patches, node_dim), one row per patch token
    logits: Tensor     # (B, 2) malignancy logits
    embed_map: Tensor | None = None  # (B*n_patches, C, q, q, q) patch-embed conv output

    @property
    def p_vit(self) -> np.ndarray:
        return softmax_probs(self.logits)[:, 1]

    @property
    def nodes(self) -> Tensor:
        b, d = self.h_class.shape
        return concat([self.h_class.reshape(b, 1, d), self.h_patch], axis=1)


# ---- initialization ---------------------------------------------------------


def init_patch_embed(params: dict, rng: np.random.Generator, cfg: ModelConfig,
                     prefix: str) -> None:
    init_conv(params, rng, f"{prefix}.embed.conv", EMBED_CHANNELS, 1, 3)
    init_linear(params, rng, f"{prefix}.embed.proj", embed_width(cfg),
                cfg.token_dim)
    init_embedding(params, rng, f"{prefix}.cls", (cfg.token_dim,))
    init_embedding(params, rng, f"{prefix}.pos", (cfg.n_patches + 1, cfg.token_dim))


def init_vit_block(params: dict, rng: np.random.Generator, cfg: ModelConfig,
                   prefix: str) -> None:
    d = cfg.token_dim
    init_norm(params, f"{prefix}.norm1", d)
    for name in ("wq", "wk", "wv", "wo"):
        init_linear(params, rng, f"{prefix}.{name}", d, d)
    init_norm(params, f"{prefix}.norm2", d)
    init_linear(params, rng, f"{prefix}.mlp.fc1", d, d * cfg.mlp_ratio)
    init_linear(params, rng, f"{prefix}.mlp.fc2", d * cfg.mlp_ratio, d)


def init_vit_trunk(params: dict, rng: np.random.Generator, cfg: ModelConfig,
                   prefix: str) -> None:
    init_patch_embed(params, rng, cfg, prefix)
    for i in range(cfg.vit_blocks):
        init_vit_block(params, rng, cfg, f"{prefix}.block{i}")
    init_norm(params, f"{prefix}.norm_final", cfg.token_dim)


def init_vit_global_heads(params: dict, rng: np.random.Generator, cfg: ModelConfig,
                          prefix: str) -> None:
    init_linear(params, rng, f"{prefix}.head_p", cfg.token_dim, 2)
    for i in range(cfg.n_patches + 1):
        init_linear(params, rng, f"{prefix}.node{i}", cfg.token_dim, cfg.node_dim)


# ---- forward ----------------------------------------------------------------


def patch_tokenize(params: dict, prefix: str, cfg: ModelConfig, x: Tensor,
                   taps: dict[str, Tensor] | None = None) -> Tensor:
    """(B, 1, V, V, V) -> (B, n_patches + 1, token_dim) with class token at row 0."""
    b = x.shape[0]
    g, p = cfg.patch_grid, cfg.input_vox // cfg.patch_grid
    patches = (x.reshape(b, 1, g, p, g, p, g, p)
                .transpose((0, 2, 4, 6, 1, 3, 5, 7))
                .reshape(b * g ** 3, 1, p, p, p))
    y = conv_p(params, f"{prefix}.embed.conv", patches, stride=2, padding=1)
    if taps is not None:
        taps["embed"] = y
    half = EMBED_CHANNELS * (p // 4) ** 3
    descriptor = concat([
        avg_pool3d(y, 2).reshape(b * g ** 3, half),
        avg_pool3d(y * y, 2).reshape(b * g ** 3, half),
        Tensor(patch_moments(patches.data)),
    ], axis=1)
    tokens = linear_p(params, f"{prefix}.embed.proj",
                      descriptor).reshape(b, g ** 3, cfg.token_dim)
    cls = params[f"{prefix}.cls"].reshape(1, 1, cfg.token_dim) + Tensor(np.zeros((b, 1, cfg.token_dim)))
    return concat([cls, tokens], axis=1) + params[f"{prefix}.pos"]


def apply_vit_block(params: dict, prefix: str, cfg: ModelConfig, tokens: Tensor,
                    rng: np.random.Generator | None = None) -> Tensor:
    a = token_norm_p(params, f"{prefix}.norm1", tokens)
    q = linear_p(params, f"{prefix}.wq", a)
    k = linear_p(params, f"{prefix}.wk", a)
    v = linear_p(params, f"{prefix}.wv", a)
    att = multi_head_attention(q, k, v, cfg.heads,
                               params[f"{prefix}.wo.w"], params[f"{prefix}.wo.b"])
    tokens = tokens + dropout(att, cfg.dropout, rng)
    m = token_norm_p(params, f"{prefix}.norm2", tokens)
    h = linear_p(params, f"{prefix}.mlp.fc2", gelu(linear_p(params, f"{prefix}.mlp.fc1", m)))
    return tokens + dropout(h, cfg.dropout, rng)


def vit_trunk(params: dict, prefix: str, cfg: ModelConfig, x: Tensor,
              rng: np.random.Generator | None = None,
              taps: dict[str, Tensor] | None = None) -> Tensor:
    tokens = patch_tokenize(params, prefix, cfg, x, taps)
    for i in range(cfg.vit_blocks):
        tokens = apply_vit_block(params, f"{prefix}.block{i}", cfg, tokens, rng)
    return token_norm_p(params, f"{prefix}.norm_final", tokens)


def vit_forward(params: dict, prefix: str, cfg: ModelConfig, tokens: Tensor) -> VitFeatures:
    """Map post-trunk tokens to node vectors and malignancy logits."""
    cls_feat = tokens[:, 0]
    logits = linear_p(params, f"{prefix}.head_p", cls_feat)
    h_class = linear_p(params, f"{prefix}.node0", cls_feat)
    patch_nodes = [
        linear_p(params, f"{prefix}.node{i + 1}", tokens[:, i + 1])
        for i in range(cfg.n_patches)
    ]
    b = tokens.shape[0]
    h_patch = concat([n.reshape(b, 1, cfg.node_dim) for n in patch_nodes], axis=1)
    return VitFeatures(h_class=h_class, h_patch=h_patch, logits=logits)


def vit_branch(params: dict, prefix: str, cfg: ModelConfig, x: Tensor,
               rng: np.random.Generator | None = None) -> VitFeatures:
    taps: dict[str, Tensor] = {}
    feats = vit_forward(params, prefix, cfg, vit_trunk(params, prefix, cfg, x, rng, taps))
    feats.embed_map = taps["embed"]
    return feats
