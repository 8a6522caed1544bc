"""Whole-model assembly: branch selection, fusion, and the decision score.

Which branches exist is purely a config matter (ablation variants swap the
global branch, the local branch, and the fusion). Absent outputs are None,
never zero-filled, so downstream code can tell "not computed" from "zero".
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..engine import EngineError, Tensor, softmax_probs
from ..engine.checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig
from .fine_grained import (ATTRIBUTES, STAGE_STRIDES, FineGrainedActivations,
                           FineGrainedFeatures, attribute_heads, attribute_heads_plain,
                           backbone_forward, backbone_widths, bap_pool, bap_project,
                           fg_attention, gap_features, init_attribute_heads,
                           init_backbone, init_res_block, apply_res_block)
from .gcn import (FeatureGraph, assemble_feature_graph, concat_forward, gcn_forward,
                  init_concat_head, init_gcn)
from .layers import (conv_p, group_norm_p, init_conv, init_linear, init_norm, linear_p,
                     token_norm_p)
from .vit import (VitFeatures, apply_vit_block, init_patch_embed, init_vit_block,
                  init_vit_global_heads, init_vit_trunk, patch_tokenize, vit_branch,
                  vit_forward, vit_trunk)

DEFAULT_CUTOFF = 0.5


@dataclass
class GlobalFeatures:
    """Single-node global branch output (plain or counterfactual conv branch)."""
    nodes: Tensor                  # (B, 1, node_dim)
    logits: Tensor                 # (B, 2)
    f_map: Tensor | None = None
    attn: Tensor | None = None
    attn_cf: Tensor | None = None

    @property
    def p_vit(self) -> np.ndarray:
        # same role as the transformer head: branch malignancy probability
        return softmax_probs(self.logits)[:, 1]


@dataclass
class ForwardOutputs:
    cfg: ModelConfig
    vit: VitFeatures | None
    global_feats: GlobalFeatures | None
    fg_activations: FineGrainedActivations | None
    fg_features: FineGrainedFeatures | None
    graph: FeatureGraph | None
    score_logits: Tensor | None    # None only for a local-branch-only forward

    @property
    def scores(self) -> np.ndarray:
        """Decision probability of malignancy, one per batch row."""
        if self.score_logits is None:
            raise EngineError("no decision score: this forward ran the local branch only")
        return softmax_probs(self.score_logits)[:, 1]

    @property
    def global_logits(self) -> Tensor | None:
        if self.vit is not None:
            return self.vit.logits
        return None if self.global_feats is None else self.global_feats.logits

    @property
    def attr_logits(self) -> dict[str, Tensor] | None:
        return None if self.fg_features is None else self.fg_features.attr_logits

    def decision(self, threshold: float = DEFAULT_CUTOFF) -> np.ndarray:
        return self.scores >= threshold


def node_names(cfg: ModelConfig) -> tuple[str, ...]:
    if cfg.global_branch == "vit":
        names = ["global.class"] + [f"global.patch{i}" for i in range(cfg.n_patches)]
    else:
        names = ["global.node"]
    if cfg.local_branch != "none":
        names += [f"attr.{name}" for name, _ in ATTRIBUTES]
    return tuple(names)


GLOBAL_PREFIX = {"vit": "gvit", "resnet50": "gres", "cal_adl": "gcal"}
LOCAL_PREFIX = {"cal_adl": "lcal", "resnet50": "lres", "vit": "lvit"}


# ---- initialization -----------------------------------------------------------


def init_model(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Draw all parameters. Branch parameters are drawn before fusion parameters,
    so two configs differing only in fusion share identical branch weights for
    the same seed."""
    params: dict[str, Tensor] = {}

    g = cfg.global_branch
    if g == "vit":
        init_vit_trunk(params, rng, cfg, "gvit")
        init_vit_global_heads(params, rng, cfg, "gvit")
    else:
        prefix = GLOBAL_PREFIX[g]
        init_backbone(params, rng, cfg, prefix)
        bc = cfg.backbone_channels
        if g == "resnet50":
            init_linear(params, rng, f"{prefix}.node", bc, cfg.node_dim)
            init_linear(params, rng, f"{prefix}.head_p", bc, 2)
        else:
            init_linear(params, rng, f"{prefix}.feat", bc, cfg.node_dim)
            init_linear(params, rng, f"{prefix}.head_real", cfg.node_dim, 2)
            init_linear(params, rng, f"{prefix}.head_cf", cfg.node_dim, 2)

    lb = cfg.local_branch
    if lb != "none":
        prefix = LOCAL_PREFIX[lb]
        if lb == "vit":
            init_vit_trunk(params, rng, cfg, prefix)
            init_attribute_heads(params, rng, cfg, prefix, cfg.token_dim,
                                 counterfactual=False)
        else:
            init_backbone(params, rng, cfg, prefix)
            init_attribute_heads(params, rng, cfg, prefix, cfg.backbone_channels,
                                 counterfactual=(lb == "cal_adl"))

    if cfg.fusion == "gcn":
        init_gcn(params, rng, cfg, "gcn", cfg.total_nodes)
    elif cfg.fusion == "concat":
        init_concat_head(params, rng, cfg, "cat", cfg.total_nodes)
    return params


def param_groups(cfg: ModelConfig, params: dict[str, Tensor]) -> dict[str, list[str]]:
    """Parameter names grouped by trainable unit: global / local / fusion."""
    groups: dict[str, list[str]] = {"global": [], "local": [], "fusion": []}
    for name in sorted(params):
        if name.startswith("g") and not name.startswith("gcn."):
            groups["global"].append(name)
        elif name.startswith("l"):
            groups["local"].append(name)
        else:
            groups["fusion"].append(name)
    return groups


# ---- forward -------------------------------------------------------------------


def _as_batch(x, cfg: ModelConfig) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.ndim == 4:
        t = t.reshape(1, *t.shape)
    if t.ndim != 5 or t.shape[1] != 1:
        raise EngineError(f"input must be (B, 1, V, V, V), got {t.shape}")
    v = cfg.input_vox
    if t.shape[2:] != (v, v, v):
        raise EngineError(f"input extent {t.shape[2:]} does not match config {v}^3")
    return t


def _conv_branch_single_node(params, prefix, cfg, x, rng, training, counterfactual):
    f = backbone_forward(params, prefix, cfg, x)
    if not counterfactual:
        pooled = gap_features(f)
        node = linear_p(params, f"{prefix}.node", pooled)
        logits = linear_p(params, f"{prefix}.head_p", pooled)
        b = node.shape[0]
        return GlobalFeatures(nodes=node.reshape(b, 1, cfg.node_dim), logits=logits,
                              f_map=f)
    a, a_bar, f_used = fg_attention(f, cfg, rng, training)
    feat = linear_p(params, f"{prefix}.feat", bap_project(bap_pool(f_used, a)))
    feat_cf = linear_p(params, f"{prefix}.feat", bap_project(bap_pool(f, a_bar)))
    node = feat - feat_cf
    logits = (linear_p(params, f"{prefix}.head_real", feat)
              - linear_p(params, f"{prefix}.head_cf", feat_cf))
    b = node.shape[0]
    return GlobalFeatures(nodes=node.reshape(b, 1, cfg.node_dim), logits=logits,
                          f_map=f, attn=a, attn_cf=a_bar)


def model_forward(params: dict[str, Tensor], cfg: ModelConfig, x,
                  rng: np.random.Generator | None = None,
                  training: bool = False, parts: str = "all") -> ForwardOutputs:
    """Run the configured branches and fusion.

    rng drives dropout, counterfactual attention, and attention-drop coins, in
    a fixed order (global branch first, then local). Evaluation without an rng
    uses a fresh fixed-seed generator, so eval scores are reproducible.

    parts selects a sub-forward for the branch-wise training stages: "global"
    runs only the global branch (its logits become the score), "local" runs
    only the local branch (no decision score), "all" runs everything.
    """
    if parts not in ("all", "global", "local"):
        raise EngineError(f"unknown parts selector {parts!r}")
    if training and rng is None:
        raise EngineError("training forward needs an rng")
    if parts == "local" and cfg.local_branch == "none":
        raise EngineError("parts='local' but the config has no local branch")
    if rng is None:
        rng = np.random.default_rng(0)
    x = _as_batch(x, cfg)
    drop_rng = rng if training else None

    vit_out: VitFeatures | None = None
    global_out: GlobalFeatures | None = None
    global_nodes = global_logits = None
    if parts != "local":
        if cfg.global_branch == "vit":
            vit_out = vit_branch(params, "gvit", cfg, x, drop_rng)
            global_nodes, global_logits = vit_out.nodes, vit_out.logits
        else:
            global_out = _conv_branch_single_node(
                params, GLOBAL_PREFIX[cfg.global_branch], cfg, x, rng, training,
                counterfactual=(cfg.global_branch == "cal_adl"))
            global_nodes, global_logits = global_out.nodes, global_out.logits

    fg_acts: FineGrainedActivations | None = None
    fg_feats: FineGrainedFeatures | None = None
    if parts != "global":
        if cfg.local_branch == "cal_adl":
            f = backbone_forward(params, "lcal", cfg, x)
            a, a_bar, f_used = fg_attention(f, cfg, rng, training)
            fg_acts = FineGrainedActivations(f_map=f, attn=a, attn_cf=a_bar)
            fg_feats = attribute_heads(params, "lcal", cfg,
                                       bap_pool(f_used, a), bap_pool(f, a_bar))
        elif cfg.local_branch == "resnet50":
            f = backbone_forward(params, "lres", cfg, x)
            fg_acts = FineGrainedActivations(f_map=f, attn=None, attn_cf=None)
            fg_feats = attribute_heads_plain(params, "lres", cfg, gap_features(f))
        elif cfg.local_branch == "vit":
            tokens = vit_trunk(params, "lvit", cfg, x, drop_rng)
            fg_feats = attribute_heads_plain(params, "lvit", cfg, tokens[:, 0])

    graph: FeatureGraph | None = None
    score_logits: Tensor | None = None
    if parts == "all" and cfg.fusion != "none":
        local_nodes = None if fg_feats is None else fg_feats.graph_nodes
        graph = assemble_feature_graph(global_nodes, local_nodes, node_names(cfg))
        if cfg.fusion == "gcn":
            graph = gcn_forward(params, "gcn", cfg, graph)
        else:
            graph = concat_forward(params, "cat", graph)
        score_logits = graph.logits_fused
    else:
        score_logits = global_logits

    return ForwardOutputs(cfg=cfg, vit=vit_out, global_feats=global_out,
                          fg_activations=fg_acts, fg_features=fg_feats,
                          graph=graph, score_logits=score_logits)


# ---- model wrapper ----------------------------------------------------------------


class DeepFAN:
    """Parameter container plus the forward conveniences used by the harness."""

    def __init__(self, cfg: ModelConfig, seed: int = 0,
                 params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_model(
            cfg, np.random.default_rng(seed))

    def forward(self, x, rng: np.random.Generator | None = None,
                training: bool = False, parts: str = "all") -> ForwardOutputs:
        return model_forward(self.params, self.cfg, x, rng=rng, training=training,
                             parts=parts)

    def predict_proba(self, x) -> np.ndarray:
        return self.forward(x).scores

    def param_groups(self) -> dict[str, list[str]]:
        return param_groups(self.cfg, self.params)

    def save(self, path, extra: dict | None = None) -> None:
        save_checkpoint(path, self.params, config=self.cfg.to_dict(), extra=extra)

    @classmethod
    def load(cls, path) -> tuple["DeepFAN", dict]:
        arrays, config, extra = load_checkpoint(path)
        params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        return cls(ModelConfig.from_dict(config), params=params), extra


# ---- paper-geometry dry run ---------------------------------------------------------


def _freeze(params: dict[str, Tensor]) -> dict[str, Tensor]:
    for t in params.values():
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    return params


@lru_cache(maxsize=2)
def dry_run_shapes(cfg: ModelConfig, seed: int = 0) -> dict[str, tuple]:
    """Shape-check the full model one component at a time.

    Initializes each block's weights, applies it, then frees them, so the
    paper-scale geometry (which would not fit in memory as one live model)
    runs through the exact same apply functions as a resident model. Gradients
    are off; this checks geometry, not values.
    """
    rng = np.random.default_rng(seed)
    v = cfg.input_vox
    x = Tensor(np.zeros((1, 1, v, v, v)))
    shapes: dict[str, tuple] = {}

    p = _freeze(dict_init(init_patch_embed, rng, cfg, "g"))
    tokens = patch_tokenize(p, "g", cfg, x)
    for i in range(cfg.vit_blocks):
        p = _freeze(dict_init(init_vit_block, rng, cfg, "b"))
        tokens = apply_vit_block(p, "b", cfg, tokens)
    del p
    pf: dict[str, Tensor] = {}
    init_norm(pf, "g.norm_final", cfg.token_dim)
    init_vit_global_heads(pf, rng, cfg, "g")
    vf = vit_forward(_freeze(pf), "g", cfg, token_norm_p(pf, "g.norm_final", tokens))
    shapes["tokens"] = tokens.shape[1:]
    shapes["vit_nodes"] = vf.nodes.shape[1:]
    shapes["vit_logits"] = vf.logits.shape[1:]
    del tokens, pf

    stem, widths = backbone_widths(cfg)
    ps: dict[str, Tensor] = {}
    init_conv(ps, rng, "s.stem", stem, 1, 3)
    y = conv_p(_freeze(ps), "s.stem", x, stride=2, padding=1)
    c_in = stem
    for s, (c_out, blocks) in enumerate(zip(widths, cfg.resnet_blocks)):
        for bidx in range(blocks):
            stride = STAGE_STRIDES[s] if bidx == 0 else 1
            pb: dict[str, Tensor] = {}
            init_res_block(pb, rng, "blk", c_in, c_out, stride)
            y = apply_res_block(_freeze(pb), "blk", y, stride)
            c_in = c_out
    pn: dict[str, Tensor] = {}
    init_norm(pn, "n.norm", widths[-1])
    f = group_norm_p(_freeze(pn), "n.norm", y).relu()
    shapes["f_map"] = f.shape[1:]
    del y, pn

    ph: dict[str, Tensor] = {}
    init_attribute_heads(ph, rng, cfg, "h", cfg.backbone_channels, counterfactual=True)
    a, a_bar, f_used = fg_attention(f, cfg, np.random.default_rng(seed), training=False)
    feats = attribute_heads(_freeze(ph), "h", cfg, bap_pool(f_used, a), bap_pool(f, a_bar))
    shapes["h_diff"] = feats.h_diff.shape[1:]
    del f, ph

    graph = assemble_feature_graph(vf.nodes, feats.h_diff, node_names(cfg))
    pg: dict[str, Tensor] = {}
    init_gcn(pg, rng, cfg, "gcn", graph.n_nodes)
    graph = gcn_forward(_freeze(pg), "gcn", cfg, graph)
    shapes["h_all"] = graph.h_all.shape[1:]
    shapes["adjacency"] = graph.adjacency[0].shape[1:]
    shapes["logits_fused"] = graph.logits_fused.shape[1:]
    return shapes


def dict_init(init_fn, rng, cfg, prefix) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    init_fn(params, rng, cfg, prefix)
    return params
