"""Residual graph fusion over the branch node vectors.

Adjacency is data-dependent: row-softmax of the scaled dot-product similarity
of the current node features, recomputed before every layer. Each layer then
adds a learned transform of the adjacency-mixed features back onto the nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import EngineError, Tensor, softmax, softmax_probs
from .config import ModelConfig
from .layers import init_linear, linear_p


@dataclass
class FeatureGraph:
    h_all: Tensor                       # (B, N, node_dim) input node matrix
    node_names: tuple[str, ...]
    h_final: Tensor | None = None       # nodes after the graph layers
    adjacency: tuple[Tensor, ...] = ()  # one (B, N, N) matrix per layer
    logits_fused: Tensor | None = None  # graph head (or concat head under that fusion)
    logits_all: Tensor | None = None    # direct head on flattened h_all

    @property
    def n_nodes(self) -> int:
        return self.h_all.shape[1]

    @property
    def p_fused(self) -> np.ndarray:
        return softmax_probs(self.logits_fused)[:, 1]

    @property
    def p_all(self) -> np.ndarray | None:
        return None if self.logits_all is None else softmax_probs(self.logits_all)[:, 1]


def assemble_feature_graph(global_nodes: Tensor, local_nodes: Tensor | None,
                           node_names: tuple[str, ...]) -> FeatureGraph:
    """Stack branch node vectors into (B, N, node_dim), global rows first."""
    if local_nodes is None:
        h_all = global_nodes
    else:
        if local_nodes.shape[-1] != global_nodes.shape[-1]:
            raise EngineError(
                f"node width mismatch: global {global_nodes.shape[-1]}, "
                f"local {local_nodes.shape[-1]}")
        from ..engine import concat
        h_all = concat([global_nodes, local_nodes], axis=1)
    return FeatureGraph(h_all=h_all, node_names=node_names)


def init_gcn(params: dict, rng: np.random.Generator, cfg: ModelConfig,
             prefix: str, n_nodes: int) -> None:
    for i in range(cfg.gcn_layers):
        init_linear(params, rng, f"{prefix}.layer{i}", cfg.node_dim, cfg.node_dim)
    init_linear(params, rng, f"{prefix}.head_p", cfg.node_dim, 2)
    init_linear(params, rng, f"{prefix}.head_all", n_nodes * cfg.node_dim, 2)


def gcn_forward(params: dict, prefix: str, cfg: ModelConfig,
                graph: FeatureGraph) -> FeatureGraph:
    """Fill adjacency, fused logits, and the direct h_all logits."""
    h = graph.h_all
    b, n, d = h.shape
    scale = 1.0 / np.sqrt(d)
    adjacencies = []
    for i in range(cfg.gcn_layers):
        scores = (h @ h.transpose((0, 2, 1))) * scale
        adj = softmax(scores, axis=-1)
        adjacencies.append(adj)
        h = h + linear_p(params, f"{prefix}.layer{i}", adj @ h)
    pooled = h.mean(axis=1)
    logits_fused = linear_p(params, f"{prefix}.head_p", pooled)
    logits_all = linear_p(params, f"{prefix}.head_all", graph.h_all.reshape(b, n * d))
    return FeatureGraph(h_all=graph.h_all, node_names=graph.node_names,
                        h_final=h, adjacency=tuple(adjacencies),
                        logits_fused=logits_fused, logits_all=logits_all)


def init_concat_head(params: dict, rng: np.random.Generator, cfg: ModelConfig,
                     prefix: str, n_nodes: int) -> None:
    init_linear(params, rng, f"{prefix}.head", n_nodes * cfg.node_dim, 2)


def concat_forward(params: dict, prefix: str, graph: FeatureGraph) -> FeatureGraph:
    """Concat fusion: one FC over the flattened node matrix, no graph layers."""
    b, n, d = graph.h_all.shape
    logits = linear_p(params, f"{prefix}.head", graph.h_all.reshape(b, n * d))
    return FeatureGraph(h_all=graph.h_all, node_names=graph.node_names,
                        h_final=None, adjacency=(), logits_fused=logits,
                        logits_all=None)
