"""Node-level attribution for the graph-fused decision.

Each graph row gets the absolute gradient-times-feature contribution of its
node vector to the fused malignancy probability, scaled by the node's
in-degree in the first adjacency (column sum over N). The twelve raw values
are normalized to sum to one; the global share is the sum over the
global-branch rows, which sit first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import softmax, zero_grads
from ..model import DeepFAN
from .gradcam import ExplainError


@dataclass(frozen=True)
class NodeAttribution:
    node_names: tuple[str, ...]
    weights: np.ndarray       # (N,) non-negative, sums to 1
    global_weight: float      # sum over the global-branch rows

    def to_dict(self) -> dict:
        return {
            "nodes": {name: float(w) for name, w in zip(self.node_names, self.weights)},
            "global_weight": self.global_weight,
        }


def node_weights_from_arrays(h: np.ndarray, grad: np.ndarray,
                             adjacency: np.ndarray) -> np.ndarray:
    """|sum_d grad[i,d] * h[i,d]| * (column-sum_i of adjacency / N), normalized."""
    h = np.asarray(h, dtype=float)
    grad = np.asarray(grad, dtype=float)
    adjacency = np.asarray(adjacency, dtype=float)
    n = h.shape[0]
    if grad.shape != h.shape or adjacency.shape != (n, n):
        raise ExplainError(
            f"mismatched attribution inputs: h {h.shape}, grad {grad.shape}, "
            f"adjacency {adjacency.shape}")
    contrib = np.abs((grad * h).sum(axis=1))
    in_degree = adjacency.sum(axis=0) / n
    raw = contrib * in_degree
    total = raw.sum()
    if total <= 0.0:
        raise ExplainError("attribution is identically zero; nothing to normalize")
    return raw / total


def gcn_node_attribution(model: DeepFAN, x) -> NodeAttribution:
    if model.cfg.fusion != "gcn":
        raise ExplainError("node attribution needs graph fusion")
    outputs = model.forward(x)
    graph = outputs.graph
    if graph is None or not graph.adjacency:
        raise ExplainError("forward pass produced no graph layers")
    if graph.h_all.shape[0] != 1:
        raise ExplainError("attribution is computed one case at a time")

    zero_grads(model.params)
    softmax(graph.logits_fused, axis=-1)[:, 1].sum().backward()
    if graph.h_all.grad is None:
        raise ExplainError("graph input received no gradient")

    weights = node_weights_from_arrays(
        graph.h_all.data[0], graph.h_all.grad[0], graph.adjacency[0].data[0])
    n_global = 1 + model.cfg.n_patches if model.cfg.global_branch == "vit" else 1
    return NodeAttribution(node_names=graph.node_names, weights=weights,
                           global_weight=float(weights[:n_global].sum()))
