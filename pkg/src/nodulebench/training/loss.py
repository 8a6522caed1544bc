"""Weighted cross-entropy composite over every head the active config produces."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..data import NoduleAnnotation
from ..data.phantom import DENSITIES
from ..engine import Tensor, softmax_cross_entropy
from ..model import ATTRIBUTES, ForwardOutputs


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    w0: float = 0.2
    w1: float = 0.2
    w2: float = 0.2
    w3: float = 0.4


@dataclass(frozen=True)
class BatchTargets:
    """Integer label arrays for one batch; attribute arrays optional."""
    pathology: np.ndarray
    lobulation: np.ndarray | None = None
    spiculation: np.ndarray | None = None
    density: np.ndarray | None = None

    def attribute(self, name: str) -> np.ndarray | None:
        if name not in [a for a, _ in ATTRIBUTES]:
            raise TrainingError(f"unknown attribute {name!r}")
        return getattr(self, name)

    def take(self, idx: np.ndarray) -> "BatchTargets":
        pick = lambda a: None if a is None else a[idx]
        return BatchTargets(pathology=self.pathology[idx],
                            lobulation=pick(self.lobulation),
                            spiculation=pick(self.spiculation),
                            density=pick(self.density))


def targets_from_annotations(anns: Sequence[NoduleAnnotation]) -> BatchTargets:
    return BatchTargets(
        pathology=np.array([1 if a.is_malignant else 0 for a in anns], dtype=np.int64),
        lobulation=np.array([int(a.lobulation) for a in anns], dtype=np.int64),
        spiculation=np.array([int(a.spiculation) for a in anns], dtype=np.int64),
        density=np.array([DENSITIES.index(a.density) for a in anns], dtype=np.int64),
    )


@dataclass
class LossBreakdown:
    """Scalar values of each term plus the differentiable weighted total."""
    l_t0: float
    l_c0: float
    l_c1: float
    l_c2: float
    l_all: float
    l_g: float
    total: Tensor

    def to_dict(self) -> dict:
        return {"l_t0": self.l_t0, "l_c0": self.l_c0, "l_c1": self.l_c1,
                "l_c2": self.l_c2, "l_all": self.l_all, "l_g": self.l_g,
                "total": float(self.total.data)}


def composite_loss(outputs: ForwardOutputs, targets: BatchTargets,
                   weights: LossWeights = LossWeights()) -> LossBreakdown:
    """total = w0*l_t0 + w1*(l_c0+l_c1+l_c2) + w2*l_all + w3*l_g.

    Heads absent from `outputs` (ablations, stage-scoped forwards) contribute
    zero; their breakdown entries read 0.0 so the identity above always holds
    as written.
    """
    y = np.asarray(targets.pathology)

    t0 = None
    global_logits = outputs.global_logits
    if global_logits is not None:
        t0 = softmax_cross_entropy(global_logits, y)

    attrs: list[Tensor] = []
    if outputs.fg_features is not None:
        logits = outputs.fg_features.attr_logits
        for name, _ in ATTRIBUTES:
            labels = targets.attribute(name)
            if labels is None:
                raise TrainingError(
                    f"attribute labels for {name!r} required while the local "
                    "branch is active")
            attrs.append(softmax_cross_entropy(logits[name], labels))

    l_all = l_g = None
    if outputs.graph is not None:
        if outputs.graph.logits_all is not None:
            l_all = softmax_cross_entropy(outputs.graph.logits_all, y)
        if outputs.graph.logits_fused is not None:
            l_g = softmax_cross_entropy(outputs.graph.logits_fused, y)

    total: Tensor | None = None

    def add(term: Tensor) -> None:
        nonlocal total
        total = term if total is None else total + term

    if t0 is not None:
        add(t0 * weights.w0)
    if attrs:
        add((attrs[0] + attrs[1] + attrs[2]) * weights.w1)
    if l_all is not None:
        add(l_all * weights.w2)
    if l_g is not None:
        add(l_g * weights.w3)
    if total is None:
        raise TrainingError("no loss terms active for these outputs")

    val = lambda t: 0.0 if t is None else float(t.data)
    return LossBreakdown(
        l_t0=val(t0),
        l_c0=val(attrs[0]) if attrs else 0.0,
        l_c1=val(attrs[1]) if attrs else 0.0,
        l_c2=val(attrs[2]) if attrs else 0.0,
        l_all=val(l_all),
        l_g=val(l_g),
        total=total,
    )
