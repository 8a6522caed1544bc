"""Adam with bias correction, operating on named parameter dicts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment accumulators keyed by parameter name."""
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """One in-place update from the gradients currently stored on `params`.

    Parameters with no gradient this step keep their moments untouched but
    still see the step counter advance (bias correction is global).
    """
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
