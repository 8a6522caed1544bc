"""Parameter initialization and apply helpers shared by all branches.

Every layer is a pair: `init_*` writes named tensors into a params dict,
`*_p` applies them. Forward code never owns weights, which lets the
paper-geometry dry run stream block parameters through the exact same
apply functions without holding the whole model in memory.
"""
from __future__ import annotations

import numpy as np

from ..engine import Tensor, conv3d, group_norm, linear


def init_linear(params: dict, rng: np.random.Generator, name: str,
                n_in: int, n_out: int, bias: bool = True) -> None:
    bound = 1.0 / np.sqrt(n_in)
    params[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, size=(n_out, n_in)),
                                 requires_grad=True)
    if bias:
        params[f"{name}.b"] = Tensor(np.zeros(n_out), requires_grad=True)


def linear_p(params: dict, name: str, x: Tensor) -> Tensor:
    return linear(x, params[f"{name}.w"], params.get(f"{name}.b"))


def init_conv(params: dict, rng: np.random.Generator, name: str,
              c_out: int, c_in: int, k: int, bias: bool = True) -> None:
    fan_in = c_in * k ** 3
    bound = 1.0 / np.sqrt(fan_in)
    params[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k, k, k)),
                                 requires_grad=True)
    if bias:
        params[f"{name}.b"] = Tensor(np.zeros(c_out), requires_grad=True)


def conv_p(params: dict, name: str, x: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return conv3d(x, params[f"{name}.w"], params.get(f"{name}.b"),
                  stride=stride, padding=padding)


def init_norm(params: dict, name: str, channels: int) -> None:
    params[f"{name}.gain"] = Tensor(np.ones(channels), requires_grad=True)
    params[f"{name}.bias"] = Tensor(np.zeros(channels), requires_grad=True)


def norm_groups(channels: int) -> int:
    g = min(8, channels)
    while channels % g:
        g -= 1
    return g


def group_norm_p(params: dict, name: str, x: Tensor) -> Tensor:
    c = x.shape[1]
    return group_norm(x, norm_groups(c), params[f"{name}.gain"], params[f"{name}.bias"])


def token_norm_p(params: dict, name: str, x: Tensor) -> Tensor:
    """Grouped feature normalization applied per token of a (B, T, d) tensor."""
    b, t, d = x.shape
    y = group_norm(x.reshape(b * t, d), norm_groups(d),
                   params[f"{name}.gain"], params[f"{name}.bias"])
    return y.reshape(b, t, d)


def init_embedding(params: dict, rng: np.random.Generator, name: str, shape) -> None:
    params[name] = Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True)


def signed_sqrt(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Smooth sign-preserving square root: x * (x^2 + eps)^(-1/4)."""
    return x * ((x * x + eps) ** -0.25)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise L2 normalization over the last axis, epsilon-guarded."""
    norm_sq = (x * x).sum(axis=-1, keepdims=True)
    return x / ((norm_sq + eps) ** 0.5)
