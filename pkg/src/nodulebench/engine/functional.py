"""Neural-net building blocks on top of the Tensor primitives.

conv3d is a fused op (im2col + GEMM forward, slice-accumulate backward);
everything else composes recorded primitives so gradients come for free.
"""
from __future__ import annotations

import numpy as np

from .tensor import EngineError, Tensor, _unbroadcast, concat


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T (+ bias). weight rows are output features: (out, in)."""
    out = x @ weight.transpose((1, 0))
    if bias is not None:
        out = out + bias
    return out


# ---- convolution -----------------------------------------------------------------


def _im2col3d(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, tuple[int, int, int]]:
    """(B, C, D, H, W) -> (B * P, C * k^3) patch matrix, P = number of output sites."""
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k, k), axis=(2, 3, 4))
    windows = windows[:, :, ::stride, ::stride, ::stride]
    b, c, od, oh, ow = windows.shape[:5]
    # (B, D', H', W', C, k, k, k) then flatten sites and patch dims
    cols = windows.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(b * od * oh * ow, c * k ** 3)
    return np.ascontiguousarray(cols), (od, oh, ow)


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """3-D cross-correlation. x: (B, Cin, D, H, W); kernel: (Cout, Cin, k, k, k)."""
    if x.ndim != 5:
        raise EngineError(f"conv3d input must be (B, C, D, H, W), got {x.shape}")
    if kernel.ndim != 5 or kernel.shape[2] != kernel.shape[3] or kernel.shape[3] != kernel.shape[4]:
        raise EngineError(f"conv3d kernel must be (Cout, Cin, k, k, k), got {kernel.shape}")
    if kernel.shape[1] != x.shape[1]:
        raise EngineError(f"channel mismatch: input {x.shape[1]}, kernel {kernel.shape[1]}")

    b, cin, d, h, w = x.shape
    cout, _, k, _, _ = kernel.shape
    xp = x.data
    if padding:
        pad = ((0, 0), (0, 0)) + ((padding, padding),) * 3
        xp = np.pad(xp, pad, mode="constant", constant_values=0.0)

    cols, (od, oh, ow) = _im2col3d(xp, k, stride)
    wmat = kernel.data.reshape(cout, -1)
    out_flat = cols @ wmat.T                             # (B*P, Cout)
    out_data = out_flat.reshape(b, od, oh, ow, cout).transpose(0, 4, 1, 2, 3)

    def bwd(g):
        g_flat = g.transpose(0, 2, 3, 4, 1).reshape(-1, cout)
        if kernel.requires_grad:
            kernel._accum((g_flat.T @ cols).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            g_cols = (g_flat @ wmat).reshape(b, od, oh, ow, cin, k, k, k)
            pd, ph, pw = d + 2 * padding, h + 2 * padding, w + 2 * padding
            gx = np.zeros((b, cin, pd, ph, pw))
            for a in range(k):
                for bb in range(k):
                    for c in range(k):
                        gx[:, :,
                           a:a + stride * od:stride,
                           bb:bb + stride * oh:stride,
                           c:c + stride * ow:stride] += np.moveaxis(
                               g_cols[..., a, bb, c], -1, 1)
            if padding:
                gx = gx[:, :, padding:padding + d, padding:padding + h, padding:padding + w]
            x._accum(gx)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    needs = any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=needs, _parents=parents,
                 _backward=bwd if needs else None, op="conv3d")
    if bias is not None:
        # fold bias into the fused op result without re-recording
        out.data += bias.data.reshape(1, -1, 1, 1, 1)
        from .tensor import _check_finite
        _check_finite(out.data, "conv3d")
    return out


def avg_pool3d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k^3 mean pooling; spatial dims must divide by k."""
    b, c, d, h, w = x.shape
    if d % k or h % k or w % k:
        raise EngineError(f"avg_pool3d: dims {x.shape[2:]} not divisible by {k}")
    y = x.reshape(b, c, d // k, k, h // k, k, w // k, k)
    return y.mean(axis=(3, 5, 7))


def global_avg_pool3d(x: Tensor) -> Tensor:
    """(B, C, D, H, W) -> (B, C)."""
    return x.mean(axis=(2, 3, 4))


# ---- normalization ----------------------------------------------------------------


def group_norm(x: Tensor, num_groups: int, gain: Tensor, bias: Tensor,
               eps: float = 1e-5, batched: bool = True) -> Tensor:
    """Group normalization over channel groups of (B, C, ...) input.

    gain/bias have shape (C,). Statistics are taken per sample per group over
    the group's channels and all trailing spatial dims. `batched=False` treats
    the input as a single (C, ...) sample. Fused op: one recorded node with a
    closed-form backward instead of a dozen primitive ops.
    """
    if not batched:
        y = group_norm(x.reshape(1, *x.shape), num_groups, gain, bias, eps, batched=True)
        return y.reshape(*x.shape)
    b, c = x.shape[0], x.shape[1]
    if c % num_groups:
        raise EngineError(f"group_norm: {c} channels not divisible by {num_groups} groups")
    spatial = x.shape[2:]
    bshape = (1, c) + (1,) * len(spatial)
    xg = x.data.reshape(b, num_groups, c // num_groups, *spatial)
    axes = tuple(range(2, xg.ndim))
    mu = xg.mean(axis=axes, keepdims=True)
    centered = xg - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    sigma_inv = 1.0 / np.sqrt(var + eps)
    xhat = (centered * sigma_inv).reshape(x.shape)
    out_data = xhat * gain.data.reshape(bshape) + bias.data.reshape(bshape)

    def bwd(g):
        reduce_axes = (0,) + tuple(range(2, g.ndim))
        if bias.requires_grad:
            bias._accum(g.sum(axis=reduce_axes))
        if gain.requires_grad:
            gain._accum((g * xhat).sum(axis=reduce_axes))
        if x.requires_grad:
            gg = (g * gain.data.reshape(bshape)).reshape(xg.shape)
            xh = xhat.reshape(xg.shape)
            m1 = gg.mean(axis=axes, keepdims=True)
            m2 = (gg * xh).mean(axis=axes, keepdims=True)
            x._accum(((gg - m1 - xh * m2) * sigma_inv).reshape(x.shape))

    parents = (x, gain, bias)
    needs = any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=needs, _parents=parents,
                 _backward=bwd if needs else None, op="group_norm")
    return out


def layer_norm_lastdim(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last dim; gain/bias shape (d,)."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / ((var + eps) ** 0.5) * gain + bias


# ---- attention and activations -----------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; the max-shift is a constant (detached)."""
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x) with Phi from erf."""
    return x * ((x * (1.0 / np.sqrt(2.0))).erf() + 1.0) * 0.5


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. rng=None means eval mode (identity)."""
    if rng is None or p <= 0.0:
        return x
    keep = 1.0 - p
    mask = (rng.random(x.shape) < keep) / keep
    return x * Tensor(mask)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, num_heads: int,
                         w_out: Tensor, b_out: Tensor | None = None) -> Tensor:
    """Scaled dot-product attention over pre-projected q/k/v of shape (B, T, d).

    Splits d into `num_heads` heads, attends per head, merges, then applies the
    output projection (w_out: (d, d) rows-as-outputs). Unbatched (T, d) inputs
    are accepted and returned unbatched.
    """
    if q.ndim == 2:
        out = multi_head_attention(q.reshape(1, *q.shape), k.reshape(1, *k.shape),
                                   v.reshape(1, *v.shape), num_heads, w_out, b_out)
        return out.reshape(*out.shape[1:])
    b, t, d = q.shape
    if d % num_heads:
        raise EngineError(f"attention dim {d} not divisible by {num_heads} heads")
    dh = d // num_heads

    def split(x: Tensor) -> Tensor:
        return x.reshape(b, t, num_heads, dh).transpose((0, 2, 1, 3))

    qh, kh, vh = split(q), split(k), split(v)
    scores = (qh @ kh.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    attn = softmax(scores, axis=-1)
    mixed = attn @ vh                                      # (B, heads, T, dh)
    merged = mixed.transpose((0, 2, 1, 3)).reshape(b, t, d)
    return linear(merged, w_out, b_out)


# ---- losses -------------------------------------------------------------------------


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    z = x - shift
    return z - z.exp().sum(axis=axis, keepdims=True).log()


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of (B, C) logits against integer labels (B,)."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise EngineError(f"logits must be (B, C), got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise EngineError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    lsm = log_softmax(logits, axis=-1)
    rows = np.arange(logits.shape[0])
    picked = lsm[rows, labels]
    return -picked.mean()


def softmax_probs(logits: Tensor) -> np.ndarray:
    """Eval-path probabilities as a plain array."""
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
