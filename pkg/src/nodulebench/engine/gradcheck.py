"""Central finite-difference verification of autodiff gradients.

Coordinates sitting on a ReLU-style kink make one-sided differences disagree;
those are detected and excluded from the error statistic rather than letting
them poison it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    max_rel_err: float
    n_checked: int
    n_excluded: int
    excluded_coords: list[tuple] = field(default_factory=list)
    worst_coord: tuple | None = None

    @property
    def ok(self) -> bool:
        return self.n_checked > 0 and np.isfinite(self.max_rel_err)


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def _is_kink(fwd: float, bwd: float) -> bool:
    # Smooth functions give fwd ~ bwd up to O(eps * f''); at a ReLU corner the
    # two one-sided slopes differ by an O(1) fraction of their own size.
    scale = max(abs(fwd), abs(bwd), 1e-8)
    return abs(fwd - bwd) / scale > 0.1


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x0: np.ndarray,
    eps: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Compare autodiff d f/d x against central differences at x0.

    f must map a Tensor to a scalar Tensor. Returns the max relative error
    over checked (non-kink) coordinates.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    out = f(xt)
    out.backward()
    auto = xt.grad
    if auto is None:
        raise ValueError("f produced no gradient for x")
    f0 = float(out.data)

    coords = list(np.ndindex(*x0.shape)) if x0.ndim else [()]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        idx = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in idx]

    result = GradCheckResult(max_rel_err=0.0, n_checked=0, n_excluded=0)
    for c in coords:
        xp = x0.copy()
        xp[c] += eps
        fp = float(f(Tensor(xp)).data)
        xm = x0.copy()
        xm[c] -= eps
        fm = float(f(Tensor(xm)).data)

        fwd = (fp - f0) / eps
        bwd = (f0 - fm) / eps
        if _is_kink(fwd, bwd):
            result.n_excluded += 1
            result.excluded_coords.append(c)
            continue
        numeric = (fp - fm) / (2.0 * eps)
        err = _rel_err(float(auto[c]), numeric)
        if err > result.max_rel_err:
            result.max_rel_err = err
            result.worst_coord = c
        result.n_checked += 1
    return result


def finite_diff_check_params(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    n_samples: int,
    eps: float = 1e-4,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Spot-check autodiff grads of a parameterized loss at sampled coordinates.

    loss_fn closes over `params` and recomputes the loss from their current
    values; each call must be deterministic for the perturbation math to hold.
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.grad = None
    out = loss_fn()
    out.backward()
    f0 = float(out.data)

    names = sorted(params)
    sizes = np.array([params[n].size for n in names], dtype=np.int64)
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    bounds = np.cumsum(sizes)

    result = GradCheckResult(max_rel_err=0.0, n_checked=0, n_excluded=0)
    for flat in sorted(int(i) for i in picks):
        which = int(np.searchsorted(bounds, flat, side="right"))
        name = names[which]
        local = flat - (0 if which == 0 else int(bounds[which - 1]))
        coord = np.unravel_index(local, params[name].shape) if params[name].ndim else ()
        p = params[name]
        if p.grad is None:
            continue
        auto = float(p.grad[coord]) if p.ndim else float(p.grad)

        orig = p.data[coord] if p.ndim else float(p.data)
        p.data[coord] = orig + eps
        fp = float(loss_fn().data)
        p.data[coord] = orig - eps
        fm = float(loss_fn().data)
        p.data[coord] = orig

        fwd = (fp - f0) / eps
        bwd = (f0 - fm) / eps
        if _is_kink(fwd, bwd):
            result.n_excluded += 1
            result.excluded_coords.append((name,) + tuple(coord))
            continue
        numeric = (fp - fm) / (2.0 * eps)
        err = _rel_err(auto, numeric)
        if err > result.max_rel_err:
            result.max_rel_err = err
            result.worst_coord = (name,) + tuple(coord)
        result.n_checked += 1
    return result
