"""Logistic regression with Wald intervals, for covariate-association tables."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import math

import numpy as np

from .metrics import StatsError

Z_975 = 1.959963984540054   # standard normal 97.5% quantile
ETA_CLIP = 35.0             # sigmoid saturates within float64 beyond this
SEPARATION_COEF = 10.0      # log-odds scale at which a clean margin means separation


@dataclass(frozen=True)
class LogisticFit:
    names: tuple[str, ...]
    coef: np.ndarray
    std_err: np.ndarray
    z: np.ndarray
    p_value: np.ndarray
    odds_ratio: np.ndarray
    or_ci: np.ndarray        # (k, 2) interval on the odds-ratio scale
    separated: bool
    converged: bool
    n_iter: int

    def to_rows(self) -> list[dict]:
        rows = []
        for i, name in enumerate(self.names):
            rows.append({
                "term": name,
                "coef": float(self.coef[i]),
                "odds_ratio": float(self.odds_ratio[i]),
                "or_ci_low": float(self.or_ci[i, 0]),
                "or_ci_high": float(self.or_ci[i, 1]),
                "p_value": float(self.p_value[i]),
            })
        return rows


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -ETA_CLIP, ETA_CLIP)))


def logistic_fit(x: Sequence, y: Sequence, feature_names: Sequence[str] | None = None,
                 max_iter: int = 100, tol: float = 1e-10) -> LogisticFit:
    """Maximum-likelihood fit by iteratively reweighted least squares.

    An intercept column is always prepended. Complete separation is detected
    (every margin correct at large coefficient scale) and reported on the
    result rather than raised, since the direction of effect is still
    meaningful even when the Wald machinery is not.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise StatsError("feature matrix must be 2-D")
    y = np.asarray(y)
    if y.dtype.kind == "b":
        y = y.astype(float)
    else:
        y = np.asarray(y, dtype=float)
        if not np.isin(y, (0.0, 1.0)).all():
            raise StatsError("outcomes must be binary 0/1")
    n, k = x.shape
    if y.shape != (n,):
        raise StatsError(f"{n} rows but {y.shape[0]} outcomes")
    if n <= k + 1:
        raise StatsError(f"need more than {k + 1} rows to fit {k + 1} coefficients")
    if not np.isfinite(x).all():
        raise StatsError("non-finite feature values")

    design = np.hstack([np.ones((n, 1)), x])
    if feature_names is None:
        feature_names = tuple(f"x{i + 1}" for i in range(k))
    elif len(feature_names) != k:
        raise StatsError(f"{k} features but {len(feature_names)} names")
    names = ("intercept",) + tuple(feature_names)

    beta = np.zeros(k + 1)
    converged = False
    n_iter = 0
    hess = np.eye(k + 1)
    for n_iter in range(1, max_iter + 1):
        eta = design @ beta
        p = _sigmoid(eta)
        w = p * (1.0 - p)
        grad = design.T @ (y - p)
        hess = design.T @ (design * w[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise StatsError("singular design matrix") from None
        if not np.isfinite(step).all():
            raise StatsError("singular design matrix")
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break

    eta = design @ beta
    margins = np.where(y == 1.0, eta, -eta)
    separated = bool(np.all(margins > 0.0) and np.max(np.abs(beta)) > SEPARATION_COEF)

    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        raise StatsError("singular design matrix") from None
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        zvals = np.where(se > 0.0, beta / se, np.where(beta == 0.0, 0.0, np.inf))
    pvals = np.array([math.erfc(abs(z) / math.sqrt(2.0)) if np.isfinite(z) else 0.0
                      for z in zvals])
    with np.errstate(over="ignore"):  # separated fits report unbounded intervals
        or_ci = np.stack([np.exp(beta - Z_975 * se), np.exp(beta + Z_975 * se)], axis=1)
    return LogisticFit(names=names, coef=beta, std_err=se, z=zvals, p_value=pvals,
                       odds_ratio=np.exp(beta), or_ci=or_ci,
                       separated=separated, converged=converged, n_iter=n_iter)
