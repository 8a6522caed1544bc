"""Paired comparisons: AUC difference, discordant calls, and rater agreement."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .metrics import CLASSES, MALIGNANT, StatsError, auc_from_scores

EXACT_MCNEMAR_LIMIT = 25  # discordant-pair count below which the binomial is used

KAPPA_BAND_EDGES = (
    (0.2, "poor"),
    (0.4, "fair"),
    (0.6, "moderate"),
    (0.8, "substantial"),
)


def _truth_bool(truth: Sequence) -> np.ndarray:
    arr = np.asarray(truth)
    if arr.dtype.kind == "b":
        return arr
    if arr.dtype.kind in "iu":
        if not np.isin(arr, (0, 1)).all():
            raise StatsError("integer truth must be 0/1")
        return arr.astype(bool)
    bad = set(arr.tolist()) - set(CLASSES)
    if bad:
        raise StatsError(f"unknown class labels {sorted(bad)}")
    return arr == MALIGNANT


def _calls_bool(calls: Sequence, name: str) -> np.ndarray:
    try:
        return _truth_bool(calls)
    except StatsError as e:
        raise StatsError(f"{name}: {e}") from None


# ---- DeLong paired AUC comparison --------------------------------------------


@dataclass(frozen=True)
class DelongResult:
    auc_a: float
    auc_b: float
    var_diff: float   # estimated variance of auc_a - auc_b
    z: float
    p: float


def _placements(pos: np.ndarray, neg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-case placement values: wins plus half-ties against the other class."""
    gt = pos[:, None] > neg[None, :]
    eq = pos[:, None] == neg[None, :]
    psi = gt + 0.5 * eq
    return psi.mean(axis=1), psi.mean(axis=0)


def delong_paired(scores_a: Sequence[float], scores_b: Sequence[float],
                  truth: Sequence) -> DelongResult:
    """Two-sided test of AUC_A - AUC_B on the same cases.

    Identical score vectors short-circuit to z=0, p=1; the reported AUCs use
    the same trapezoid routine as roc_auc.
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    t = _truth_bool(truth)
    if a.shape != t.shape or b.shape != t.shape or a.ndim != 1:
        raise StatsError(
            f"paired scores need matching 1-D lengths, got {a.shape}, {b.shape}, {t.shape}")
    m, n = int(t.sum()), int((~t).sum())
    if m == 0 or n == 0:
        raise StatsError("AUC comparison needs both classes")

    auc_a = auc_from_scores(a, t)
    auc_b = auc_from_scores(b, t)

    if np.array_equal(a, b):
        return DelongResult(auc_a=auc_a, auc_b=auc_b, var_diff=0.0, z=0.0, p=1.0)
    if m < 2 or n < 2:
        raise StatsError("variance estimate needs at least two cases per class")

    v10_a, v01_a = _placements(a[t], a[~t])
    v10_b, v01_b = _placements(b[t], b[~t])
    s10 = np.cov(np.stack([v10_a, v10_b]), ddof=1)
    s01 = np.cov(np.stack([v01_a, v01_b]), ddof=1)
    var = float((s10[0, 0] + s10[1, 1] - 2.0 * s10[0, 1]) / m
                + (s01[0, 0] + s01[1, 1] - 2.0 * s01[0, 1]) / n)
    diff = auc_a - auc_b
    if var <= 0.0:
        if diff == 0.0:
            return DelongResult(auc_a=auc_a, auc_b=auc_b, var_diff=0.0, z=0.0, p=1.0)
        raise StatsError("zero variance estimate with differing AUCs")
    z = diff / math.sqrt(var)
    return DelongResult(auc_a=auc_a, auc_b=auc_b, var_diff=var, z=z,
                        p=math.erfc(abs(z) / math.sqrt(2.0)))


# ---- McNemar discordant-pair test ---------------------------------------------


@dataclass(frozen=True)
class McnemarResult:
    b: int            # A correct, B wrong
    c: int            # A wrong, B correct
    statistic: float  # min(b, c) under the exact test, else corrected chi-square
    p: float
    exact: bool


def mcnemar(calls_a: Sequence, calls_b: Sequence, truth: Sequence) -> McnemarResult:
    """Paired correctness comparison, two-sided.

    Exact binomial when the discordant count is under 25, otherwise the
    continuity-corrected chi-square on one degree of freedom.
    """
    ca = _calls_bool(calls_a, "calls_a")
    cb = _calls_bool(calls_b, "calls_b")
    t = _truth_bool(truth)
    if not (ca.shape == cb.shape == t.shape) or t.ndim != 1:
        raise StatsError("paired calls need matching 1-D lengths")
    correct_a = ca == t
    correct_b = cb == t
    b = int(np.sum(correct_a & ~correct_b))
    c = int(np.sum(~correct_a & correct_b))
    n = b + c
    if n < EXACT_MCNEMAR_LIMIT:
        k = min(b, c)
        tail = sum(math.comb(n, i) for i in range(k + 1))
        p = min(1.0, 2.0 * tail / 2 ** n) if n else 1.0
        return McnemarResult(b=b, c=c, statistic=float(k), p=p, exact=True)
    stat = (abs(b - c) - 1.0) ** 2 / n
    p = math.erfc(math.sqrt(stat / 2.0))  # chi-square(1) survival
    return McnemarResult(b=b, c=c, statistic=stat, p=p, exact=False)


# ---- Cohen's kappa -------------------------------------------------------------


def cohens_kappa(calls_a: Sequence, calls_b: Sequence) -> float:
    """(p_o - p_e) / (1 - p_e) on the binary calls, via integer counts."""
    ca = _calls_bool(calls_a, "calls_a")
    cb = _calls_bool(calls_b, "calls_b")
    if ca.shape != cb.shape or ca.ndim != 1 or ca.size == 0:
        raise StatsError("kappa needs two non-empty call vectors of equal length")
    n = ca.size
    n11 = int(np.sum(ca & cb))
    n00 = int(np.sum(~ca & ~cb))
    a_pos, b_pos = int(ca.sum()), int(cb.sum())
    # integer numerator/denominator keep the independence and perfect cases exact
    expected = a_pos * b_pos + (n - a_pos) * (n - b_pos)
    denom = n * n - expected
    if denom == 0:
        raise StatsError("kappa undefined: both raters constant and identical")
    return (n * (n11 + n00) - expected) / denom


def kappa_band(kappa: float) -> str:
    """Agreement label for a kappa value, poor through almost perfect."""
    if kappa < KAPPA_BAND_EDGES[0][0]:
        return KAPPA_BAND_EDGES[0][1]
    for edge, label in KAPPA_BAND_EDGES[1:]:
        if kappa <= edge:
            return label
    return "almost perfect"


@dataclass(frozen=True)
class KappaMatrix:
    readers: tuple[str, ...]
    matrix: np.ndarray       # (R, R) symmetric, unit diagonal
    overall: float           # mean of the R*(R-1)/2 pairwise kappas
    overall_band: str

    def to_dict(self) -> dict:
        return {
            "readers": list(self.readers),
            "matrix": [[float(v) for v in row] for row in self.matrix],
            "overall": self.overall,
            "band": self.overall_band,
        }


def kappa_matrix(calls_by_reader: Mapping[str, Sequence]) -> KappaMatrix:
    """Pairwise kappas for every reader pair plus their mean."""
    readers = tuple(calls_by_reader)
    if len(readers) < 2:
        raise StatsError("pairwise agreement needs at least two readers")
    vectors = [_calls_bool(calls_by_reader[r], r) for r in readers]
    length = vectors[0].size
    if any(v.size != length for v in vectors):
        raise StatsError("readers rated different numbers of cases")
    r = len(readers)
    mat = np.eye(r)
    pair_values = []
    for i in range(r):
        for j in range(i + 1, r):
            try:
                k = cohens_kappa(vectors[i], vectors[j])
            except StatsError as e:
                raise StatsError(f"{readers[i]} vs {readers[j]}: {e}") from None
            mat[i, j] = mat[j, i] = k
            pair_values.append(k)
    overall = float(np.mean(pair_values))
    return KappaMatrix(readers=readers, matrix=mat, overall=overall,
                       overall_band=kappa_band(overall))


# ---- Paired bootstrap over metric differences ----------------------------------

DELTA_METRICS = ("auc", "sensitivity", "specificity", "accuracy",
                 "ppv", "npv", "f1")


@dataclass(frozen=True)
class DeltaEstimate:
    delta: float | None     # point estimate, b minus a; None when undefined
    lo: float | None        # 95% percentile interval over paired resamples
    hi: float | None
    p: float | None         # two-sided sign probability with +1 smoothing
    n_effective: int        # resamples on which the difference was defined

    def to_dict(self) -> dict:
        return {"delta": self.delta, "ci": None if self.lo is None
                else (self.lo, self.hi), "p": self.p,
                "n_effective": self.n_effective}


def _case_delta(name: str, a: Sequence, b: Sequence) -> float | None:
    from .metrics import _metric_statistic
    stat = _metric_statistic(name)
    try:
        return float(stat(b)) - float(stat(a))
    except StatsError:
        return None


def paired_delta_bootstrap(cases_a: Sequence, cases_b: Sequence,
                           metrics: Sequence[str] = DELTA_METRICS,
                           n_resamples: int = 1000,
                           rng: np.random.Generator | None = None,
                           ) -> dict[str, DeltaEstimate]:
    """Case-paired percentile bootstrap of metric differences (b minus a).

    Both readings of a case travel together in every resample, so the interval
    reflects the paired design. Resamples on which a metric is undefined (an
    empty denominator) are dropped for that metric alone and counted in
    n_effective. The sign probability is 2 * min(P(d* <= 0), P(d* >= 0)) with
    add-one smoothing, capped at 1; it is a resampling summary, not an exact
    test.
    """
    if len(cases_a) != len(cases_b) or not cases_a:
        raise StatsError("paired bootstrap needs equal non-empty case lists")
    if [c.id for c in cases_a] != [c.id for c in cases_b]:
        raise StatsError("paired bootstrap needs the same cases in the same order")
    if rng is None:
        rng = np.random.default_rng(0)
    unknown = set(metrics) - set(DELTA_METRICS)
    if unknown:
        raise StatsError(f"unknown delta metrics {sorted(unknown)}")

    n = len(cases_a)
    points = {name: _case_delta(name, cases_a, cases_b) for name in metrics}
    draws: dict[str, list[float]] = {name: [] for name in metrics}
    for _ in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        ra = [cases_a[i] for i in idx]
        rb = [cases_b[i] for i in idx]
        for name in metrics:
            d = _case_delta(name, ra, rb)
            if d is not None:
                draws[name].append(d)

    out: dict[str, DeltaEstimate] = {}
    for name in metrics:
        got = np.asarray(draws[name])
        m = got.size
        if points[name] is None or m == 0:
            out[name] = DeltaEstimate(delta=points[name], lo=None, hi=None,
                                      p=None, n_effective=m)
            continue
        lo, hi = np.percentile(got, (2.5, 97.5))
        le = int(np.sum(got <= 0.0)) + 1
        ge = int(np.sum(got >= 0.0)) + 1
        p = min(1.0, 2.0 * min(le, ge) / (m + 1))
        out[name] = DeltaEstimate(delta=points[name], lo=float(lo),
                                  hi=float(hi), p=p, n_effective=m)
    return out
