"""Confusion metrics, ROC/AUC, F1 thresholding, bootstrap intervals, patient rollup."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

BENIGN = "benign"
MALIGNANT = "malignant"
CLASSES = (BENIGN, MALIGNANT)

METRIC_NAMES = ("sensitivity", "specificity", "accuracy", "ppv", "npv",
                "f1", "fpr", "fnr")


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredCase:
    """One scored diagnosis: model probability or reader ordinal plus a binary call."""
    id: str
    truth: str
    score: float
    call: str

    def __post_init__(self):
        if self.truth not in CLASSES:
            raise StatsError(f"unknown truth {self.truth!r}")
        if self.call not in CLASSES:
            raise StatsError(f"unknown call {self.call!r}")

    @property
    def truth_positive(self) -> bool:
        return self.truth == MALIGNANT

    @property
    def call_positive(self) -> bool:
        return self.call == MALIGNANT


def band_call(score: int) -> str:
    """The call a 1-10 risk score commits to: 1-5 benign, 6-10 malignant."""
    if score != int(score) or not (1 <= score <= 10):
        raise StatsError(f"reader score must be an integer in [1, 10], got {score!r}")
    return BENIGN if score <= 5 else MALIGNANT


def reader_case(id: str, truth: str, score: int, call: str) -> ScoredCase:
    """ScoredCase for a reader rating; enforces the score band / call pairing."""
    expected = band_call(score)
    if call != expected:
        raise StatsError(
            f"call {call!r} inconsistent with score {score} (band says {expected!r})")
    return ScoredCase(id=id, truth=truth, score=float(score), call=call)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if v < 0 or v != int(v):
                raise StatsError(f"{name} must be a non-negative integer, got {v!r}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_cases(cls, cases: Sequence[ScoredCase]) -> "ConfusionCounts":
        tp = fp = tn = fn = 0
        for c in cases:
            if c.call_positive:
                if c.truth_positive:
                    tp += 1
                else:
                    fp += 1
            else:
                if c.truth_positive:
                    fn += 1
                else:
                    tn += 1
        return cls(tp=tp, fp=fp, tn=tn, fn=fn)


def point_metrics(counts: ConfusionCounts) -> dict[str, float | None]:
    """The eight confusion-table metrics; zero-denominator entries are None.

    The complements are computed as 1 - sensitivity and 1 - specificity so the
    pairings sum to exactly 1.0 in floating point, not just mathematically.
    """
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn

    def ratio(num: int, den: int) -> float | None:
        return num / den if den else None

    sens = ratio(tp, tp + fn)
    spec = ratio(tn, tn + fp)
    out: dict[str, float | None] = {
        "sensitivity": sens,
        "specificity": spec,
        "accuracy": ratio(tp + tn, counts.total),
        "ppv": ratio(tp, tp + fp),
        "npv": ratio(tn, tn + fn),
        "f1": ratio(2 * tp, 2 * tp + fp + fn),
        "fpr": None if spec is None else 1.0 - spec,
        "fnr": None if sens is None else 1.0 - sens,
    }
    return out


def compute_metrics(cases: Sequence[ScoredCase]) -> tuple[ConfusionCounts, dict[str, float | None]]:
    if not cases:
        raise StatsError("no cases to score")
    counts = ConfusionCounts.from_cases(cases)
    return counts, point_metrics(counts)


def _score_label_arrays(cases: Sequence[ScoredCase]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray([c.score for c in cases], dtype=float)
    labels = np.asarray([1 if c.truth_positive else 0 for c in cases], dtype=np.int64)
    return scores, labels


def roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[list[tuple[int, int]], int, int]:
    """Cumulative (fp, tp) counts swept over distinct thresholds, descending.

    First point is (0, 0); the last is (N, P). Integer counts so callers can
    do exact arithmetic before any division.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise StatsError("scores and labels must be matching 1-d sequences")
    if scores.size == 0:
        raise StatsError("no cases to score")
    p = int(labels.sum())
    n = int(labels.size - p)
    if p == 0 or n == 0:
        raise StatsError("AUC undefined: only one class present")
    uniq, inverse = np.unique(scores, return_inverse=True)
    pos_at = np.bincount(inverse, weights=labels, minlength=uniq.size).astype(np.int64)
    tot_at = np.bincount(inverse, minlength=uniq.size)
    # descending threshold order
    tp_cum = np.cumsum(pos_at[::-1])
    fp_cum = np.cumsum((tot_at - pos_at)[::-1])
    points = [(0, 0)] + [(int(f), int(t)) for f, t in zip(fp_cum, tp_cum)]
    return points, p, n


def auc_from_scores(scores: np.ndarray, labels: np.ndarray) -> float:
    """Trapezoid area under the ROC, accumulated in exact integers."""
    points, p, n = roc_points(scores, labels)
    acc = 0
    for (fp0, tp0), (fp1, tp1) in zip(points, points[1:]):
        acc += (fp1 - fp0) * (tp1 + tp0)
    return acc / (2 * p * n)


def roc_auc(cases: Sequence[ScoredCase]) -> tuple[tuple[tuple[float, float], ...], float]:
    """ROC operating points as (FPR, TPR) plus the trapezoid AUC."""
    scores, labels = _score_label_arrays(cases)
    points, p, n = roc_points(scores, labels)
    curve = tuple((fp / n, tp / p) for fp, tp in points)
    acc = 0
    for (fp0, tp0), (fp1, tp1) in zip(points, points[1:]):
        acc += (fp1 - fp0) * (tp1 + tp0)
    return curve, acc / (2 * p * n)


def _f1_candidates(scores: np.ndarray) -> np.ndarray:
    uniq = np.unique(scores)
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    return np.concatenate(([-np.inf], mids, [np.inf]))


def select_threshold_max_f1(cases: Sequence[ScoredCase]) -> float:
    """Lowest threshold maximizing F1 of the rule `call malignant iff score >= t`.

    Candidates are midpoints of adjacent distinct scores plus -inf/+inf
    sentinels (call everything / call nothing).
    """
    scores, labels = _score_label_arrays(cases)
    p = int(labels.sum())
    if p == 0 or p == labels.size:
        raise StatsError("threshold selection undefined: only one class present")
    cand = _f1_candidates(scores)
    calls = scores[None, :] >= cand[:, None]
    pos = labels[None, :].astype(bool)
    tp = (calls & pos).sum(axis=1)
    fp = (calls & ~pos).sum(axis=1)
    fn = p - tp
    f1 = 2 * tp / (2 * tp + fp + fn)        # denominator >= p > 0 always
    return float(cand[int(np.argmax(f1))])  # argmax takes the first, lowest candidate


def bootstrap_ci(statistic: Callable[[Sequence[ScoredCase]], float],
                 cases: Sequence[ScoredCase],
                 n_resamples: int = 1000,
                 rng: np.random.Generator | None = None,
                 level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval for `statistic` over case resamples.

    Resamples on which the statistic is undefined (raises StatsError, e.g.
    a single-class AUC draw) are redrawn; a budget of 20x the requested
    resamples caps the retries.
    """
    if not cases:
        raise StatsError("no cases to resample")
    if not (0.0 < level < 1.0):
        raise StatsError(f"level must be in (0, 1), got {level}")
    if rng is None:
        rng = np.random.default_rng(0)
    n = len(cases)
    budget = 20 * n_resamples
    values = np.empty(n_resamples, dtype=float)
    got = 0
    while got < n_resamples:
        if budget <= 0:
            raise StatsError("bootstrap redraw cap exceeded: statistic undefined "
                             "on too many resamples")
        budget -= 1
        idx = rng.integers(0, n, size=n)
        try:
            values[got] = statistic([cases[i] for i in idx])
        except StatsError:
            continue
        got += 1
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def patient_aggregate(cases: Sequence[ScoredCase],
                      patient_ids: Sequence[str]) -> list[ScoredCase]:
    """Roll nodule cases up to patients: max score, any-malignant call and truth.

    `patient_ids[i]` names the patient owning `cases[i]`. Output order follows
    first appearance.
    """
    if len(cases) != len(patient_ids):
        raise StatsError("patient_ids must parallel cases")
    if not cases:
        raise StatsError("no cases to aggregate")
    grouped: dict[str, list[ScoredCase]] = {}
    for pid, case in zip(patient_ids, cases):
        grouped.setdefault(pid, []).append(case)
    out = []
    for pid, group in grouped.items():
        out.append(ScoredCase(
            id=pid,
            truth=MALIGNANT if any(c.truth_positive for c in group) else BENIGN,
            score=max(c.score for c in group),
            call=MALIGNANT if any(c.call_positive for c in group) else BENIGN,
        ))
    return out


@dataclass(frozen=True)
class MetricValue:
    value: float | None
    ci: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        d: dict = {"value": self.value}
        if self.ci is not None:
            d["ci"] = [self.ci[0], self.ci[1]]
        return d


@dataclass(frozen=True)
class MetricReport:
    level: str          # "nodule" or "patient"
    n: int
    counts: ConfusionCounts
    metrics: Mapping[str, MetricValue]

    def __post_init__(self):
        if self.level not in ("nodule", "patient"):
            raise StatsError(f"unknown report level {self.level!r}")

    def value(self, name: str) -> float | None:
        return self.metrics[name].value

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "n": self.n,
            "counts": {"tp": self.counts.tp, "fp": self.counts.fp,
                       "tn": self.counts.tn, "fn": self.counts.fn},
            "metrics": {k: v.to_dict() for k, v in self.metrics.items()},
        }


def _metric_statistic(name: str) -> Callable[[Sequence[ScoredCase]], float]:
    if name == "auc":
        def stat(cs: Sequence[ScoredCase]) -> float:
            scores, labels = _score_label_arrays(cs)
            return auc_from_scores(scores, labels)
        return stat

    def stat(cs: Sequence[ScoredCase]) -> float:
        _, vals = compute_metrics(cs)
        v = vals[name]
        if v is None:
            raise StatsError(f"{name} undefined on resample")
        return v
    return stat


def metric_report(cases: Sequence[ScoredCase],
                  level: str = "nodule",
                  rng: np.random.Generator | None = None,
                  n_resamples: int = 1000,
                  with_ci: bool = True) -> MetricReport:
    """Point metrics plus AUC, each with a percentile-bootstrap 95% CI."""
    if not cases:
        raise StatsError("no cases to report")
    if rng is None:
        rng = np.random.default_rng(0)
    counts, vals = compute_metrics(cases)
    scores, labels = _score_label_arrays(cases)
    named: dict[str, float | None] = {"auc": None}
    try:
        named["auc"] = auc_from_scores(scores, labels)
    except StatsError:
        pass
    named.update(vals)
    metrics: dict[str, MetricValue] = {}
    for name, value in named.items():
        ci = None
        if with_ci and value is not None:
            ci = bootstrap_ci(_metric_statistic(name), cases,
                              n_resamples=n_resamples, rng=rng)
        metrics[name] = MetricValue(value=value, ci=ci)
    return MetricReport(level=level, n=len(cases), counts=counts, metrics=metrics)
