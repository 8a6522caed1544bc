"""Per-stratum metric reports and the built-in banding rules."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .metrics import MetricReport, ScoredCase, StatsError, metric_report

DIAMETER_BANDS = ("4-10mm", "10-20mm", "20-30mm")
DIFFICULTY_BANDS = ("low", "intermediate", "high")
THIRD = 1.0 / 3.0
TWO_THIRDS = 2.0 / 3.0


def diameter_band(diameter_mm: float) -> str:
    """Size band; lower edges inclusive, 30 mm closes the top band."""
    if not 4.0 <= diameter_mm <= 30.0:
        raise StatsError(f"diameter {diameter_mm} mm outside the 4-30 banded range")
    if diameter_mm < 10.0:
        return DIAMETER_BANDS[0]
    if diameter_mm < 20.0:
        return DIAMETER_BANDS[1]
    return DIAMETER_BANDS[2]


def difficulty_band(correct_fraction: float) -> str:
    """Difficulty from the unassisted-reader correctness fraction.

    Strictly above two thirds is low difficulty, strictly below one third is
    high; both boundaries land in the intermediate band.
    """
    if not 0.0 <= correct_fraction <= 1.0:
        raise StatsError(f"correctness fraction {correct_fraction} outside [0, 1]")
    if correct_fraction > TWO_THIRDS:
        return DIFFICULTY_BANDS[0]
    if correct_fraction < THIRD:
        return DIFFICULTY_BANDS[2]
    return DIFFICULTY_BANDS[1]


def difficulty_labels(correct_counts: Mapping[str, tuple[int, int]]) -> dict[str, str]:
    """Case id -> difficulty band from (readers correct, readers total)."""
    labels = {}
    for case_id, (n_correct, n_readers) in correct_counts.items():
        if n_readers <= 0 or not 0 <= n_correct <= n_readers:
            raise StatsError(f"bad correctness count {n_correct}/{n_readers} "
                             f"for case {case_id!r}")
        labels[case_id] = difficulty_band(n_correct / n_readers)
    return labels


@dataclass(frozen=True)
class StratumReport:
    label: str
    n: int
    report: MetricReport | None    # None marks an empty stratum

    def to_dict(self) -> dict:
        return {"label": self.label, "n": self.n,
                "report": None if self.report is None else self.report.to_dict()}


def stratified_report(cases: Sequence[ScoredCase],
                      labels: Mapping[str, str],
                      order: Sequence[str] | None = None,
                      level: str = "nodule",
                      rng: np.random.Generator | None = None,
                      n_resamples: int = 1000,
                      with_ci: bool = True) -> dict[str, StratumReport]:
    """Metric reports per stratum label.

    Every case id must appear in labels. `order` fixes which strata are
    reported (empty ones included); by default strata appear in first-seen
    case order. With rng=None each stratum reuses the default bootstrap seed,
    so a single all-covering stratum reproduces the unstratified report.
    """
    if not cases:
        raise StatsError("no cases to stratify")
    missing = [c.id for c in cases if c.id not in labels]
    if missing:
        raise StatsError(f"cases without a stratum label: {missing[:5]}")

    grouped: dict[str, list[ScoredCase]] = {}
    seen_order: list[str] = []
    for case in cases:
        label = labels[case.id]
        if label not in grouped:
            grouped[label] = []
            seen_order.append(label)
        grouped[label].append(case)

    report_order = list(order) if order is not None else seen_order
    out: dict[str, StratumReport] = {}
    for label in report_order:
        members = grouped.get(label, [])
        if not members:
            out[label] = StratumReport(label=label, n=0, report=None)
            continue
        stratum_rng = rng if rng is not None else np.random.default_rng(0)
        rep = metric_report(members, level=level, rng=stratum_rng,
                            n_resamples=n_resamples, with_ci=with_ci)
        out[label] = StratumReport(label=label, n=len(members), report=rep)
    return out
