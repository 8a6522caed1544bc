"""Crossover report bundle: per-reader arm comparisons, agreement, strata.

One builder serves both entry points. The live service hands it cases folded
from a trial log; the standalone report command hands it cases parsed from an
exported readings file. Either way the numbers come out of the same code, so
a report regenerated offline matches the one the service returned.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from ..data import DENSITIES, LOBES
from ..stats import (BENIGN, DIAMETER_BANDS, DIFFICULTY_BANDS, MALIGNANT,
                     MetricReport, ScoredCase, StatsError, delong_paired,
                     diameter_band, difficulty_labels, kappa_matrix, mcnemar,
                     metric_report, paired_delta_bootstrap, reader_case,
                     stratified_report)

ARMS = ("unassisted", "assisted")
COHORTS = ("model",) + ARMS

# canonical ordinal for a bare binary call: mid-band scores
CALL_SCORES = {BENIGN: 3, MALIGNANT: 8}

# stratification groups rendered in every report, with fixed row orders
STRATA_ORDERS: dict[str, tuple[str, ...]] = {
    "diameter": DIAMETER_BANDS,
    "density": DENSITIES,
    "lobe": LOBES,
    "difficulty": DIFFICULTY_BANDS,
}


@dataclass(frozen=True)
class CaseFacts:
    """Ground truth and covariates for one case, keyed off the export row."""
    truth: str
    diameter_mm: float
    density: str
    lobe: str
    lobulation: bool
    spiculation: bool


def _roc_point(report: MetricReport) -> tuple[float | None, float | None]:
    c = report.counts
    fpr = None if c.fp + c.tn == 0 else c.fp / (c.fp + c.tn)
    tpr = None if c.tp + c.fn == 0 else c.tp / (c.tp + c.fn)
    return fpr, tpr


def _mcnemar_subset(ua: Sequence[ScoredCase], aa: Sequence[ScoredCase],
                    keep) -> float | None:
    pairs = [(u, a) for u, a in zip(ua, aa) if keep(u)]
    if not pairs:
        return None
    try:
        return mcnemar([u.call for u, _ in pairs], [a.call for _, a in pairs],
                       [u.truth for u, _ in pairs]).p
    except StatsError:
        return None


def _case_difficulty(arm_cases: Mapping[str, Sequence[ScoredCase]],
                     ) -> dict[str, str]:
    """Difficulty bands from how often the unassisted reads got each case right."""
    counts: dict[str, tuple[int, int]] = {}
    for cases in arm_cases.values():
        for c in cases:
            correct, total = counts.get(c.id, (0, 0))
            counts[c.id] = (correct + int(c.call == c.truth), total + 1)
    return difficulty_labels(counts)


def _strata_labels(facts: Mapping[str, CaseFacts],
                   difficulty: Mapping[str, str]) -> dict[str, dict[str, str]]:
    labels: dict[str, dict[str, str]] = {
        "diameter": {}, "density": {}, "lobe": {}, "difficulty": {}}
    for cid, f in facts.items():
        labels["diameter"][cid] = diameter_band(f.diameter_mm)
        labels["density"][cid] = f.density
        labels["lobe"][cid] = f.lobe
        if cid in difficulty:
            labels["difficulty"][cid] = difficulty[cid]
    return labels


def _stratify_cohort(cases: Sequence[ScoredCase],
                     labels: Mapping[str, Mapping[str, str]],
                     expand) -> dict | None:
    if not cases:
        return None
    out = {}
    for group, order in STRATA_ORDERS.items():
        case_labels = {c.id: labels[group][expand(c.id)] for c in cases}
        strata = stratified_report(cases, case_labels, order=order)
        entries = {}
        for label, s in strata.items():
            d = s.to_dict()
            # pooled arms hold one row per reader-case pair; report the
            # distinct case count alongside the row count
            d["n_cases"] = len({expand(c.id) for c in cases
                                if case_labels[c.id] == label})
            entries[label] = d
        out[group] = entries
    return out


def report_bundle(meta: dict, facts: Mapping[str, CaseFacts],
                  arm_cases: Mapping[str, Mapping[str, Sequence[ScoredCase]]],
                  groups: Mapping[str, str],
                  model: Sequence[ScoredCase],
                  n_resamples: int = 1000) -> dict:
    """Assemble the full report dictionary.

    arm_cases maps arm -> reader -> scored cases, complete readers only, every
    reader covering the same cases in the same sorted order. The p-value
    battery per reader follows the usual split: DeLong for AUC, McNemar for
    sensitivity (malignant cases), specificity (benign cases) and accuracy,
    paired bootstrap for PPV, NPV and F1.
    """
    bundle: dict = dict(meta)
    bundle.setdefault("readers", {})
    bundle["kappa"] = {}
    bundle["stratified"] = {}
    bundle["roc"] = {"readers": [], "model": None}

    if model:
        report = metric_report(model)
        bundle["model"] = {"n": len(model), "metrics": report.to_dict(),
                           "roc_point": _roc_point(report)}
        bundle["roc"]["model"] = _roc_point(report)
    else:
        bundle["model"] = None

    for reader_id in sorted(arm_cases["unassisted"]):
        entry: dict = {"group": groups[reader_id]}
        reports = {}
        for arm in ARMS:
            reports[arm] = metric_report(arm_cases[arm][reader_id])
            entry[arm] = reports[arm].to_dict()
        entry["delta"] = {
            name: (None if reports["assisted"].value(name) is None
                   or reports["unassisted"].value(name) is None
                   else reports["assisted"].value(name)
                   - reports["unassisted"].value(name))
            for name in reports["assisted"].metrics}
        ua = list(arm_cases["unassisted"][reader_id])
        aa = list(arm_cases["assisted"][reader_id])
        deltas = paired_delta_bootstrap(ua, aa, n_resamples=n_resamples)
        entry["delta_ci"] = {name: d.to_dict() for name, d in deltas.items()}
        truth_vec = [c.truth == MALIGNANT for c in ua]
        try:
            d = delong_paired([c.score for c in ua], [c.score for c in aa],
                              truth_vec)
            entry["delong"] = {"auc_unassisted": d.auc_a,
                               "auc_assisted": d.auc_b, "z": d.z, "p": d.p}
            delong_p = d.p
        except StatsError as e:
            entry["delong"] = {"error": str(e)}
            delong_p = None
        m = mcnemar([c.call for c in ua], [c.call for c in aa],
                    [c.truth for c in ua])
        entry["mcnemar"] = {"b": m.b, "c": m.c, "p": m.p, "exact": m.exact}
        entry["p_values"] = {
            "auc": delong_p,
            "sensitivity": _mcnemar_subset(ua, aa,
                                           lambda c: c.truth == MALIGNANT),
            "specificity": _mcnemar_subset(ua, aa,
                                           lambda c: c.truth != MALIGNANT),
            "accuracy": m.p,
            "ppv": deltas["ppv"].p,
            "npv": deltas["npv"].p,
            "f1": deltas["f1"].p,
        }
        points = {arm: _roc_point(reports[arm]) for arm in ARMS}
        entry["roc_point"] = points
        bundle["roc"]["readers"].append(
            {"reader_id": reader_id, "from": points["unassisted"],
             "to": points["assisted"]})
        bundle["readers"][reader_id] = entry

    difficulty = _case_difficulty(arm_cases["unassisted"])
    labels = _strata_labels(facts, difficulty)
    for arm in ARMS:
        calls = {rid: [c.call == MALIGNANT for c in cases]
                 for rid, cases in arm_cases[arm].items()}
        if len(calls) >= 2:
            try:
                bundle["kappa"][arm] = kappa_matrix(calls).to_dict()
            except StatsError as e:
                bundle["kappa"][arm] = {"error": str(e)}
        else:
            bundle["kappa"][arm] = None
        pooled = [reader_case(f"{rid}:{c.id}", c.truth, int(c.score), c.call)
                  for rid, cases in sorted(arm_cases[arm].items())
                  for c in cases]
        bundle["stratified"][arm] = _stratify_cohort(
            pooled, labels, expand=lambda pid: pid.split(":", 1)[1])
    bundle["stratified"]["model"] = (
        None if not model or not difficulty
        else _stratify_cohort(list(model), labels, expand=lambda cid: cid))
    return bundle
