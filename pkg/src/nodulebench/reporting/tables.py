"""Delimited report tables.

Every number that later lands in a figure is formatted here first and reused
verbatim, so a plot annotation can never drift from its table cell.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

from ..data import DENSITIES, LOBES
from ..model import ABLATION_TABLE
from ..stats import LogisticFit, StatsError, logistic_fit
from .bundle import CaseFacts

METRIC_KEYS = ("auc", "sensitivity", "specificity", "accuracy",
               "ppv", "npv", "f1")
METRIC_TITLES = ("AUC", "Sensitivity", "Specificity", "Accuracy",
                 "PPV", "NPV", "F1-score")

P_FLOOR = 0.001          # below this, p prints as "<0.001"

COMPONENT_NAMES = {"vit": "ViT", "resnet50": "ResNet50", "cal_adl": "CAL-ADL",
                   "gcn": "GCN", "concat": "Concat", "none": ""}


def fmt3(x: float | None) -> str:
    return "" if x is None else f"{x:.3f}"


def p_label(p: float | None) -> str:
    if p is None:
        return ""
    if p < P_FLOOR:
        return f"<{P_FLOOR}"
    return fmt3(p)


def metric_cell(entry: Mapping | None) -> str:
    """"0.939 (0.930, 0.948)" from a metric dict; bare value without a CI."""
    if entry is None or entry.get("value") is None:
        return ""
    value = fmt3(entry["value"])
    ci = entry.get("ci")
    if ci is None:
        return value
    return f"{value} ({fmt3(ci[0])}, {fmt3(ci[1])})"


def delta_cell(entry: Mapping | None) -> str:
    if entry is None or entry.get("delta") is None:
        return ""
    value = fmt3(entry["delta"])
    ci = entry.get("ci")
    if ci is None:
        return value
    return f"{value} ({fmt3(ci[0])}, {fmt3(ci[1])})"


def _metric_cells(report: Mapping | None) -> list[str]:
    if report is None:
        return [""] * len(METRIC_KEYS)
    metrics = report["metrics"]
    return [metric_cell(metrics.get(k)) for k in METRIC_KEYS]


def model_performance_table(datasets: Sequence[tuple[str, Mapping | None]],
                            ) -> tuple[list[str], list[list[str]]]:
    """One row per dataset: the model's seven metrics with intervals."""
    header = ["dataset"] + list(METRIC_TITLES)
    rows = [[name] + _metric_cells(report) for name, report in datasets]
    return header, rows


def ablation_table(entries: Sequence[Mapping],
                   ) -> tuple[list[str], list[list[str]]]:
    """One row per ablation id: branch composition plus the seven metrics."""
    header = (["model", "global branch", "local branch", "fusion"]
              + list(METRIC_TITLES))
    rows = []
    for entry in sorted(entries, key=lambda e: int(e["model_id"])):
        mid = int(entry["model_id"])
        g, l, f = ABLATION_TABLE[mid]
        rows.append([f"model {mid}", COMPONENT_NAMES[g], COMPONENT_NAMES[l],
                     COMPONENT_NAMES[f]] + _metric_cells(entry.get("metrics")))
    return header, rows


def reader_comparison_table(bundle: Mapping,
                            ) -> tuple[list[str], list[list[str]]]:
    """Four lines per reader: each arm, the paired difference, and p-values."""
    header = ["reader", "row"] + list(METRIC_TITLES)
    rows: list[list[str]] = []
    for reader_id, entry in bundle["readers"].items():
        rows.append([reader_id, "unassisted"]
                    + _metric_cells(entry["unassisted"]))
        rows.append(["", "assisted"] + _metric_cells(entry["assisted"]))
        rows.append(["", "difference"]
                    + [delta_cell(entry["delta_ci"].get(k))
                       for k in METRIC_KEYS])
        rows.append(["", "p-value"]
                    + [p_label(entry["p_values"].get(k))
                       for k in METRIC_KEYS])
    return header, rows


STRATA_SECTIONS = (("diameter", "Nodule diameter (mm)"),
                   ("density", "Nodule density"),
                   ("lobe", "Nodule location"),
                   ("difficulty", "Diagnostic difficulty"))
STRATA_METRICS = ("auc", "sensitivity", "specificity")
COHORT_TITLES = (("model", "model"), ("unassisted", "unassisted reader"),
                 ("assisted", "assisted reader"))


def stratified_table(bundle: Mapping) -> tuple[list[str], list[list[str]]]:
    """Strata down the rows; AUC, sensitivity and specificity for the model
    and both reader arms across the columns."""
    header = ["stratum"]
    for key in STRATA_METRICS:
        title = METRIC_TITLES[METRIC_KEYS.index(key)]
        header += [f"{title} ({label})" for _, label in COHORT_TITLES]
    rows: list[list[str]] = []
    strat = bundle["stratified"]
    for group, section in STRATA_SECTIONS:
        cohorts = {c: (strat.get(c) or {}).get(group, {})
                   for c, _ in COHORT_TITLES}
        labels: list[str] = []
        for c, _ in COHORT_TITLES:
            for label in cohorts[c]:
                if label not in labels:
                    labels.append(label)
        if not labels:
            continue
        rows.append([section] + [""] * (len(header) - 1))
        for label in labels:
            pooled_n = max(
                (cohorts[c].get(label) or {}).get(
                    "n_cases", (cohorts[c].get(label) or {}).get("n", 0))
                for c, _ in COHORT_TITLES)
            cells = []
            for key in STRATA_METRICS:
                for c, _ in COHORT_TITLES:
                    stratum = cohorts[c].get(label)
                    report = (stratum or {}).get("report")
                    cells.append("" if report is None
                                 else metric_cell(report["metrics"].get(key)))
            rows.append([f"{label} (n={pooled_n})"] + cells)
    return header, rows


# ---- Logistic regression of case features on the model's calls -----------------

_REGRESSION_SECTIONS = (
    ("diameter", "Nodule diameter (mm)", None),
    ("density", f"Nodule density (reference: {DENSITIES[0]})", DENSITIES),
    ("lobe", f"Nodule location (reference: {LOBES[0]})", LOBES),
    ("spiculation", "Spiculation (reference: no)", None),
    ("lobulation", "Lobulation (reference: no)", None),
)


def _design(facts: Mapping[str, CaseFacts], case_ids: Sequence[str],
            family: str) -> tuple[list[list[float]], list[str]]:
    columns: list[tuple[str, list[float]]] = []
    if family == "diameter":
        columns.append(("diameter", [facts[c].diameter_mm for c in case_ids]))
    elif family == "density":
        for level in DENSITIES[1:]:
            columns.append((level, [float(facts[c].density == level)
                                    for c in case_ids]))
    elif family == "lobe":
        for level in LOBES[1:]:
            columns.append((level, [float(facts[c].lobe == level)
                                    for c in case_ids]))
    else:
        columns.append((family, [float(getattr(facts[c], family))
                                 for c in case_ids]))
    names = [name for name, _ in columns]
    matrix = [[col[i] for _, col in columns] for i in range(len(case_ids))]
    return matrix, names


def _or_fmt(x: float) -> str:
    # degenerate fits push odds ratios to the float range edges; cap the
    # printout rather than emit a 40-digit cell
    if x != x:
        return ""
    if x > 999.99:
        return ">999.99"
    if 0.0 < x < 0.01:
        return "<0.01"
    return f"{x:.2f}"


def _or_cell(fit: LogisticFit | None, term: str) -> tuple[str, str]:
    if fit is None:
        return "", ""
    for row in fit.to_rows():
        if row["term"] == term:
            cell = (f"{_or_fmt(row['odds_ratio'])} "
                    f"({_or_fmt(row['or_ci_low'])},{_or_fmt(row['or_ci_high'])})")
            return cell, p_label(row["p_value"])
    return "", ""


REGRESSION_HEADER = ["variable", "OR univariable (95% CI)", "P univariable",
                     "OR multivariable (95% CI)", "P multivariable"]


def regression_table(facts: Mapping[str, CaseFacts],
                     outcome: Mapping[str, bool],
                     ) -> tuple[list[str], list[list[str]], list[str]]:
    """Univariable and multivariable odds ratios for the model calling a case
    malignant, over the case covariates. Returns header, rows, notices."""
    header = list(REGRESSION_HEADER)
    case_ids = sorted(outcome)
    y = [bool(outcome[c]) for c in case_ids]
    notices: list[str] = []

    def fit_or_none(matrix, names, tag):
        try:
            fit = logistic_fit(matrix, y, feature_names=names)
        except StatsError as e:
            notices.append(f"{tag}: {e}")
            return None
        if fit.separated:
            notices.append(f"{tag}: complete separation; intervals unreliable")
        return fit

    uni: dict[str, LogisticFit | None] = {}
    multi_cols: list[list[float]] = [[] for _ in case_ids]
    multi_names: list[str] = []
    for family, _, _ in _REGRESSION_SECTIONS:
        matrix, names = _design(facts, case_ids, family)
        uni[family] = fit_or_none(matrix, names, f"univariable {family}")
        for i, row in enumerate(matrix):
            multi_cols[i].extend(row)
        multi_names.extend(names)
    multi = fit_or_none(multi_cols, multi_names, "multivariable")

    rows: list[list[str]] = []
    for family, section, levels in _REGRESSION_SECTIONS:
        terms = ([(level, level) for level in levels[1:]] if levels
                 else [(section, family)])
        if levels:
            rows.append([section, "", "", "", ""])
        for display, term in terms:
            u_cell, u_p = _or_cell(uni[family], term)
            m_cell, m_p = _or_cell(multi, term)
            indent = "  " if levels else ""
            rows.append([f"{indent}{display}", u_cell, u_p, m_cell, m_p])
    return header, rows, notices


def write_csv(path: str | Path, header: Sequence[str],
              rows: Sequence[Sequence[str]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow(list(row))
    return path
