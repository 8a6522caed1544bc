"""Report emission: one call turns a readings file or a run directory into
CSV tables, a JSON bundle, and SVG plots under an output directory.

Table cells and plot annotations share the same formatting helpers, so a
number shown in a figure matches the table character for character.
"""
from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Mapping

from ..stats import MALIGNANT
from .bundle import ARMS
from .figures import kappa_figure, model_roc_figure, radar_figure, roc_figure
from .readings import (ReadingsFile, ReportingError, bundle_from_readings,
                       case_facts, load_readings, model_calls)
from .tables import (REGRESSION_HEADER, ablation_table, fmt3,
                     model_performance_table, reader_comparison_table,
                     regression_table, stratified_table, write_csv)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", str(name)) or "x"


class _Emitter:
    def __init__(self, out_dir: str | Path):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.notices: list[str] = []

    def table(self, name: str, header, rows) -> None:
        self.files.append(str(write_csv(self.out / name, header, rows)))

    def figure(self, path: Path) -> None:
        self.files.append(str(path))

    def bundle_json(self, name: str, payload: Mapping) -> None:
        path = self.out / name
        body = dict(payload)
        body["notices"] = list(self.notices)
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        self.files.append(str(path))

    def manifest(self) -> dict:
        return {"out_dir": str(self.out), "files": list(self.files),
                "notices": list(self.notices)}


def emit_readings_report(readings: str | Path | ReadingsFile,
                         out_dir: str | Path,
                         n_resamples: int = 1000) -> dict:
    """Full reader-study report: comparison, strata, regression, plots.

    An empty readings file still succeeds: the tables come out header-only,
    no plots are drawn, and the manifest carries a notice saying so.
    """
    if not isinstance(readings, ReadingsFile):
        readings = load_readings(readings)
    em = _Emitter(out_dir)

    if not readings.rows:
        em.notices.append("readings file is empty; tables written header-only,"
                          " no plots drawn")
        em.table("model_performance.csv", *model_performance_table([]))
        em.table("reader_comparison.csv",
                 *reader_comparison_table({"readers": {}}))
        em.table("stratified.csv", *stratified_table({"stratified": {}}))
        em.table("regression.csv", REGRESSION_HEADER, [])
        em.bundle_json("report.json", {"readers": {}, "model": None})
        return em.manifest()

    bundle = bundle_from_readings(readings, n_resamples=n_resamples)
    facts = case_facts(readings)
    for note in bundle.get("excluded_readers", []):
        em.notices.append(f"{note['reader_id']}: {note['notice']}")

    dataset = bundle.get("trial_id") or "trial"
    model_metrics = bundle["model"]["metrics"] if bundle["model"] else None
    em.table("model_performance.csv",
             *model_performance_table([(dataset, model_metrics)]))
    em.table("reader_comparison.csv", *reader_comparison_table(bundle))
    em.table("stratified.csv", *stratified_table(bundle))

    calls = model_calls(readings)
    if calls:
        outcome = {cid: call == MALIGNANT for cid, call in calls.items()}
        header, rows, notes = regression_table(facts, outcome)
        em.notices.extend(notes)
        em.table("regression.csv", header, rows)
    else:
        em.notices.append("no AI calls in the readings; regression table"
                          " written header-only")
        em.table("regression.csv", REGRESSION_HEADER, [])

    if bundle["readers"] or bundle["model"]:
        em.figure(roc_figure(bundle, em.out / "roc.svg"))
    for rid, entry in bundle["readers"].items():
        em.figure(radar_figure(rid, entry,
                               em.out / f"radar_{_slug(rid)}.svg"))
    for arm in ARMS:
        kappa = bundle["kappa"].get(arm)
        if kappa and "matrix" in kappa:
            em.figure(kappa_figure(kappa, em.out / f"kappa_{arm}.svg",
                                   f"agreement, {arm} arm"))

    em.bundle_json("report.json", bundle)
    return em.manifest()


# ---- run-directory reports ----------------------------------------------------

# Layout written by the experiment runner:
#   eval/model_eval.json   {"datasets": [{"name", "n", "report", "roc"}]}
#   eval/ablation.json     {"entries": [{"model_id", "metrics"}]}


def _load_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ReportingError(f"{path}: not valid JSON ({e})") from e


def emit_run_report(run_dir: str | Path, out_dir: str | Path) -> dict:
    """Model-side report from a run directory: performance and ablation
    tables plus the ROC curve figure."""
    run = Path(run_dir)
    em = _Emitter(out_dir)
    eval_path = run / "eval" / "model_eval.json"
    ablation_path = run / "eval" / "ablation.json"
    if not eval_path.exists() and not ablation_path.exists():
        raise ReportingError(
            f"{run}: no eval/model_eval.json or eval/ablation.json;"
            " nothing to report")

    payload: dict = {}
    if eval_path.exists():
        evaluation = _load_json(eval_path)
        datasets = evaluation.get("datasets", [])
        em.table("model_performance.csv", *model_performance_table(
            [(d["name"], d.get("report")) for d in datasets]))
        curves = [(d["name"], d["roc"],
                   fmt3(d["report"]["metrics"]["auc"]["value"]))
                  for d in datasets if d.get("roc") and d.get("report")]
        if curves:
            em.figure(model_roc_figure(curves, em.out / "roc_model.svg"))
        payload["datasets"] = datasets
    else:
        em.notices.append("no eval/model_eval.json; performance table"
                          " skipped")

    if ablation_path.exists():
        ablation = _load_json(ablation_path)
        em.table("ablation.csv", *ablation_table(ablation.get("entries", [])))
        payload["ablation"] = ablation.get("entries", [])
    em.bundle_json("report.json", payload)
    return em.manifest()


def emit_report(source: str | Path, out_dir: str | Path,
                n_resamples: int = 1000) -> dict:
    """Dispatch on the source: a directory is a run, a file is readings."""
    src = Path(source)
    if not src.exists():
        raise ReportingError(f"{src}: no such file or directory")
    if src.is_dir():
        return emit_run_report(src, out_dir)
    return emit_readings_report(src, out_dir, n_resamples=n_resamples)
