"""Readings-file loader: exported JSON lines or flat CSV into a report bundle.

The service's export is the native format, but any file with the required
columns works, so readings collected outside the service (or hand-built for a
what-if analysis) flow through the same report path.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from ..data import DENSITIES, LOBES
from ..stats import BENIGN, MALIGNANT, band_call, reader_case
from .bundle import ARMS, CALL_SCORES, CaseFacts, report_bundle


class ReportingError(ValueError):
    pass


REQUIRED_FIELDS = ("reader_id", "arm", "case_id", "call", "score", "truth",
                   "diameter_mm", "density", "lobe", "lobulation",
                   "spiculation")

_BOOL_WORDS = {"true": True, "1": True, "yes": True,
               "false": False, "0": False, "no": False}


@dataclass(frozen=True)
class ReadingsFile:
    meta: dict
    rows: tuple[dict, ...]


def _coerce_bool(value, field: str, line: int) -> bool:
    if isinstance(value, bool):
        return value
    word = str(value).strip().lower()
    if word in _BOOL_WORDS:
        return _BOOL_WORDS[word]
    raise ReportingError(f"line {line}: {field} must be boolean, got {value!r}")


def _coerce_row(raw: Mapping, line: int) -> dict:
    missing = [f for f in REQUIRED_FIELDS
               if f not in raw or raw[f] in (None, "")]
    if missing:
        raise ReportingError(f"line {line}: missing fields {missing}")
    row = dict(raw)
    try:
        row["score"] = int(raw["score"])
        row["diameter_mm"] = float(raw["diameter_mm"])
    except (TypeError, ValueError) as e:
        raise ReportingError(f"line {line}: {e}") from None
    for f in ("lobulation", "spiculation"):
        row[f] = _coerce_bool(raw[f], f, line)
    for f in ("call", "truth"):
        if row[f] not in (BENIGN, MALIGNANT):
            raise ReportingError(f"line {line}: {f} must be one of "
                                 f"{BENIGN!r}/{MALIGNANT!r}, got {row[f]!r}")
    if row["arm"] not in ARMS:
        raise ReportingError(f"line {line}: arm must be one of {ARMS}, "
                             f"got {row['arm']!r}")
    if row["density"] not in DENSITIES:
        raise ReportingError(f"line {line}: density must be one of "
                             f"{DENSITIES}, got {row['density']!r}")
    if row["lobe"] not in LOBES:
        raise ReportingError(f"line {line}: lobe must be one of {LOBES}, "
                             f"got {row['lobe']!r}")
    if band_call(row["score"]) != row["call"]:
        raise ReportingError(f"line {line}: call {row['call']!r} breaks the "
                             f"score band for score {row['score']}")
    ai = raw.get("ai_call")
    row["ai_call"] = None if ai in (None, "") else str(ai)
    if row["ai_call"] not in (None, BENIGN, MALIGNANT):
        raise ReportingError(f"line {line}: ai_call must be a class or empty, "
                             f"got {ai!r}")
    return row


def load_readings(path: str | Path) -> ReadingsFile:
    """Parse a readings file. JSON lines when every record is an object
    (header line optional), CSV with a header row otherwise."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    meta: dict = {"source": path.name, "trial_id": path.stem}
    rows: list[dict] = []
    stripped = text.lstrip()
    if not stripped:
        return ReadingsFile(meta=meta, rows=())
    if stripped[0] == "{":
        for i, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise ReportingError(f"line {i}: not valid JSON ({e})") from None
            if not isinstance(raw, dict):
                raise ReportingError(f"line {i}: expected an object")
            if raw.get("kind") == "header":
                meta.update({k: raw[k] for k in ("trial_id",)
                             if k in raw})
                continue
            rows.append(_coerce_row(raw, i))
    else:
        reader = csv.DictReader(text.splitlines())
        if reader.fieldnames is None:
            return ReadingsFile(meta=meta, rows=())
        for i, raw in enumerate(reader, start=2):
            rows.append(_coerce_row(raw, i))
    return ReadingsFile(meta=meta, rows=tuple(rows))


def case_facts(readings: ReadingsFile) -> dict[str, CaseFacts]:
    """Covariates per case, first-seen order; conflicting rows are malformed."""
    facts: dict[str, CaseFacts] = {}
    for row in readings.rows:
        f = CaseFacts(truth=row["truth"], diameter_mm=row["diameter_mm"],
                      density=row["density"], lobe=row["lobe"],
                      lobulation=row["lobulation"],
                      spiculation=row["spiculation"])
        known = facts.setdefault(row["case_id"], f)
        if known != f:
            raise ReportingError(
                f"case {row['case_id']!r} has conflicting covariate rows")
    return facts


def model_calls(readings: ReadingsFile) -> dict[str, str]:
    """The class shown per case, first-seen across assisted rows."""
    calls: dict[str, str] = {}
    for row in readings.rows:
        if row["arm"] == "assisted" and row["ai_call"] is not None:
            calls.setdefault(row["case_id"], row["ai_call"])
    return calls


def bundle_from_readings(readings: ReadingsFile,
                         n_resamples: int = 1000) -> dict:
    """The same report bundle the live service builds, from a flat file.

    Readers with exactly one reading per case and arm are included; the rest
    are excluded with a notice, mirroring the service's completeness rule.
    """
    facts = case_facts(readings)
    case_ids = sorted(facts)
    per_reader: dict[str, dict[str, dict[str, dict]]] = {}
    groups: dict[str, str] = {}
    for row in readings.rows:
        arms = per_reader.setdefault(row["reader_id"],
                                     {arm: {} for arm in ARMS})
        if row["case_id"] in arms[row["arm"]]:
            raise ReportingError(
                f"duplicate reading: {row['reader_id']} read "
                f"{row['case_id']} twice on the {row['arm']} arm")
        arms[row["arm"]][row["case_id"]] = row
        if row.get("group"):
            groups[row["reader_id"]] = row["group"]

    included = [rid for rid, arms in sorted(per_reader.items())
                if all(set(arms[arm]) == set(case_ids) for arm in ARMS)]
    excluded = [{"reader_id": rid,
                 "notice": "excluded: both rounds are not complete"}
                for rid in sorted(per_reader) if rid not in included]
    arm_cases = {
        arm: {rid: [reader_case(cid, facts[cid].truth,
                                per_reader[rid][arm][cid]["score"],
                                per_reader[rid][arm][cid]["call"])
                    for cid in case_ids]
              for rid in included}
        for arm in ARMS}
    model = [reader_case(cid, facts[cid].truth, CALL_SCORES[label], label)
             for cid, label in sorted(model_calls(readings).items())]
    meta = {
        "trial_id": readings.meta.get("trial_id"),
        "n_cases": len(case_ids),
        "n_readers": len(per_reader),
        "included_readers": included,
        "excluded_readers": excluded,
    }
    return report_bundle(meta, facts, arm_cases,
                         {rid: groups.get(rid, "") for rid in included},
                         model, n_resamples=n_resamples)
