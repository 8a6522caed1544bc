"""Trial export for the stats pipeline and the MRMC report bundle."""
from __future__ import annotations

import json
from typing import Mapping

from ..data import DatasetManifest, NoduleAnnotation
from ..reporting.bundle import CALL_SCORES, CaseFacts, report_bundle
from ..stats import BENIGN, MALIGNANT, reader_case
from .config import TrialConfig, TrialError, arm_for
from .store import LiveTrial

EXPORT_FIELDS = (
    "reader_id", "group", "round", "arm", "case_id", "nodule_id", "box",
    "call", "score", "ai_shown", "ai_call", "served_at", "submitted_at",
    "truth", "diameter_mm", "density", "lobe", "lobulation", "spiculation",
)


def annotation_for(manifest: DatasetManifest, config: TrialConfig,
                   case_id: str) -> NoduleAnnotation:
    case = config.case(case_id)
    patient_id, _, idx = case.nodule_id.rpartition("/")
    for record in manifest.patients():
        if record.patient_id == patient_id:
            try:
                return record.nodules[int(idx)]
            except (IndexError, ValueError):
                raise TrialError(
                    f"nodule {case.nodule_id!r} not in the dataset") from None
    raise TrialError(f"patient {patient_id!r} not in the dataset")


def _ai_calls(trial: LiveTrial) -> dict[str, str]:
    calls: dict[str, str] = {}
    for rec in trial.state.ai_log:
        calls.setdefault(rec["case_id"], rec["label"])
    return calls


def export_trial(trial: LiveTrial, manifest: DatasetManifest) -> str:
    """JSON-lines export: header line, then one line per reading in log order,
    joined with ground truth and nodule covariates.

    ai_call carries the class the card showed on assisted rows and null on
    unassisted rows; the export is the investigator's record, not a reader
    payload, so it may name the class.
    """
    config = trial.config
    anns = {c.case_id: annotation_for(manifest, config, c.case_id)
            for c in config.cases}
    groups = {r.reader_id: r.group for r in config.readers}
    ai_calls = _ai_calls(trial)
    lines = [json.dumps({"kind": "header", "fields": list(EXPORT_FIELDS),
                         "trial_id": config.trial_id,
                         "n_cases": len(config.cases),
                         "n_readers": len(config.readers)}, sort_keys=True)]
    for ev in trial.state.readings:
        ann = anns[ev.case_id]
        row = {
            "reader_id": ev.reader_id, "group": groups[ev.reader_id],
            "round": ev.round, "arm": ev.arm, "case_id": ev.case_id,
            "nodule_id": ev.nodule_id, "box": list(ev.box),
            "call": ev.call, "score": ev.score, "ai_shown": ev.ai_shown,
            "ai_call": ai_calls.get(ev.case_id) if ev.ai_shown else None,
            "served_at": ev.served_at, "submitted_at": ev.submitted_at,
            "truth": ann.pathology, "diameter_mm": ann.diameter_mm,
            "density": ann.density, "lobe": ann.lobe,
            "lobulation": ann.lobulation, "spiculation": ann.spiculation,
        }
        lines.append(json.dumps(row, sort_keys=True))
    return "\n".join(lines) + "\n"


def _arm_round(group: str, arm: str) -> int:
    return 1 if arm_for(group, 1) == arm else 2


def _reader_cases(trial: LiveTrial, truths: Mapping[str, str], reader_id: str,
                  round: int) -> list:
    cases = []
    for case_id in sorted(trial.state.completed_cases(reader_id, round)):
        ev = trial.state.reading(reader_id, round, case_id)
        cases.append(reader_case(case_id, truths[case_id], ev.score, ev.call))
    return cases


def model_cases(trial: LiveTrial, truths: Mapping[str, str]) -> list:
    """The checkpoint's own calls over the served cases, shaped exactly like a
    reader: binary calls at the stored threshold carried on mid-band scores."""
    return [reader_case(cid, truths[cid], CALL_SCORES[label], label)
            for cid, label in sorted(_ai_calls(trial).items())]


def trial_report(trial: LiveTrial, manifest: DatasetManifest) -> dict:
    config = trial.config
    anns = {c.case_id: annotation_for(manifest, config, c.case_id)
            for c in config.cases}
    truths = {cid: (MALIGNANT if ann.is_malignant else BENIGN)
              for cid, ann in anns.items()}
    facts = {cid: CaseFacts(truth=truths[cid], diameter_mm=ann.diameter_mm,
                            density=ann.density, lobe=ann.lobe,
                            lobulation=ann.lobulation,
                            spiculation=ann.spiculation)
             for cid, ann in anns.items()}
    included = list(trial.state.complete_readers())
    excluded = [{"reader_id": r.reader_id,
                 "notice": "excluded: both rounds are not complete"}
                for r in config.readers if r.reader_id not in included]
    meta = {
        "trial_id": config.trial_id,
        "n_cases": len(config.cases),
        "n_readers": len(config.readers),
        "included_readers": included,
        "excluded_readers": excluded,
    }
    groups = {r.reader_id: r.group for r in config.readers}
    arm_cases = {arm: {rid: _reader_cases(trial, truths, rid,
                                          _arm_round(groups[rid], arm))
                       for rid in included}
                 for arm in ("unassisted", "assisted")}
    return report_bundle(meta, facts, arm_cases, groups,
                         model_cases(trial, truths))
