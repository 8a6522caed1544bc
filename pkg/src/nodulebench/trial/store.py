"""Durable trial storage: one append-only JSON-lines log per trial."""
from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from ..data import DatasetManifest, Volume, load_volume
from .config import TrialConfig, TrialError
from .events import ReadingEvent, decode_record, encode_record, format_ts
from .inference import AiOracle, AiSuggestion
from .session import (NextAssignment, SessionComplete, TrialState, WashoutHold)

Clock = Callable[[], datetime]


def system_clock() -> datetime:
    return datetime.now(timezone.utc)


@dataclass
class AssignmentView:
    """Everything the service needs to shape one serving payload."""
    assignment: NextAssignment
    served_at: str
    case_box: tuple[int, int, int, int, int, int]
    nodule_id: str
    volume_dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    ai_label: str | None    # None on the unassisted arm


@dataclass
class LiveTrial:
    config: TrialConfig
    state: TrialState
    log_path: Path
    lock: threading.Lock = field(default_factory=threading.Lock)


class TrialStore:
    """Owns the logs. One serialized writer per trial; state is the fold."""

    def __init__(self, root: str | Path, manifest: DatasetManifest,
                 oracle: AiOracle, clock: Clock | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = manifest
        self.oracle = oracle
        self.clock = clock or system_clock
        self._records = {r.patient_id: r for r in manifest.patients()}
        self._volumes: dict[str, Volume] = {}
        self.trials: dict[str, LiveTrial] = {}
        for cfg_path in sorted(self.root.glob("*/config.json")):
            self._open(TrialConfig.load(cfg_path))

    # ---- loading -------------------------------------------------------

    def volume_for(self, patient_id: str) -> Volume:
        if patient_id not in self._volumes:
            record = self._records.get(patient_id)
            if record is None:
                raise TrialError(f"unknown patient {patient_id!r}")
            self._volumes[patient_id] = load_volume(self.manifest.volume_file(record))
        return self._volumes[patient_id]

    def _check_cases(self, config: TrialConfig) -> None:
        for case in config.cases:
            volume = self.volume_for(case.patient_id)
            for hi, dim in zip(case.box[3:], volume.dims):
                if hi > dim:
                    raise TrialError(
                        f"case {case.case_id}: box {case.box} outside "
                        f"volume {volume.dims}")

    def _open(self, config: TrialConfig) -> LiveTrial:
        self._check_cases(config)
        tid = config.trial_id
        tdir = self.root / tid
        log_path = tdir / "events.jsonl"
        state = TrialState(config)
        if log_path.exists():
            with open(log_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        state.apply(*decode_record(line))
        trial = LiveTrial(config=config, state=state, log_path=log_path)
        self.trials[tid] = trial
        return trial

    def create_trial(self, config: TrialConfig) -> str:
        tid = config.trial_id
        if tid in self.trials:
            raise TrialError(f"trial {tid} already exists")
        tdir = self.root / tid
        tdir.mkdir(parents=True, exist_ok=True)
        config.save(tdir / "config.json")
        (tdir / "events.jsonl").touch()
        self._open(config)
        return tid

    def get(self, trial_id: str) -> LiveTrial:
        trial = self.trials.get(trial_id)
        if trial is None:
            raise TrialError(f"unknown trial {trial_id!r}")
        return trial

    # ---- the single writer ----------------------------------------------

    def _append(self, trial: LiveTrial, kind: str, payload: dict) -> None:
        """Durable append, then fold. A crash after the write is recovered
        by replay; a crash before it never acked anything."""
        line = encode_record(kind, payload)
        with open(trial.log_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        trial.state.apply(kind, payload)

    def serve_next(self, trial_id: str, reader_id: str
                   ) -> AssignmentView | WashoutHold | SessionComplete:
        trial = self.get(trial_id)
        with trial.lock:
            now = self.clock()
            spot = trial.state.next_assignment(reader_id, now)
            if not isinstance(spot, NextAssignment):
                return spot
            case = trial.config.case(spot.case_id)
            volume = self.volume_for(case.patient_id)
            key = (reader_id, spot.round, spot.case_id)
            served_at = trial.state.served.get(key)
            if served_at is None:
                served_at = format_ts(now)
                self._append(trial, "served", {
                    "reader_id": reader_id, "round": spot.round,
                    "case_id": spot.case_id, "at": served_at})
            ai_label = None
            if spot.arm == "assisted":
                ai_label = self._suggestion(trial, case, reader_id,
                                            spot.round, now).label
            return AssignmentView(
                assignment=spot, served_at=served_at, case_box=case.box,
                nodule_id=case.nodule_id, volume_dims=volume.dims,
                spacing=volume.spacing, ai_label=ai_label)

    def _suggestion(self, trial: LiveTrial, case, reader_id: str,
                    round: int, now: datetime) -> AiSuggestion:
        for rec in trial.state.ai_log:
            if rec["case_id"] == case.case_id and tuple(rec["box"]) == case.box:
                return AiSuggestion(label=rec["label"], probability=rec["p"],
                                    threshold=rec["threshold"])
        volume = self.volume_for(case.patient_id)
        s = self.oracle.suggest(volume, case.box)
        self._append(trial, "ai", {
            "case_id": case.case_id, "nodule_id": case.nodule_id,
            "box": list(case.box), "label": s.label, "p": s.probability,
            "threshold": s.threshold, "reader_id": reader_id, "round": round,
            "at": format_ts(now)})
        return s

    def record_reading(self, trial_id: str, event: ReadingEvent) -> int:
        """Validate against the open assignment, persist, ack with the log seq."""
        trial = self.get(trial_id)
        with trial.lock:
            now = self.clock()
            trial.state.check_reading(event, now)
            volume = self.volume_for(trial.config.case(event.case_id).patient_id)
            for hi, dim in zip(event.box[3:], volume.dims):
                if hi > dim:
                    raise TrialError(
                        f"box {event.box} outside volume {volume.dims}")
            self._append(trial, "reading", event.to_dict())
            return len(trial.state.readings)
