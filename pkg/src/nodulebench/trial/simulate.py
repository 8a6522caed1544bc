"""Synthetic readers that drive the trial API end to end, no UI involved.

Three behavioural profiles:
  copy    follows the AI card verbatim when assisted, calls benign otherwise
  ignore  a fixed per-(reader, case) opinion, identical in both rounds
  noisy   truth corrupted at a per-reader error rate; when assisted, follows
          the card with a fixed adoption probability
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from ..stats import BENIGN, MALIGNANT
from .config import TrialError
from .report import CALL_SCORES

PROFILES = ("copy", "ignore", "noisy")


class ManualClock:
    """Test-only wall clock: time moves only when told to."""

    def __init__(self, start: datetime | None = None):
        self.now = start or datetime(2026, 1, 5, 9, 0, tzinfo=timezone.utc)

    def __call__(self) -> datetime:
        return self.now

    def advance(self, days: float = 0.0, seconds: float = 0.0) -> None:
        self.now = self.now + timedelta(days=days, seconds=seconds)


def opinion_score(call: str, rng: np.random.Generator | None = None) -> int:
    """A band-consistent score; mid-band when no rng is given."""
    if rng is None:
        return CALL_SCORES[call]
    lo, hi = (1, 5) if call == BENIGN else (6, 10)
    return int(rng.integers(lo, hi + 1))


def fixed_opinion(seed: int, reader_id: str, case_id: str) -> tuple[str, int]:
    """Deterministic in (reader, case): the same answer every round."""
    rng = np.random.default_rng(
        np.frombuffer(f"{seed}|{reader_id}|{case_id}".encode(), dtype=np.uint8))
    call = MALIGNANT if rng.random() < 0.5 else BENIGN
    return call, opinion_score(call, rng)


@dataclass
class SimulatedReader:
    reader_id: str
    token: str
    profile: str
    truth: dict[str, str] = field(default_factory=dict)  # case_id -> class
    seed: int = 0
    error_rate: float = 0.3
    adoption: float = 0.4

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise TrialError(f"unknown reader profile {self.profile!r}")

    def decide(self, assignment: dict) -> tuple[str, int]:
        case_id = assignment["case_id"]
        card = assignment.get("ai_card")
        ai_call = None
        if card is not None:
            ai_call = card["nodules"][assignment["nodule_id"]]
        if self.profile == "copy":
            call = ai_call if ai_call is not None else BENIGN
            return call, opinion_score(call)
        if self.profile == "ignore":
            return fixed_opinion(self.seed, self.reader_id, case_id)
        # noisy: independent redraw each round
        rng = np.random.default_rng(np.frombuffer(
            f"{self.seed}|{self.reader_id}|{case_id}|{assignment['round']}"
            .encode(), dtype=np.uint8))
        call = self.truth[case_id]
        if rng.random() < self.error_rate:
            call = BENIGN if call == MALIGNANT else MALIGNANT
        if ai_call is not None and rng.random() < self.adoption:
            call = ai_call
        return call, opinion_score(call, rng)


def tight_box(hint_box) -> list[int]:
    """The reader's own annotation: the hint shrunk a voxel per side."""
    box = list(hint_box)
    for i in range(3):
        if box[i + 3] - box[i] > 2:
            box[i] += 1
            box[i + 3] -= 1
    return box


@dataclass
class RoundLog:
    """Everything a reader saw and sent in one round, for blinding scans."""
    reader_id: str
    round: int
    arm: str
    payloads: list[dict] = field(default_factory=list)
    receipts: list[dict] = field(default_factory=list)


def run_round(client, trial_id: str, reader: SimulatedReader,
              clock: ManualClock | None = None,
              step_seconds: float = 60.0) -> RoundLog:
    """Read every pending case of the reader's active round."""
    log: RoundLog | None = None
    while True:
        r = client.get(f"/trials/{trial_id}/readers/{reader.reader_id}/next",
                       headers={"x-reader-token": reader.token})
        if r.status_code == 409:          # washout hold
            if log is not None:
                return log                # round done; round 2 not yet eligible
            raise TrialError(r.json().get("eligible_at", "washout"))
        r.raise_for_status()
        payload = r.json()
        if payload["status"] == "complete":
            return log or RoundLog(reader.reader_id, 0, "none")
        if log is None:
            log = RoundLog(reader.reader_id, payload["round"], payload["arm"])
        elif payload["round"] != log.round:
            return log                    # rolled over into the next round
        log.payloads.append(payload)
        call, score = reader.decide(payload)
        body = {
            "trial_id": trial_id,
            "reader_id": reader.reader_id,
            "case_id": payload["case_id"],
            "nodule_id": payload["nodule_id"],
            "box": tight_box(payload["hint_box"]),
            "call": call,
            "score": score,
        }
        resp = client.post("/readings", json=body,
                           headers={"x-reader-token": reader.token})
        resp.raise_for_status()
        log.receipts.append(resp.json())
        if clock is not None:
            clock.advance(seconds=step_seconds)


def run_crossover(client, trial_id: str, readers: list[SimulatedReader],
                  clock: ManualClock, washout_days: int) -> list[RoundLog]:
    """Both rounds for every reader, advancing the clock across the washout."""
    logs = [run_round(client, trial_id, reader, clock) for reader in readers]
    clock.advance(days=washout_days)
    logs += [run_round(client, trial_id, reader, clock) for reader in readers]
    return logs
