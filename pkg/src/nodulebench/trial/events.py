"""Immutable reading events and the typed append-only log records."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from datetime import datetime, timezone

from ..stats import band_call
from .config import ARMS, ROUNDS, TrialError, validate_box

RECORD_KINDS = ("served", "ai", "reading")


def parse_ts(value: str) -> datetime:
    try:
        ts = datetime.fromisoformat(value)
    except (TypeError, ValueError):
        raise TrialError(f"bad timestamp {value!r}") from None
    if ts.tzinfo is None:
        raise TrialError(f"timestamp {value!r} must carry a timezone")
    return ts


def format_ts(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat()


@dataclass(frozen=True)
class ReadingEvent:
    """One submitted reading. Frozen: submissions are never revised."""
    reader_id: str
    round: int
    arm: str
    case_id: str
    nodule_id: str
    box: tuple[int, int, int, int, int, int]
    call: str
    score: int
    ai_shown: bool
    served_at: str
    submitted_at: str

    def __post_init__(self):
        if self.round not in ROUNDS:
            raise TrialError(f"round must be 1 or 2, got {self.round}")
        if self.arm not in ARMS:
            raise TrialError(f"unknown arm {self.arm!r}")
        object.__setattr__(self, "box", validate_box(self.box))
        expected = band_call(self.score)
        if self.call != expected:
            raise TrialError(
                f"call {self.call!r} breaks the score band: "
                f"score {self.score} commits to {expected!r}")
        if self.ai_shown != (self.arm == "assisted"):
            raise TrialError("ai_shown must mirror the assisted arm")
        if parse_ts(self.submitted_at) < parse_ts(self.served_at):
            raise TrialError("submitted before served")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["box"] = list(self.box)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ReadingEvent":
        try:
            return cls(reader_id=raw["reader_id"], round=int(raw["round"]),
                       arm=raw["arm"], case_id=raw["case_id"],
                       nodule_id=raw["nodule_id"], box=tuple(raw["box"]),
                       call=raw["call"], score=int(raw["score"]),
                       ai_shown=bool(raw["ai_shown"]),
                       served_at=raw["served_at"],
                       submitted_at=raw["submitted_at"])
        except (KeyError, TypeError) as e:
            raise TrialError(f"malformed reading event: {e}") from None


def encode_record(kind: str, payload: dict) -> str:
    if kind not in RECORD_KINDS:
        raise TrialError(f"unknown log record kind {kind!r}")
    return json.dumps({"kind": kind, **payload}, sort_keys=True)


def decode_record(line: str) -> tuple[str, dict]:
    try:
        raw = json.loads(line)
        kind = raw.pop("kind")
    except (json.JSONDecodeError, KeyError) as e:
        raise TrialError(f"corrupt log line: {e}") from None
    if kind not in RECORD_KINDS:
        raise TrialError(f"unknown log record kind {kind!r}")
    return kind, raw
