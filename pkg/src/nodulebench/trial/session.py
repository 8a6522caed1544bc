"""Reader session state as a pure fold over the event log."""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta

from .config import TrialConfig, TrialError, arm_for
from .events import ReadingEvent, parse_ts

# fold-visible record kinds; anything else is rejected at decode time


class UnknownAssignment(TrialError):
    pass


class DuplicateReading(TrialError):
    pass


@dataclass(frozen=True)
class NextAssignment:
    reader_id: str
    round: int
    arm: str
    case_id: str


@dataclass(frozen=True)
class WashoutHold:
    reader_id: str
    eligible_at: datetime


@dataclass(frozen=True)
class SessionComplete:
    reader_id: str


@dataclass
class SessionState:
    """Where one reader stands: derived view, never stored."""
    reader_id: str
    group: str
    round: int | None                 # None once both rounds are done
    arm: str | None
    pending: tuple[str, ...]          # remaining cases of the active round, in order
    completed: dict[int, tuple[str, ...]]
    round1_completed_at: datetime | None


class TrialState:
    """Pure fold over the trial's log records.

    apply() steps the fold one record; from_records() replays a whole log.
    The same instance backs live serving and restart recovery, so both paths
    land on identical state by construction.
    """

    def __init__(self, config: TrialConfig):
        self.config = config
        self.readings: list[ReadingEvent] = []
        self.served: dict[tuple[str, int, str], str] = {}
        self.ai_log: list[dict] = []
        self._done: dict[tuple[str, int], dict[str, int]] = {
            (r.reader_id, rnd): {} for r in config.readers for rnd in (1, 2)}
        self._orders = {(r.reader_id, rnd): config.case_order(r.reader_id, rnd)
                        for r in config.readers for rnd in (1, 2)}

    @classmethod
    def from_records(cls, config: TrialConfig,
                     records) -> "TrialState":
        state = cls(config)
        for kind, payload in records:
            state.apply(kind, payload)
        return state

    def apply(self, kind: str, payload: dict) -> None:
        if kind == "served":
            key = (payload["reader_id"], int(payload["round"]), payload["case_id"])
            self.served.setdefault(key, payload["at"])   # first serving wins
        elif kind == "ai":
            self.ai_log.append(payload)
        elif kind == "reading":
            event = ReadingEvent.from_dict(payload)
            key = (event.reader_id, event.round)
            if event.case_id in self._done[key]:
                raise DuplicateReading(
                    f"{event.reader_id} already read {event.case_id} "
                    f"in round {event.round}")
            self.readings.append(event)
            self._done[key][event.case_id] = len(self.readings) - 1
        else:
            raise TrialError(f"unknown log record kind {kind!r}")

    # ---- derived views ------------------------------------------------

    def completed_cases(self, reader_id: str, round: int) -> tuple[str, ...]:
        return tuple(self._done[(reader_id, round)])

    def reading(self, reader_id: str, round: int, case_id: str) -> ReadingEvent:
        try:
            return self.readings[self._done[(reader_id, round)][case_id]]
        except KeyError:
            raise TrialError(
                f"no reading by {reader_id} for {case_id} in round {round}"
            ) from None

    def round_complete(self, reader_id: str, round: int) -> bool:
        return len(self._done[(reader_id, round)]) == len(self.config.cases)

    def round1_completed_at(self, reader_id: str) -> datetime | None:
        if not self.round_complete(reader_id, 1):
            return None
        times = [parse_ts(self.readings[i].submitted_at)
                 for i in self._done[(reader_id, 1)].values()]
        return max(times)

    def active_round(self, reader_id: str) -> int | None:
        self.config.reader(reader_id)
        if not self.round_complete(reader_id, 1):
            return 1
        if not self.round_complete(reader_id, 2):
            return 2
        return None

    def pending_cases(self, reader_id: str, round: int) -> tuple[str, ...]:
        done = self._done[(reader_id, round)]
        return tuple(c for c in self._orders[(reader_id, round)] if c not in done)

    def session(self, reader_id: str) -> SessionState:
        reader = self.config.reader(reader_id)
        rnd = self.active_round(reader_id)
        return SessionState(
            reader_id=reader_id,
            group=reader.group,
            round=rnd,
            arm=None if rnd is None else arm_for(reader.group, rnd),
            pending=() if rnd is None else self.pending_cases(reader_id, rnd),
            completed={r: self.completed_cases(reader_id, r) for r in (1, 2)},
            round1_completed_at=self.round1_completed_at(reader_id),
        )

    def washout_eligible_at(self, reader_id: str) -> datetime:
        done_at = self.round1_completed_at(reader_id)
        if done_at is None:
            raise TrialError(f"{reader_id} has not finished round 1")
        return done_at + timedelta(days=self.config.washout_days)

    def next_assignment(self, reader_id: str, now: datetime
                        ) -> NextAssignment | WashoutHold | SessionComplete:
        reader = self.config.reader(reader_id)
        rnd = self.active_round(reader_id)
        if rnd is None:
            return SessionComplete(reader_id=reader_id)
        if rnd == 2:
            eligible = self.washout_eligible_at(reader_id)
            if now < eligible:
                return WashoutHold(reader_id=reader_id, eligible_at=eligible)
        case_id = self.pending_cases(reader_id, rnd)[0]
        return NextAssignment(reader_id=reader_id, round=rnd,
                              arm=arm_for(reader.group, rnd), case_id=case_id)

    def check_reading(self, event: ReadingEvent, now: datetime) -> None:
        """Reject anything that is not the reader's one open assignment."""
        key = (event.reader_id, event.round)
        if event.case_id in self._done.get(key, {}):
            raise DuplicateReading(
                f"{event.reader_id} already read {event.case_id} "
                f"in round {event.round}")
        spot = self.next_assignment(event.reader_id, now)
        if isinstance(spot, WashoutHold):
            raise UnknownAssignment(
                f"washout until {spot.eligible_at.isoformat()}")
        if isinstance(spot, SessionComplete):
            raise UnknownAssignment(f"{event.reader_id} has no open assignment")
        if (event.round, event.case_id) != (spot.round, spot.case_id):
            raise UnknownAssignment(
                f"open assignment is {spot.case_id} (round {spot.round}), "
                f"not {event.case_id} (round {event.round})")
        if event.arm != spot.arm:
            raise UnknownAssignment(
                f"round {event.round} reads {spot.arm} for this reader")
        served_at = self.served.get((event.reader_id, event.round, event.case_id))
        if served_at is None:
            raise UnknownAssignment(
                f"{event.case_id} was never served to {event.reader_id}")
        if event.served_at != served_at:
            raise UnknownAssignment("served_at does not match the serving record")
        case = self.config.case(event.case_id)
        if event.nodule_id != case.nodule_id:
            raise UnknownAssignment(
                f"case {event.case_id} rates nodule {case.nodule_id}")

    # ---- trial-level summaries ----------------------------------------

    def complete_readers(self) -> tuple[str, ...]:
        return tuple(r.reader_id for r in self.config.readers
                     if self.active_round(r.reader_id) is None)

    def crossover_complete(self) -> bool:
        return len(self.complete_readers()) == len(self.config.readers)
