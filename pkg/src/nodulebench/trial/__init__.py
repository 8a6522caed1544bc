"""Reader-trial machinery: crossover scheduling, blinded serving, reporting."""
from .config import (ARMS, DEFAULT_WASHOUT_DAYS, GROUPS, ROUNDS, CaseSpec,
                     ReaderSpec, TrialConfig, TrialError, arm_for,
                     cases_from_manifest, hint_box, validate_box)
from .events import ReadingEvent, decode_record, encode_record, format_ts, parse_ts
from .inference import AiOracle, AiSuggestion, load_scoring_model
from .report import CALL_SCORES, EXPORT_FIELDS, export_trial, model_cases, trial_report
from .service import create_app, reader_token, slice_png
from .session import (DuplicateReading, NextAssignment, SessionComplete,
                      SessionState, TrialState, UnknownAssignment, WashoutHold)
from .simulate import (PROFILES, ManualClock, RoundLog, SimulatedReader,
                       fixed_opinion, run_crossover, run_round, tight_box)
from .store import AssignmentView, LiveTrial, TrialStore, system_clock

__all__ = [
    "ARMS", "DEFAULT_WASHOUT_DAYS", "GROUPS", "ROUNDS", "CALL_SCORES",
    "EXPORT_FIELDS", "PROFILES",
    "AiOracle", "AiSuggestion", "AssignmentView", "CaseSpec", "DuplicateReading",
    "LiveTrial", "ManualClock", "NextAssignment", "ReaderSpec", "ReadingEvent",
    "RoundLog", "SessionComplete", "SessionState", "SimulatedReader",
    "TrialConfig", "TrialError", "TrialState", "TrialStore", "UnknownAssignment",
    "WashoutHold",
    "arm_for", "cases_from_manifest", "create_app", "decode_record",
    "encode_record", "export_trial", "fixed_opinion", "format_ts", "hint_box",
    "load_scoring_model", "model_cases", "parse_ts", "reader_token",
    "run_crossover", "run_round", "slice_png", "system_clock", "tight_box",
    "trial_report", "validate_box",
]
