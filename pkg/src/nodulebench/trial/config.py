"""Trial configuration: readers, cases, crossover arms, and case orders."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import DatasetManifest

GROUPS = ("A", "B")
ARMS = ("unassisted", "assisted")
ROUNDS = (1, 2)

DEFAULT_WASHOUT_DAYS = 28


class TrialError(ValueError):
    pass


def arm_for(group: str, round: int) -> str:
    """Group A reads without assistance first; round 2 reverses the arms."""
    if group not in GROUPS:
        raise TrialError(f"unknown group {group!r}")
    if round not in ROUNDS:
        raise TrialError(f"round must be 1 or 2, got {round}")
    first = "unassisted" if group == "A" else "assisted"
    second = "assisted" if first == "unassisted" else "unassisted"
    return first if round == 1 else second


def validate_box(box) -> tuple[int, int, int, int, int, int]:
    """(x0, y0, z0, x1, y1, z1), half-open voxel bounds, lo < hi, nonnegative."""
    vals = tuple(int(v) for v in box)
    if len(vals) != 6 or any(float(b) != int(b) for b in box):
        raise TrialError(f"box must be 6 integer voxel bounds, got {box!r}")
    for lo, hi in zip(vals[:3], vals[3:]):
        if lo < 0 or lo >= hi:
            raise TrialError(f"degenerate box {vals}")
    return vals


@dataclass(frozen=True)
class ReaderSpec:
    reader_id: str
    group: str

    def __post_init__(self):
        if not self.reader_id:
            raise TrialError("reader id must be non-empty")
        if self.group not in GROUPS:
            raise TrialError(f"reader {self.reader_id}: unknown group {self.group!r}")


@dataclass(frozen=True)
class CaseSpec:
    """One reading task: a patient volume plus the nodule of record.

    `box` is the handbook hint shown to readers, in voxel coordinates of the
    stored volume.
    """
    case_id: str
    patient_id: str
    nodule_id: str
    box: tuple[int, int, int, int, int, int]

    def __post_init__(self):
        if not self.case_id:
            raise TrialError("case id must be non-empty")
        object.__setattr__(self, "box", validate_box(self.box))


@dataclass(frozen=True)
class TrialConfig:
    cases: tuple[CaseSpec, ...]
    readers: tuple[ReaderSpec, ...]
    checkpoint: str
    washout_days: int = DEFAULT_WASHOUT_DAYS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cases", tuple(self.cases))
        object.__setattr__(self, "readers", tuple(self.readers))
        if len(self.readers) < 2:
            raise TrialError("a crossover trial needs at least 2 readers")
        if not self.cases:
            raise TrialError("empty case pool")
        reader_ids = [r.reader_id for r in self.readers]
        if len(reader_ids) != len(set(reader_ids)):
            raise TrialError("duplicate reader id: each reader joins exactly one group")
        case_ids = [c.case_id for c in self.cases]
        if len(case_ids) != len(set(case_ids)):
            raise TrialError("duplicate case id")
        if self.washout_days < 0:
            raise TrialError("washout_days must be nonnegative")

    @property
    def trial_id(self) -> str:
        digest = hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()
        return f"t{digest[:12]}"

    def reader(self, reader_id: str) -> ReaderSpec:
        for r in self.readers:
            if r.reader_id == reader_id:
                return r
        raise TrialError(f"unknown reader {reader_id!r}")

    def case(self, case_id: str) -> CaseSpec:
        for c in self.cases:
            if c.case_id == case_id:
                return c
        raise TrialError(f"unknown case {case_id!r}")

    def case_order(self, reader_id: str, round: int) -> tuple[str, ...]:
        """Seeded per-(reader, round) shuffle of the case ids."""
        if round not in ROUNDS:
            raise TrialError(f"round must be 1 or 2, got {round}")
        idx = [r.reader_id for r in self.readers].index(self.reader(reader_id).reader_id)
        rng = np.random.default_rng((self.seed, idx, round))
        order = rng.permutation(len(self.cases))
        return tuple(self.cases[i].case_id for i in order)

    def to_dict(self) -> dict:
        return {
            "cases": [{"case_id": c.case_id, "patient_id": c.patient_id,
                       "nodule_id": c.nodule_id, "box": list(c.box)}
                      for c in self.cases],
            "readers": [{"reader_id": r.reader_id, "group": r.group}
                        for r in self.readers],
            "checkpoint": self.checkpoint,
            "washout_days": self.washout_days,
            "seed": self.seed,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, raw: dict) -> "TrialConfig":
        try:
            cases = tuple(CaseSpec(case_id=c["case_id"], patient_id=c["patient_id"],
                                   nodule_id=c["nodule_id"], box=tuple(c["box"]))
                          for c in raw["cases"])
            readers = tuple(ReaderSpec(reader_id=r["reader_id"], group=r["group"])
                            for r in raw["readers"])
            return cls(cases=cases, readers=readers, checkpoint=raw["checkpoint"],
                       washout_days=int(raw.get("washout_days", DEFAULT_WASHOUT_DAYS)),
                       seed=int(raw.get("seed", 0)))
        except (KeyError, TypeError) as e:
            raise TrialError(f"malformed trial config: {e}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.canonical_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TrialConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def hint_box(volume_dims, spacing, center_mm, diameter_mm,
             margin_vox: int = 2) -> tuple[int, int, int, int, int, int]:
    """Voxel box around a nodule: radius plus margin per axis, clipped to the grid."""
    lo, hi = [], []
    for d, s, c in zip(volume_dims, spacing, center_mm):
        cv = int(round(c / s))
        half = int(np.ceil(diameter_mm / (2.0 * s))) + margin_vox
        lo.append(max(0, cv - half))
        hi.append(min(d, cv + half + 1))
    return (lo[0], lo[1], lo[2], hi[0], hi[1], hi[2])


def cases_from_manifest(manifest: DatasetManifest,
                        split: str | None = "test") -> tuple[CaseSpec, ...]:
    """One trial case per nodule of a split, with handbook boxes from the
    annotations. Case ids are the nodule ids, so one patient with two nodules
    yields two reading tasks over the same volume."""
    from ..data import load_volume

    specs = []
    for record in manifest.patients(split):
        volume = load_volume(manifest.volume_file(record))
        for i, ann in enumerate(record.nodules):
            specs.append(CaseSpec(
                case_id=f"{record.patient_id}-n{i}",   # url-safe, lives in paths
                patient_id=record.patient_id,
                nodule_id=f"{record.patient_id}/{i}",  # matches training ids
                box=hint_box(volume.dims, volume.spacing, ann.center_mm,
                             ann.diameter_mm),
            ))
    if not specs:
        raise TrialError(f"split {split!r} has no nodules")
    return tuple(specs)
