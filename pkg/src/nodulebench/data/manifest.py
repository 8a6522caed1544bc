"""Dataset manifests: nodule annotations, patient records, the 7:1:2 split,
and the end-to-end phantom dataset builder."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .phantom import (
    DENSITIES,
    LOBES,
    PhantomSpec,
    classify_by_hand_rule,
    generate_patient_volume,
    measure_nodule_bands,
)
from .volume import Volume, save_volume

SPLITS = ("train", "validation", "test")
SPLIT_RATIO = (7, 1, 2)

# attribute distributions per pathology; the classes are separable on purpose
ATTRIBUTE_MODEL = {
    "malignant": {
        "spiculation": 0.95,
        "lobulation": 0.85,
        "density": (("PSN", 0.85), ("SN", 0.10), ("GGN", 0.05)),
        "diameter_mm": (9.0, 28.0),
    },
    "benign": {
        "spiculation": 0.02,
        "lobulation": 0.12,
        "density": (("PSN", 0.02), ("SN", 0.60), ("GGN", 0.38)),
        "diameter_mm": (6.0, 24.0),
    },
}


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class NoduleAnnotation:
    center_mm: tuple[float, float, float]
    diameter_mm: float
    density: str
    lobulation: bool
    spiculation: bool
    lobe: str
    pathology: str

    def __post_init__(self):
        if not (4.0 <= self.diameter_mm <= 30.0):
            raise ManifestError(f"diameter {self.diameter_mm} mm outside [4, 30]")
        if self.density not in DENSITIES:
            raise ManifestError(f"unknown density {self.density!r}")
        if self.lobe not in LOBES:
            raise ManifestError(f"unknown lobe {self.lobe!r}")
        if self.pathology not in ("benign", "malignant"):
            raise ManifestError(f"unknown pathology {self.pathology!r}")

    @property
    def is_malignant(self) -> bool:
        return self.pathology == "malignant"

    def to_dict(self) -> dict:
        return {
            "center_mm": [round(c, 6) for c in self.center_mm],
            "diameter_mm": round(self.diameter_mm, 6),
            "density": self.density,
            "lobulation": self.lobulation,
            "spiculation": self.spiculation,
            "lobe": self.lobe,
            "pathology": self.pathology,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoduleAnnotation":
        return cls(
            center_mm=tuple(float(c) for c in d["center_mm"]),
            diameter_mm=float(d["diameter_mm"]),
            density=d["density"],
            lobulation=bool(d["lobulation"]),
            spiculation=bool(d["spiculation"]),
            lobe=d["lobe"],
            pathology=d["pathology"],
        )


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    volume_path: str            # relative to the manifest's directory
    nodules: tuple[NoduleAnnotation, ...]
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r}")
        if not self.nodules:
            raise ManifestError(f"patient {self.patient_id} has no nodules")

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "volume": self.volume_path,
            "split": self.split,
            "nodules": [n.to_dict() for n in self.nodules],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatientRecord":
        return cls(
            patient_id=d["patient_id"],
            volume_path=d["volume"],
            nodules=tuple(NoduleAnnotation.from_dict(n) for n in d["nodules"]),
            split=d["split"],
        )


@dataclass
class DatasetManifest:
    root: Path
    records: list[PatientRecord] = field(default_factory=list)

    def validate(self) -> None:
        ids = [r.patient_id for r in self.records]
        if len(ids) != len(set(ids)):
            raise ManifestError("duplicate patient ids in manifest")

    def patients(self, split: str | None = None) -> list[PatientRecord]:
        if split is None:
            return list(self.records)
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}")
        return [r for r in self.records if r.split == split]

    def nodules(self, split: str | None = None) -> list[tuple[PatientRecord, NoduleAnnotation]]:
        return [(r, n) for r in self.patients(split) for n in r.nodules]

    def volume_file(self, record: PatientRecord) -> Path:
        return self.root / record.volume_path

    def split_sizes(self) -> dict[str, int]:
        return {s: len(self.patients(s)) for s in SPLITS}

    def save(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path else self.root / "manifest.jsonl"
        lines = [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.jsonl"
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(PatientRecord.from_dict(json.loads(line)))
        manifest = cls(root=path.parent, records=records)
        manifest.validate()
        return manifest


def split_counts(n_patients: int) -> tuple[int, int, int]:
    """Patient-disjoint 7:1:2 split sizes; remainder goes to test."""
    n_train = n_patients * SPLIT_RATIO[0] // sum(SPLIT_RATIO)
    n_val = n_patients * SPLIT_RATIO[1] // sum(SPLIT_RATIO)
    return n_train, n_val, n_patients - n_train - n_val


@dataclass(frozen=True)
class DatasetConfig:
    n_nodules: int = 400
    malignant_fraction: float = 0.5
    two_nodule_fraction: float = 0.0
    noise_sd: float = 12.0
    seed: int = 0

    def __post_init__(self):
        if self.n_nodules <= 0:
            raise ManifestError("n_nodules must be positive")
        if not (0.0 <= self.malignant_fraction <= 1.0):
            raise ManifestError("malignant_fraction must lie in [0, 1]")
        if not (0.0 <= self.two_nodule_fraction <= 1.0):
            raise ManifestError("two_nodule_fraction must lie in [0, 1]")


def _draw_spec(pathology: str, noise_sd: float, rng: np.random.Generator) -> PhantomSpec:
    model = ATTRIBUTE_MODEL[pathology]
    names = [n for n, _ in model["density"]]
    probs = [p for _, p in model["density"]]
    lo, hi = model["diameter_mm"]
    return PhantomSpec(
        diameter_mm=float(rng.uniform(lo, hi)),
        density=str(rng.choice(names, p=probs)),
        lobulation=bool(rng.random() < model["lobulation"]),
        spiculation=bool(rng.random() < model["spiculation"]),
        pathology=pathology,
        rng_seed=int(rng.integers(2 ** 62)),
        background_noise_sd=noise_sd,
    )


def _group_into_patients(labels: list[str], two_fraction: float,
                         rng: np.random.Generator) -> list[list[str]]:
    groups: list[list[str]] = []
    i = 0
    while i < len(labels):
        take = 2 if (i + 1 < len(labels) and rng.random() < two_fraction) else 1
        groups.append(labels[i:i + take])
        i += take
    return groups


def build_dataset(config: DatasetConfig, out_dir: str | Path) -> DatasetManifest:
    """Generate volumes + manifest under out_dir. Deterministic per config."""
    out_dir = Path(out_dir)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)

    n_mal = round(config.n_nodules * config.malignant_fraction)
    labels = ["malignant"] * n_mal + ["benign"] * (config.n_nodules - n_mal)
    rng.shuffle(labels)
    groups = _group_into_patients(labels, config.two_nodule_fraction, rng)

    n_train, n_val, n_test = split_counts(len(groups))
    split_of = ["train"] * n_train + ["validation"] * n_val + ["test"] * n_test
    order = rng.permutation(len(groups))

    records: list[PatientRecord] = []
    hand_rule_hits = 0
    hand_rule_total = 0
    for patient_idx, group_idx in enumerate(order):
        group = groups[group_idx]
        pid = f"P{patient_idx + 1:04d}"
        specs = [_draw_spec(p, config.noise_sd, rng) for p in group]
        volume, annotations, logs = generate_patient_volume(
            specs, seed=int(rng.integers(2 ** 62)))
        rel = f"volumes/{pid}.vol"
        save_volume(out_dir / rel, volume)
        for ann, log in zip(annotations, logs):
            core, shell = measure_nodule_bands(volume, ann.center_mm, ann.diameter_mm)
            spikes = sum(1 for p in log if p.kind == "spike")
            hand_rule_total += 1
            hand_rule_hits += classify_by_hand_rule(core, shell, spikes) == ann.pathology
        records.append(PatientRecord(
            patient_id=pid,
            volume_path=rel,
            nodules=tuple(annotations),
            split=split_of[patient_idx],
        ))

    manifest = DatasetManifest(root=out_dir, records=records)
    manifest.validate()
    manifest.save()
    summary = {
        "n_patients": len(records),
        "n_nodules": config.n_nodules,
        "split_sizes": manifest.split_sizes(),
        "hand_rule_accuracy": round(hand_rule_hits / hand_rule_total, 6),
    }
    (out_dir / "dataset_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def iter_loaded_nodules(manifest: DatasetManifest, split: str | None = None
                        ) -> Iterator[tuple[PatientRecord, NoduleAnnotation, Volume]]:
    """Yield (record, annotation, volume), loading each patient volume once."""
    from .volume import load_volume

    for record in manifest.patients(split):
        volume = load_volume(manifest.volume_file(record))
        for ann in record.nodules:
            yield record, ann, volume
