"""Checkpoint selection by validation AUC and threshold-based split evaluation."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..data import DatasetManifest
from ..model import DeepFAN
from ..stats import (BENIGN, MALIGNANT, MetricReport, ScoredCase,
                     auc_from_scores, metric_report)
from .loss import TrainingError
from .trainer import SplitData, batch_tensor, load_split_patches


@dataclass
class SplitScores:
    ids: list[str]
    patient_ids: list[str]
    scores: np.ndarray
    labels: np.ndarray     # 1 = malignant truth


def score_split(model: DeepFAN, data: SplitData, batch_size: int = 32) -> SplitScores:
    """Deterministic eval-mode malignancy scores for every nodule in the split."""
    if len(data) == 0:
        raise TrainingError("cannot score an empty split")
    scores = np.empty(len(data), dtype=float)
    for start in range(0, len(data), batch_size):
        chunk = data.patches[start:start + batch_size]
        outputs = model.forward(batch_tensor(chunk), training=False, parts="all")
        scores[start:start + len(chunk)] = outputs.scores
    return SplitScores(ids=list(data.ids), patient_ids=list(data.patient_ids),
                       scores=scores, labels=data.targets.pathology.copy())


def score_manifest_split(model: DeepFAN, manifest: DatasetManifest, split: str,
                         batch_size: int = 32) -> SplitScores:
    return score_split(model, load_split_patches(manifest, model.cfg, split),
                       batch_size=batch_size)


def select_best_checkpoint(checkpoints: Sequence[str | Path],
                           manifest: DatasetManifest,
                           split: str = "validation",
                           batch_size: int = 32) -> tuple[Path, float]:
    """Argmax validation AUC over the series; ties go to the latest checkpoint.

    Raises on an empty series and propagates the undefined-AUC error when the
    split holds a single class.
    """
    if not checkpoints:
        raise TrainingError("no checkpoints to select from")
    data: SplitData | None = None
    best_path: Path | None = None
    best_auc = -np.inf
    for raw in checkpoints:
        path = Path(raw)
        model, _ = DeepFAN.load(path)
        if data is None:
            data = load_split_patches(manifest, model.cfg, split)
        scored = score_split(model, data, batch_size=batch_size)
        auc = auc_from_scores(scored.scores, scored.labels)
        if auc >= best_auc:        # >= so later checkpoints win ties
            best_path, best_auc = path, auc
    return best_path, float(best_auc)


@dataclass
class SplitEvaluation:
    cases: list[ScoredCase]
    patient_ids: list[str]
    threshold: float
    report: MetricReport


def evaluate_split(model: DeepFAN, manifest: DatasetManifest, split: str,
                   threshold: float,
                   rng: np.random.Generator | None = None,
                   n_resamples: int = 1000,
                   with_ci: bool = True,
                   batch_size: int = 32) -> SplitEvaluation:
    """Scores plus binary calls at `threshold` (call malignant iff score >= t)."""
    if not 0.0 <= threshold <= 1.0:
        raise TrainingError(f"threshold {threshold} outside [0, 1]")
    scored = score_manifest_split(model, manifest, split, batch_size=batch_size)
    cases = [
        ScoredCase(id=i,
                   truth=MALIGNANT if y else BENIGN,
                   score=float(s),
                   call=MALIGNANT if s >= threshold else BENIGN)
        for i, s, y in zip(scored.ids, scored.scores, scored.labels)
    ]
    report = metric_report(cases, level="nodule", rng=rng,
                           n_resamples=n_resamples, with_ci=with_ci)
    return SplitEvaluation(cases=cases, patient_ids=scored.patient_ids,
                           threshold=threshold, report=report)
