"""Model-side of the trial: suggestions from a checkpoint at a fixed cutoff."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..data import Volume
from ..data.preprocess import TARGET_SPACING_MM, crop_patch, resample_isotropic
from ..model import DeepFAN
from ..stats import BENIGN, MALIGNANT
from ..training import batch_tensor
from .config import TrialError, validate_box


@dataclass(frozen=True)
class AiSuggestion:
    label: str           # the only part a reader may ever see
    probability: float   # server-side log record, never serialized to a payload
    threshold: float


def load_scoring_model(path: str | Path,
                       threshold: float | None = None) -> tuple[DeepFAN, float]:
    """Checkpoint plus its stored validation-selected threshold.

    An explicit threshold overrides the stored one; a checkpoint without
    either is unusable for serving.
    """
    model, extra = DeepFAN.load(path)
    if threshold is None:
        threshold = extra.get("threshold")
    if threshold is None:
        raise TrialError(
            f"checkpoint {path} stores no decision threshold; pass one explicitly")
    t = float(threshold)
    if not 0.0 <= t <= 1.0:
        raise TrialError(f"threshold {t} outside [0, 1]")
    return model, t


class AiOracle:
    """Deterministic eval-mode inference over handbook boxes."""

    def __init__(self, model: DeepFAN, threshold: float):
        if not 0.0 <= float(threshold) <= 1.0:
            raise TrialError(f"threshold {threshold} outside [0, 1]")
        self.model = model
        self.threshold = float(threshold)

    def suggest(self, volume: Volume, box) -> AiSuggestion:
        box = validate_box(box)
        for hi, dim in zip(box[3:], volume.dims):
            if hi > dim:
                raise TrialError(f"box {box} falls outside the volume {volume.dims}")
        # midpoint of the half-open box, carried in mm so the crop matches the
        # training pipeline after resampling
        center_mm = tuple((lo + hi - 1) / 2.0 * s
                          for lo, hi, s in zip(box[:3], box[3:], volume.spacing))
        spacing = TARGET_SPACING_MM[self.model.cfg.scale]
        patch = crop_patch(resample_isotropic(volume, spacing), center_mm,
                           self.model.cfg.input_vox)
        outputs = self.model.forward(batch_tensor([patch]), training=False,
                                     parts="all")
        p = float(outputs.scores[0])
        label = MALIGNANT if p >= self.threshold else BENIGN
        return AiSuggestion(label=label, probability=p, threshold=self.threshold)
