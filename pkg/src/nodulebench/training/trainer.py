"""Stage-wise Adam training over manifest splits, with periodic checkpoints."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..data import DatasetManifest, Volume, iter_loaded_nodules
from ..data.preprocess import (TARGET_SPACING_MM, augment, crop_patch,
                               normalize_intensity, resample_isotropic)
from ..engine import AdamState, Tensor, adam_step, zero_grads
from ..model import DeepFAN
from .loss import (BatchTargets, LossWeights, TrainingError, composite_loss,
                   targets_from_annotations)
from .schedule import StagePlan, lr_schedule


@dataclass
class SplitData:
    """One split, resampled and cropped once; augmentation re-runs per epoch."""
    ids: list[str]
    patient_ids: list[str]
    patches: list[Volume]
    targets: BatchTargets

    def __len__(self) -> int:
        return len(self.patches)


def load_split_patches(manifest: DatasetManifest, cfg, split: str) -> SplitData:
    spacing = TARGET_SPACING_MM[cfg.scale]
    ids: list[str] = []
    patient_ids: list[str] = []
    patches: list[Volume] = []
    anns = []
    seen_patient = None
    nodule_index = 0
    for record, ann, volume in iter_loaded_nodules(manifest, split):
        if record.patient_id != seen_patient:
            seen_patient = record.patient_id
            nodule_index = 0
            iso = resample_isotropic(volume, spacing)
        patches.append(crop_patch(iso, ann.center_mm, cfg.input_vox))
        ids.append(f"{record.patient_id}/{nodule_index}")
        patient_ids.append(record.patient_id)
        anns.append(ann)
        nodule_index += 1
    if not patches:
        raise TrainingError(f"split {split!r} is empty")
    return SplitData(ids=ids, patient_ids=patient_ids, patches=patches,
                     targets=targets_from_annotations(anns))


def batch_tensor(patches: Sequence[Volume],
                 rng: np.random.Generator | None = None) -> Tensor:
    """Stack patches to a (B, 1, V, V, V) network input; rng turns on augmentation."""
    arrays = []
    for patch in patches:
        if rng is not None:
            patch = augment(patch, rng)
        arrays.append(normalize_intensity(patch).data)
    x = np.stack(arrays)[:, None]
    return Tensor(x)


@dataclass
class StageResult:
    stage: str
    epochs: int
    checkpoints: tuple[Path, ...]   # periodic in epoch order, final file last
    log_path: Path

    @property
    def final(self) -> Path:
        return self.checkpoints[-1]


def _epoch_means(step_losses: list[tuple[int, dict]]) -> dict:
    total_n = sum(n for n, _ in step_losses)
    keys = ("l_t0", "l_c0", "l_c1", "l_c2", "l_all", "l_g", "total")
    sums = dict.fromkeys(keys, 0.0)
    for n, d in step_losses:
        for k in keys:
            sums[k] += n * d[k]
    return {k: sums[k] / total_n for k in keys}


def train_stage(model: DeepFAN, data: SplitData, plan: StagePlan,
                out_dir: str | Path, rng: np.random.Generator,
                batch_size: int = 16,
                weights: LossWeights = LossWeights(),
                log_path: str | Path | None = None) -> StageResult:
    """Adam over shuffled minibatches; only groups outside plan.frozen_groups move.

    Writes a checkpoint at every epoch divisible by plan.checkpoint_every and a
    separate final file, plus one JSON line per epoch (stage, epoch, lr, mean
    loss breakdown) appended to the log.
    """
    if len(data) == 0:
        raise TrainingError("cannot train on an empty split")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = Path(log_path) if log_path else out_dir / "train_log.jsonl"

    groups = model.param_groups()
    frozen = {name for g in plan.frozen_groups for name in groups[g]}
    trainable = {n: p for n, p in model.params.items() if n not in frozen}
    if not trainable:
        raise TrainingError("every parameter group is frozen")

    shuffle_rng, augment_rng, forward_rng = rng.spawn(3)
    state = AdamState()
    checkpoints: list[Path] = []
    n = len(data)

    for name in frozen:
        model.params[name].requires_grad = False
    try:
        with open(log_path, "a", encoding="utf-8") as log:
            for epoch in range(plan.epochs):
                lr = lr_schedule(plan, epoch)
                order = shuffle_rng.permutation(n)
                step_losses: list[tuple[int, dict]] = []
                for start in range(0, n, batch_size):
                    idx = order[start:start + batch_size]
                    x = batch_tensor([data.patches[i] for i in idx], augment_rng)
                    outputs = model.forward(x, rng=forward_rng, training=True,
                                            parts=plan.parts)
                    breakdown = composite_loss(outputs, data.targets.take(idx),
                                               weights)
                    zero_grads(model.params)
                    breakdown.total.backward()
                    adam_step(trainable, state, lr)
                    # Keep plain floats only: holding the breakdown would pin
                    # each step's whole autodiff graph for the rest of the
                    # epoch, which does not fit in RAM at the joint stage.
                    step_losses.append((len(idx), breakdown.to_dict()))
                line = {"stage": plan.stage, "epoch": epoch + 1, "lr": lr,
                        "n": n, "loss": _epoch_means(step_losses)}
                log.write(json.dumps(line) + "\n")
                if (epoch + 1) % plan.checkpoint_every == 0:
                    path = out_dir / f"{plan.stage}_epoch{epoch + 1:04d}.ckpt"
                    model.save(path, extra={"stage": plan.stage, "epoch": epoch + 1})
                    checkpoints.append(path)
            final = out_dir / f"{plan.stage}_final.ckpt"
            model.save(final, extra={"stage": plan.stage, "epoch": plan.epochs})
            checkpoints.append(final)
    finally:
        for name in frozen:
            model.params[name].requires_grad = True

    return StageResult(stage=plan.stage, epochs=plan.epochs,
                       checkpoints=tuple(checkpoints), log_path=log_path)


@dataclass
class TrainingRun:
    stages: list[StageResult] = field(default_factory=list)
    best_checkpoint: Path | None = None
    best_val_auc: float | None = None


def run_training(model: DeepFAN, manifest: DatasetManifest,
                 plans: Sequence[StagePlan], out_dir: str | Path, seed: int,
                 batch_size: int = 16,
                 weights: LossWeights = LossWeights()) -> TrainingRun:
    """All stages in order on the train split, then checkpoint selection on
    validation AUC over the last stage's series."""
    from .evaluate import select_best_checkpoint

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_data = load_split_patches(manifest, model.cfg, "train")
    master = np.random.default_rng(seed)
    run = TrainingRun()
    for plan in plans:
        stage_rng = master.spawn(1)[0]
        run.stages.append(train_stage(model, train_data, plan, out_dir,
                                      stage_rng, batch_size=batch_size,
                                      weights=weights,
                                      log_path=out_dir / "train_log.jsonl"))
    best_path, best_auc = select_best_checkpoint(
        run.stages[-1].checkpoints, manifest, split="validation")
    run.best_checkpoint = best_path
    run.best_val_auc = best_auc

    best_model, _ = DeepFAN.load(best_path)
    for name, tensor in best_model.params.items():
        model.params[name].data[...] = tensor.data
    return run
