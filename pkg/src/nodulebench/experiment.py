"""End-to-end experiment runner: data, staged training, selection, eval,
explanation samples, and a hash manifest tying the artifacts together.

Everything a run writes is a pure function of (config, seed): logs carry no
timestamps, checkpoints serialize sorted, JSON is dumped with sorted keys,
and evaluation bootstraps reseed from constants. Running the same config
twice must produce the same manifest file bit for bit.
"""
from __future__ import annotations

import hashlib
import json
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DatasetConfig, DatasetManifest, build_dataset, normalize_intensity
from .model import ABLATION_TABLE, DeepFAN, ablation_config, desk_config, paper_config
from .explain import gcn_node_attribution, grad_cam_map
from .stats import (BENIGN, MALIGNANT, ScoredCase, metric_report, roc_auc,
                    select_threshold_max_f1)
from .training import (StagePlan, load_split_patches, paper_stage_plans,
                       plans_for_config, score_split, sprint_stage_plans,
                       train_stage)


class ExperimentError(RuntimeError):
    """A pipeline stage failed; carries the stage name for the exit message."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class ExperimentConfigError(ValueError):
    pass


PROFILES = ("desk", "paper")


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str
    seed: int = 0
    profile: str = "desk"
    ablation: int = 9
    data: DatasetConfig = field(default_factory=DatasetConfig)
    data_dir: str | None = None            # default: <out_dir>/data
    plans: tuple[StagePlan, ...] | None = None  # None: profile default
    n_explain: int = 2
    batch_size: int = 16

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ExperimentConfigError(f"unknown profile {self.profile!r}")
        if self.ablation not in ABLATION_TABLE:
            raise ExperimentConfigError(
                f"ablation must be one of {sorted(ABLATION_TABLE)}, "
                f"got {self.ablation}")
        if self.n_explain < 0:
            raise ExperimentConfigError("n_explain must be non-negative")
        if self.batch_size < 1:
            raise ExperimentConfigError("batch_size must be positive")

    def model_config(self):
        base = desk_config() if self.profile == "desk" else paper_config()
        return ablation_config(self.ablation, base)

    def stage_plans(self) -> tuple[StagePlan, ...]:
        plans = self.plans
        if plans is None:
            plans = (sprint_stage_plans() if self.profile == "desk"
                     else paper_stage_plans())
        return plans_for_config(self.model_config(), plans)

    def resolved_data_dir(self) -> Path:
        return Path(self.data_dir) if self.data_dir else Path(self.out_dir) / "data"

    def to_dict(self) -> dict:
        return {
            "out_dir": str(self.out_dir),
            "seed": self.seed,
            "profile": self.profile,
            "ablation": self.ablation,
            "data": {
                "n_nodules": self.data.n_nodules,
                "malignant_fraction": self.data.malignant_fraction,
                "two_nodule_fraction": self.data.two_nodule_fraction,
                "noise_sd": self.data.noise_sd,
                "seed": self.data.seed,
            },
            "data_dir": str(self.data_dir) if self.data_dir else None,
            "plans": ([p.to_dict() for p in self.plans]
                      if self.plans is not None else None),
            "n_explain": self.n_explain,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        plans = d.get("plans")
        return cls(
            out_dir=d["out_dir"], seed=d.get("seed", 0),
            profile=d.get("profile", "desk"), ablation=d.get("ablation", 9),
            data=DatasetConfig(**d.get("data", {})),
            data_dir=d.get("data_dir"),
            plans=(tuple(StagePlan.from_dict(p) for p in plans)
                   if plans is not None else None),
            n_explain=d.get("n_explain", 2),
            batch_size=d.get("batch_size", 16),
        )


@contextmanager
def _stage(name: str):
    try:
        yield
    except ExperimentError:
        raise
    except BaseException as e:
        raise ExperimentError(name, e) from e


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _dataset_row(name: str, scores, labels, threshold: float) -> dict:
    cases = [ScoredCase(id=i, truth=MALIGNANT if y else BENIGN,
                        score=float(s),
                        call=MALIGNANT if s >= threshold else BENIGN)
             for i, s, y in zip(scores.ids, scores.scores, scores.labels)]
    report = metric_report(cases)
    curve, _ = roc_auc(cases)
    return {"name": name, "n": len(cases), "report": report.to_dict(),
            "roc": [list(p) for p in curve], "threshold": threshold}


def run_experiment(config: ExperimentConfig) -> Path:
    """Run the pipeline; returns the artifact directory.

    Stage order: gen-data (skipped when the dataset exists), the training
    stages for the chosen ablation, best-on-validation checkpoint selection,
    max-F1 threshold pick, validation+test evaluation, explanation samples,
    then the hash manifest. A failing stage raises ExperimentError naming it
    and leaves everything already written in place.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", config.to_dict())

    data_dir = config.resolved_data_dir()
    generated = not (data_dir / "manifest.jsonl").exists()
    with _stage("gen-data"):
        if generated:
            build_dataset(config.data, data_dir)
        manifest = DatasetManifest.load(data_dir)

    cfg = config.model_config()
    plans = config.stage_plans()
    candidates: list[Path] = []
    with _stage("train"):
        model = DeepFAN(cfg, seed=config.seed)
        train = load_split_patches(manifest, cfg, "train")
        val = load_split_patches(manifest, cfg, "validation")
        master = np.random.default_rng(config.seed)
        for plan in plans:
            result = train_stage(model, train, plan, out / "stages",
                                 master.spawn(1)[0],
                                 batch_size=config.batch_size)
            candidates.extend(result.checkpoints)

    with _stage("select"):
        scored = []
        for ck in candidates:
            m, _ = DeepFAN.load(ck)
            s = score_split(m, val)
            cases = [ScoredCase(id=i, truth=MALIGNANT if y else BENIGN,
                                score=float(v), call=BENIGN)
                     for i, v, y in zip(s.ids, s.scores, s.labels)]
            _, auc = roc_auc(cases)
            scored.append((auc, ck))
        best_auc, best_path = max(scored, key=lambda t: (t[0], t[1].name))
        best, _ = DeepFAN.load(best_path)
        val_scores = score_split(best, val)
        val_cases = [ScoredCase(id=i, truth=MALIGNANT if y else BENIGN,
                                score=float(v), call=BENIGN)
                     for i, v, y in zip(val_scores.ids, val_scores.scores,
                                        val_scores.labels)]
        threshold = select_threshold_max_f1(val_cases)
        best.save(out / "model.ckpt",
                  extra={"threshold": threshold, "ablation": config.ablation,
                         "selected_from": best_path.name,
                         "validation_auc": best_auc})
        _write_json(out / "eval" / "selection.json", {
            "candidates": [{"checkpoint": ck.name, "validation_auc": a}
                           for a, ck in scored],
            "selected": best_path.name,
            "validation_auc": best_auc,
            "threshold": threshold,
        })

    with _stage("eval"):
        test = load_split_patches(manifest, cfg, "test")
        _write_json(out / "eval" / "model_eval.json", {"datasets": [
            _dataset_row("validation", val_scores, None, threshold),
            _dataset_row("test", score_split(best, test), None, threshold),
        ]})

    explained: list[str] = []
    with _stage("explain"):
        for i in range(min(config.n_explain, len(test))):
            case_id = test.ids[i]
            slug = case_id.replace("/", "_")
            x = test.patches[i].values[None, None]
            layer = "local" if cfg.local_branch != "none" else "global"
            heat = grad_cam_map(best, x, target_layer=layer)
            np.save(out / "explain" / f"{slug}_cam.npy", heat.upsampled)
            entry = {"case_id": case_id, "target_layer": layer}
            if cfg.fusion == "gcn":
                entry["attribution"] = gcn_node_attribution(best, x).to_dict()
            _write_json(out / "explain" / f"{slug}.json", entry)
            explained.append(case_id)

    with _stage("manifest"):
        files = {}
        for path in sorted(out.rglob("*")):
            if path.is_file() and path.name != "manifest.json":
                digest = hashlib.sha256(path.read_bytes()).hexdigest()
                files[path.relative_to(out).as_posix()] = digest
        _write_json(out / "manifest.json", {
            "data_generated": generated,
            "data_dir": data_dir.relative_to(out).as_posix()
            if data_dir.is_relative_to(out) else str(data_dir),
            "stages": [p.stage for p in plans],
            "selected_checkpoint": best_path.name,
            "threshold": threshold,
            "explained_cases": explained,
            "files": files,
        })
    return out
