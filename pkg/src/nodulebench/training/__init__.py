from .evaluate import (
    SplitEvaluation,
    SplitScores,
    evaluate_split,
    score_manifest_split,
    score_split,
    select_best_checkpoint,
)
from .loss import (
    BatchTargets,
    LossBreakdown,
    LossWeights,
    TrainingError,
    composite_loss,
    targets_from_annotations,
)
from .schedule import (
    DESK_EPOCH_DIVISOR,
    STAGE_ORDER,
    STAGE_PARTS,
    StagePlan,
    desk_stage_plans,
    lr_schedule,
    paper_stage_plans,
    sprint_stage_plans,
    plans_for_config,
    stage_plans,
)
from .trainer import (
    SplitData,
    StageResult,
    TrainingRun,
    batch_tensor,
    load_split_patches,
    run_training,
    train_stage,
)

__all__ = [
    "BatchTargets",
    "DESK_EPOCH_DIVISOR",
    "LossBreakdown",
    "LossWeights",
    "STAGE_ORDER",
    "STAGE_PARTS",
    "SplitData",
    "SplitEvaluation",
    "SplitScores",
    "StagePlan",
    "StageResult",
    "TrainingError",
    "TrainingRun",
    "batch_tensor",
    "composite_loss",
    "desk_stage_plans",
    "evaluate_split",
    "load_split_patches",
    "lr_schedule",
    "paper_stage_plans",
    "sprint_stage_plans",
    "plans_for_config",
    "run_training",
    "score_manifest_split",
    "score_split",
    "select_best_checkpoint",
    "stage_plans",
    "targets_from_annotations",
    "train_stage",
]
