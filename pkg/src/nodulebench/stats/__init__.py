from .metrics import (
    BENIGN,
    CLASSES,
    MALIGNANT,
    METRIC_NAMES,
    ConfusionCounts,
    MetricReport,
    MetricValue,
    ScoredCase,
    StatsError,
    auc_from_scores,
    band_call,
    bootstrap_ci,
    compute_metrics,
    metric_report,
    patient_aggregate,
    point_metrics,
    reader_case,
    roc_auc,
    roc_points,
    select_threshold_max_f1,
)
from .compare import (
    DELTA_METRICS,
    DelongResult,
    DeltaEstimate,
    KappaMatrix,
    McnemarResult,
    cohens_kappa,
    delong_paired,
    kappa_band,
    kappa_matrix,
    mcnemar,
    paired_delta_bootstrap,
)
from .regression import LogisticFit, logistic_fit
from .strata import (
    DIAMETER_BANDS,
    DIFFICULTY_BANDS,
    StratumReport,
    diameter_band,
    difficulty_band,
    difficulty_labels,
    stratified_report,
)

__all__ = [
    "BENIGN",
    "CLASSES",
    "DIAMETER_BANDS",
    "DIFFICULTY_BANDS",
    "MALIGNANT",
    "METRIC_NAMES",
    "ConfusionCounts",
    "DELTA_METRICS",
    "DelongResult",
    "DeltaEstimate",
    "KappaMatrix",
    "LogisticFit",
    "McnemarResult",
    "MetricReport",
    "MetricValue",
    "ScoredCase",
    "StatsError",
    "StratumReport",
    "auc_from_scores",
    "band_call",
    "bootstrap_ci",
    "cohens_kappa",
    "compute_metrics",
    "delong_paired",
    "diameter_band",
    "difficulty_band",
    "difficulty_labels",
    "kappa_band",
    "kappa_matrix",
    "logistic_fit",
    "mcnemar",
    "paired_delta_bootstrap",
    "metric_report",
    "patient_aggregate",
    "point_metrics",
    "reader_case",
    "roc_auc",
    "roc_points",
    "select_threshold_max_f1",
    "stratified_report",
]
