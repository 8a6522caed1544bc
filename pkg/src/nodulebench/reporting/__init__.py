"""Report assembly: the bundle builder, table/figure renderers, emission."""
from .bundle import (ARMS, CALL_SCORES, COHORTS, STRATA_ORDERS, CaseFacts,
                     report_bundle)
from .emit import emit_readings_report, emit_report, emit_run_report
from .figures import (kappa_figure, model_roc_figure, radar_axes_values,
                      radar_figure, roc_figure, save_svg)
from .readings import (REQUIRED_FIELDS, ReadingsFile, ReportingError,
                       bundle_from_readings, case_facts, load_readings,
                       model_calls)
from .tables import (COMPONENT_NAMES, METRIC_KEYS, METRIC_TITLES,
                     REGRESSION_HEADER, ablation_table, delta_cell, fmt3,
                     metric_cell, model_performance_table, p_label,
                     reader_comparison_table, regression_table,
                     stratified_table, write_csv)

__all__ = [
    "ARMS", "CALL_SCORES", "COHORTS", "COMPONENT_NAMES", "CaseFacts",
    "METRIC_KEYS", "METRIC_TITLES", "REGRESSION_HEADER", "REQUIRED_FIELDS",
    "ReadingsFile", "ReportingError", "STRATA_ORDERS", "ablation_table",
    "bundle_from_readings", "case_facts", "delta_cell",
    "emit_readings_report", "emit_report", "emit_run_report", "fmt3",
    "kappa_figure", "load_readings", "metric_cell", "model_calls",
    "model_performance_table", "model_roc_figure", "p_label",
    "radar_axes_values", "radar_figure", "reader_comparison_table",
    "regression_table", "report_bundle", "roc_figure", "save_svg",
    "stratified_table", "write_csv",
]
