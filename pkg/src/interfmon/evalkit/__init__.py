"""Metrics, evaluation protocols and reports."""

from .attribution import AttributionReport, evaluate_attribution, single_soi_truth
from .metrics import THRESHOLDS, Confusion, confusion, mae, qos_confusion, threshold_sweep, violations
from .protocols import (DEFAULT_METHODS, METHODS, PROTOCOLS, EvalReport, ProtocolConfig, run_method,
                        run_protocol)
from .reports import format_table, write_report

__all__ = [
    "AttributionReport", "evaluate_attribution", "single_soi_truth", "THRESHOLDS", "Confusion",
    "confusion", "mae", "qos_confusion", "threshold_sweep", "violations", "DEFAULT_METHODS",
    "METHODS", "PROTOCOLS", "EvalReport", "ProtocolConfig", "run_method", "run_protocol",
    "format_table", "write_report",
]
