"""CSV and plain-text output of evaluation reports.

Floats are written with a fixed format so repeated runs produce identical files.
"""

from __future__ import annotations

from pathlib import Path

import pandas as pd

FLOAT_FORMAT = "%.6g"


def write_csv(frame: pd.DataFrame, path, index=False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def format_table(frame: pd.DataFrame, digits=4) -> str:
    return frame.to_string(float_format=lambda v: f"{v:.{digits}f}")


def write_report(report, out_dir, prefix=None, predictions=True) -> list[Path]:
    """Per-app MAE table, per-threshold sweep of every method, optional raw predictions."""
    out = Path(out_dir)
    prefix = prefix or report.protocol
    paths = [write_csv(report.mae_table(), out / f"{prefix}_mae.csv", index=True)]
    sweeps = []
    for method in report.methods:
        table, _ = report.sweep(method)
        sweeps.append(table.assign(method=method))
    sweep = pd.concat(sweeps, ignore_index=True)
    paths.append(write_csv(sweep[["method", *sweep.columns[:-1]]], out / f"{prefix}_sweep.csv"))
    if report.selections:
        sel = pd.DataFrame([(fold, name) for fold, names in report.selections.items() for name in names],
                           columns=["fold", "feature"])
        paths.append(write_csv(sel, out / f"{prefix}_features.csv"))
    for key, table in report.cv_tables.items():
        safe = key.replace(":", "_")
        paths.append(write_csv(table, out / f"{prefix}_cv_{safe}.csv"))
    if predictions:
        paths.append(write_csv(report.predictions, out / f"{prefix}_predictions.csv"))
    return paths
