"""Preprocessing, windowed features, denoising pairs and dataset splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .simcloud import SOI_COLUMNS, degradation_labels, metric_columns

STATS = ("mean", "min", "max", "maxdiff", "std")
CLIP_PERCENTILES = (1.0, 99.0)


# --- preprocessing ---------------------------------------------------------------

@dataclass
class PreprocessModel:
    kept_columns: list
    clip_lo: np.ndarray
    clip_hi: np.ndarray
    min_: np.ndarray
    max_: np.ndarray
    dropped_columns: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kept_columns": list(self.kept_columns), "dropped_columns": list(self.dropped_columns),
                "clip_lo": self.clip_lo.tolist(), "clip_hi": self.clip_hi.tolist(),
                "min": self.min_.tolist(), "max": self.max_.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessModel":
        return cls(list(d["kept_columns"]), np.asarray(d["clip_lo"]), np.asarray(d["clip_hi"]),
                   np.asarray(d["min"]), np.asarray(d["max"]), list(d.get("dropped_columns", [])))


def _metric_frame(table) -> pd.DataFrame:
    if isinstance(table, pd.DataFrame):
        cols = metric_columns(table.columns) or list(table.columns)
        return table[cols]
    arr = np.asarray(table, dtype=float)
    return pd.DataFrame(arr, columns=[f"x{j}" for j in range(arr.shape[1])])


def fit_preprocess(table) -> PreprocessModel:
    """Drop zero-variance columns, winsorise at the 1st/99th percentile, record min/max.

    ``table`` is a dataset frame (only its ``rv_``/``hw_``/``host_`` columns are
    used) or a plain frame/array of metric columns.
    """
    frame = _metric_frame(table)
    if len(frame) < 2:
        raise ValueError("fit_preprocess needs at least two rows")
    values = frame.to_numpy(dtype=float)
    var = values.var(axis=0)
    keep = var > 0
    if not keep.any():
        raise ValueError("every column has zero variance")
    cols = [c for c, k in zip(frame.columns, keep) if k]
    v = values[:, keep]
    lo, hi = np.percentile(v, CLIP_PERCENTILES, axis=0)
    v = np.clip(v, lo, hi)
    return PreprocessModel(cols, lo, hi, v.min(axis=0), v.max(axis=0),
                           [c for c, k in zip(frame.columns, keep) if not k])


def apply_preprocess(model: PreprocessModel, table) -> pd.DataFrame:
    """Clip then min-max scale the kept columns; results are clamped to [0, 1]."""
    frame = _metric_frame(table) if not isinstance(table, pd.DataFrame) else table
    missing = [c for c in model.kept_columns if c not in frame.columns]
    if missing:
        raise KeyError(f"table lacks preprocessed columns {missing[:5]}")
    v = np.clip(frame[model.kept_columns].to_numpy(dtype=float), model.clip_lo, model.clip_hi)
    span = model.max_ - model.min_
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (v - model.min_) / safe, 0.0)
    return pd.DataFrame(np.clip(out, 0.0, 1.0), columns=model.kept_columns, index=frame.index)


class MetricScaler(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_preprocess` / :func:`apply_preprocess`."""

    def fit(self, X, y=None):
        self.model_ = fit_preprocess(X)
        self.feature_names_out_ = list(self.model_.kept_columns)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        out = apply_preprocess(self.model_, X if isinstance(X, pd.DataFrame) else _metric_frame(X))
        return out if isinstance(X, pd.DataFrame) else out.to_numpy()

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "model_")
        return np.asarray(self.feature_names_out_, dtype=object)


# --- windowed features -----------------------------------------------------------

@dataclass(frozen=True)
class WindowConfig:
    """Window lengths (seconds) and summary statistics.

    A length-``T`` window at time ``t`` covers the ``T`` most recent samples,
    i.e. timestamps in ``(t - T, t]``.
    """

    lengths: tuple = (3, 5, 10, 20)
    stats: tuple = STATS

    def __post_init__(self):
        if not self.lengths or any(int(T) <= 0 for T in self.lengths):
            raise ValueError("window lengths must be positive")
        if tuple(self.stats) != STATS:
            raise ValueError(f"window statistics are fixed to {STATS}")

    @property
    def max_length(self) -> int:
        return int(max(self.lengths))

    def feature_names(self, metrics) -> list[str]:
        return [f"{m}.{T}.{s}" for m in metrics for T in self.lengths for s in self.stats]


@dataclass
class FeatureVector:
    values: np.ndarray
    names: list
    label: float | None = None


def _window_stats(win: np.ndarray) -> np.ndarray:
    """win: (..., m, T) -> (..., m, 5) in STATS order."""
    mn = win.min(axis=-1)
    mx = win.max(axis=-1)
    return np.stack([win.mean(axis=-1), mn, mx, mx - mn, win.std(axis=-1)], axis=-1)


def window_matrix(series: np.ndarray, cfg: WindowConfig = WindowConfig()) -> np.ndarray:
    """Features for every time step of a (n, m) series; rows without full history are NaN."""
    series = np.asarray(series, dtype=float)
    n, m = series.shape
    per_T = []
    for T in cfg.lengths:
        out = np.full((n, m, len(STATS)), np.nan)
        if n >= T:
            out[T - 1:] = _window_stats(sliding_window_view(series, T, axis=0))
        per_T.append(out)
    # (n, m, |T|, |stats|) flattened metric-major to match feature_names
    return np.stack(per_T, axis=2).reshape(n, m * len(cfg.lengths) * len(STATS))


def window_features(series, cfg: WindowConfig = WindowConfig(), t: int | None = None,
                    metric_names=None, label=None) -> FeatureVector:
    """Window statistics of every metric at step ``t`` (default: the last step)."""
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    n, m = series.shape
    t = n - 1 if t is None else int(t)
    if t >= n or t < 0:
        raise IndexError(f"t={t} outside a series of length {n}")
    if t + 1 < cfg.max_length:
        raise ValueError(f"need {cfg.max_length} samples of history at t={t}, have {t + 1}")
    names = metric_names if metric_names is not None else [f"m{j}" for j in range(m)]
    vals = np.concatenate([
        np.stack([_window_stats(series[t - T + 1:t + 1].T)], axis=1) for T in cfg.lengths
    ], axis=1).reshape(m * len(cfg.lengths) * len(STATS))
    return FeatureVector(vals, cfg.feature_names(names), label)


@dataclass
class FeatureTable:
    """Windowed feature matrix plus per-row labels.

    ``meta`` carries t, app, intensity, the four interference intensities,
    qos, the degradation label ``D``, ``clean`` (no interference anywhere in
    the longest window), and raw CPI / memory columns used by the baselines.
    """

    X: np.ndarray
    names: list
    meta: pd.DataFrame

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def y(self) -> np.ndarray:
        return self.meta["D"].to_numpy()

    @property
    def apps(self) -> np.ndarray:
        return self.meta["app"].to_numpy()

    @property
    def clean(self) -> np.ndarray:
        return self.meta["clean"].to_numpy(dtype=bool)

    @property
    def soi(self) -> np.ndarray:
        return self.meta[SOI_COLUMNS].to_numpy()

    def subset(self, idx) -> "FeatureTable":
        idx = np.asarray(idx)
        return FeatureTable(self.X[idx], list(self.names), self.meta.iloc[idx].reset_index(drop=True))

    def select(self, names) -> "FeatureTable":
        pos = {n: j for j, n in enumerate(self.names)}
        cols = [pos[n] for n in names]
        return FeatureTable(self.X[:, cols], list(names), self.meta)


RAW_KEEP = ("hw_cpi", "rv_mem_used")


def _episodes(frame: pd.DataFrame):
    """Row indices of every (app, intensity) episode, time-ordered, in first-seen order."""
    t = frame["t"].to_numpy()
    for _, idx in frame.groupby(["app", "intensity"], sort=False).indices.items():
        yield idx[np.argsort(t[idx], kind="stable")]


def feature_rows(frame: pd.DataFrame, cfg: WindowConfig = WindowConfig()) -> np.ndarray:
    """Positions in ``frame`` of the rows :func:`build_features` emits, in its output order."""
    frame = frame.reset_index(drop=True)
    return np.concatenate([idx[cfg.max_length - 1:] for idx in _episodes(frame)])


def build_features(frame: pd.DataFrame, model: PreprocessModel,
                   cfg: WindowConfig = WindowConfig(), qos_kind: str = "latency") -> FeatureTable:
    """Scale raw metrics, then window them per (app, intensity) episode.

    Rows without a full longest window of history are dropped.
    """
    frame = frame.reset_index(drop=True)
    D = degradation_labels(frame, qos_kind)
    scaled = apply_preprocess(model, frame).to_numpy()
    soi_any = (frame[SOI_COLUMNS].to_numpy() > 0).any(axis=1)
    Xs, metas = [], []
    for idx in _episodes(frame):
        F = window_matrix(scaled[idx], cfg)
        ok = np.arange(len(idx)) >= cfg.max_length - 1
        dirty = sliding_window_view(soi_any[idx], cfg.max_length).any(axis=1) if len(idx) >= cfg.max_length else np.zeros(0, bool)
        rows = idx[ok]
        meta = frame.loc[rows, ["t", "app", "intensity", *SOI_COLUMNS, "qos"]].reset_index(drop=True)
        meta["D"] = D[rows]
        meta["clean"] = ~dirty
        for c in RAW_KEEP:
            if c in frame.columns:
                meta["raw_" + c] = frame.loc[rows, c].to_numpy()
        Xs.append(F[ok])
        metas.append(meta)
    return FeatureTable(np.vstack(Xs), cfg.feature_names(model.kept_columns),
                        pd.concat(metas, ignore_index=True))


# --- denoising pairs -------------------------------------------------------------

def clean_group_means(table: FeatureTable) -> np.ndarray:
    """Per-row mean clean feature vector of the row's (app, intensity) group."""
    keys = pd.MultiIndex.from_frame(table.meta[["app", "intensity"]])
    clean = table.clean
    frame = pd.DataFrame(table.X[clean], index=keys[clean])
    means = frame.groupby(level=[0, 1]).mean()
    missing = ~keys.isin(means.index)
    if missing.any():
        bad = sorted(set(keys[missing]))
        raise ValueError(f"no clean rows for groups {bad[:5]}")
    return means.reindex(keys).to_numpy()


def make_dae_pairs(table: FeatureTable):
    """(inputs, targets): every row is paired with its group's mean clean vector."""
    return table.X, clean_group_means(table)


# --- splits ----------------------------------------------------------------------

def _take(dataset, idx):
    if isinstance(dataset, FeatureTable):
        return dataset.subset(idx)
    return dataset.iloc[np.asarray(idx)].reset_index(drop=True)


def _apps_of(dataset) -> np.ndarray:
    if isinstance(dataset, FeatureTable):
        return dataset.apps
    return dataset["app"].to_numpy()


def holdout_indices(apps, ratio=0.8, seed=0):
    apps = np.asarray(apps)
    if apps.shape[0] < 10:
        raise ValueError("holdout split needs at least 10 rows")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for a in sorted(set(apps.tolist())):
        idx = np.flatnonzero(apps == a)
        idx = idx[rng.permutation(idx.shape[0])]
        cut = int(round(ratio * idx.shape[0]))
        train.append(idx[:cut])
        test.append(idx[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split_holdout(dataset, ratio=0.8, seed=0):
    """App-stratified random split, ``ratio`` of each app's rows to train."""
    tr, te = holdout_indices(_apps_of(dataset), ratio, seed)
    return _take(dataset, tr), _take(dataset, te)


def split_leave_one_app_out(dataset, app):
    apps = _apps_of(dataset)
    names = set(apps.tolist())
    if len(names) < 2:
        raise ValueError("leave-one-app-out needs at least two applications")
    if app not in names:
        raise KeyError(f"unknown application {app!r}")
    test = apps == app
    return _take(dataset, np.flatnonzero(~test)), _take(dataset, np.flatnonzero(test))


def kfold_indices(n, k=5, seed=0):
    """Shuffled partition of ``range(n)`` into ``k`` folds whose sizes differ by at most one."""
    if n < k:
        raise ValueError(f"cannot make {k} folds from {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]
