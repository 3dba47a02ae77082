"""Train/test protocols and the method comparison harness.

Protocols:

* ``offline_8_2``: app-stratified 80/20 split of the windowed rows.
* ``leave_one_app_out``: one fold per application; the held-out app is never
  seen by preprocessing, feature selection, denoiser pairs or the trees. Its
  unlabelled features are the target domain of the adversarial denoiser.
* ``oracle_dae``: the leave-one-app-out folds with every learned denoiser
  replaced by the true interference-free feature vectors.

Each fold fits its own preprocessing on training rows only and runs the
Shapley feature vote on training rows only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ..baselines import CpiBaseline
from ..boost import GbtConfig
from ..dataprep import (FeatureTable, WindowConfig, build_features, clean_group_means, feature_rows,
                        fit_preprocess, holdout_indices)
from ..neural import DaeSpec, TrainConfig
from ..pipeline import DegradationEstimator, PracticalMethod, SelectionConfig, select_features_by_shap
from ..simcloud import metric_columns
from .metrics import THRESHOLDS, threshold_sweep

log = logging.getLogger(__name__)

PROTOCOLS = ("offline_8_2", "leave_one_app_out", "oracle_dae")
METHODS = ("dae_gbt", "dadae_gbt", "oracle_gbt", "gbt", "practical", "best_possible_cpi",
           "best_effort_cpi")
DEFAULT_METHODS = {
    "offline_8_2": ("dae_gbt", "gbt", "practical", "best_possible_cpi", "best_effort_cpi"),
    "leave_one_app_out": ("dae_gbt", "dadae_gbt", "oracle_gbt", "gbt"),
    "oracle_dae": ("dae_gbt",),
}
_DENOISER = {"dae_gbt": "dae", "dadae_gbt": "dadae", "oracle_gbt": "oracle", "gbt": "none"}


@dataclass(frozen=True)
class ProtocolConfig:
    seed: int = 0
    qos_kind: str = "latency"
    windows: WindowConfig = WindowConfig()
    selection: SelectionConfig = SelectionConfig()
    dae_spec: DaeSpec = DaeSpec()
    dae_train: TrainConfig = TrainConfig(epochs=100, momentum=0.9)
    dadae_train: TrainConfig = TrainConfig(epochs=40, momentum=0.9, lambda_max=0.003)
    gbt: GbtConfig = GbtConfig(n_trees=200, max_depth=4, eta=0.1)
    tune: bool = True        # 3-pass grid search (offline protocol only)
    grid: dict | None = None
    cv_rows: int = 2000
    gbt_rows: int | None = None
    practical_k: int = 20
    practical_trees: int = 20
    K_max: int = 6
    holdout_ratio: float = 0.8


@dataclass
class Fold:
    name: str
    train: FeatureTable       # selected features only
    test: FeatureTable
    selected: list


@dataclass
class EvalReport:
    protocol: str
    predictions: pd.DataFrame
    selections: dict = field(default_factory=dict)
    configs: dict = field(default_factory=dict)
    cv_tables: dict = field(default_factory=dict)

    @property
    def methods(self) -> list:
        return list(dict.fromkeys(self.predictions["method"]))

    def mae_table(self) -> pd.DataFrame:
        """Method x app MAE with an unweighted ``mean`` column over apps."""
        p = self.predictions
        err = (p["D"] - p["D_hat"]).abs()
        table = err.groupby([p["method"], p["app"]]).mean().unstack("app")
        table = table.reindex(self.methods)
        table["mean"] = table.mean(axis=1)
        table.index.name = "method"
        return table

    def mean_mae(self, method) -> float:
        return float(self.mae_table().loc[method, "mean"])

    def sweep(self, method, thresholds=THRESHOLDS):
        p = self.predictions[self.predictions["method"] == method]
        return threshold_sweep(p["D"].to_numpy(), p["D_hat"].to_numpy(), thresholds)


def _fit_features(frame, train_rows, cfg: ProtocolConfig):
    """Preprocessing fitted on ``train_rows`` of the raw frame, applied to every row."""
    metrics = metric_columns(frame.columns)
    model = fit_preprocess(frame.iloc[train_rows][metrics])
    return build_features(frame, model, cfg.windows, cfg.qos_kind)


def _make_fold(name, table: FeatureTable, tr_idx, te_idx, cfg: ProtocolConfig) -> Fold:
    train_full = table.subset(tr_idx)
    sel = select_features_by_shap(train_full, cfg.selection, seed=cfg.seed)
    train = FeatureTable(train_full.X[:, sel.indices], sel.names, train_full.meta)
    test = table.subset(te_idx).select(sel.names)
    return Fold(name, train, test, sel.names)


def offline_folds(frame, cfg: ProtocolConfig):
    frame = frame.reset_index(drop=True)
    rows = feature_rows(frame, cfg.windows)
    tr_idx, te_idx = holdout_indices(frame["app"].to_numpy()[rows], cfg.holdout_ratio, cfg.seed)
    keep = np.ones(len(frame), dtype=bool)
    keep[rows[te_idx]] = False
    table = _fit_features(frame, np.flatnonzero(keep), cfg)
    yield lambda: _make_fold("all", table, tr_idx, te_idx, cfg)


def loao_folds(frame, cfg: ProtocolConfig, apps=None):
    frame = frame.reset_index(drop=True)
    names = sorted(set(frame["app"]))
    if len(names) < 2:
        raise ValueError("leave-one-app-out needs at least two applications")
    for app in apps or names:
        if app not in names:
            raise KeyError(f"unknown application {app!r}")

        def make(app=app):
            train_rows = np.flatnonzero(frame["app"].to_numpy() != app)
            table = _fit_features(frame, train_rows, cfg)
            test = table.apps == app
            return _make_fold(app, table, np.flatnonzero(~test), np.flatnonzero(test), cfg)
        yield make


def _subsample(n, cap, seed):
    if cap is None or n <= cap:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, cap, replace=False))


def run_method(method, fold: Fold, cfg: ProtocolConfig, protocol="offline_8_2", report_cv=None,
               dae=None):
    """Fit ``method`` on the fold's training rows, return predictions for its test rows.

    ``dae`` is an offline denoiser already trained on this fold; the DAE and
    adversarial methods reuse it instead of training their own.
    """
    report_cv = {} if report_cv is None else report_cv
    tr, te = fold.train, fold.test
    if method in ("best_possible_cpi", "best_effort_cpi"):
        mode = method[:-4]
        # the history the best-effort baseline may use is the app's own unlabelled trace
        history = tr.meta if mode == "best_possible" else pd.concat([tr.meta, te.meta])
        est = CpiBaseline(mode, K_max=cfg.K_max, seed=cfg.seed).fit(history)
        return est.predict(te.meta), None
    if method == "practical":
        rows = _subsample(len(tr), cfg.gbt_rows, cfg.seed)
        est = PracticalMethod(cfg.practical_k, cfg.practical_trees, seed=cfg.seed)
        est.fit(tr.X[rows], tr.y[rows])
        return est.predict(te.X), est
    if method not in _DENOISER:
        raise ValueError(f"unknown method {method!r}")
    denoiser = _DENOISER[method]
    if protocol == "oracle_dae" and denoiser in ("dae", "dadae"):
        denoiser = "oracle"
    clean_tr = clean_group_means(tr) if denoiser != "none" else None
    clean_te = clean_group_means(te) if denoiser == "oracle" else None
    tuned = cfg.tune and protocol == "offline_8_2"
    est = DegradationEstimator(denoiser, gbt=cfg.gbt.replace(seed=cfg.seed), dae_spec=cfg.dae_spec,
                               dae_train=replace(cfg.dae_train, seed=cfg.seed),
                               dadae_train=replace(cfg.dadae_train, seed=cfg.seed),
                               tune=tuned, grid=cfg.grid, cv_rows=cfg.cv_rows,
                               max_rows=cfg.gbt_rows, init=dae, seed=cfg.seed)
    est.fit(tr.X, tr.y, X_clean=clean_tr, X_target=te.X)
    if est.cv_table_ is not None:
        report_cv[method] = est.cv_table_
    return est.predict(te.X, clean_te), est


def _run_fold(make_fold, protocol, methods, cfg):
    fold = make_fold()
    log.info("fold %s: %d train / %d test rows, %d features", fold.name, len(fold.train),
             len(fold.test), len(fold.selected))
    parts, cv, models = [], {}, {}
    dae = None
    for method in methods:
        d_hat, est = run_method(method, fold, cfg, protocol, cv, dae)
        models[method] = est
        if method == "dae_gbt" and est.dae_ is not None:
            dae = est.dae_
        meta = fold.test.meta
        parts.append(pd.DataFrame({
            "protocol": protocol, "fold": fold.name, "method": method,
            "app": meta["app"].to_numpy(), "intensity": meta["intensity"].to_numpy(),
            "t": meta["t"].to_numpy(), "D": meta["D"].to_numpy(), "D_hat": d_hat,
        }))
    return fold, pd.concat(parts, ignore_index=True), cv, models


def run_protocol(frame: pd.DataFrame, protocol: str, methods=None, cfg: ProtocolConfig = ProtocolConfig(),
                 apps=None, jobs: int = 1, keep_models: bool = False) -> EvalReport:
    """Run every method under ``protocol`` and collect test predictions."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}")
    methods = tuple(methods or DEFAULT_METHODS[protocol])
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown methods {bad}")
    if protocol == "offline_8_2":
        if apps:
            raise ValueError("the offline protocol always uses every application")
        makers = list(offline_folds(frame, cfg))
    else:
        makers = list(loao_folds(frame, cfg, apps))
    results = Parallel(n_jobs=jobs)(delayed(_run_fold)(m, protocol, methods, cfg) for m in makers) \
        if jobs != 1 else [_run_fold(m, protocol, methods, cfg) for m in makers]
    report = EvalReport(protocol, pd.concat([r[1] for r in results], ignore_index=True))
    for fold, _, cv, models in results:
        report.selections[fold.name] = fold.selected
        report.cv_tables.update({f"{fold.name}:{k}": v for k, v in cv.items()})
        if keep_models:
            report.configs[fold.name] = {"fold": fold, "models": models}
    return report
