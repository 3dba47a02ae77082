"""Three-pass grid search with K-fold cross validation."""

from __future__ import annotations

import itertools

import numpy as np
import pandas as pd

from ..dataprep import kfold_indices
from ..validation import check_features, check_target
from .ensemble import GbtConfig, fit_gbt

DEFAULT_GRID = {
    "tree": {"max_depth": [3, 4, 6], "min_child_weight": [1.0, 5.0]},
    "sampling": {"subsample": [0.7, 1.0], "colsample": [0.7, 1.0]},
    "regularization": {"reg_lambda": [0.0, 1.0, 5.0], "eta": [0.05, 0.1]},
}
PASSES = ("tree", "sampling", "regularization")


def _capacity_key(cfg: GbtConfig):
    # smaller is "less capacity": shallow, heavy leaves, less data, more shrinkage
    return (cfg.max_depth, -cfg.min_child_weight, cfg.subsample, cfg.colsample,
            -cfg.reg_lambda, cfg.eta)


def cross_val_mae(X, y, cfg: GbtConfig, folds) -> list[float]:
    out = []
    all_idx = np.arange(X.shape[0])
    for fold in folds:
        train = np.setdiff1d(all_idx, fold, assume_unique=True)
        model = fit_gbt(X[train], y[train], cfg)
        out.append(float(np.mean(np.abs(model.predict(X[fold]) - y[fold]))))
    return out


def grid_search_3pass(X, y, grid=None, k=5, seed=0, base=None, max_rows=None):
    """Tune tree splitting, then sampling, then regularisation parameters.

    Each pass searches the product of its grid entries with the winners of
    earlier passes held fixed. The winner is the lowest mean CV MAE; exact ties
    go to the smaller-capacity configuration.

    ``max_rows`` caps the rows used for CV (a seeded subsample); the returned
    config is meant to be refit on the full data by the caller.

    Returns
    -------
    best : GbtConfig
    table : DataFrame with one row per (pass, candidate, fold)
    """
    X = check_features(X)
    y = check_target(y, X.shape[0])
    grid = DEFAULT_GRID if grid is None else grid
    if X.shape[0] < k:
        raise ValueError(f"need at least {k} rows for {k}-fold CV, got {X.shape[0]}")
    if max_rows is not None and X.shape[0] > max_rows:
        keep = np.sort(np.random.default_rng(seed).choice(X.shape[0], max_rows, replace=False))
        X, y = X[keep], y[keep]
    folds = kfold_indices(X.shape[0], k, seed)
    best = base if base is not None else GbtConfig(seed=seed)
    rows = []
    for pass_name in PASSES:
        params = grid.get(pass_name, {})
        if not params or any(len(v) == 0 for v in params.values()):
            raise ValueError(f"grid pass {pass_name!r} is empty")
        names = sorted(params)
        candidates = [best.replace(**dict(zip(names, combo)))
                      for combo in itertools.product(*(params[n] for n in names))]
        candidates.sort(key=_capacity_key)
        winner, winner_mae = None, np.inf
        for cid, cand in enumerate(candidates):
            maes = cross_val_mae(X, y, cand, folds)
            for fold_id, m in enumerate(maes):
                rows.append({"pass": pass_name, "candidate": cid, "fold": fold_id, "mae": m,
                             **{n: getattr(cand, n) for n in names}})
            mean = float(np.mean(maes))
            if mean < winner_mae:
                winner, winner_mae = cand, mean
        best = winner
    return best, pd.DataFrame(rows)


def cv_report(table: pd.DataFrame) -> pd.DataFrame:
    """Mean and spread of CV MAE per candidate."""
    keys = [c for c in table.columns if c not in ("fold", "mae")]
    return (table.groupby(keys, dropna=False)["mae"]
            .agg(["mean", "std", "count"]).reset_index())
