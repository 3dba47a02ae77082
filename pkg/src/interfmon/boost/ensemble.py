"""Boosted and bagged tree ensembles with a scikit-learn compatible surface."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..validation import check_features, check_target
from .tree import RegressionTree, TreeGrowth, fit_tree


@dataclass(frozen=True)
class GbtConfig:
    n_trees: int = 100
    max_depth: int = 4
    min_child_weight: float = 1.0
    subsample: float = 1.0
    colsample: float = 1.0
    reg_lambda: float = 1.0
    eta: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("subsample", "colsample", "eta"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")
        if self.n_trees < 0 or self.max_depth < 0:
            raise ValueError("n_trees and max_depth must be >= 0")

    def replace(self, **changes) -> "GbtConfig":
        return GbtConfig(**{**asdict(self), **changes})


@dataclass
class TreeEnsemble:
    """Fitted ensemble. Boosted: ``base + eta * sum(trees)``; bagged: mean of trees."""

    base_score: float
    eta: float
    trees: list
    mode: str = "boosted"
    n_features: int = 0

    def predict(self, X) -> np.ndarray:
        X = check_features(X, n_features=self.n_features or None)
        if self.mode == "bagged":
            if not self.trees:
                return np.full(X.shape[0], self.base_score)
            return np.mean([t.predict(X) for t in self.trees], axis=0)
        out = np.full(X.shape[0], float(self.base_score))
        for t in self.trees:
            out += self.eta * t.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "tree_ensemble",
            "mode": self.mode,
            "base_score": self.base_score,
            "eta": self.eta,
            "n_features": self.n_features,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        if d.get("kind") != "tree_ensemble":
            raise ValueError("not a serialized tree ensemble")
        return cls(
            base_score=float(d["base_score"]),
            eta=float(d["eta"]),
            trees=[RegressionTree.from_dict(t) for t in d["trees"]],
            mode=d["mode"],
            n_features=int(d["n_features"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TreeEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_gbt(X, y, cfg: GbtConfig = GbtConfig()) -> TreeEnsemble:
    """Squared-error gradient boosting.

    Starts from ``mean(y)``; each round fits a tree to the residual gradients
    of a row/column subsample drawn from a generator seeded by ``cfg.seed``.
    """
    X = check_features(X)
    y = check_target(y, X.shape[0])
    if X.shape[0] < 2:
        raise ValueError("fit_gbt needs at least two rows")
    ens, _ = _boost(X, y, cfg)
    return ens


def _boost(X, y, cfg):
    n, p = X.shape
    rng = np.random.default_rng(cfg.seed)
    growth = TreeGrowth.from_matrix(X)
    base = float(np.mean(y))
    pred = np.full(n, base)
    h = np.ones(n)
    n_rows = max(1, int(round(cfg.subsample * n)))
    n_cols = max(1, int(round(cfg.colsample * p)))
    trees, losses = [], [float(np.mean((y - pred) ** 2))]
    for _ in range(cfg.n_trees):
        mask = None
        if n_rows < n:
            mask = np.zeros(n, dtype=bool)
            mask[rng.choice(n, n_rows, replace=False)] = True
        feats = None
        if n_cols < p:
            feats = rng.choice(p, n_cols, replace=False)
        tree = fit_tree(None, pred - y, h, cfg.max_depth, cfg.min_child_weight,
                        cfg.reg_lambda, row_mask=mask, features=feats, growth=growth)
        pred += cfg.eta * tree.predict(X)
        trees.append(tree)
        losses.append(float(np.mean((y - pred) ** 2)))
    return TreeEnsemble(base, cfg.eta, trees, "boosted", p), losses


def fit_bagged(X, y, n_trees=50, max_depth=None, seed=0, bootstrap=True) -> TreeEnsemble:
    """Bagged regression trees (bootstrap rows, unregularised, mean prediction).

    ``max_depth=None`` grows each tree until leaves are pure or cannot split.
    """
    X = check_features(X)
    y = check_target(y, X.shape[0])
    if X.shape[0] < 2:
        raise ValueError("fit_bagged needs at least two rows")
    n = X.shape[0]
    depth = 64 if max_depth is None else int(max_depth)
    rng = np.random.default_rng(seed)
    growth = TreeGrowth.from_matrix(X)
    trees = []
    for _ in range(n_trees):
        if bootstrap:
            counts = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        else:
            counts = np.ones(n)
        # a bootstrap draw is a multiplicity weight on each row
        tree = fit_tree(None, -counts * y, counts, depth, min_child_weight=1.0,
                        reg_lambda=0.0, row_mask=counts > 0, growth=growth)
        trees.append(tree)
    return TreeEnsemble(float(np.mean(y)), 1.0, trees, "bagged", X.shape[1])


class GBTRegressor(RegressorMixin, BaseEstimator):
    """Gradient-boosted regression trees (squared error, exact greedy splits).

    Parameters mirror :class:`GbtConfig`; ``eta`` is the shrinkage.
    """

    def __init__(self, n_trees=100, max_depth=4, min_child_weight=1.0, subsample=1.0,
                 colsample=1.0, reg_lambda=1.0, eta=0.1, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_child_weight = min_child_weight
        self.subsample = subsample
        self.colsample = colsample
        self.reg_lambda = reg_lambda
        self.eta = eta
        self.seed = seed

    @classmethod
    def from_config(cls, cfg: GbtConfig) -> "GBTRegressor":
        return cls(**asdict(cfg))

    def config(self) -> GbtConfig:
        return GbtConfig(**self.get_params())

    def fit(self, X, y):
        X = check_features(X)
        y = check_target(y, X.shape[0])
        if X.shape[0] < 2:
            raise ValueError("GBTRegressor needs at least two rows")
        self.ensemble_, self.train_loss_ = _boost(X, y, self.config())
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.predict(X)


class BaggedTreeRegressor(RegressorMixin, BaseEstimator):
    def __init__(self, n_trees=50, max_depth=None, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.seed = seed

    def fit(self, X, y):
        self.ensemble_ = fit_bagged(X, y, self.n_trees, self.max_depth, self.seed)
        self.n_features_in_ = self.ensemble_.n_features
        return self

    def predict(self, X):
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.predict(X)


def predict(ensemble: TreeEnsemble, X) -> np.ndarray:
    return ensemble.predict(X)
