"""Composite degradation estimator: denoiser features feeding a boosted-tree regressor.

The regressor sees ``[x | x_hat | x - x_hat]``: the current window features,
their interference-free reconstruction, and the difference between the two.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .boost import GbtConfig, TreeEnsemble, fit_bagged, fit_gbt, grid_search_3pass, select_k_best
from .dataprep import FeatureTable
from .explain import TreeExplainer, global_importance, select_features_cross_app
from .neural import DaeModel, DaeSpec, TrainConfig, train_dadae, train_dae
from .validation import check_features, check_target

DENOISERS = ("dae", "dadae", "oracle", "none")


def augment(X, X_hat) -> np.ndarray:
    return np.hstack([X, X_hat, X - X_hat])


def augmented_names(names) -> list:
    return [*names, *(f"{n}@clean" for n in names), *(f"{n}@delta" for n in names)]


# --- SHAP feature selection --------------------------------------------------------

@dataclass(frozen=True)
class SelectionConfig:
    rows: int = 3000
    n_trees: int = 60
    max_depth: int = 4
    eta: float = 0.2
    rows_per_app: int = 200
    background: int = 200
    top_n: int = 20
    quorum: int = 4


@dataclass
class FeatureSelection:
    indices: np.ndarray
    names: list
    importance: dict = field(default_factory=dict)   # app -> GlobalImportance


def select_features_by_shap(table: FeatureTable, cfg: SelectionConfig = SelectionConfig(),
                            seed: int = 0) -> FeatureSelection:
    """Cross-app Shapley vote on a boosted model fitted to all window features.

    The model is fitted on a row sample to keep the full-width fit cheap;
    every app then contributes up to ``rows_per_app`` explained rows.
    """
    rng = np.random.default_rng(seed)
    n = len(table)
    rows = np.sort(rng.choice(n, min(cfg.rows, n), replace=False))
    model = fit_gbt(table.X[rows], table.y[rows],
                    GbtConfig(n_trees=cfg.n_trees, max_depth=cfg.max_depth, eta=cfg.eta, seed=seed))
    bg = table.X[np.sort(rng.choice(n, min(cfg.background, n), replace=False))]
    explainer = TreeExplainer(model, bg)
    importance = {}
    for app in sorted(set(table.apps.tolist())):
        idx = np.flatnonzero(table.apps == app)
        idx = np.sort(rng.choice(idx, min(cfg.rows_per_app, idx.size), replace=False))
        importance[app] = global_importance(explainer.shap_values(table.X[idx]))
    quorum = min(cfg.quorum, len(importance) - 1)
    chosen = select_features_cross_app(importance, cfg.top_n, quorum)
    if chosen.size == 0:
        # no feature wins the vote: fall back to the best features by mean |phi|
        total = sum(imp.abs_mean for imp in importance.values())
        chosen = np.sort(np.argsort(-total, kind="stable")[:cfg.top_n])
    return FeatureSelection(chosen, [table.names[j] for j in chosen], importance)


# --- composite estimator -------------------------------------------------------------

class DegradationEstimator(RegressorMixin, BaseEstimator):
    """Denoiser + boosted trees.

    ``denoiser``:
      * ``dae``: offline denoising auto-encoder trained on ``(X, X_clean)``.
      * ``dadae``: domain-adversarial variant; needs ``X_target`` at fit time.
      * ``oracle``: the caller supplies the true clean features at fit and
        predict time.
      * ``none``: trees on ``X`` alone.

    ``init`` is an already trained offline DAE: the ``dae`` denoiser then uses
    it as is, the ``dadae`` denoiser starts from it instead of training one.
    """

    def __init__(self, denoiser="dae", gbt=None, dae_spec=None, dae_train=None, dadae_train=None,
                 warm_start=True, tune=False, grid=None, cv_rows=None, max_rows=None, init=None,
                 seed=0):
        self.denoiser = denoiser
        self.gbt = gbt
        self.dae_spec = dae_spec
        self.dae_train = dae_train
        self.dadae_train = dadae_train
        self.warm_start = warm_start
        self.tune = tune
        self.grid = grid
        self.cv_rows = cv_rows
        self.max_rows = max_rows
        self.init = init
        self.seed = seed

    def _gbt_cfg(self) -> GbtConfig:
        return getattr(self, "gbt_", None) or self.gbt or GbtConfig(seed=self.seed)

    def fit(self, X, y, X_clean=None, X_target=None):
        """Fit the denoiser, optionally tune the trees by 3-pass CV, then fit the trees.

        ``max_rows`` caps the rows the trees (and CV) see; the denoiser always
        learns from every row.
        """
        if self.denoiser not in DENOISERS:
            raise ValueError(f"denoiser must be one of {DENOISERS}")
        X = check_features(X)
        y = check_target(y, X.shape[0])
        spec = self.dae_spec or DaeSpec()
        self.dae_ = None
        if self.denoiser in ("dae", "dadae", "oracle"):
            if X_clean is None:
                raise ValueError(f"denoiser {self.denoiser!r} needs X_clean at fit time")
            X_clean = check_features(X_clean, X.shape[1], "X_clean")
        if self.init is not None and self.init.n_features != X.shape[1]:
            raise ValueError("init denoiser was trained on a different number of features")
        if self.denoiser == "dae":
            self.dae_ = self.init or train_dae(X, X_clean, spec,
                                               self.dae_train or TrainConfig(seed=self.seed))
        elif self.denoiser == "dadae":
            if X_target is None:
                raise ValueError("the adversarial denoiser needs unlabelled X_target rows")
            init = self.init
            if init is None and self.warm_start:
                init = train_dae(X, X_clean, spec, self.dae_train or TrainConfig(seed=self.seed))
            self.dae_ = train_dadae(X, X_clean, X_target, spec,
                                    self.dadae_train or TrainConfig(seed=self.seed), init=init)
        inputs = self._inputs(X, X_clean)
        self.gbt_ = self.gbt or GbtConfig(seed=self.seed)
        self.cv_table_ = None
        if self.tune:
            self.gbt_, self.cv_table_ = grid_search_3pass(inputs, y, self.grid, k=5, seed=self.seed,
                                                          base=self.gbt_,
                                                          max_rows=self.cv_rows or self.max_rows)
        rows = np.arange(X.shape[0])
        if self.max_rows is not None and X.shape[0] > self.max_rows:
            rng = np.random.default_rng(self.seed)
            rows = np.sort(rng.choice(X.shape[0], self.max_rows, replace=False))
        self.ensemble_ = fit_gbt(inputs[rows], y[rows], self.gbt_)
        self.n_features_in_ = X.shape[1]
        return self

    def _inputs(self, X, X_clean=None):
        if self.denoiser == "none":
            return X
        if self.denoiser == "oracle":
            if X_clean is None:
                raise ValueError("the oracle denoiser needs X_clean")
            return augment(X, X_clean)
        return augment(X, self.dae_.denoise(X))

    def denoise(self, X):
        check_is_fitted(self, "ensemble_")
        if self.dae_ is None:
            raise ValueError(f"denoiser {self.denoiser!r} has no learned reconstruction")
        return self.dae_.denoise(check_features(X, self.n_features_in_))

    def transform(self, X, X_clean=None):
        """The regressor's input matrix for ``X``."""
        check_is_fitted(self, "ensemble_")
        return self._inputs(check_features(X, self.n_features_in_), X_clean)

    def predict(self, X, X_clean=None):
        return self.ensemble_.predict(self.transform(X, X_clean))

    def to_dict(self) -> dict:
        check_is_fitted(self, "ensemble_")
        return {"kind": "degradation_estimator", "denoiser": self.denoiser,
                "gbt": asdict(self._gbt_cfg()), "n_features": self.n_features_in_,
                "dae": self.dae_.to_dict() if self.dae_ is not None else None,
                "ensemble": self.ensemble_.to_dict()}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_dict(cls, d) -> "DegradationEstimator":
        if d.get("kind") != "degradation_estimator":
            raise ValueError("not a serialized degradation estimator")
        est = cls(denoiser=d["denoiser"], gbt=GbtConfig(**d["gbt"]))
        est.gbt_ = est.gbt
        est.dae_ = DaeModel.from_dict(d["dae"]) if d["dae"] is not None else None
        est.ensemble_ = TreeEnsemble.from_dict(d["ensemble"])
        est.n_features_in_ = int(d["n_features"])
        return est

    @classmethod
    def load(cls, path) -> "DegradationEstimator":
        return cls.from_dict(json.loads(Path(path).read_text()))


class PracticalMethod(RegressorMixin, BaseEstimator):
    """Univariate F-test feature selection followed by bagged regression trees."""

    def __init__(self, k=20, n_trees=30, max_depth=None, seed=0):
        self.k = k
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.seed = seed

    def fit(self, X, y):
        X = check_features(X)
        y = check_target(y, X.shape[0])
        self.support_ = np.sort(select_k_best(X, y, min(self.k, X.shape[1])))
        self.ensemble_ = fit_bagged(X[:, self.support_], y, self.n_trees, self.max_depth, self.seed)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "ensemble_")
        X = check_features(X, self.n_features_in_)
        return self.ensemble_.predict(X[:, self.support_])
