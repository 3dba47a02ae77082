"""Degradation estimates read directly off a CPI-like hardware counter.

``best_possible`` knows the interference-free CPI of every (app, workload)
pair. ``best_effort`` only sees the app's own unlabelled history: a first
Gaussian mixture over memory usage stands in for the workload level, a second
one over CPI inside the matching memory cluster, and the lowest-mean CPI
component serves as the interference-free baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numba import njit
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-8
_LOG_2PI = np.log(2 * np.pi)


@dataclass
class Gmm1D:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik_history: list = field(default_factory=list)
    converged: bool = True

    @property
    def n_components(self) -> int:
        return int(self.means.size)

    @property
    def n_params(self) -> int:
        return 3 * self.n_components - 1

    def _log_joint(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        return (np.log(self.weights) - 0.5 * (_LOG_2PI + np.log(self.variances))
                - 0.5 * (x - self.means) ** 2 / self.variances)

    def loglik(self, x) -> float:
        return float(logsumexp(self._log_joint(x), axis=1).sum())

    def responsibilities(self, x) -> np.ndarray:
        lj = self._log_joint(x)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def predict(self, x) -> np.ndarray:
        """Most responsible component; ties go to the lower index (lower mean)."""
        return np.argmax(self._log_joint(x), axis=1)

    def bic(self, x) -> float:
        n = np.asarray(x).size
        return -2.0 * self.loglik(x) + self.n_params * np.log(n)


def _kmeanspp(x, k, rng):
    centers = [x[rng.integers(x.size)]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        if d2.sum() == 0:
            centers.append(x[rng.integers(x.size)])
        else:
            centers.append(x[rng.choice(x.size, p=d2 / d2.sum())])
    return np.array(centers)


@njit(cache=True)
def _em(x, w, mu, var, tol, max_iter, hist):
    """EM iterations in place on ``w, mu, var``; returns (#loglik values, converged)."""
    n, K = x.shape[0], w.shape[0]
    r = np.empty((n, K))
    lj = np.empty(K)
    const = np.empty(K)
    xmean = x.mean()
    xvar = max(x.var(), VAR_FLOOR)
    tiny = np.finfo(np.float64).tiny
    for it in range(max_iter + 1):
        # E step; its normaliser gives the log-likelihood of the current parameters
        ll = 0.0
        for k in range(K):
            const[k] = np.log(w[k]) - 0.5 * (_LOG_2PI + np.log(var[k]))
        for i in range(n):
            top = -np.inf
            for k in range(K):
                d = x[i] - mu[k]
                lj[k] = const[k] - 0.5 * d * d / var[k]
                top = max(top, lj[k])
            tot = 0.0
            for k in range(K):
                r[i, k] = np.exp(lj[k] - top)
                tot += r[i, k]
            for k in range(K):
                r[i, k] /= tot
            ll += top + np.log(tot)
        hist[it] = ll
        if it > 0 and abs(hist[it] - hist[it - 1]) < tol:
            return it + 1, True
        if it == max_iter:
            break
        wsum = 0.0
        for k in range(K):
            nk = 0.0
            s1 = 0.0
            for i in range(n):
                nk += r[i, k]
                s1 += r[i, k] * x[i]
            # an emptied component keeps its place at the data mean instead of producing NaNs
            if nk > 0:
                mu[k] = s1 / nk
                s2 = 0.0
                for i in range(n):
                    d = x[i] - mu[k]
                    s2 += r[i, k] * d * d
                var[k] = max(s2 / nk, VAR_FLOOR)
            else:
                mu[k] = xmean
                var[k] = xvar
            w[k] = max(nk / n, tiny)
            wsum += w[k]
        for k in range(K):
            w[k] /= wsum
    return max_iter + 1, False


def fit_gmm_em(values, K, seed=0, tol=1e-8, max_iter=500) -> Gmm1D:
    """EM for a ``K``-component 1-D mixture.

    Means start from k-means++ seeds, variances from the pooled variance.
    Stops when the log-likelihood gains less than ``tol`` or after
    ``max_iter`` iterations. Components are returned sorted by mean.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("values must be finite")
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > np.unique(x).size:
        raise ValueError(f"K={K} exceeds the {np.unique(x).size} distinct values")
    rng = np.random.default_rng(seed)
    w = np.full(K, 1.0 / K)
    mu = _kmeanspp(x, K, rng)
    var = np.full(K, max(x.var(), VAR_FLOOR))
    hist = np.empty(max_iter + 1)
    n_hist, converged = _em(x, w, mu, var, tol, max_iter, hist)
    history = hist[:n_hist].tolist()
    gmm = Gmm1D(w, mu, var)
    order = np.argsort(gmm.means, kind="stable")
    return Gmm1D(gmm.weights[order], gmm.means[order], gmm.variances[order], history, converged)


def _bic_search(values, K_max, seed) -> Gmm1D:
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    x = np.asarray(values, dtype=np.float64).ravel()
    best, best_bic = None, np.inf
    for k in range(1, min(K_max, np.unique(x).size) + 1):
        g = fit_gmm_em(x, k, seed)
        b = g.bic(x)
        if b < best_bic:
            best, best_bic = g, b
    return best


def select_k_bic(values, K_max=6, seed=0) -> int:
    """Number of components in ``1..K_max`` with the lowest BIC (first one on ties)."""
    return _bic_search(values, K_max, seed).n_components


def fit_gmm_bic(values, K_max=6, seed=0) -> Gmm1D:
    return _bic_search(values, K_max, seed)


# --- estimators ------------------------------------------------------------------

def best_possible_cpi(cpi, baseline):
    """``cpi / baseline - 1`` with the known interference-free CPI as baseline."""
    baseline = np.asarray(baseline, dtype=np.float64)
    if np.any(baseline <= 0):
        raise ValueError("baseline CPI must be positive")
    return np.asarray(cpi, dtype=np.float64) / baseline - 1.0


@dataclass
class _AppCpiModel:
    memory: Gmm1D
    baselines: np.ndarray   # one per memory cluster
    mismatch: bool = False  # memory clusters disagree with the number of workload levels


def _fit_app(mem, cpi, n_levels, K_max, seed) -> _AppCpiModel:
    mem_gmm = fit_gmm_bic(mem, K_max, seed)
    cluster = mem_gmm.predict(mem)
    baselines = np.full(mem_gmm.n_components, np.nan)
    for k in range(mem_gmm.n_components):
        vals = cpi[cluster == k]
        if vals.size == 0:
            continue
        baselines[k] = fit_gmm_bic(vals, K_max, seed).means[0]
    mismatch = n_levels is not None and mem_gmm.n_components != n_levels
    return _AppCpiModel(mem_gmm, baselines, mismatch)


def best_effort_cpi(history_mem, history_cpi, mem, cpi, K_max=6, seed=0):
    """Degradation estimate for samples ``(mem, cpi)`` from one app's unlabelled history."""
    model = _fit_app(np.asarray(history_mem, float), np.asarray(history_cpi, float), None, K_max, seed)
    return _predict_app(model, mem, cpi)


def _predict_app(model: _AppCpiModel, mem, cpi):
    cluster = model.memory.predict(np.asarray(mem, dtype=np.float64))
    base = model.baselines[cluster]
    if np.any(~np.isfinite(base)):
        raise ValueError("sample falls in a memory cluster with no history")
    return best_possible_cpi(cpi, base)


class CpiBaseline(RegressorMixin, BaseEstimator):
    """Per-app CPI baseline estimator on a metadata frame.

    ``fit``/``predict`` take a frame with ``app``, ``intensity``, raw CPI and
    raw memory columns, plus (for ``best_possible`` fitting) the per-row SoI
    intensities used to identify interference-free rows.
    """

    def __init__(self, mode="best_effort", cpi_column="raw_hw_cpi", mem_column="raw_rv_mem_used",
                 K_max=6, seed=0):
        self.mode = mode
        self.cpi_column = cpi_column
        self.mem_column = mem_column
        self.K_max = K_max
        self.seed = seed

    def fit(self, meta: pd.DataFrame, y=None):
        if self.mode not in ("best_possible", "best_effort"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.models_ = {}
        if self.mode == "best_possible":
            from .simcloud import SOI_COLUMNS
            clean = (meta[SOI_COLUMNS].to_numpy() == 0).all(axis=1)
            base = meta[clean].groupby(["app", "intensity"])[self.cpi_column].mean()
            self.models_ = base.to_dict()
            return self
        for app, grp in meta.groupby("app", sort=True):
            m = _fit_app(grp[self.mem_column].to_numpy(float), grp[self.cpi_column].to_numpy(float),
                         grp["intensity"].nunique(), self.K_max, self.seed)
            if m.mismatch:
                log.info("app %s: %d memory clusters for %d workload levels", app,
                         m.memory.n_components, grp["intensity"].nunique())
            self.models_[app] = m
        return self

    def predict(self, meta: pd.DataFrame):
        check_is_fitted(self, "models_")
        out = np.empty(len(meta))
        if self.mode == "best_possible":
            keys = list(zip(meta["app"], meta["intensity"]))
            missing = [k for k in set(keys) if k not in self.models_]
            if missing:
                raise ValueError(f"no interference-free baseline for {sorted(missing)[:3]}")
            base = np.array([self.models_[k] for k in keys])
            return best_possible_cpi(meta[self.cpi_column].to_numpy(float), base)
        pos = np.arange(len(meta))
        for app, idx in meta.groupby("app", sort=True).indices.items():
            if app not in self.models_:
                raise ValueError(f"no history for app {app!r}")
            rows = meta.iloc[idx]
            out[pos[idx]] = _predict_app(self.models_[app], rows[self.mem_column].to_numpy(float),
                                         rows[self.cpi_column].to_numpy(float))
        return out


def predictions_frame(sample_ids, d_hat, mode) -> pd.DataFrame:
    return pd.DataFrame({"sample_id": sample_ids, "d_hat": d_hat, "mode": mode})
