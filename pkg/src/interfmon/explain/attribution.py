"""Shapley-driven feature selection and source-of-interference attribution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..simcloud import SOI_COLUMNS, SoIKind
from ..validation import check_features, check_target


def _phi_matrix(explanations) -> np.ndarray:
    if isinstance(explanations, np.ndarray):
        phi = explanations
    else:
        phi = np.array([e.phi for e in explanations])
    if phi.ndim != 2 or phi.shape[0] == 0:
        raise ValueError("need at least one explanation")
    return np.asarray(phi, dtype=np.float64)


@dataclass
class GlobalImportance:
    abs_mean: np.ndarray
    pos_mean: np.ndarray
    neg_mean: np.ndarray

    def frame(self, names=None) -> pd.DataFrame:
        return pd.DataFrame({"feature": names if names is not None else np.arange(self.abs_mean.size),
                             "mean_abs": self.abs_mean, "mean_pos": self.pos_mean,
                             "mean_neg": self.neg_mean})


def global_importance(explanations) -> GlobalImportance:
    """Per-feature ``mean |phi|``, ``mean max(phi, 0)`` and ``mean min(phi, 0)``."""
    phi = _phi_matrix(explanations)
    return GlobalImportance(np.abs(phi).mean(axis=0), np.maximum(phi, 0).mean(axis=0),
                            np.minimum(phi, 0).mean(axis=0))


def _top(values, n):
    # strictly non-zero entries only, so a feature the model never uses is never "top"
    order = np.argsort(-values, kind="stable")
    order = order[values[order] > 0]
    return set(order[:n].tolist())


def app_feature_set(importance: GlobalImportance, top_n=20) -> set:
    """Union of the ``top_n`` features by positive and by negative mean contribution."""
    return _top(importance.pos_mean, top_n) | _top(-importance.neg_mean, top_n)


def select_features_cross_app(per_app, top_n=20, quorum=4) -> np.ndarray:
    """Features in the per-app top sets of more than ``quorum`` applications.

    ``per_app`` maps an app name to its explanations (or phi matrix, or a
    :class:`GlobalImportance`). Returns sorted column indices.
    """
    if len(per_app) < quorum:
        raise ValueError(f"need at least {quorum} applications, got {len(per_app)}")
    votes: dict[int, int] = {}
    for expl in per_app.values():
        imp = expl if isinstance(expl, GlobalImportance) else global_importance(expl)
        for j in app_feature_set(imp, top_n):
            votes[j] = votes.get(j, 0) + 1
    return np.array(sorted(j for j, v in votes.items() if v > quorum), dtype=np.int64)


# --- interference-intensity models ------------------------------------------------

def pearson_abs(X, s) -> np.ndarray:
    """|Pearson r| of every column with ``s``; constant columns score 0."""
    X = check_features(X)
    s = check_target(s, X.shape[0], "soi intensity")
    sc = s - s.mean()
    if not np.any(sc):
        raise ValueError("interference intensity has zero variance")
    Xc = X - X.mean(axis=0)
    num = Xc.T @ sc
    den = np.sqrt((Xc ** 2).sum(axis=0) * (sc ** 2).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / den, 0.0)
    return np.abs(r)


def top_correlated_metrics(X, s, k=20) -> np.ndarray:
    """Indices of the ``k`` columns most correlated (in absolute value) with ``s``."""
    r = pearson_abs(X, s)
    return np.argsort(-r, kind="stable")[:min(k, r.size)]


@dataclass
class SoiWeightModel:
    """Least-squares interference level ``IIL = sum_j alpha_j x_j`` over columns ``support``."""

    soi: SoIKind
    support: np.ndarray
    omega: np.ndarray
    n_features: int
    rank_deficient: bool = False

    @property
    def omega_tilde(self) -> np.ndarray:
        """Weights spread back over the full input order, zero off the support."""
        w = np.zeros(self.n_features)
        w[self.support] = self.omega
        return w

    def predict(self, X) -> np.ndarray:
        return check_features(X, self.n_features) @ self.omega_tilde


def fit_iil(X, s, support, soi=SoIKind.LLC) -> SoiWeightModel:
    """Ordinary least squares of ``s`` on ``X[:, support]`` with no intercept.

    Rank-deficient designs fall back to the minimum-norm (pseudo-inverse)
    solution and are flagged.
    """
    X = check_features(X)
    s = check_target(s, X.shape[0], "soi intensity")
    support = np.asarray(support, dtype=np.int64)
    if support.size > X.shape[0]:
        raise ValueError("more regressors than rows")
    A = X[:, support]
    omega, _, rank, _ = np.linalg.lstsq(A, s, rcond=None)
    return SoiWeightModel(SoIKind(soi), support, omega, X.shape[1], bool(rank < support.size))


def fit_weight_models(X, soi_matrix, k=20) -> list:
    """One :class:`SoiWeightModel` per source of interference, in ``SoIKind`` order."""
    soi_matrix = np.asarray(soi_matrix, dtype=np.float64)
    models = []
    for kind in SoIKind:
        s = soi_matrix[:, kind]
        if not np.any(s != s[0]):
            # resource never varies in these rows: no metric can track it
            models.append(SoiWeightModel(kind, np.zeros(0, np.int64), np.zeros(0), X.shape[1]))
            continue
        models.append(fit_iil(X, s, top_correlated_metrics(X, s, k), kind))
    return models


@dataclass
class AttributionResult:
    c: np.ndarray
    c_tilde: np.ndarray | None
    top1: SoIKind | None

    @property
    def attributed(self) -> bool:
        return self.c_tilde is not None


def interfering_scores(phi, weight_models) -> np.ndarray:
    """Raw scores ``c_i = <omega_tilde_i, phi>`` for one or many rows."""
    W = np.array([m.omega_tilde for m in weight_models])
    return np.asarray(phi, dtype=np.float64) @ W.T


def attribute(explanation, weight_models) -> AttributionResult:
    """Rectified, normalised interfering scores of one explanation.

    Negative scores are set to 0 before normalising. If nothing positive is
    left there is no attribution (``c_tilde`` and ``top1`` are None).
    """
    if len(weight_models) != len(SoIKind):
        raise ValueError(f"need {len(SoIKind)} weight models, got {len(weight_models)}")
    phi = getattr(explanation, "phi", explanation)
    c = np.maximum(interfering_scores(phi, weight_models), 0.0)
    total = c.sum()
    if total <= 0:
        return AttributionResult(c, None, None)
    c_tilde = c / total
    return AttributionResult(c, c_tilde, SoIKind(int(np.argmax(c_tilde))))


def attribution_frame(sample_ids, results, truth=None) -> pd.DataFrame:
    """Report rows: sample id, one contribution column per SoI, top1 and optional truth."""
    rows = []
    for i, (sid, res) in enumerate(zip(sample_ids, results)):
        if not res.attributed:
            continue
        row = {"sample_id": sid}
        row.update({f"c_{col[4:]}": v for col, v in zip(SOI_COLUMNS, res.c_tilde)})
        row["top1"] = res.top1.name
        if truth is not None:
            row["truth"] = truth[i]
        rows.append(row)
    cols = ["sample_id", *[f"c_{c[4:]}" for c in SOI_COLUMNS], "top1"]
    if truth is not None:
        cols.append("truth")
    return pd.DataFrame(rows, columns=cols)


def shap_frame(sample_ids, phi, names) -> pd.DataFrame:
    """Long table (sample id, feature, phi)."""
    phi = np.asarray(phi)
    return pd.DataFrame({
        "sample_id": np.repeat(np.asarray(sample_ids), phi.shape[1]),
        "feature": np.tile(np.asarray(names), phi.shape[0]),
        "phi": phi.ravel(),
    })
