import numpy as np

from ..validation import check_features, check_target


def f_scores(X, y):
    """Univariate linear-regression F statistic per column (0 for constant columns).

    ``F = r^2 / (1 - r^2) * (n - 2)`` with ``r`` the Pearson correlation; an
    exact linear relation scores the largest finite float.
    """
    X = check_features(X)
    y = check_target(y, X.shape[0])
    n = X.shape[0]
    xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum(axis=0))
    sy = np.sqrt(yc @ yc)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (xc.T @ yc) / (sx * sy)
    r2 = np.clip(np.nan_to_num(r, nan=0.0) ** 2, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        F = r2 / (1.0 - r2) * max(n - 2, 1)
    return np.where(np.isfinite(F), F, np.finfo(float).max)


def select_k_best(X, y, k):
    """Indices of the ``k`` columns with the largest F statistic, best first."""
    if k <= 0:
        raise ValueError("k must be positive")
    F = f_scores(X, y)
    if k > F.shape[0]:
        raise ValueError(f"k={k} exceeds the {F.shape[0]} available features")
    return np.argsort(-F, kind="stable")[:k]
