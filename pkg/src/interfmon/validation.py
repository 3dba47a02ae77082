"""Input validation shared by the estimators."""

import numpy as np
from sklearn.utils import check_array


def check_features(X, n_features=None, name="X"):
    """2-D finite float64 matrix; missing values are rejected, not learned around."""
    X = check_array(X, dtype=np.float64, ensure_all_finite=True, input_name=name)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"{name} has {X.shape[1]} features, expected {n_features}")
    return X


def check_target(y, n_rows, name="y"):
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != n_rows:
        raise ValueError(f"{name} has {y.shape[0]} entries, expected {n_rows}")
    if not np.all(np.isfinite(y)):
        raise ValueError(f"{name} contains non-finite values")
    return y


def check_same_length(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b
