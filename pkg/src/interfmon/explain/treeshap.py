"""Exact Shapley values for tree ensembles.

Two value functions are supported:

* ``path``: the path-dependent (cover-weighted) expectation. A feature
  outside the coalition sends the explained row down both children, weighted
  by the share of background rows that went each way. Node covers are
  recounted on the background set, so ``base_value`` equals the mean
  background prediction.
* ``interventional``: ``v(S) = mean_r f(x_S, r_rest)`` over the background
  rows ``r``; computed per (x, r) pair and averaged.

The path-dependent recursion keeps, for the current root-to-node path, the
fraction of coalitions of each size that reach the node (``pweight``), and
extends/unwinds it as it descends. This is the polynomial-time algorithm
usually called TreeSHAP.

The recursive kernels are compiled per process: numba's on-disk cache does
not reload self-recursive functions reliably.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..boost.ensemble import TreeEnsemble
from ..boost.tree import LEAF
from ..validation import check_features


@dataclass
class ShapExplanation:
    phi: np.ndarray
    base_value: float
    prediction: float

    @property
    def residual(self) -> float:
        """Local-accuracy gap ``base + sum(phi) - f(x)``."""
        return float(self.base_value + self.phi.sum() - self.prediction)


@njit(cache=True)
def _node_counts(X, feature, threshold, left, right):
    counts = np.zeros(feature.shape[0])
    for i in range(X.shape[0]):
        node = 0
        counts[0] += 1.0
        while feature[node] != LEAF:
            if X[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
            counts[node] += 1.0
    return counts


# --- path-dependent ------------------------------------------------------------

@njit(cache=True)
def _extend(feat, zf, of, pw, off, depth, z, o, f):
    feat[off + depth] = f
    zf[off + depth] = z
    of[off + depth] = o
    pw[off + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[off + i + 1] += o * pw[off + i] * (i + 1) / (depth + 1)
        pw[off + i] = z * pw[off + i] * (depth - i) / (depth + 1)


@njit(cache=True)
def _unwind(feat, zf, of, pw, off, depth, k):
    o = of[off + k]
    z = zf[off + k]
    nxt = pw[off + depth]
    for i in range(depth - 1, -1, -1):
        if o != 0.0:
            tmp = pw[off + i]
            pw[off + i] = nxt * (depth + 1) / ((i + 1) * o)
            nxt = tmp - pw[off + i] * z * (depth - i) / (depth + 1)
        else:
            pw[off + i] = pw[off + i] * (depth + 1) / (z * (depth - i))
    for i in range(k, depth):
        feat[off + i] = feat[off + i + 1]
        zf[off + i] = zf[off + i + 1]
        of[off + i] = of[off + i + 1]


@njit(cache=True)
def _unwound_sum(feat, zf, of, pw, off, depth, k):
    o = of[off + k]
    z = zf[off + k]
    nxt = pw[off + depth]
    total = 0.0
    if o != 0.0:
        for i in range(depth - 1, -1, -1):
            tmp = nxt / ((i + 1) * o)
            total += tmp
            nxt = pw[off + i] - tmp * z * (depth - i)
    else:
        for i in range(depth - 1, -1, -1):
            total += pw[off + i] / (z * (depth - i))
    return total * (depth + 1)


@njit
def _path_recurse(x, feature, threshold, left, right, value, cover, phi, scale,
                  feat, zf, of, pw, node, depth, off, z, o, f):
    # each level works on its own copy of the parent's path
    new_off = off + depth + 1
    for i in range(depth + 1):
        feat[new_off + i] = feat[off + i]
        zf[new_off + i] = zf[off + i]
        of[new_off + i] = of[off + i]
        pw[new_off + i] = pw[off + i]
    off = new_off
    _extend(feat, zf, of, pw, off, depth, z, o, f)

    split = feature[node]
    if split == LEAF:
        for i in range(1, depth + 1):
            w = _unwound_sum(feat, zf, of, pw, off, depth, i)
            phi[feat[off + i]] += w * (of[off + i] - zf[off + i]) * value[node] * scale
        return

    if x[split] < threshold[node]:
        hot, cold = left[node], right[node]
    else:
        hot, cold = right[node], left[node]
    c = cover[node]
    hot_z = cover[hot] / c if c > 0 else 0.0
    cold_z = cover[cold] / c if c > 0 else 0.0
    in_z = 1.0
    in_o = 1.0
    k = 0
    while k <= depth:
        if feat[off + k] == split:
            break
        k += 1
    if k != depth + 1:
        in_z = zf[off + k]
        in_o = of[off + k]
        _unwind(feat, zf, of, pw, off, depth, k)
        depth -= 1
    # a branch no coalition can reach (both fractions zero) contributes exactly nothing
    if hot_z * in_z != 0.0 or in_o != 0.0:
        _path_recurse(x, feature, threshold, left, right, value, cover, phi, scale,
                      feat, zf, of, pw, hot, depth + 1, off, hot_z * in_z, in_o, split)
    if cold_z * in_z != 0.0:
        _path_recurse(x, feature, threshold, left, right, value, cover, phi, scale,
                      feat, zf, of, pw, cold, depth + 1, off, cold_z * in_z, 0.0, split)


@njit
def _path_shap_rows(X, feature, threshold, left, right, value, cover, max_depth, scale, out):
    size = (max_depth + 2) * (max_depth + 3) // 2 + max_depth + 2
    feat = np.zeros(size, dtype=np.int64)
    zf = np.zeros(size)
    of = np.zeros(size)
    pw = np.zeros(size)
    for r in range(X.shape[0]):
        _path_recurse(X[r], feature, threshold, left, right, value, cover, out[r], scale,
                      feat, zf, of, pw, 0, 0, 0, 1.0, 1.0, -1)


# --- interventional ------------------------------------------------------------

@njit
def _interv_recurse(x, ref, feature, threshold, left, right, value, phi, scale, wtab,
                    side, xs, n_x, rs, n_r, node):
    f = feature[node]
    if f == LEAF:
        v = value[node] * scale
        for i in range(n_x):
            phi[xs[i]] += v * wtab[n_x - 1, n_r]
        for i in range(n_r):
            phi[rs[i]] -= v * wtab[n_x, n_r - 1]
        return
    x_child = left[node] if x[f] < threshold[node] else right[node]
    r_child = left[node] if ref[f] < threshold[node] else right[node]
    if side[f] == 1:
        _interv_recurse(x, ref, feature, threshold, left, right, value, phi, scale, wtab,
                        side, xs, n_x, rs, n_r, x_child)
    elif side[f] == 2 or x_child == r_child:
        _interv_recurse(x, ref, feature, threshold, left, right, value, phi, scale, wtab,
                        side, xs, n_x, rs, n_r, r_child)
    else:
        side[f] = 1
        xs[n_x] = f
        _interv_recurse(x, ref, feature, threshold, left, right, value, phi, scale, wtab,
                        side, xs, n_x + 1, rs, n_r, x_child)
        side[f] = 2
        rs[n_r] = f
        _interv_recurse(x, ref, feature, threshold, left, right, value, phi, scale, wtab,
                        side, xs, n_x, rs, n_r + 1, r_child)
        side[f] = 0


@njit
def _interv_shap_rows(X, R, feature, threshold, left, right, value, wtab, scale, out):
    p = X.shape[1]
    side = np.zeros(p, dtype=np.int8)
    xs = np.zeros(p, dtype=np.int64)
    rs = np.zeros(p, dtype=np.int64)
    s = scale / R.shape[0]
    for i in range(X.shape[0]):
        for j in range(R.shape[0]):
            _interv_recurse(X[i], R[j], feature, threshold, left, right, value, out[i], s,
                            wtab, side, xs, 0, rs, 0, 0)


def _weight_table(n):
    """``w[a, b] = a! b! / (a + b + 1)!``, the Shapley weight of one fixed ordering class."""
    w = np.zeros((n + 1, n + 1))
    for a in range(n + 1):
        for b in range(n + 1):
            w[a, b] = math.exp(math.lgamma(a + 1) + math.lgamma(b + 1) - math.lgamma(a + b + 2))
    return w


# --- public API ----------------------------------------------------------------

class TreeExplainer:
    """Shapley values of a :class:`TreeEnsemble` relative to a background set."""

    def __init__(self, ensemble: TreeEnsemble, background, method: str = "path"):
        if method not in ("path", "interventional"):
            raise ValueError(f"unknown method {method!r}")
        if not isinstance(ensemble, TreeEnsemble):
            raise TypeError("TreeExplainer needs a tree ensemble")
        self.ensemble = ensemble
        self.method = method
        self.background = check_features(background, ensemble.n_features or None, "background")
        if self.background.shape[0] == 0:
            raise ValueError("background set is empty")
        self.n_features = self.background.shape[1]
        self.base_value = float(np.mean(ensemble.predict(self.background)))
        self._covers = [_node_counts(self.background, t.feature, t.threshold, t.left, t.right)
                        for t in ensemble.trees]

    def _tree_scale(self):
        e = self.ensemble
        if e.mode == "bagged":
            return 1.0 / max(1, len(e.trees))
        return e.eta

    def shap_values(self, X) -> np.ndarray:
        X = check_features(X, self.n_features)
        phi = np.zeros_like(X)
        scale = self._tree_scale()
        for tree, cover in zip(self.ensemble.trees, self._covers):
            if self.method == "path":
                _path_shap_rows(X, tree.feature, tree.threshold, tree.left, tree.right,
                                tree.value, cover, max(tree.depth(), 1), scale, phi)
            else:
                wtab = _weight_table(max(tree.depth(), 1))
                _interv_shap_rows(X, self.background, tree.feature, tree.threshold, tree.left,
                                  tree.right, tree.value, wtab, scale, phi)
        return phi

    def explain(self, X) -> list:
        X = check_features(X, self.n_features)
        phi = self.shap_values(X)
        pred = self.ensemble.predict(X)
        return [ShapExplanation(phi[i], self.base_value, float(pred[i])) for i in range(X.shape[0])]


def shap_tree(ensemble: TreeEnsemble, x, background, method: str = "path") -> ShapExplanation:
    """Shapley explanation of one row ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("shap_tree explains a single row; use TreeExplainer for batches")
    return TreeExplainer(ensemble, background, method).explain(x[None, :])[0]
