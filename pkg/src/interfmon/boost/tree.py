"""Second-order regression trees with exact greedy split finding.

Trees are grown level by level. Every feature column is presorted once per
ensemble; a level then costs one pass over each sorted column, accumulating
gradient/hessian sums for all open nodes at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def _level_best_splits(XT, order, g, h, node_of_row, node_G, node_H, features,
                       reg_lambda, min_child_weight):
    n_nodes = node_G.shape[0]
    n = order.shape[1]
    best_gain = np.zeros(n_nodes)
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    parent_score = np.empty(n_nodes)
    min_gain = np.empty(n_nodes)
    for k in range(n_nodes):
        parent_score[k] = node_G[k] * node_G[k] / (node_H[k] + reg_lambda)
        # guards against round-off "gains" on splits that change nothing
        min_gain[k] = 1e-12 * abs(parent_score[k]) + 1e-15
    GL = np.zeros(n_nodes)
    HL = np.zeros(n_nodes)
    last = np.zeros(n_nodes)
    seen = np.zeros(n_nodes, dtype=np.bool_)
    for fi in range(features.shape[0]):
        f = features[fi]
        GL[:] = 0.0
        HL[:] = 0.0
        seen[:] = False
        for p in range(n):
            r = order[f, p]
            k = node_of_row[r]
            if k < 0:
                continue
            v = XT[f, r]
            if seen[k] and v > last[k]:
                hl = HL[k]
                hr = node_H[k] - hl
                if hl >= min_child_weight and hr >= min_child_weight:
                    gl = GL[k]
                    gr = node_G[k] - gl
                    gain = (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda)
                            - parent_score[k])
                    if gain > best_gain[k] and gain > min_gain[k]:
                        best_gain[k] = gain
                        best_feat[k] = f
                        best_thr[k] = 0.5 * (last[k] + v)
            GL[k] += g[r]
            HL[k] += h[r]
            last[k] = v
            seen[k] = True
    return best_gain, best_feat, best_thr


@njit(cache=True)
def _predict_tree(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def _apply_tree(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@dataclass
class RegressionTree:
    """Flat-array binary regression tree.

    Internal nodes route ``x[feature] < threshold`` to ``left``; leaves carry
    ``feature == -1`` and their output in ``value``. ``cover`` holds the
    hessian mass of the training rows that reached each node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    max_depth: int = 0
    n_features: int = 0

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature == LEAF

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Index of the leaf each row lands in."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
            "max_depth": self.max_depth,
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            cover=np.asarray(d["cover"], dtype=np.float64),
            max_depth=int(d["max_depth"]),
            n_features=int(d["n_features"]),
        )


@dataclass
class TreeGrowth:
    """Per-ensemble scratch state: transposed features and presorted columns."""

    XT: np.ndarray
    order: np.ndarray = field(repr=False)

    @classmethod
    def from_matrix(cls, X: np.ndarray) -> "TreeGrowth":
        XT = np.ascontiguousarray(np.asarray(X, dtype=np.float64).T)
        order = np.argsort(XT, axis=1, kind="stable").astype(np.int32)
        return cls(XT=XT, order=order)


def fit_tree(X, g, h, max_depth=3, min_child_weight=1.0, reg_lambda=1.0,
             row_mask=None, features=None, growth=None) -> RegressionTree:
    """Fit one tree to gradients ``g`` and hessians ``h``.

    Splits maximise the regularised second-order gain
    ``GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)`` over every midpoint of
    adjacent distinct values; leaves take the weight ``-G/(H+lam)``.

    Parameters
    ----------
    X : (n, p) array
    g, h : (n,) arrays
        First and second derivatives of the loss at the current prediction.
    row_mask : (n,) bool array, optional
        Rows taking part in this tree (row subsampling). Others are ignored.
    features : int array, optional
        Candidate split features (column subsampling). Default: all.
    growth : TreeGrowth, optional
        Precomputed presort of ``X``; pass it when fitting many trees on the
        same matrix.
    """
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if growth is None:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("fit_tree needs a non-empty 2-D feature matrix")
        growth = TreeGrowth.from_matrix(X)
    XT = growth.XT
    n_feat, n = XT.shape
    if g.shape != (n,) or h.shape != (n,):
        raise ValueError(f"gradients/hessians must have shape ({n},)")
    if n == 0:
        raise ValueError("fit_tree needs at least one row")
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    if features is None:
        features = np.arange(n_feat, dtype=np.int64)
    else:
        features = np.sort(np.asarray(features, dtype=np.int64))

    node_of_row = np.zeros(n, dtype=np.int32)
    if row_mask is not None:
        node_of_row[~np.asarray(row_mask, dtype=bool)] = -1

    feat, thr, left, right, value, cover = [LEAF], [0.0], [LEAF], [LEAF], [0.0], [0.0]
    level_nodes = [0]  # global ids of the open nodes, indexed by local id

    for depth in range(max_depth + 1):
        n_local = len(level_nodes)
        active = node_of_row >= 0
        node_G = np.bincount(node_of_row[active], weights=g[active], minlength=n_local)
        node_H = np.bincount(node_of_row[active], weights=h[active], minlength=n_local)
        for k, node in enumerate(level_nodes):
            value[node] = -node_G[k] / (node_H[k] + reg_lambda) if node_H[k] + reg_lambda > 0 else 0.0
            cover[node] = node_H[k]
        if depth == max_depth:
            break
        _, best_feat, best_thr = _level_best_splits(
            XT, growth.order, g, h, node_of_row, node_G, node_H, features,
            float(reg_lambda), float(min_child_weight))
        next_nodes = []
        child_local = np.full((n_local, 2), -1, dtype=np.int64)
        for k, node in enumerate(level_nodes):
            if best_feat[k] < 0:
                continue
            feat[node] = int(best_feat[k])
            thr[node] = float(best_thr[k])
            for side in (0, 1):
                child = len(feat)
                feat.append(LEAF)
                thr.append(0.0)
                left.append(LEAF)
                right.append(LEAF)
                value.append(0.0)
                cover.append(0.0)
                child_local[k, side] = len(next_nodes)
                next_nodes.append(child)
            left[node] = child - 1
            right[node] = child
        if not next_nodes:
            break
        rows = np.flatnonzero(active)
        k_rows = node_of_row[rows]
        f_rows = best_feat[k_rows]
        split_rows = f_rows >= 0
        rows, k_rows, f_rows = rows[split_rows], k_rows[split_rows], f_rows[split_rows]
        node_of_row[:] = -1
        go_right = (XT[f_rows, rows] >= best_thr[k_rows]).astype(np.int64)
        node_of_row[rows] = child_local[k_rows, go_right]
        level_nodes = next_nodes

    return RegressionTree(
        feature=np.asarray(feat, dtype=np.int64),
        threshold=np.asarray(thr, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        cover=np.asarray(cover, dtype=np.float64),
        max_depth=int(max_depth),
        n_features=int(n_feat),
    )
