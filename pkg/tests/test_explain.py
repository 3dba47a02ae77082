import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interfmon.boost import GbtConfig, TreeEnsemble, fit_bagged, fit_gbt
from interfmon.boost.tree import RegressionTree
from interfmon.explain import (SoiWeightModel, TreeExplainer, attribute, attribution_frame,
                               fit_iil, fit_weight_models, global_importance,
                               interfering_scores, select_features_cross_app, shap_frame,
                               shap_tree, top_correlated_metrics)
from interfmon.simcloud import SoIKind


# --- independent oracles ---------------------------------------------------------

def _route_counts(tree, bg):
    counts = np.zeros(tree.n_nodes)
    for x in bg:
        n = 0
        counts[n] += 1
        while tree.feature[n] != -1:
            n = tree.left[n] if x[tree.feature[n]] < tree.threshold[n] else tree.right[n]
            counts[n] += 1
    return counts


def _cond_exp(tree, cover, x, S, n=0):
    if tree.feature[n] == -1:
        return tree.value[n]
    f = tree.feature[n]
    if f in S:
        nxt = tree.left[n] if x[f] < tree.threshold[n] else tree.right[n]
        return _cond_exp(tree, cover, x, S, nxt)
    if cover[n] == 0:
        return 0.0
    l, r = tree.left[n], tree.right[n]
    return (cover[l] * _cond_exp(tree, cover, x, S, l)
            + cover[r] * _cond_exp(tree, cover, x, S, r)) / cover[n]


def _enumerate_shapley(v, p):
    phi = np.zeros(p)
    for j in range(p):
        others = [k for k in range(p) if k != j]
        for r in range(p):
            w = math.factorial(r) * math.factorial(p - r - 1) / math.factorial(p)
            for S in itertools.combinations(others, r):
                phi[j] += w * (v(set(S) | {j}) - v(set(S)))
    return phi


def _value_fns(ens, bg, x):
    scale = ens.eta if ens.mode == "boosted" else 1.0 / len(ens.trees)
    covers = [_route_counts(t, bg) for t in ens.trees]

    def path(S):
        return sum(scale * _cond_exp(t, c, x, S) for t, c in zip(ens.trees, covers))

    def interventional(S):
        Z = bg.copy()
        idx = sorted(S)
        Z[:, idx] = x[idx]
        return float(ens.predict(Z).mean())

    return {"path": path, "interventional": interventional}


def _fit_model(rng, p, bagged):
    X = rng.normal(size=(150, p))
    y = X[:, 0] * X[:, 1] + np.sin(X[:, 2 % p]) + 0.1 * rng.normal(size=150)
    if bagged:
        return X, fit_bagged(X, y, n_trees=3, max_depth=5, seed=1)
    return X, fit_gbt(X, y, GbtConfig(n_trees=8, max_depth=int(rng.integers(1, 5)), eta=0.3))


# --- Shapley values ----------------------------------------------------------------

@settings(max_examples=12, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 7), st.booleans(),
       st.sampled_from(["path", "interventional"]))
def test_matches_enumeration(seed, p, bagged, method):
    rng = np.random.default_rng(seed)
    X, ens = _fit_model(rng, p, bagged)
    bg = X[:int(rng.integers(3, 25))]
    ex = TreeExplainer(ens, bg, method)
    for x in rng.normal(size=(2, p)):
        oracle = _enumerate_shapley(_value_fns(ens, bg, x)[method], p)
        np.testing.assert_allclose(ex.shap_values(x[None])[0], oracle, rtol=0, atol=1e-8)


def test_enumeration_ten_features():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(200, 10))
    y = X[:, 0] - X[:, 4] * X[:, 9] + 0.1 * rng.normal(size=200)
    ens = fit_gbt(X, y, GbtConfig(n_trees=6, max_depth=4, eta=0.3))
    bg = X[:10]
    x = X[150]
    for method in ("path", "interventional"):
        oracle = _enumerate_shapley(_value_fns(ens, bg, x)[method], 10)
        got = TreeExplainer(ens, bg, method).shap_values(x[None])[0]
        np.testing.assert_allclose(got, oracle, rtol=0, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["path", "interventional"]))
def test_local_accuracy(seed, method):
    rng = np.random.default_rng(seed)
    X, ens = _fit_model(rng, 5, seed % 2 == 0)
    ex = TreeExplainer(ens, X[:30], method)
    for e in ex.explain(rng.normal(size=(20, 5))):
        assert abs(e.residual) <= 1e-6


def test_constant_model():
    ens = TreeEnsemble(3.0, 0.1, [], "boosted", 4)
    e = shap_tree(ens, np.ones(4), np.zeros((5, 4)))
    np.testing.assert_array_equal(e.phi, 0.0)
    assert e.base_value == 3.0


def test_stump_dummy_property():
    stump = RegressionTree(np.array([3, -1, -1]), np.array([0.5, 0, 0]), np.array([1, -1, -1]),
                           np.array([2, -1, -1]), np.array([0.0, -1.0, 1.0]),
                           np.array([10.0, 5, 5]), 1, 5)
    ens = TreeEnsemble(0.0, 1.0, [stump], "boosted", 5)
    bg = np.random.default_rng(0).uniform(size=(20, 5))
    e = shap_tree(ens, np.full(5, 0.9), bg)
    assert np.count_nonzero(e.phi) == 1 and e.phi[3] != 0


def test_unused_feature_zero(rng):
    X = rng.normal(size=(100, 4))
    X[:, 2] = 0.0
    ens = fit_gbt(X, X[:, 0] + X[:, 1], GbtConfig(n_trees=10))
    phi = TreeExplainer(ens, X[:20]).shap_values(rng.normal(size=(10, 4)))
    np.testing.assert_array_equal(phi[:, 2], 0.0)


def test_symmetric_features():
    # f = 1[x0 > .5] + 1[x1 > .5] built by hand, with x0 and x1 interchangeable
    def stump(f):
        return RegressionTree(np.array([f, -1, -1]), np.array([0.5, 0, 0]), np.array([1, -1, -1]),
                              np.array([2, -1, -1]), np.array([0.0, 0.0, 1.0]), np.zeros(3), 1, 2)
    ens = TreeEnsemble(0.0, 1.0, [stump(0), stump(1)], "boosted", 2)
    bg = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    for method in ("path", "interventional"):
        phi = TreeExplainer(ens, bg, method).shap_values(np.array([[1.0, 1.0]]))[0]
        assert phi[0] == pytest.approx(phi[1], abs=1e-8)


def test_explainer_errors(rng):
    X = rng.normal(size=(20, 3))
    ens = fit_gbt(X, X[:, 0], GbtConfig(n_trees=2))
    with pytest.raises(ValueError):
        TreeExplainer(ens, np.zeros((0, 3)))
    with pytest.raises(ValueError):
        TreeExplainer(ens, X, method="kernel")
    with pytest.raises(ValueError):
        TreeExplainer(ens, X).shap_values(np.zeros((1, 4)))
    with pytest.raises(ValueError):
        shap_tree(ens, np.zeros((2, 3)), X)


# --- importance and selection ---------------------------------------------------------

def test_global_importance_examples(rng):
    zero = global_importance(np.zeros((5, 3)))
    assert not zero.abs_mean.any() and not zero.pos_mean.any() and not zero.neg_mean.any()
    phi = rng.normal(size=(7, 4))
    a, b = global_importance(phi), global_importance(np.vstack([phi, phi]))
    np.testing.assert_allclose(a.abs_mean, b.abs_mean)
    # flat re-aggregation
    for j in range(4):
        col = phi[:, j].tolist()
        assert a.abs_mean[j] == pytest.approx(sum(abs(v) for v in col) / 7)
        assert a.pos_mean[j] == pytest.approx(sum(v for v in col if v > 0) / 7)
        assert a.neg_mean[j] == pytest.approx(sum(v for v in col if v < 0) / 7)
    with pytest.raises(ValueError):
        global_importance(np.zeros((0, 3)))


def test_cross_app_vote():
    rng = np.random.default_rng(0)
    per_app = {}
    for a in range(8):
        phi = rng.normal(scale=1e-3, size=(10, 60))
        phi[:, 0] += 5.0               # dominant everywhere
        if a < 2:
            phi[:, 1] += 5.0           # only two apps
        per_app[f"app{a}"] = phi
    sel = select_features_cross_app(per_app, top_n=1, quorum=4)
    assert 0 in sel and 1 not in sel
    with pytest.raises(ValueError):
        select_features_cross_app({"a": np.ones((2, 3))}, quorum=4)


def test_cross_app_matches_recount():
    rng = np.random.default_rng(3)
    per_app = {a: rng.normal(size=(15, 30)) + rng.normal(size=30) for a in "abcdefgh"}
    votes = np.zeros(30, int)
    for phi in per_app.values():
        pos = phi.clip(min=0).mean(axis=0)
        neg = -phi.clip(max=0).mean(axis=0)
        chosen = set()
        for v in (pos, neg):
            ranked = sorted(range(30), key=lambda j: -v[j])
            chosen |= {j for j in ranked[:5] if v[j] > 0}
        for j in chosen:
            votes[j] += 1
    expected = [j for j in range(30) if votes[j] > 4]
    assert select_features_cross_app(per_app, top_n=5, quorum=4).tolist() == expected


def test_selection_on_simulated_features(small_table):
    from interfmon.pipeline import SelectionConfig, select_features_by_shap
    sel = select_features_by_shap(small_table, SelectionConfig(), seed=0)
    assert 0 < len(sel.names) < 0.1 * len(small_table.names)


# --- interference attribution ---------------------------------------------------------

def test_top_correlated(rng):
    s = rng.uniform(size=100)
    X = np.column_stack([rng.normal(size=100), s, rng.normal(size=100)])
    assert top_correlated_metrics(X, s, 1).tolist() == [1]
    from interfmon.explain.attribution import pearson_abs
    r = pearson_abs(X, s)
    assert r[1] == pytest.approx(1.0)
    for j in range(3):
        x = X[:, j]
        mx, ms = sum(x) / 100, sum(s) / 100
        num = sum((a - mx) * (b - ms) for a, b in zip(x, s))
        den = math.sqrt(sum((a - mx) ** 2 for a in x) * sum((b - ms) ** 2 for b in s))
        assert r[j] == pytest.approx(abs(num / den), rel=1e-10)
    with pytest.raises(ValueError):
        top_correlated_metrics(X, np.zeros(100))


def _gauss_solve(A, b):
    A = [list(map(float, row)) + [float(v)] for row, v in zip(A, b)]
    n = len(A)
    for c in range(n):
        piv = max(range(c, n), key=lambda r: abs(A[r][c]))
        A[c], A[piv] = A[piv], A[c]
        for r in range(n):
            if r != c:
                f = A[r][c] / A[c][c]
                A[r] = [a - f * b for a, b in zip(A[r], A[c])]
    return [A[i][n] / A[i][i] for i in range(n)]


def test_fit_iil(rng):
    X = rng.uniform(size=(80, 6))
    m = fit_iil(X, X[:, 2], [2])
    assert m.omega[0] == pytest.approx(1.0)
    zero = fit_iil(X, np.zeros(80), [0, 1])
    np.testing.assert_allclose(zero.omega, 0.0, atol=1e-14)
    s = X @ np.array([0.3, 0, -0.2, 0.1, 0, 0]) + 0.05 * rng.normal(size=80)
    support = [0, 2, 3, 5]
    m = fit_iil(X, s, support, SoIKind.NBW)
    A = X[:, support]
    np.testing.assert_allclose(m.omega, _gauss_solve(A.T @ A, A.T @ s), rtol=1e-8)
    wt = m.omega_tilde
    assert np.flatnonzero(wt).tolist() == support
    assert not m.rank_deficient
    dup = np.column_stack([X[:, 0], X[:, 0]])
    assert fit_iil(dup, X[:, 0], [0, 1]).rank_deficient
    with pytest.raises(ValueError):
        fit_iil(X[:3], s[:3], support)


def test_attribute_single_overlap():
    models = [SoiWeightModel(SoIKind(i), np.array([i]), np.array([1.0 if i == 2 else 0.0]), 4)
              for i in range(4)]
    res = attribute(np.array([0.0, 0.0, 0.7, 0.0]), models)
    np.testing.assert_array_equal(res.c_tilde, [0, 0, 1, 0])
    assert res.top1 is SoIKind.NBW


def test_attribute_uniform_and_none():
    models = [SoiWeightModel(SoIKind(i), np.array([0]), np.array([1.0]), 1) for i in range(4)]
    res = attribute(np.array([2.0]), models)
    np.testing.assert_allclose(res.c_tilde, 0.25)
    none = attribute(np.array([-1.0]), models)
    assert not none.attributed and none.top1 is None
    with pytest.raises(ValueError):
        attribute(np.array([1.0]), models[:3])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_contributions_simplex(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 8))
    models = fit_weight_models(X, rng.uniform(size=(40, 4)), k=3)
    res = attribute(rng.normal(size=8), models)
    if res.attributed:
        assert res.c_tilde.sum() == pytest.approx(1.0)
        assert (res.c_tilde >= 0).all()
    raw = interfering_scores(rng.normal(size=(3, 8)), models)
    assert raw.shape == (3, 4)


def test_frames():
    models = [SoiWeightModel(SoIKind(i), np.array([i]), np.array([1.0]), 4) for i in range(4)]
    results = [attribute(np.array([1.0, 0, 0, 0]), models), attribute(-np.ones(4), models)]
    f = attribution_frame([10, 11], results, truth=["LLC", "MBW"])
    assert f["sample_id"].tolist() == [10]
    assert list(f.columns) == ["sample_id", "c_llc", "c_mbw", "c_nbw", "c_dbw", "top1", "truth"]
    s = shap_frame([1, 2], np.arange(6.0).reshape(2, 3), ["a", "b", "c"])
    assert len(s) == 6 and s["phi"].tolist() == list(range(6))


def test_weight_models_absent_resource(rng):
    X = rng.uniform(size=(50, 4))
    soi = np.zeros((50, 4))
    soi[:, 1] = X[:, 2]
    models = fit_weight_models(X, soi, 2)
    for kind in (0, 2, 3):
        assert models[kind].support.size == 0
        np.testing.assert_array_equal(models[kind].omega_tilde, 0.0)
    assert 2 in models[1].support.tolist()
