import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from interfmon import simcloud
from interfmon.dataprep import (MetricScaler, WindowConfig, apply_preprocess,
                                clean_group_means, feature_rows, fit_preprocess, holdout_indices,
                                kfold_indices, make_dae_pairs, split_holdout,
                                split_leave_one_app_out, window_features, window_matrix)


def _sorted_percentile(col, q):
    # linear interpolation between order statistics
    s = sorted(col)
    pos = q / 100 * (len(s) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def test_constant_column_dropped():
    t = pd.DataFrame({"a": np.full(10, 5.0), "b": np.arange(10.0)})
    m = fit_preprocess(t)
    assert m.kept_columns == ["b"]
    assert m.dropped_columns == ["a"]


def test_clip_bounds_match_sorting_oracle():
    col = np.arange(101.0)
    m = fit_preprocess(pd.DataFrame({"a": col}))
    assert m.clip_lo[0] == pytest.approx(_sorted_percentile(col, 1))
    assert m.clip_hi[0] == pytest.approx(_sorted_percentile(col, 99))
    rng = np.random.default_rng(4)
    col = rng.exponential(size=37)
    m = fit_preprocess(pd.DataFrame({"a": col}))
    assert m.clip_lo[0] == pytest.approx(_sorted_percentile(col, 1))
    assert m.clip_hi[0] == pytest.approx(_sorted_percentile(col, 99))


def test_fit_deterministic():
    t = pd.DataFrame(np.random.default_rng(0).normal(size=(50, 3)), columns=list("abc"))
    a, b = fit_preprocess(t), fit_preprocess(t)
    assert a.to_dict() == b.to_dict()


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_preprocess(pd.DataFrame({"a": [1.0]}))
    with pytest.raises(ValueError):
        fit_preprocess(pd.DataFrame({"a": np.ones(5)}))


def test_apply_endpoints_and_clamp():
    t = pd.DataFrame({"a": np.arange(101.0)})
    m = fit_preprocess(t)
    out = apply_preprocess(m, pd.DataFrame({"a": [m.min_[0], m.max_[0], 1e6, -1e6]}))
    np.testing.assert_allclose(out["a"].to_numpy(), [0.0, 1.0, 1.0, 0.0])


def test_apply_missing_column():
    m = fit_preprocess(pd.DataFrame({"a": np.arange(5.0)}))
    with pytest.raises(KeyError):
        apply_preprocess(m, pd.DataFrame({"b": np.arange(5.0)}))


def test_model_roundtrip():
    m = fit_preprocess(pd.DataFrame({"a": np.arange(5.0), "b": np.ones(5)}))
    back = type(m).from_dict(m.to_dict())
    assert back.to_dict() == m.to_dict()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 40), st.integers(1, 5)),
              elements=st.floats(-1e6, 1e6)))
def test_scaled_fit_set_in_unit_interval(values):
    frame = pd.DataFrame(values, columns=[f"c{j}" for j in range(values.shape[1])])
    if not (values.var(axis=0) > 0).any():
        return
    m = fit_preprocess(frame)
    out = apply_preprocess(m, frame).to_numpy()
    assert np.all((out >= 0) & (out <= 1))
    assert np.all(m.min_ <= m.max_)
    assert set(m.dropped_columns) == {c for c, v in zip(frame.columns, values.var(axis=0)) if v == 0}


def test_metric_scaler_estimator():
    X = np.random.default_rng(0).normal(size=(30, 3))
    X[:, 1] = 2.0
    sc = MetricScaler().fit(X)
    out = sc.transform(X)
    assert out.shape == (30, 2)
    assert list(sc.get_feature_names_out()) == ["x0", "x2"]
    assert sc.get_params() == {}


def test_window_config_validation():
    with pytest.raises(ValueError):
        WindowConfig(lengths=(0, 3))
    with pytest.raises(ValueError):
        WindowConfig(stats=("mean",))


def test_constant_series_window():
    fv = window_features(np.full(25, 7.0))
    v = fv.values.reshape(4, 5)
    np.testing.assert_array_equal(v[:, [0, 1, 2]], 7.0)
    np.testing.assert_array_equal(v[:, [3, 4]], 0.0)


def test_hand_computed_window():
    fv = window_features(np.array([1.0, 2.0, 3.0]), WindowConfig(lengths=(3,)))
    mean, mn, mx, maxdiff, std = fv.values
    assert (mean, mn, mx, maxdiff) == (2.0, 1.0, 3.0, 2.0)
    assert std == pytest.approx(math.sqrt(2 / 3))
    assert fv.names == ["m0.3.mean", "m0.3.min", "m0.3.max", "m0.3.maxdiff", "m0.3.std"]


def test_window_length_rule():
    fv = window_features(np.zeros((30, 6)))
    assert fv.values.shape == (6 * 4 * 5,)
    with pytest.raises(ValueError):
        window_features(np.zeros((19, 2)))
    with pytest.raises(IndexError):
        window_features(np.zeros((30, 2)), t=30)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(20, 40), st.integers(1, 3)),
              elements=st.floats(-100, 100)), st.data())
def test_window_matrix_matches_naive(series, data):
    cfg = WindowConfig()
    F = window_matrix(series, cfg)
    t = data.draw(st.integers(19, series.shape[0] - 1))
    naive = []
    for j in range(series.shape[1]):
        for T in cfg.lengths:
            w = series[t - T + 1:t + 1, j].tolist()
            mean = sum(w) / T
            var = sum((x - mean) ** 2 for x in w) / T
            naive += [mean, min(w), max(w), max(w) - min(w), math.sqrt(var)]
    np.testing.assert_allclose(F[t], naive, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(window_features(series, cfg, t).values, F[t])
    assert np.isnan(F[:2]).all() and np.isnan(F[18]).any()


def test_build_features_shape(small_frame, small_table):
    cfg = WindowConfig()
    n_eps = small_frame.groupby(["app", "intensity"]).ngroups
    assert len(small_table) == len(small_frame) - n_eps * (cfg.max_length - 1)
    assert small_table.X.shape[1] == len(small_table.names)
    assert np.all((small_table.X >= 0) & (small_table.X <= 1 + 1e-12))
    rows = feature_rows(small_frame)
    np.testing.assert_array_equal(small_table.meta["t"].to_numpy(), small_frame["t"].to_numpy()[rows])


def test_clean_flag_covers_window(small_table, small_frame):
    soi_any = (small_frame[simcloud.SOI_COLUMNS].to_numpy() > 0).any(axis=1)
    rows = feature_rows(small_frame)
    assert not np.any(small_table.clean & soi_any[rows])


def test_dae_pair_targets(small_table):
    X, Y = make_dae_pairs(small_table)
    meta = small_table.meta
    # two-pass oracle: group means of clean rows, then lookup
    sums = {}
    for i in np.flatnonzero(small_table.clean):
        key = (meta.at[i, "app"], meta.at[i, "intensity"])
        s, c = sums.get(key, (0.0, 0))
        sums[key] = (s + X[i], c + 1)
    for i in range(0, len(meta), 97):
        s, c = sums[(meta.at[i, "app"], meta.at[i, "intensity"])]
        np.testing.assert_allclose(Y[i], s / c, rtol=1e-10, atol=1e-12)
    dirty = np.flatnonzero(~small_table.clean)
    a, b = dirty[0], dirty[1]
    if (meta.iloc[a][["app", "intensity"]] == meta.iloc[b][["app", "intensity"]]).all():
        np.testing.assert_array_equal(Y[a], Y[b])


def test_dae_targets_order_invariant(small_table):
    perm = np.random.default_rng(0).permutation(len(small_table))
    Y = clean_group_means(small_table)
    Yp = clean_group_means(small_table.subset(perm))
    np.testing.assert_allclose(Yp, Y[perm], rtol=1e-12, atol=1e-12)


def test_missing_clean_group():
    t = pd.DataFrame({"a": np.arange(40.0) % 7})
    del t
    from interfmon.dataprep import FeatureTable
    meta = pd.DataFrame({"app": ["x"] * 3, "intensity": [1.0] * 3, "clean": [False] * 3})
    with pytest.raises(ValueError):
        clean_group_means(FeatureTable(np.zeros((3, 2)), ["a", "b"], meta))


def test_holdout_ratio():
    tr, te = holdout_indices(np.array(["a"] * 100), 0.8, 0)
    assert (len(tr), len(te)) == (80, 20)
    assert not set(tr) & set(te)
    tr2, _ = holdout_indices(np.array(["a"] * 100), 0.8, 0)
    np.testing.assert_array_equal(tr, tr2)
    with pytest.raises(ValueError):
        holdout_indices(np.array(["a"] * 9))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from("abcd"), min_size=10, max_size=80), st.integers(0, 100))
def test_holdout_partition_stratified(apps, seed):
    apps = np.array(apps)
    tr, te = holdout_indices(apps, 0.8, seed)
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(len(apps)))
    for a in set(apps.tolist()):
        n = int((apps == a).sum())
        assert int((apps[tr] == a).sum()) == int(round(0.8 * n))


def test_split_holdout_frame(small_frame):
    tr, te = split_holdout(small_frame, 0.8, 1)
    assert len(tr) + len(te) == len(small_frame)


def test_leave_one_app_out(small_frame, small_table):
    apps = sorted(set(small_frame["app"]))
    tr, te = split_leave_one_app_out(small_table, "etcd")
    assert len(set(tr.apps)) == len(apps) - 1
    assert set(te.apps) == {"etcd"}
    assert len(tr) + len(te) == len(small_table)
    with pytest.raises(KeyError):
        split_leave_one_app_out(small_table, "nope")
    with pytest.raises(ValueError):
        split_leave_one_app_out(small_frame[small_frame["app"] == "etcd"], "etcd")


def test_kfold_examples():
    folds = kfold_indices(10, 5, 0)
    assert [len(f) for f in folds] == [2] * 5
    assert sorted(len(f) for f in kfold_indices(11, 5, 0)) == [2, 2, 2, 2, 3]
    with pytest.raises(ValueError):
        kfold_indices(3, 5)


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 200), st.integers(2, 5), st.integers(0, 50))
def test_kfold_partition(n, k, seed):
    folds = kfold_indices(n, k, seed)
    allidx = np.concatenate(folds)
    assert sorted(allidx.tolist()) == list(range(n))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    again = kfold_indices(n, k, seed)
    assert all(np.array_equal(a, b) for a, b in zip(folds, again))
