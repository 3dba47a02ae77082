import dataclasses

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from interfmon import simcloud
from interfmon.boost import GbtConfig
from interfmon.dataprep import build_features, fit_preprocess
from interfmon.evalkit import (EvalReport, ProtocolConfig, format_table, mae, qos_confusion,
                               run_protocol, threshold_sweep, write_report)
from interfmon.evalkit.metrics import confusion
from interfmon.evalkit.protocols import loao_folds, offline_folds
from interfmon.neural import TrainConfig
from interfmon.pipeline import SelectionConfig

FAST = ProtocolConfig(
    seed=0, selection=SelectionConfig(rows=800, n_trees=15, rows_per_app=40, background=50),
    dae_train=TrainConfig(epochs=2, momentum=0.9), dadae_train=TrainConfig(epochs=1, lambda_max=0.003),
    gbt=GbtConfig(n_trees=15, max_depth=3, eta=0.3), tune=False, practical_trees=3, K_max=2)


# --- metrics -----------------------------------------------------------------------

def test_mae_examples():
    assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mae([0.0, 1.0], [1.0, 0.0]) == 1.0
    with pytest.raises(ValueError):
        mae([], [])
    with pytest.raises(ValueError):
        mae([1.0], [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=50))
def test_mae_streaming(pairs):
    total, n = 0.0, 0
    for a, b in pairs:
        n += 1
        total += (abs(a - b) - total) / n
    y, yh = zip(*pairs)
    assert mae(y, yh) == pytest.approx(total, rel=1e-9, abs=1e-9)


def test_confusion_examples():
    d = np.array([0.0, 0.2, 0.3])
    assert qos_confusion(d, d, 0.05) == {"precision": 1.0, "recall": 1.0, "f1": 1.0, "accuracy": 1.0}
    z = np.zeros(4)
    assert qos_confusion(z, z, 0.05)["accuracy"] == 1.0
    assert qos_confusion(z, z, 0.05)["precision"] == 1.0
    with pytest.raises(ValueError):
        qos_confusion(d, d, 0.0)


def test_hand_counted_confusion():
    d = np.array([0.10, 0.02, 0.30, 0.00, 0.06, 0.05])
    d_hat = np.array([0.08, 0.07, 0.01, 0.00, 0.20, 0.04])
    # truth > 5%: rows 0, 2, 4 ; predicted: rows 0, 1, 4  (0.05 itself is not a violation)
    c = confusion(d, d_hat, 0.05)
    assert (c.tp, c.fp, c.tn, c.fn) == (2, 1, 2, 1)
    s = qos_confusion(d, d_hat, 0.05)
    assert s["precision"] == pytest.approx(2 / 3)
    assert s["recall"] == pytest.approx(2 / 3)
    assert s["f1"] == pytest.approx(2 / 3)
    assert s["accuracy"] == pytest.approx(4 / 6)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=40),
       st.floats(0.01, 0.9))
def test_confusion_monotone_invariance(pairs, thr):
    d, dh = map(np.array, zip(*pairs))

    def f(v):
        return np.exp(3 * np.asarray(v)) + np.asarray(v) ** 3
    assert confusion(d, dh, thr) == confusion(f(d), f(dh), float(f(thr)))


def test_threshold_sweep():
    rng = np.random.default_rng(0)
    d = rng.uniform(0, 0.4, 200)
    table, vol = threshold_sweep(d, d)
    assert len(table) == 4
    assert table["threshold"].tolist() == [0.05, 0.10, 0.15, 0.20]
    assert all(v == 0 for v in vol.values())
    table, vol = threshold_sweep(d, d + rng.normal(0, 0.05, 200))
    for col in ("precision", "recall", "f1", "accuracy"):
        assert vol[col] == pytest.approx(table[col].max() - table[col].min())


# --- reports -----------------------------------------------------------------------

def _fake_report():
    rows = []
    for app in ("a", "b"):
        for m in ("x", "y"):
            d = np.array([0.1, 0.2, 0.3])
            rows.append(pd.DataFrame({"protocol": "offline_8_2", "fold": "all", "method": m,
                                      "app": app, "intensity": 1.0, "t": [0, 1, 2], "D": d,
                                      "D_hat": d if m == "x" else d + (0.1 if app == "a" else 0.3)}))
    return EvalReport("offline_8_2", pd.concat(rows, ignore_index=True))


def test_report_table_macro_mean():
    r = _fake_report()
    t = r.mae_table()
    assert list(t.columns) == ["a", "b", "mean"]
    assert t.loc["x"].tolist() == [0.0, 0.0, 0.0]
    assert t.loc["y", "mean"] == pytest.approx(0.2)
    assert r.methods == ["x", "y"]
    assert len(r.sweep("x")[0]) == 4


def test_write_report(tmp_path):
    r = _fake_report()
    paths = write_report(r, tmp_path)
    assert sorted(p.name for p in paths) == ["offline_8_2_mae.csv", "offline_8_2_predictions.csv",
                                             "offline_8_2_sweep.csv"]
    mae_csv = tmp_path / "offline_8_2_mae.csv"
    back = pd.read_csv(mae_csv, index_col=0)
    assert back.loc["y", "mean"] == pytest.approx(0.2)
    assert "\r" not in mae_csv.read_text()
    assert isinstance(format_table(r.mae_table()), str)


# --- protocols ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def three_app_frame():
    cfg = simcloud.make_default_scenario(seed=5, episode_len=260)
    keep = [a for a in cfg.apps if a.name in ("cassandra", "etcd", "redis")]
    return simcloud.generate_dataset(dataclasses.replace(cfg, apps=keep))


def test_loao_preprocessing_excludes_test_app(three_app_frame):
    frame = three_app_frame
    folds = {m().name: m() for m in loao_folds(frame, FAST)}
    assert set(folds) == {"cassandra", "etcd", "redis"}
    fold = folds["etcd"]
    assert set(fold.train.apps) == {"cassandra", "redis"}
    assert set(fold.test.apps) == {"etcd"}
    # recompute preprocessing from training rows only
    train_raw = frame[frame["app"] != "etcd"]
    ref = build_features(frame, fit_preprocess(train_raw[simcloud.metric_columns(frame.columns)]))
    ref_train = ref.subset(np.flatnonzero(ref.apps != "etcd")).select(fold.selected)
    np.testing.assert_array_equal(fold.train.X, ref_train.X)


def test_loao_training_blind_to_test_rows(three_app_frame):
    frame = three_app_frame.copy()
    fold_a = next(m for m in loao_folds(frame, FAST, apps=["etcd"]))()
    metrics = simcloud.metric_columns(frame.columns)
    mask = frame["app"] == "etcd"
    frame.loc[mask, metrics] = frame.loc[mask, metrics] * 7.0 + 3.0
    frame.loc[mask, "qos"] = frame.loc[mask, "qos"] * 2.0
    fold_b = next(m for m in loao_folds(frame, FAST, apps=["etcd"]))()
    assert fold_a.selected == fold_b.selected
    np.testing.assert_array_equal(fold_a.train.X, fold_b.train.X)


def test_offline_split_preprocessing_excludes_test_rows(three_app_frame):
    fold = next(offline_folds(three_app_frame, FAST))()
    assert len(fold.train) > 3 * len(fold.test)
    assert not set(zip(fold.train.meta["app"], fold.train.meta["intensity"], fold.train.meta["t"])) \
        & set(zip(fold.test.meta["app"], fold.test.meta["intensity"], fold.test.meta["t"]))


def test_run_protocol_loao_shape(three_app_frame):
    r = run_protocol(three_app_frame, "leave_one_app_out", None, FAST)
    t = r.mae_table()
    assert list(t.columns) == ["cassandra", "etcd", "redis", "mean"]
    assert list(t.index) == ["dae_gbt", "dadae_gbt", "oracle_gbt", "gbt"]
    assert np.isfinite(t.to_numpy()).all()
    again = run_protocol(three_app_frame, "leave_one_app_out", None, FAST)
    pd.testing.assert_frame_equal(r.predictions, again.predictions)


def test_run_protocol_offline_and_oracle(three_app_frame):
    r = run_protocol(three_app_frame, "offline_8_2", None, FAST)
    assert set(r.methods) == {"dae_gbt", "gbt", "practical", "best_possible_cpi", "best_effort_cpi"}
    o = run_protocol(three_app_frame, "oracle_dae", None, FAST, apps=["redis"])
    assert list(o.mae_table().columns) == ["redis", "mean"]


def test_run_protocol_errors(three_app_frame):
    with pytest.raises(ValueError):
        run_protocol(three_app_frame, "random_split")
    with pytest.raises(ValueError):
        run_protocol(three_app_frame, "offline_8_2", ["magic"], FAST)
    with pytest.raises(KeyError):
        run_protocol(three_app_frame, "leave_one_app_out", None, FAST, apps=["nope"])
    with pytest.raises(ValueError):
        run_protocol(three_app_frame, "offline_8_2", None, FAST, apps=["etcd"])
