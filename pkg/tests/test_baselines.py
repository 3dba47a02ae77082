import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interfmon import simcloud
from interfmon.baselines import (CpiBaseline, Gmm1D, best_effort_cpi, best_possible_cpi,
                                 fit_gmm_bic, fit_gmm_em, predictions_frame, select_k_bic)


def _monotone(hist):
    h = np.asarray(hist)
    return bool(np.all(np.diff(h) >= -1e-9 * np.abs(h[1:])))


def test_single_component_closed_form(rng):
    x = rng.normal(3.0, 2.0, 500)
    g = fit_gmm_em(x, 1)
    assert g.means[0] == pytest.approx(x.mean())
    assert g.variances[0] == pytest.approx(x.var())
    assert g.weights[0] == pytest.approx(1.0)


def test_two_clusters_recovered():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(0, 0.1, 500), rng.normal(10, 0.1, 500)])
    g = fit_gmm_em(x, 2, seed=0)
    np.testing.assert_allclose(g.means, [0.0, 10.0], atol=0.05)
    assert _monotone(g.loglik_history)
    assert g.loglik_history[-1] == pytest.approx(g.loglik(x), rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 5))
def test_em_monotone_and_responsibilities(seed, K):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(m, s, 60) for m, s in zip(rng.uniform(-5, 5, 3),
                                                            rng.uniform(0.1, 2, 3))])
    g = fit_gmm_em(x, K, seed)
    assert _monotone(g.loglik_history)
    r = g.responsibilities(x)
    np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.diff(g.means) >= 0)


def test_em_errors():
    with pytest.raises(ValueError):
        fit_gmm_em(np.array([1.0, 1.0, 2.0]), 3)
    with pytest.raises(ValueError):
        fit_gmm_em(np.array([1.0, np.nan]), 1)
    with pytest.raises(ValueError):
        select_k_bic(np.arange(5.0), K_max=0)


def test_bic_selection():
    rng = np.random.default_rng(1)
    assert select_k_bic(rng.normal(0, 0.1, 400)) == 1
    bi = np.concatenate([rng.normal(0, 0.2, 300), rng.normal(5, 0.2, 300)])
    assert select_k_bic(bi) == 2
    best = fit_gmm_bic(bi)
    assert best.n_components == 2


def test_bic_formula(rng):
    x = rng.normal(size=50)
    g = fit_gmm_em(x, 2)
    ll = np.sum(np.log(sum(w * np.exp(-(x - m) ** 2 / (2 * v)) / np.sqrt(2 * np.pi * v)
                           for w, m, v in zip(g.weights, g.means, g.variances))))
    assert g.bic(x) == pytest.approx(-2 * ll + 5 * np.log(50), rel=1e-10)


def test_predict_tie_goes_to_lower_index():
    g = Gmm1D(np.array([0.5, 0.5]), np.array([-1.0, 1.0]), np.array([1.0, 1.0]))
    assert g.predict(np.array([0.0]))[0] == 0


def test_best_possible_examples():
    assert best_possible_cpi(2.0, 2.0) == 0.0
    assert best_possible_cpi(3.0, 2.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        best_possible_cpi(1.0, 0.0)


def test_best_effort_single_level():
    rng = np.random.default_rng(2)
    mem = rng.normal(100, 1, 400)
    cpi = rng.normal(1.0, 0.01, 400)
    d = best_effort_cpi(mem, cpi, mem[:5], np.full(5, 1.0))
    np.testing.assert_allclose(d, 0.0, atol=0.02)


def _meta(frame, cfg):
    from interfmon.dataprep import build_features, fit_preprocess
    return build_features(frame, fit_preprocess(frame), qos_kind=cfg.qos_kind).meta


def test_best_possible_exact_in_proportional_mode():
    cfg = simcloud.make_default_scenario(seed=4, episode_len=200)
    cfg = dataclasses.replace(cfg, apps=cfg.apps[:2], cpi_mode="proportional")
    frame = simcloud.generate_dataset(cfg)
    meta = _meta(frame, cfg)
    # the known baseline comes from every raw row, as the degradation label does
    raw = frame.rename(columns={"hw_cpi": "raw_hw_cpi"})
    est = CpiBaseline("best_possible").fit(raw)
    np.testing.assert_allclose(est.predict(meta), meta["D"].to_numpy(), atol=1e-10)


def test_baseline_ordering(small_frame, small_scenario):
    meta = _meta(small_frame, small_scenario)
    d = meta["D"].to_numpy()
    bp = CpiBaseline("best_possible").fit(meta).predict(meta)
    be = CpiBaseline("best_effort").fit(meta).predict(meta)
    assert np.mean(np.abs(be - d)) >= np.mean(np.abs(bp - d))


def test_estimator_errors(small_frame, small_scenario):
    meta = _meta(small_frame, small_scenario)
    with pytest.raises(ValueError):
        CpiBaseline("magic").fit(meta)
    est = CpiBaseline("best_possible").fit(meta[meta["app"] == "etcd"])
    with pytest.raises(ValueError):
        est.predict(meta[meta["app"] == "redis"])
    f = predictions_frame([1, 2], np.array([0.1, 0.2]), "best_effort")
    assert list(f.columns) == ["sample_id", "d_hat", "mode"]
    assert isinstance(CpiBaseline().get_params(), dict)
