import numpy as np
import pytest

from interfmon import simcloud
from interfmon.dataprep import build_features, fit_preprocess


@pytest.fixture(scope="session")
def small_scenario():
    return simcloud.make_default_scenario(seed=3, episode_len=200)


@pytest.fixture(scope="session")
def small_frame(small_scenario):
    return simcloud.generate_dataset(small_scenario)


@pytest.fixture(scope="session")
def small_table(small_frame):
    pp = fit_preprocess(small_frame[simcloud.metric_columns(small_frame.columns)])
    return build_features(small_frame, pp)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def four_app_split():
    """Full-length episodes of four apps, SHAP-selected features, 8:2 split indices."""
    from interfmon.dataprep import holdout_indices
    from interfmon.pipeline import SelectionConfig, select_features_by_shap
    frame = simcloud.generate_dataset(simcloud.make_default_scenario(seed=3))
    frame = frame[frame["app"].isin(["cassandra", "hbase", "kafka", "redis"])]
    table = build_features(frame, fit_preprocess(frame))
    tr, te = holdout_indices(table.apps, 0.8, 0)
    sel = select_features_by_shap(table.subset(tr), SelectionConfig(), seed=0)
    return table.select(sel.names), tr, te


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, text = RESULTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {text}")
