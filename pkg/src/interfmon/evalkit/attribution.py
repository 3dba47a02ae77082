"""Top-1 accuracy of SoI attribution on samples the estimator flags as violating."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..dataprep import FeatureTable
from ..explain import TreeExplainer, attribute, attribution_frame, fit_weight_models
from ..simcloud import SoIKind
from .metrics import violations


@dataclass
class AttributionReport:
    frame: pd.DataFrame       # one row per attributed sample
    n_flagged: int
    n_attributed: int
    n_single: int             # attributed rows with exactly one active SoI
    accuracy: float           # top-1 accuracy over those rows (nan if none)

    def summary(self) -> dict:
        return {"flagged": self.n_flagged, "attributed": self.n_attributed,
                "single_soi": self.n_single, "top1_accuracy": self.accuracy}


def single_soi_truth(soi) -> np.ndarray:
    """Name of the only active SoI per row, or "" when zero or several are active."""
    soi = np.asarray(soi, dtype=np.float64)
    active = soi > 0
    out = np.full(soi.shape[0], "", dtype=object)
    one = active.sum(axis=1) == 1
    out[one] = [SoIKind(int(k)).name for k in np.argmax(soi[one], axis=1)]
    return out


def evaluate_attribution(estimator, train: FeatureTable, test: FeatureTable, threshold=0.05, k=20,
                         background=200, max_samples=None, seed=0, clean_train=None,
                         clean_test=None) -> AttributionReport:
    """Explain flagged test samples and score the SoI ranking against the labels.

    The interference-level regressions are fitted on the estimator's own
    input space (training rows) so their weights line up with the Shapley
    vectors of the trees.
    """
    rng = np.random.default_rng(seed)
    inputs_tr = estimator.transform(train.X, clean_train)
    models = fit_weight_models(inputs_tr, train.soi, k)
    inputs_te = estimator.transform(test.X, clean_test)
    d_hat = estimator.ensemble_.predict(inputs_te)
    flagged = np.flatnonzero(violations(d_hat, threshold))
    if max_samples is not None and flagged.size > max_samples:
        flagged = np.sort(rng.choice(flagged, max_samples, replace=False))
    bg = inputs_tr[np.sort(rng.choice(len(train), min(background, len(train)), replace=False))]
    explainer = TreeExplainer(estimator.ensemble_, bg)
    results = [attribute(e, models) for e in explainer.explain(inputs_te[flagged])]
    truth = single_soi_truth(test.soi[flagged])
    frame = attribution_frame(flagged, results, truth)
    single = frame[frame["truth"] != ""]
    acc = float((single["top1"] == single["truth"]).mean()) if len(single) else float("nan")
    return AttributionReport(frame, int(flagged.size), len(frame), len(single), acc)
