"""A trained model together with the feature pipeline it expects.

The bundle turns a raw dataset table into the model's input columns:
scaling fitted at training time, windowing, and the selected feature subset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boost import TreeEnsemble
from .dataprep import FeatureTable, PreprocessModel, WindowConfig, build_features
from .explain import SoiWeightModel
from .neural import DaeModel
from .pipeline import DegradationEstimator, PracticalMethod
from .simcloud import SoIKind

STAGES = ("dae", "dadae", "gbt", "bagged")


def _weights_to_dict(models):
    return [{"soi": int(m.soi), "support": m.support.tolist(), "omega": m.omega.tolist(),
             "n_features": m.n_features, "rank_deficient": m.rank_deficient} for m in models]


def _weights_from_dict(items):
    return [SoiWeightModel(SoIKind(d["soi"]), np.asarray(d["support"], dtype=np.int64),
                           np.asarray(d["omega"], dtype=np.float64), int(d["n_features"]),
                           bool(d["rank_deficient"])) for d in items]


@dataclass
class ModelBundle:
    stage: str
    preprocess: PreprocessModel
    windows: WindowConfig
    qos_kind: str
    features: list
    model: object                 # DaeModel, DegradationEstimator or PracticalMethod
    weight_models: list | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")

    @property
    def is_tree_model(self) -> bool:
        return self.stage in ("gbt", "bagged")

    @property
    def ensemble(self) -> TreeEnsemble:
        if not self.is_tree_model:
            raise TypeError(f"a {self.stage} bundle holds no tree ensemble")
        return self.model.ensemble_

    def features_for(self, frame) -> FeatureTable:
        table = build_features(frame, self.preprocess, self.windows, self.qos_kind)
        missing = [n for n in self.features if n not in set(table.names)]
        if missing:
            raise ValueError(f"dataset lacks model features {missing[:3]}")
        return table.select(self.features)

    def inputs(self, table: FeatureTable) -> np.ndarray:
        """What the tree ensemble sees for ``table`` rows."""
        if self.stage == "bagged":
            return table.X[:, self.model.support_]
        return self.model.transform(table.X)

    def predict(self, table: FeatureTable) -> np.ndarray:
        if not self.is_tree_model:
            raise TypeError(f"a {self.stage} bundle does not predict degradation")
        return self.model.predict(table.X)

    def to_dict(self) -> dict:
        if self.stage in ("dae", "dadae"):
            model = self.model.to_dict()
        elif self.stage == "gbt":
            model = self.model.to_dict()
        else:
            model = {"k": self.model.k, "n_trees": self.model.n_trees,
                     "max_depth": self.model.max_depth, "seed": self.model.seed,
                     "support": self.model.support_.tolist(),
                     "n_features": self.model.n_features_in_,
                     "ensemble": self.model.ensemble_.to_dict()}
        return {"kind": "model_bundle", "stage": self.stage,
                "preprocess": self.preprocess.to_dict(),
                "windows": {"lengths": list(self.windows.lengths)}, "qos_kind": self.qos_kind,
                "features": list(self.features), "model": model,
                "weight_models": None if self.weight_models is None
                else _weights_to_dict(self.weight_models)}

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def from_dict(cls, d) -> "ModelBundle":
        if d.get("kind") != "model_bundle":
            raise ValueError("not a model bundle")
        stage = d["stage"]
        if stage in ("dae", "dadae"):
            model = DaeModel.from_dict(d["model"])
        elif stage == "gbt":
            model = DegradationEstimator.from_dict(d["model"])
        else:
            m = d["model"]
            model = PracticalMethod(m["k"], m["n_trees"], m["max_depth"], m["seed"])
            model.support_ = np.asarray(m["support"], dtype=np.int64)
            model.n_features_in_ = int(m["n_features"])
            model.ensemble_ = TreeEnsemble.from_dict(m["ensemble"])
        weights = d.get("weight_models")
        return cls(stage, PreprocessModel.from_dict(d["preprocess"]),
                   WindowConfig(tuple(d["windows"]["lengths"])), d["qos_kind"], list(d["features"]),
                   model, None if weights is None else _weights_from_dict(weights))

    @classmethod
    def load(cls, path) -> "ModelBundle":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: malformed model bundle ({exc})") from None

