from .attribution import (AttributionResult, GlobalImportance, SoiWeightModel, attribute,
                          attribution_frame, fit_iil, fit_weight_models, global_importance,
                          interfering_scores, select_features_cross_app, shap_frame,
                          top_correlated_metrics)
from .treeshap import ShapExplanation, TreeExplainer, shap_tree

__all__ = [
    "AttributionResult", "GlobalImportance", "SoiWeightModel", "attribute", "attribution_frame",
    "fit_iil", "fit_weight_models", "global_importance", "interfering_scores",
    "select_features_cross_app", "shap_frame", "top_correlated_metrics", "ShapExplanation",
    "TreeExplainer", "shap_tree",
]
