from .ensemble import (BaggedTreeRegressor, GBTRegressor, GbtConfig, TreeEnsemble, fit_bagged,
                       fit_gbt, predict)
from .search import DEFAULT_GRID, cross_val_mae, cv_report, grid_search_3pass
from .selection import f_scores, select_k_best
from .tree import RegressionTree, fit_tree

__all__ = [
    "BaggedTreeRegressor", "GBTRegressor", "GbtConfig", "TreeEnsemble", "fit_bagged", "fit_gbt",
    "predict", "DEFAULT_GRID", "cross_val_mae", "cv_report", "grid_search_3pass", "f_scores",
    "select_k_best", "RegressionTree", "fit_tree",
]
