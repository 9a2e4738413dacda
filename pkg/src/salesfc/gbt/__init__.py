"""Regularised gradient-boosted regression trees."""
from salesfc.gbt.booster import (
    GbtModel,
    GbtParams,
    Tree,
    fit,
    importance,
    leaf_weight,
    predict,
    soft_threshold,
    split_admissible,
    split_gain,
    top_features,
)
from salesfc.gbt.kernels import BACKEND

__all__ = [
    "BACKEND",
    "GbtModel",
    "GbtParams",
    "Tree",
    "fit",
    "importance",
    "leaf_weight",
    "predict",
    "soft_threshold",
    "split_admissible",
    "split_gain",
    "top_features",
]
