"""Classifier stack: configs, resampling, grouped CV, three model
families trained from first principles, and versioned model files.
"""

from __future__ import annotations

import numpy as np

from ..errors import EmptyInputError, ValidationError
from ..model import CLASS_ORDER
from .config import (
    DEFAULT_PARAMS,
    KIND_GBT,
    KIND_RF,
    KIND_SVM,
    KINDS,
    ClassifierConfig,
    stock_config,
    stock_configs,
)
from .cv import FoldPlan, assert_no_leakage, group_kfold, run_cv, select_config
from .metrics import (
    chance_accuracy,
    class_distribution,
    confusion_counts,
    evaluate,
    majority_accuracy,
)
from .model_io import load_model, model_from_dict, model_to_dict, save_model
from .smote import smote
from .svm import SvmModel, train_svm
from .trees import (
    DecisionTree,
    GradientBoostedTreesModel,
    RandomForestModel,
    build_tree,
    train_gradient_boosted_trees,
    train_random_forest,
)

CLASS_INDEX_ORDER = tuple(int(s) for s in CLASS_ORDER)

_TRAINERS = {
    KIND_SVM: train_svm,
    KIND_RF: train_random_forest,
    KIND_GBT: train_gradient_boosted_trees,
}


def train(config: ClassifierConfig, X: np.ndarray, y: np.ndarray,
          seed: int | None = None,
          class_order: tuple[int, ...] = CLASS_INDEX_ORDER):
    """Train one model of config.kind on (X, y).

    seed overrides config.seed (cross-validation derives per-fold seeds
    that way). Labels must cover every class in class_order; a fold too
    small to contain all stages is a data problem to surface, not to
    paper over.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2:
        raise ValidationError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise EmptyInputError("no training rows")
    if X.shape[0] != y.shape[0]:
        raise ValidationError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if not np.all(np.isfinite(X)):
        raise ValidationError("training features contain NaN or inf")
    effective_seed = config.seed if seed is None else int(seed)
    return _TRAINERS[config.kind](config, X, y, tuple(class_order),
                                  effective_seed)


__all__ = [
    "CLASS_INDEX_ORDER", "ClassifierConfig", "DecisionTree", "DEFAULT_PARAMS",
    "FoldPlan", "GradientBoostedTreesModel", "KIND_GBT", "KIND_RF", "KIND_SVM",
    "KINDS", "RandomForestModel", "SvmModel", "assert_no_leakage",
    "build_tree", "chance_accuracy", "class_distribution", "confusion_counts",
    "evaluate", "group_kfold", "load_model", "majority_accuracy",
    "model_from_dict", "model_to_dict", "run_cv", "save_model",
    "select_config", "smote", "stock_config", "stock_configs", "train",
    "train_gradient_boosted_trees", "train_random_forest", "train_svm",
]
