"""Learners and supporting estimators.

Nearest-donor imputation, unpenalized logistic regression, boosted trees
with early stopping, loss-change importance, and the AUC metric.
"""
from __future__ import annotations

from typing import Any, Union

import numpy as np

from ..errors import DataError
from .gbm import GbmConfig, GbmModel, TreeNode, fit_gbm, tree_margin
from .importance import ImportanceReport, loss_change_importance, paired_importance
from .impute import ImputerConfig, knn_impute
from .logistic import LogisticModel, fit_logistic
from .metrics import auc, log_loss

TrainedModel = Union[LogisticModel, GbmModel]

MODEL_SCHEMA_VERSION = 1


def predict(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    """Probability of the positive class; columns must match the training matrix."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != len(model.feature_names):
        raise DataError(
            f"expected {len(model.feature_names)} feature columns, got shape {x.shape}"
        )
    if np.isnan(x).any():
        raise DataError("predict requires complete data; impute first")
    return model.predict_proba(x)


def model_to_dict(model: TrainedModel) -> dict[str, Any]:
    if isinstance(model, LogisticModel):
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "kind": "logistic",
            "coefficients": dict(zip(model.feature_names, model.coef.tolist())),
            "intercept": model.intercept,
            "converged": model.converged,
        }
    if isinstance(model, GbmModel):
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "kind": "gbm",
            "feature_names": list(model.feature_names),
            "base_score": model.base_score,
            "best_iteration": model.best_iteration,
            "config": {
                "learning_rate": model.config.learning_rate,
                "iterations": model.config.iterations,
                "max_depth": model.config.max_depth,
                "subsample": model.config.subsample,
                "l2_leaf": model.config.l2_leaf,
                "early_stopping_patience": model.config.early_stopping_patience,
                "seed": model.config.seed,
                "max_bins": model.config.max_bins,
            },
            "trees": [t.to_dict() for t in model.trees],
        }
    raise TypeError(f"unknown model type {type(model)!r}")


def model_from_dict(d: dict[str, Any]) -> TrainedModel:
    if d.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise DataError(f"unsupported model schema version {d.get('schema_version')}")
    if d["kind"] == "logistic":
        names = list(d["coefficients"])
        return LogisticModel(
            feature_names=names,
            coef=np.array([d["coefficients"][n] for n in names], dtype=float),
            intercept=float(d["intercept"]),
            converged=bool(d["converged"]),
        )
    if d["kind"] == "gbm":
        return GbmModel(
            feature_names=list(d["feature_names"]),
            trees=[TreeNode.from_dict(t) for t in d["trees"]],
            base_score=float(d["base_score"]),
            best_iteration=int(d["best_iteration"]),
            config=GbmConfig(**d["config"]),
        )
    raise DataError(f"unknown model kind {d['kind']!r}")


__all__ = [
    "GbmConfig",
    "GbmModel",
    "ImportanceReport",
    "ImputerConfig",
    "LogisticModel",
    "TrainedModel",
    "TreeNode",
    "auc",
    "fit_gbm",
    "fit_logistic",
    "knn_impute",
    "log_loss",
    "loss_change_importance",
    "model_from_dict",
    "model_to_dict",
    "paired_importance",
    "predict",
    "tree_margin",
]
