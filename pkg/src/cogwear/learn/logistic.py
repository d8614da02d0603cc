"""Unpenalized logistic regression fitted by iteratively reweighted least squares."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

GRADIENT_TOL = 1e-8
MAX_NEWTON_ITER = 100


@dataclass
class LogisticModel:
    feature_names: list[str]
    coef: np.ndarray
    intercept: float
    converged: bool
    n_iter: int = 0

    def decision(self, x: np.ndarray) -> np.ndarray:
        return x @ self.coef + self.intercept

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision(np.asarray(x, dtype=float)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fit_logistic(
    x: np.ndarray, y: np.ndarray, feature_names: list[str] | None = None
) -> LogisticModel:
    """Newton/IRLS maximum likelihood, no penalty.

    Stops when the L2 gradient norm drops below 1e-8, or flags
    ``converged=False`` after 100 iterations (separable data diverges; the
    last iterate is returned).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2:
        raise ValueError("x must be 2-D")
    if np.isnan(x).any():
        raise DataError("fit_logistic requires complete data; impute first")
    if len(np.unique(y)) < 2:
        raise DataError("degenerate outcome: labels are constant")
    if feature_names is None:
        feature_names = [f"x{j}" for j in range(x.shape[1])]

    design = np.column_stack([np.ones(len(x)), x])
    beta = np.zeros(design.shape[1])
    converged = False
    it = 0
    for it in range(1, MAX_NEWTON_ITER + 1):
        p = _sigmoid(design @ beta)
        grad = design.T @ (y - p)
        if float(np.linalg.norm(grad)) < GRADIENT_TOL:
            converged = True
            break
        w = np.maximum(p * (1.0 - p), 1e-12)
        hessian = design.T @ (design * w[:, None])
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hessian, grad, rcond=None)[0]
        beta = beta + step
    # separation: the likelihood has no maximizer and the gradient only
    # vanishes because every fitted probability saturated at 0 or 1
    p = _sigmoid(design @ beta)
    if np.all(np.abs(y - p) < 1e-6):
        converged = False
    return LogisticModel(
        feature_names=list(feature_names),
        coef=beta[1:].copy(),
        intercept=float(beta[0]),
        converged=converged,
        n_iter=it,
    )
