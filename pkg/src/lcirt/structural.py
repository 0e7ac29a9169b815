"""Covariate-dependent latent-class membership probabilities.

Class 1 is the reference: its logit is identically zero and the coefficient
matrix holds one row per remaining class. The covariate vector gets an implicit
leading constant. Weights are computed with max-logit subtraction.
"""

from __future__ import annotations

import numpy as np

from .exceptions import InvalidParameterError


def _with_constant(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    return np.concatenate([np.ones((x.shape[0], 1)), x], axis=1)


def log_class_weights(covariates: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Log membership weights, one row per subject: shape (n, k).

    covariates: (n, C) or (C,); coef: (k-1, C+1). k = 1 yields all-zero logs.
    """
    coef = np.asarray(coef, dtype=float)
    xt = _with_constant(covariates)
    n = xt.shape[0]
    if coef.size == 0:
        return np.zeros((n, 1))
    if coef.ndim != 2 or coef.shape[1] != xt.shape[1]:
        raise InvalidParameterError(
            f"coefficient matrix expects {xt.shape[1] - 1} covariates, got shape {coef.shape}"
        )
    logits = np.concatenate([np.zeros((n, 1)), xt @ coef.T], axis=1)
    logits -= logits.max(axis=1, keepdims=True)
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def class_weight_table(covariates: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Membership probabilities per subject: shape (n, k), rows sum to 1."""
    return np.exp(log_class_weights(covariates, coef))


def class_weights_u(x, memb_coef_u) -> np.ndarray:
    """Outcome-trait class weights for a single covariate row."""
    return class_weight_table(np.asarray(x, dtype=float).reshape(1, -1), memb_coef_u)[0]


def class_weights_v(x, memb_coef_v) -> np.ndarray:
    """Attempt-trait class weights for a single covariate row; a two-class
    attempt trait reduces to a binary logit."""
    return class_weight_table(np.asarray(x, dtype=float).reshape(1, -1), memb_coef_v)[0]
