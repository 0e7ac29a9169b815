"""Item-level probabilities: graded-response curves, attempt probabilities, and
the per-subject joint probability under one latent-class pair.

Likelihood work happens in the log domain: inside the class tables, linear
predictors are clamped to [-35, 35] before exponentiation and log-probabilities
are floored at -700, so degenerate intermediate parameter values never produce
NaN or -inf. The prediction-facing curves are unclamped and saturate all the
way to 0/1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import InvalidParameterError
from .model import ANSWERED, SKIPPED, Dataset, ItemDesign, ParameterSet

PREDICTOR_CLAMP = 35.0
LOG_FLOOR = -700.0


def clamped_expit(z):
    return expit(np.clip(z, -PREDICTOR_CLAMP, PREDICTOR_CLAMP))


def floored_log(p):
    return np.log(np.maximum(p, np.exp(LOG_FLOOR)))


@dataclass(frozen=True)
class CategoryDistribution:
    """Probability of each response category of one item."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise InvalidParameterError("category probabilities outside [0, 1]")
        if abs(p.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("category probabilities must sum to 1")


def _outcome_predictor(item: int, ability, params: ParameterSet, design: ItemDesign) -> float:
    ability = np.asarray(ability, dtype=float)
    loading = design.loads_u[item].astype(float)
    return float(params.discrimination[item] * (loading @ ability))


def grm_cumulative(item: int, category: int, ability, params: ParameterSet, design: ItemDesign) -> float:
    """Pr(Y_item >= category) at the given outcome-trait vector; category >= 2.

    Category 1 has cumulative probability 1 by convention and is not computed
    here. Prediction-facing curves saturate all the way to 0/1 (no predictor
    clamp; the clamp protects only the log-domain likelihood tables).
    """
    L = int(design.categories[item])
    if not 2 <= category <= L:
        raise InvalidParameterError(f"category must be in 2..{L}, got {category}")
    z = _outcome_predictor(item, ability, params, design) - params.thresholds[item, category - 2]
    return float(expit(z))


def grm_category(item: int, ability, params: ParameterSet, design: ItemDesign) -> CategoryDistribution:
    """Distribution over the item's categories: adjacent differences of the
    cumulative curves, with Pr(Y >= 1) = 1 and Pr(Y >= L+1) = 0."""
    L = int(design.categories[item])
    z = _outcome_predictor(item, ability, params, design)
    cum = expit(z - params.thresholds[item, : L - 1])
    upper = np.concatenate([[1.0], cum])
    lower = np.concatenate([cum, [0.0]])
    return CategoryDistribution(np.maximum(upper - lower, 0.0))


def indicator_prob(item: int, ability, tendency, params: ParameterSet, design: ItemDesign) -> float:
    """Pr(R_item = 1): logistic in both latent traits minus the attempt difficulty."""
    z = params.attempt_slope_u[item] * float(design.loads_u[item].astype(float) @ np.asarray(ability, dtype=float))
    if params.attempt_slope_v is not None and design.n_dim_v:
        z += params.attempt_slope_v[item] * float(
            design.loads_v[item].astype(float) @ np.asarray(tendency, dtype=float)
        )
    z -= params.attempt_difficulty[item]
    return float(expit(z))


# --- vectorized class tables -------------------------------------------------


def log_category_tables(params: ParameterSet, design: ItemDesign) -> np.ndarray:
    """log Pr(Y_j = y | class) for every outcome class: shape (kU, m, Lmax),
    floored; positions beyond L_j hold the floor and are never indexed."""
    kU = params.n_class_u
    m = design.n_items
    Lmax = design.max_categories
    dim_u = design.dim_u_of()
    # per-class predictor of each item: (kU, m)
    pred = params.support_u[dim_u, :].T * params.discrimination[None, :]
    logp = np.full((kU, m, Lmax), LOG_FLOOR)
    for j in range(m):
        L = int(design.categories[j])
        cum = clamped_expit(pred[:, j, None] - params.thresholds[None, j, : L - 1])  # (kU, L-1)
        upper = np.concatenate([np.ones((kU, 1)), cum], axis=1)
        lower = np.concatenate([cum, np.zeros((kU, 1))], axis=1)
        logp[:, j, :L] = floored_log(np.maximum(upper - lower, 0.0))
    return logp


def attempt_prob_tables(params: ParameterSet, design: ItemDesign) -> np.ndarray:
    """Pr(R_j = 1 | class pair): shape (kU, kV, m)."""
    kU, kV = params.n_class_u, params.n_class_v
    dim_u = design.dim_u_of()
    z = (params.support_u[dim_u, :].T * params.attempt_slope_u[None, :])[:, None, :]  # (kU, 1, m)
    if params.attempt_slope_v is not None and design.n_dim_v:
        dim_v = design.dim_v_of()
        z = z + (params.support_v[dim_v, :].T * params.attempt_slope_v[None, :])[None, :, :]
    else:
        z = np.broadcast_to(z, (kU, kV, design.n_items)).copy()
    z = z - params.attempt_difficulty[None, None, :]
    return clamped_expit(z)


def log_subject_class_prob(
    subject: int, class_u: int, class_v: int, params: ParameterSet, design: ItemDesign, data: Dataset
) -> float:
    """log of the joint probability of subject's observed responses and
    indicators under one latent-class pair, by local independence.

    Items never due contribute nothing; skipped items contribute 1 - q; answered
    items contribute q times the category probability of the observed response.
    """
    total = 0.0
    uh = params.support_u[:, class_u]
    vh = params.support_v[:, class_v] if params.n_dim_v else np.zeros(0)
    for j in range(design.n_items):
        r = data.indicators[subject, j]
        if r == ANSWERED:
            q = indicator_prob(j, uh, vh, params, design)
            cat = grm_category(j, uh, params, design).probs[data.responses[subject, j] - 1]
            total += float(floored_log(q)) + float(floored_log(cat))
        elif r == SKIPPED:
            q = indicator_prob(j, uh, vh, params, design)
            total += float(floored_log(1.0 - q))
    return total


def subject_class_prob(
    subject: int, class_u: int, class_v: int, params: ParameterSet, design: ItemDesign, data: Dataset
) -> float:
    return float(np.exp(log_subject_class_prob(subject, class_u, class_v, params, design, data)))
