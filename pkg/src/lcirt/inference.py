"""Post-fit analysis: standardization, standard errors, information criteria,
likelihood-ratio tests, predicted probabilities, posterior classification, and
the latent-class selection grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import gammaincc

from .estimation import FitOptions, FitResult, e_step, fit, loglik_gradient
from .exceptions import InvalidDesignError, InvalidParameterError, ZeroVarianceError
from .measurement import grm_category, indicator_prob
from .model import (
    Dataset,
    ItemDesign,
    LatentConfig,
    ParameterSet,
)
from .structural import class_weight_table


def bic(loglik: float, npar: int, n: int) -> float:
    """Bayesian information criterion: -2 loglik + npar log(n); lower is better."""
    if n < 1:
        raise InvalidParameterError("n must be >= 1")
    return -2.0 * loglik + npar * math.log(n)


def chi2_sf(x: float, df: float) -> float:
    """Chi-square upper-tail probability via the regularized upper incomplete gamma."""
    if df <= 0:
        raise InvalidParameterError("df must be positive")
    return float(gammaincc(df / 2.0, max(float(x), 0.0) / 2.0))


@dataclass(frozen=True)
class TestReport:
    """Likelihood-ratio test result for two nested fits."""

    loglik_full: float
    loglik_restricted: float
    statistic: float
    df: int
    p_value: float

    def __post_init__(self):
        if self.statistic < -1e-6:
            raise InvalidParameterError(
                f"negative LRT statistic {self.statistic}: models not nested or fits not converged"
            )
        if self.df <= 0:
            raise InvalidParameterError("restricted model must have fewer free parameters")
        if not 0.0 <= self.p_value <= 1.0:
            raise InvalidParameterError("p-value outside [0, 1]")


def lrt(full: FitResult, restricted: FitResult) -> TestReport:
    """Likelihood-ratio test of a restricted model nested in a full model."""
    df = full.npar - restricted.npar
    statistic = 2.0 * (full.loglik - restricted.loglik)
    return TestReport(
        loglik_full=full.loglik,
        loglik_restricted=restricted.loglik,
        statistic=statistic,
        df=df,
        p_value=chi2_sf(statistic, df) if df > 0 else float("nan"),
    )


# --- standardization ---------------------------------------------------------


def average_class_probs(params: ParameterSet, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Membership probabilities averaged over subjects, per trait."""
    lam_bar = class_weight_table(data.covariates, params.memb_coef_u).mean(axis=0)
    if params.n_class_v >= 2:
        pi_bar = class_weight_table(data.covariates, params.memb_coef_v).mean(axis=0)
    else:
        pi_bar = np.ones(1)
    return lam_bar, pi_bar


def _weighted_moments(points: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = points @ weights
    sd = np.sqrt(np.maximum(((points - mu[:, None]) ** 2) @ weights, 0.0))
    return mu, sd


def standardize(
    params: ParameterSet,
    design: ItemDesign,
    avg_class_probs: tuple[np.ndarray, np.ndarray],
) -> ParameterSet:
    """Affine reparameterization to probability-weighted mean 0 / SD 1 support
    points per dimension, with item parameters transformed coherently so every
    model probability (and hence the likelihood) is unchanged. Idempotent."""
    lam_bar, pi_bar = (np.asarray(a, dtype=float) for a in avg_class_probs)
    mu_u, sd_u = _weighted_moments(params.support_u, lam_bar)
    if np.any(sd_u <= 0):
        raise ZeroVarianceError("an outcome dimension has zero support-point variance")
    u_std = (params.support_u - mu_u[:, None]) / sd_u[:, None]

    dim_u = design.dim_u_of()
    alpha = params.discrimination * sd_u[dim_u]
    thresholds = params.thresholds - (params.discrimination * mu_u[dim_u])[:, None]
    gu = params.attempt_slope_u * sd_u[dim_u]
    delta = params.attempt_difficulty - params.attempt_slope_u * mu_u[dim_u]

    if params.n_dim_v > 0:
        mu_v, sd_v = _weighted_moments(params.support_v, pi_bar)
        if np.any(sd_v <= 0):
            raise ZeroVarianceError("an attempt dimension has zero support-point variance")
        v_std = (params.support_v - mu_v[:, None]) / sd_v[:, None]
        dim_v = design.dim_v_of()
        gv = params.attempt_slope_v * sd_v[dim_v]
        delta = delta - params.attempt_slope_v * mu_v[dim_v]
    else:
        v_std = params.support_v
        gv = params.attempt_slope_v

    return replace(
        params,
        support_u=u_std,
        support_v=v_std,
        discrimination=alpha,
        thresholds=thresholds,
        attempt_slope_u=gu,
        attempt_slope_v=gv,
        attempt_difficulty=delta,
        standardized=True,
    )


def standardized_report(params_std: ParameterSet, design: ItemDesign) -> tuple[list[str], np.ndarray]:
    """Flatten a standardized parameter set into a named vector: support points,
    membership coefficients, then every item parameter (anchored ones included,
    since their standardized images are free quantities)."""
    names: list[str] = []
    values: list[float] = []

    def add(name, val):
        names.append(name)
        values.append(float(val))

    S, kU = params_std.support_u.shape
    for s in range(S):
        for h in range(kU):
            add(f"support_u[dim{s + 1},class{h + 1}]", params_std.support_u[s, h])
    if params_std.n_dim_v:
        T, kV = params_std.support_v.shape
        for t in range(T):
            for h in range(kV):
                add(f"support_v[dim{t + 1},class{h + 1}]", params_std.support_v[t, h])
    for h in range(params_std.memb_coef_u.shape[0]):
        for c in range(params_std.memb_coef_u.shape[1]):
            add(f"memb_coef_u[class{h + 2},x{c}]", params_std.memb_coef_u[h, c])
    for h in range(params_std.memb_coef_v.shape[0]):
        for c in range(params_std.memb_coef_v.shape[1]):
            add(f"memb_coef_v[class{h + 2},x{c}]", params_std.memb_coef_v[h, c])
    for j in range(params_std.n_items):
        add(f"discrimination[{design.name_of(j)}]", params_std.discrimination[j])
    for j in range(params_std.n_items):
        for yi in range(int(design.categories[j]) - 1):
            add(f"thresholds[{design.name_of(j)},cat{yi + 2}]", params_std.thresholds[j, yi])
    for j in range(params_std.n_items):
        add(f"attempt_slope_u[{design.name_of(j)}]", params_std.attempt_slope_u[j])
    if params_std.attempt_slope_v is not None:
        for j in range(params_std.n_items):
            add(f"attempt_slope_v[{design.name_of(j)}]", params_std.attempt_slope_v[j])
    for j in range(params_std.n_items):
        add(f"attempt_difficulty[{design.name_of(j)}]", params_std.attempt_difficulty[j])
    return names, np.array(values)


# --- standard errors ---------------------------------------------------------


def delta_method_se(cov: np.ndarray, jacobian: np.ndarray) -> np.ndarray:
    """SEs of a transform g(theta) given cov(theta) and J = dg/dtheta."""
    return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", jacobian, cov, jacobian), 0.0))


@dataclass(frozen=True)
class StandardErrorReport:
    """Raw and standardized standard errors.

    Flags per entry: "ok", "fixed" (identification constraint, SE 0), or
    "failed" (non-invertible information in that direction, SE NaN)."""

    names: tuple[str, ...]
    values: np.ndarray
    se: np.ndarray
    flags: tuple[str, ...]
    std_names: tuple[str, ...]
    std_values: np.ndarray
    std_se: np.ndarray
    std_flags: tuple[str, ...]
    free_names: tuple[str, ...]
    cov_free: np.ndarray
    hessian_rel_asymmetry: float


def _numerical_information(score_fn, theta: np.ndarray) -> tuple[np.ndarray, float]:
    """Observed information via central differences of the analytic score,
    step h = max(1e-4, 1e-4 |theta_i|), symmetrized."""
    p = theta.shape[0]
    H = np.empty((p, p))
    for i in range(p):
        h = max(1e-4, 1e-4 * abs(theta[i]))
        e = np.zeros(p)
        e[i] = h
        H[:, i] = (score_fn(theta + e) - score_fn(theta - e)) / (2 * h)
    asym = float(np.max(np.abs(H - H.T)) / max(1.0, np.max(np.abs(H))))
    H = 0.5 * (H + H.T)
    return -H, asym


def _fixed_entries(params: ParameterSet, design: ItemDesign) -> list[tuple[str, float]]:
    scheme = params.constraints
    out: list[tuple[str, float]] = []
    if scheme is None:
        return out
    for j in range(design.n_items):
        if not scheme.is_rep(j):
            continue
        if scheme.alpha_fixed[j]:
            out.append((f"discrimination[{design.name_of(j)}]", 1.0))
        if scheme.beta2_fixed[j]:
            out.append((f"thresholds[{design.name_of(j)},cat2]", 0.0))
        if scheme.slope_u_zero:
            out.append((f"attempt_slope_u[{design.name_of(j)}]", 0.0))
        if scheme.n_class_v >= 2:
            if scheme.gv_fixed[j]:
                out.append((f"attempt_slope_v[{design.name_of(j)}]", 1.0))
            if scheme.delta_fixed[j]:
                out.append((f"attempt_difficulty[{design.name_of(j)}]", 0.0))
    return out


def standard_errors(fit_result: FitResult, design: ItemDesign, data: Dataset) -> StandardErrorReport:
    """Delta-method standard errors at the MLE.

    Raw SEs come from the inverse observed information (numerical, from the
    analytic score) on the free-parameter vector; standardized SEs propagate
    through the standardization transform (including its dependence on the
    average class probabilities) with a finite-difference Jacobian.
    """
    params = fit_result.params
    scheme = params.constraints
    if scheme is None:
        raise InvalidParameterError("fitted parameters carry no constraint scheme")
    theta = scheme.pack(params)
    free_names = tuple(scheme.names(design))

    def score_fn(vec):
        return loglik_gradient(scheme.unpack(params, vec), design, data)

    info, asym = _numerical_information(score_fn, theta)
    p = theta.shape[0]
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
    diag_info = np.diag(info)
    failed = (
        ~np.isfinite(np.diag(cov))
        | (np.diag(cov) <= 0)
        | (diag_info <= 1e-10 * max(1.0, float(np.max(np.abs(diag_info)))))
    )
    se_free = np.sqrt(np.where(~failed & (np.diag(cov) > 0), np.diag(cov), np.nan))

    def std_vector(vec):
        p_raw = scheme.unpack(params, vec)
        p_std = standardize(p_raw, design, average_class_probs(p_raw, data))
        return standardized_report(p_std, design)[1]

    try:
        std_names_list, std_values = standardized_report(
            standardize(params, design, average_class_probs(params, data)), design
        )
    except ZeroVarianceError:
        # single-class (or degenerate) trait: no standardized scale exists
        std_names_list, std_values = [], np.zeros(0)
    q = std_values.shape[0]
    J = np.empty((q, p))
    for i in range(p if q else 0):
        h = 1e-5 * max(1.0, abs(theta[i]))
        e = np.zeros(p)
        e[i] = h
        J[:, i] = (std_vector(theta + e) - std_vector(theta - e)) / (2 * h)
    std_se = delta_method_se(cov, J) if q else np.zeros(0)
    std_failed = np.array([bool(np.any(failed[np.abs(J[i]) > 1e-12])) for i in range(q)], dtype=bool)
    std_se = np.where(std_failed, np.nan, std_se) if q else std_se

    names = list(free_names)
    values = list(theta)
    ses = list(np.where(failed, np.nan, se_free))
    flags = ["failed" if f else "ok" for f in failed]
    for name, value in _fixed_entries(params, design):
        names.append(name)
        values.append(value)
        ses.append(0.0)
        flags.append("fixed")

    return StandardErrorReport(
        names=tuple(names),
        values=np.array(values),
        se=np.array(ses),
        flags=tuple(flags),
        std_names=tuple(std_names_list),
        std_values=std_values,
        std_se=std_se,
        std_flags=tuple("failed" if f else "ok" for f in std_failed),
        free_names=free_names,
        cov_free=cov,
        hessian_rel_asymmetry=asym,
    )


# --- hypothesis tests ----------------------------------------------------------


def test_ignorability(
    design: ItemDesign, config: LatentConfig, data: Dataset, options: FitOptions | None = None
) -> TestReport:
    """LRT of the ignorable-missingness restriction (every attempt slope on the
    outcome trait equal to zero) against the full model; df equals the item
    count. The full fit gets a warm start at the restricted solution, so the
    statistic is nonnegative up to numerical noise."""
    options = options or FitOptions()
    restricted = fit(design, config, data, options, fix_attempt_slope_u=True)
    full = fit(design, config, data, options, extra_inits=(restricted.params,))
    return lrt(full, restricted)


def test_group_homogeneity(
    design: ItemDesign,
    config: LatentConfig,
    data: Dataset,
    course_block: str,
    options: FitOptions | None = None,
) -> TestReport:
    """LRT of equality of all item parameters across one item group (the
    group's attempt-side observations are pooled through the shared
    parameters); df = (group size - 1) x (free parameters per item)."""
    options = options or FitOptions()
    groups = design.groups
    if course_block not in groups:
        raise InvalidDesignError(
            f"unknown item group {course_block!r}; available: {sorted(groups) or 'none'}"
        )
    block = groups[course_block]
    if len(block) < 2:
        raise InvalidDesignError(f"item group {course_block!r} has fewer than 2 items")
    restricted = fit(design, config, data, options, ties=(block,))
    full = fit(design, config, data, options, extra_inits=(restricted.params,))
    return lrt(full, restricted)


# --- prediction and classification ----------------------------------------------


@dataclass(frozen=True)
class PredictionTables:
    """Per-item probability tables on a grid of standardized trait values.

    category_probs[j, a]: distribution over categories at outcome value
    u_values[a]. tail_probs[j, a]: Pr(Y_j >= tail_category). attempt_probs[j,
    a, b]: Pr(attempt) at (u_values[a], v_values[b]). Range columns are signed
    differences between the largest and smallest grid value along one trait,
    the other held at the grid value closest to zero."""

    item_names: tuple[str, ...]
    u_values: tuple[float, ...]
    v_values: tuple[float, ...]
    tail_category: int
    category_probs: np.ndarray
    tail_probs: np.ndarray
    tail_range: np.ndarray
    attempt_probs: np.ndarray
    attempt_range_u: np.ndarray
    attempt_range_v: np.ndarray

    def pass_all(self, u_index: int, items: Sequence[int] | None = None) -> float:
        """Probability of clearing the tail threshold on every listed item."""
        idx = np.arange(self.tail_probs.shape[0]) if items is None else np.asarray(items)
        return all_pass_probability(self.tail_probs[idx, u_index])


def all_pass_probability(tail_probs) -> float:
    """Product of per-item tail probabilities: chance of passing all of them."""
    return float(np.prod(np.asarray(tail_probs, dtype=float)))


def predict_item_probs(
    params_std: ParameterSet,
    design: ItemDesign,
    u_values: Sequence[float] = (-1.0, 0.0, 1.0),
    v_values: Sequence[float] = (-1.0, 0.0, 1.0),
    tail_category: int = 2,
) -> PredictionTables:
    """Predicted category, tail and attempt probabilities at fixed trait values
    (in SD units when the parameters are standardized)."""
    m = design.n_items
    S, T = design.n_dim_u, design.n_dim_v
    u_values = tuple(float(u) for u in u_values)
    v_values = tuple(float(v) for v in v_values) if T else (0.0,)
    if not u_values:
        raise InvalidParameterError("u_values must be nonempty")
    nu, nv = len(u_values), len(v_values)
    Lmax = design.max_categories
    dim_u = design.dim_u_of()
    dim_v = design.dim_v_of()

    category_probs = np.full((m, nu, Lmax), np.nan)
    tail_probs = np.empty((m, nu))
    attempt_probs = np.empty((m, nu, nv))
    for j in range(m):
        L = int(design.categories[j])
        if not 2 <= tail_category <= L:
            raise InvalidParameterError(f"tail_category must be in 2..{L}")
        for a, uval in enumerate(u_values):
            ability = np.zeros(S)
            ability[dim_u[j]] = uval
            probs = grm_category(j, ability, params_std, design).probs
            category_probs[j, a, :L] = probs
            tail_probs[j, a] = probs[tail_category - 1 :].sum()
            for b, vval in enumerate(v_values):
                tendency = np.zeros(T)
                if T:
                    tendency[dim_v[j]] = vval
                attempt_probs[j, a, b] = indicator_prob(j, ability, tendency, params_std, design)

    ref_u = int(np.argmin(np.abs(np.asarray(u_values))))
    ref_v = int(np.argmin(np.abs(np.asarray(v_values))))
    tail_range = tail_probs[:, -1] - tail_probs[:, 0]
    attempt_range_u = attempt_probs[:, -1, ref_v] - attempt_probs[:, 0, ref_v]
    attempt_range_v = attempt_probs[:, ref_u, -1] - attempt_probs[:, ref_u, 0]

    return PredictionTables(
        item_names=tuple(design.name_of(j) for j in range(m)),
        u_values=u_values,
        v_values=v_values,
        tail_category=tail_category,
        category_probs=category_probs,
        tail_probs=tail_probs,
        tail_range=tail_range,
        attempt_probs=attempt_probs,
        attempt_range_u=attempt_range_u,
        attempt_range_v=attempt_range_v,
    )


@dataclass(frozen=True)
class Classification:
    """MAP latent-class assignments with the marginal posteriors behind them."""

    map_u: np.ndarray
    map_v: np.ndarray
    posterior_u: np.ndarray
    posterior_v: np.ndarray


def posterior_classify(fit_or_params, design: ItemDesign, data: Dataset) -> Classification:
    """Per-subject MAP class on each trait (argmax of the marginalized
    posterior; ties resolve to the lower class index)."""
    params = fit_or_params.params if isinstance(fit_or_params, FitResult) else fit_or_params
    w = e_step(params, design, data).w
    posterior_u = w.sum(axis=2)
    posterior_v = w.sum(axis=1)
    return Classification(
        map_u=np.argmax(posterior_u, axis=1),
        map_v=np.argmax(posterior_v, axis=1),
        posterior_u=posterior_u,
        posterior_v=posterior_v,
    )


# --- model selection -------------------------------------------------------------


@dataclass(frozen=True)
class SelectCell:
    n_class_u: int
    n_class_v: int
    loglik: float
    npar: int
    bic: float
    converged: bool
    selected: bool = False


def select_grid(
    design: ItemDesign,
    config: LatentConfig,
    data: Dataset,
    ku_values: Sequence[int],
    kv_values: Sequence[int],
    options: FitOptions | None = None,
) -> tuple[SelectCell, ...]:
    """Fit every (kU, kV) combination and flag the BIC-minimal cell. kV = 1
    cells drop the attempt trait entirely."""
    options = options or FitOptions()
    cells: list[SelectCell] = []
    for ku in ku_values:
        for kv in kv_values:
            if kv >= 2:
                des, cfg = design, LatentConfig(config.n_dim_u, config.n_dim_v, ku, kv)
            else:
                des, cfg = design.without_v(), LatentConfig(config.n_dim_u, 0, ku, 1)
            res = fit(des, cfg, data, options)
            cells.append(
                SelectCell(
                    n_class_u=int(ku),
                    n_class_v=int(kv),
                    loglik=res.loglik,
                    npar=res.npar,
                    bic=bic(res.loglik, res.npar, data.n_subjects),
                    converged=res.converged,
                )
            )
    best = int(np.argmin([c.bic for c in cells]))
    cells[best] = replace(cells[best], selected=True)
    return tuple(cells)
