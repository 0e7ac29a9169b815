"""Maximum-likelihood estimation of the latent-class IRT model by EM.

The M-step is a generalized (GEM) step: the expected complete-data
log-likelihood separates into a weighted multinomial-logit problem per
structural coefficient block, weighted graded-response likelihoods per item,
weighted Bernoulli likelihoods per item for the attempt indicators, and
support-point blocks that collect every term containing a given point. Each
block takes a few damped Newton iterations with step halving and is only
accepted if its own objective improved, so the marginal log-likelihood never
decreases. Restarts (one deterministic start plus seeded random perturbations)
guard against local maxima.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .exceptions import InvalidDesignError, InvalidOptionsError, InvalidParameterError
from .measurement import (
    LOG_FLOOR,
    PREDICTOR_CLAMP,
    attempt_prob_tables,
    floored_log,
    log_category_tables,
)
from .model import (
    ANSWERED,
    SKIPPED,
    ConstraintScheme,
    Dataset,
    ItemDesign,
    LatentConfig,
    ParameterSet,
    build_constraints,
    canonicalize,
    count_free_parameters,
    validate_design,
)
from .structural import class_weight_table, log_class_weights

_P_FLOOR = math.exp(LOG_FLOOR)
_R_FLOOR = 1e-250  # ratio denominator; keeps gradients finite at degenerate category probabilities
_STEP_CAP = 2.0
_GRAD_SKIP = 1e-10


@dataclass(frozen=True)
class FitOptions:
    """Estimation controls; invalid values raise immediately."""

    max_iter: int = 2000
    tol: float = 1e-8
    n_restarts: int = 10
    seed: int = 0
    init_strategy: str = "auto"
    inner_iters: int = 2
    slope_cap: float = 20.0
    n_jobs: int = 1

    def __post_init__(self):
        if self.max_iter < 1:
            raise InvalidOptionsError("max_iter must be >= 1")
        if not (self.tol > 0):
            raise InvalidOptionsError("tol must be positive")
        if self.n_restarts < 1:
            raise InvalidOptionsError("n_restarts must be >= 1")
        if self.init_strategy not in ("auto", "deterministic", "random"):
            raise InvalidOptionsError(f"unknown init_strategy {self.init_strategy!r}")
        if self.init_strategy == "deterministic" and self.n_restarts > 1:
            raise InvalidOptionsError("deterministic init admits a single restart")
        if self.inner_iters < 1 or self.slope_cap <= 0 or self.n_jobs < 1:
            raise InvalidOptionsError("inner_iters, slope_cap and n_jobs must be positive")


@dataclass(frozen=True)
class PosteriorWeights:
    """Per-subject posterior over latent-class pairs: shape (n, kU, kV)."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "w", w)
        if np.any(w < 0):
            raise InvalidParameterError("posterior weights must be nonnegative")
        sums = w.reshape(w.shape[0], -1).sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-10):
            raise InvalidParameterError("posterior weights must sum to 1 per subject")


@dataclass(frozen=True)
class FitResult:
    """Converged parameters plus estimation provenance."""

    params: ParameterSet
    loglik: float
    trace: tuple[float, ...]
    npar: int
    converged: bool
    iterations: int
    seed: int
    restart_index: int
    n_obs: int
    caps_hit: int = 0
    restart_logliks: tuple[float, ...] = field(default_factory=tuple)


# --- workspace ----------------------------------------------------------------


class _Workspace:
    """Pre-indexed views of one dataset shared by all EM passes."""

    def __init__(self, design: ItemDesign, data: Dataset):
        n, m = data.n_subjects, data.n_items
        self.n = n
        self.xt = np.concatenate([np.ones((n, 1)), data.covariates], axis=1)
        self.ans_f = (data.indicators == ANSWERED).astype(float)
        self.skip_f = (data.indicators == SKIPPED).astype(float)
        self.item_ans_idx = []
        self.item_onehot = []
        self.item_ans_y = []
        for j in range(m):
            idx = np.flatnonzero(data.indicators[:, j] == ANSWERED)
            ys = data.responses[idx, j] - 1
            L = int(design.categories[j])
            onehot = np.zeros((idx.size, L))
            onehot[np.arange(idx.size), ys] = 1.0
            self.item_ans_idx.append(idx)
            self.item_ans_y.append(ys)
            self.item_onehot.append(onehot)


class _DesignInfo:
    def __init__(self, design: ItemDesign, scheme: ConstraintScheme):
        self.dim_u = design.dim_u_of()
        self.dim_v = design.dim_v_of()
        self.categories = design.categories
        self.Lmax = design.max_categories
        self.items_by_dim_u = [np.flatnonzero(self.dim_u == s) for s in range(design.n_dim_u)]
        self.items_by_dim_v = [np.flatnonzero(self.dim_v == t) for t in range(design.n_dim_v)]
        self.rep_items = [j for j in range(design.n_items) if scheme.is_rep(j)]
        members: dict[int, list[int]] = {j: [j] for j in self.rep_items}
        for group in scheme.tie_groups:
            rep = int(scheme.tie_rep[group[0]])
            members[rep] = list(group)
        self.members_of = members


def _mutable_arrays(params: ParameterSet) -> dict[str, np.ndarray | None]:
    return {
        "u": np.array(params.support_u),
        "v": np.array(params.support_v),
        "phi": np.array(params.memb_coef_u),
        "psi": np.array(params.memb_coef_v),
        "alpha": np.array(params.discrimination),
        "beta": np.array(params.thresholds),
        "gu": np.array(params.attempt_slope_u),
        "gv": None if params.attempt_slope_v is None else np.array(params.attempt_slope_v),
        "delta": np.array(params.attempt_difficulty),
    }


def _params_from_arrays(template: ParameterSet, arrs: dict) -> ParameterSet:
    return replace(
        template,
        support_u=arrs["u"],
        support_v=arrs["v"],
        memb_coef_u=arrs["phi"],
        memb_coef_v=arrs["psi"],
        discrimination=arrs["alpha"],
        thresholds=arrs["beta"],
        attempt_slope_u=arrs["gu"],
        attempt_slope_v=arrs["gv"],
        attempt_difficulty=arrs["delta"],
    )


# --- likelihood and E-step ------------------------------------------------------


def _log_joint(params: ParameterSet, design: ItemDesign, data: Dataset, ws: _Workspace) -> np.ndarray:
    """log[ lambda * pi * p(subject | class pair) ]: shape (n, kU, kV)."""
    kU, kV = params.n_class_u, params.n_class_v
    n = ws.n
    logp = log_category_tables(params, design)
    q = attempt_prob_tables(params, design)
    logq = floored_log(q).reshape(kU * kV, -1)
    log1mq = floored_log(1.0 - q).reshape(kU * kV, -1)

    contrib_y = np.zeros((n, kU))
    for j, idx in enumerate(ws.item_ans_idx):
        if idx.size:
            contrib_y[idx] += logp[:, j, ws.item_ans_y[j]].T
    contrib_r = ws.ans_f @ logq.T + ws.skip_f @ log1mq.T

    loglam = log_class_weights(data.covariates, params.memb_coef_u)
    logpi = log_class_weights(data.covariates, params.memb_coef_v) if kV >= 2 else np.zeros((n, 1))
    return (
        loglam[:, :, None]
        + logpi[:, None, :]
        + contrib_y[:, :, None]
        + contrib_r.reshape(n, kU, kV)
    )


def marginal_loglik(params: ParameterSet, design: ItemDesign, data: Dataset) -> float:
    """Marginal log-likelihood via log-sum-exp over latent-class pairs."""
    ws = _Workspace(design, data)
    lj = _log_joint(params, design, data, ws)
    return float(logsumexp(lj.reshape(ws.n, -1), axis=1).sum())


def e_step(params: ParameterSet, design: ItemDesign, data: Dataset) -> PosteriorWeights:
    """Posterior class-pair probabilities per subject, normalized in log domain."""
    ws = _Workspace(design, data)
    lj = _log_joint(params, design, data, ws)
    flat = lj.reshape(ws.n, -1)
    flat = flat - logsumexp(flat, axis=1, keepdims=True)
    return PosteriorWeights(np.exp(flat).reshape(lj.shape))


def _aggregates(w: np.ndarray, design: ItemDesign, ws: _Workspace):
    """Sufficient statistics of the M-step given posterior weights."""
    wU = w.sum(axis=2)
    wV = w.sum(axis=1)
    kU = wU.shape[1]
    m = len(ws.item_ans_idx)
    NY = np.zeros((kU, m, design.max_categories))
    for j, idx in enumerate(ws.item_ans_idx):
        if idx.size:
            NY[:, j, : ws.item_onehot[j].shape[1]] = wU[idx].T @ ws.item_onehot[j]
    AR = np.tensordot(w, ws.ans_f, axes=(0, 0))
    BR = np.tensordot(w, ws.skip_f, axes=(0, 0))
    return wU, wV, NY, AR, BR


# --- block objectives and gradients ---------------------------------------------


def _category_probs_from_cum(cum: np.ndarray) -> np.ndarray:
    """Adjacent differences of cumulative curves along the last axis, floored."""
    shape = list(cum.shape)
    shape[-1] += 1
    P = np.empty(shape)
    P[..., 0] = 1.0 - cum[..., 0]
    P[..., -1] = cum[..., -1]
    if cum.shape[-1] > 1:
        P[..., 1:-1] = cum[..., :-1] - cum[..., 1:]
    return np.maximum(P, _P_FLOOR, out=P)


def _item_y_fg(alpha: float, beta_row: np.ndarray, uclass: np.ndarray, NYj: np.ndarray):
    """Weighted graded-response objective of one item.

    Returns per-class objective values (kU,), the gradient in natural
    coordinates (d/d alpha, d/d beta), and the threshold-wise pieces D with
    d(objective at class h)/d(support point) = -alpha * D[h].sum().
    """
    pred = alpha * uclass
    z = pred[:, None] - beta_row[None, :]
    np.clip(z, -PREDICTOR_CLAMP, PREDICTOR_CLAMP, out=z)
    cum = expit(z)
    P = _category_probs_from_cum(cum)
    f_class = (NYj * np.log(P)).sum(axis=1)
    deriv = cum * (1.0 - cum)
    R = NYj / np.maximum(P, _R_FLOOR)
    D = deriv * (R[:, :-1] - R[:, 1:])
    g_beta = D.sum(axis=0)
    g_alpha = -float(uclass @ D.sum(axis=1))
    return f_class, g_alpha, g_beta, D


def _item_r_fg(gu: float, gv: float | None, delta: float, uclass: np.ndarray, vclass: np.ndarray, ARj, BRj):
    """Weighted Bernoulli attempt objective of one item.

    Returns the per-cell objective matrix (kU, kV), natural gradient pieces,
    the residual matrix E = AR - (AR+BR) q, and the IRLS weights W."""
    z = gu * uclass[:, None] - delta
    if gv is not None:
        z = z + gv * vclass[None, :]
    np.clip(z, -PREDICTOR_CLAMP, PREDICTOR_CLAMP, out=z)
    q = expit(z)
    f_mat = ARj * floored_log(q) + BRj * floored_log(1.0 - q)
    E = ARj - (ARj + BRj) * q
    g_gu = float((E * uclass[:, None]).sum())
    g_gv = float((E * vclass[None, :]).sum()) if gv is not None else None
    g_delta = -float(E.sum())
    W = (ARj + BRj) * q * (1.0 - q)
    return f_mat, g_gu, g_gv, g_delta, E, W


def _beta_internal(beta_row: np.ndarray, anchored: bool) -> np.ndarray:
    """Natural thresholds -> (offset, log-gaps); offset omitted when anchored."""
    gaps = np.maximum(np.diff(beta_row), 1e-12)
    c = np.log(gaps)
    return c if anchored else np.concatenate([[beta_row[0]], c])


def _beta_natural(internal: np.ndarray, n_thresh: int, anchored: bool) -> np.ndarray:
    if anchored:
        b0, c = 0.0, internal
    else:
        b0, c = internal[0], internal[1:]
    out = np.empty(n_thresh)
    out[0] = b0
    if n_thresh > 1:
        out[1:] = b0 + np.cumsum(np.exp(c))
    return out


def _chain_beta_grad(g_beta: np.ndarray, internal: np.ndarray, anchored: bool) -> np.ndarray:
    """Natural threshold gradient -> internal coordinates."""
    c = internal if anchored else internal[1:]
    tail = np.cumsum(g_beta[::-1])[::-1]  # tail[i] = sum of g_beta[i:]
    g_c = np.exp(c) * tail[1:]
    return g_c if anchored else np.concatenate([[tail[0]], g_c])


def _newton_direction(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Ascent direction from a (possibly indefinite) Hessian; gradient fallback."""
    try:
        direction = np.linalg.solve(-hess, grad)
        if np.all(np.isfinite(direction)) and float(direction @ grad) > 0:
            return direction
    except np.linalg.LinAlgError:
        pass
    norm = np.max(np.abs(grad))
    return grad / norm if norm > 1.0 else grad.copy()


def _capped(direction: np.ndarray) -> np.ndarray:
    mx = np.max(np.abs(direction))
    return direction * (_STEP_CAP / mx) if mx > _STEP_CAP else direction


def _fd_hess_of_grad(grad_fn, x: np.ndarray, rel: float = 1e-5) -> np.ndarray:
    p = x.shape[0]
    H = np.empty((p, p))
    for i in range(p):
        h = rel * max(1.0, abs(x[i]))
        e = np.zeros(p)
        e[i] = h
        H[:, i] = (grad_fn(x + e) - grad_fn(x - e)) / (2 * h)
    return 0.5 * (H + H.T)


def _maximize_block(x0: np.ndarray, fg, inner_iters: int, bounds=None, hess=None) -> tuple[np.ndarray, bool]:
    """Damped Newton ascent; never returns a point worse than x0.

    fg(x) -> (objective, gradient). `hess` optionally supplies an analytic
    Hessian (fn of x); otherwise central differences of the gradient are used.
    Returns the best point and whether any parameter sat at its bound."""
    if x0.size == 0:
        return x0, False
    x, (f, g) = x0, fg(x0)
    hit_bound = False
    for _ in range(inner_iters):
        if np.max(np.abs(g)) < _GRAD_SKIP * (1.0 + abs(f)):
            break
        H = hess(x) if hess is not None else _fd_hess_of_grad(lambda z: fg(z)[1], x)
        direction = _capped(_newton_direction(g, H))
        improved = False
        t = 1.0
        for _ in range(12):
            x_new = x + t * direction
            if bounds is not None:
                x_new = np.clip(x_new, bounds[0], bounds[1])
            f_new, g_new = fg(x_new)
            if f_new > f:
                if bounds is not None and np.any((x_new <= bounds[0]) | (x_new >= bounds[1])):
                    hit_bound = True
                x, f, g = x_new, f_new, g_new
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    return x, hit_bound


# --- M-step ---------------------------------------------------------------------


def _structural_fgh(coef_flat: np.ndarray, xt: np.ndarray, wgt: np.ndarray, k: int):
    ncol = xt.shape[1]
    coef = coef_flat.reshape(k - 1, ncol)
    logits = np.concatenate([np.zeros((xt.shape[0], 1)), xt @ coef.T], axis=1)
    logits -= logits.max(axis=1, keepdims=True)
    logden = np.log(np.exp(logits).sum(axis=1, keepdims=True))
    loglam = logits - logden
    lam = np.exp(loglam)
    f = float((wgt * loglam).sum())
    G = (wgt[:, 1:] - lam[:, 1:]).T @ xt  # (k-1, ncol)
    return f, G.ravel(), lam


def _structural_hess(coef_flat: np.ndarray, xt: np.ndarray, wgt: np.ndarray, k: int) -> np.ndarray:
    _, _, lam = _structural_fgh(coef_flat, xt, wgt, k)
    ncol = xt.shape[1]
    p = (k - 1) * ncol
    H = np.empty((p, p))
    for h in range(1, k):
        for l in range(h, k):
            wcell = lam[:, h] * ((1.0 if h == l else 0.0) - lam[:, l])
            block = -(xt * wcell[:, None]).T @ xt
            H[(h - 1) * ncol : h * ncol, (l - 1) * ncol : l * ncol] = block
            H[(l - 1) * ncol : l * ncol, (h - 1) * ncol : h * ncol] = block.T
    return H


def _update_structural(coef: np.ndarray, xt: np.ndarray, wgt: np.ndarray, inner_iters: int) -> np.ndarray:
    k = coef.shape[0] + 1
    if k == 1:
        return coef
    fg = lambda x: _structural_fgh(x, xt, wgt, k)[:2]
    hess = lambda x: _structural_hess(x, xt, wgt, k)
    x, _ = _maximize_block(coef.ravel().copy(), fg, inner_iters, hess=hess)
    return x.reshape(coef.shape)


def _update_items_y(arrs, info, scheme, NY, inner_iters, cap):
    caps_hit = 0
    for j in info.rep_items:
        L = int(info.categories[j])
        uclass = arrs["u"][info.dim_u[j]]
        NYj = NY[:, info.members_of[j], :L].sum(axis=1)
        alpha_free = not scheme.alpha_fixed[j]
        anchored = bool(scheme.beta2_fixed[j])
        n_thr = L - 1

        def decode(x):
            off = 0
            a = arrs["alpha"][j]
            if alpha_free:
                a = x[0]
                off = 1
            return a, _beta_natural(x[off:], n_thr, anchored)

        def fg(x):
            a, beta_row = decode(x)
            f_class, g_a, g_b, _ = _item_y_fg(a, beta_row, uclass, NYj)
            g_int = _chain_beta_grad(g_b, x[1 if alpha_free else 0 :], anchored)
            g = np.concatenate([[g_a], g_int]) if alpha_free else g_int
            return float(f_class.sum()), g

        x0_parts = []
        if alpha_free:
            x0_parts.append([arrs["alpha"][j]])
        x0_parts.append(_beta_internal(arrs["beta"][j, :n_thr], anchored))
        x0 = np.concatenate(x0_parts)
        if x0.size == 0:
            continue
        lo = np.full(x0.shape, -np.inf)
        hi = np.full(x0.shape, np.inf)
        if alpha_free:
            lo[0], hi[0] = -cap, cap
        x_new, hit = _maximize_block(x0, fg, inner_iters, bounds=(lo, hi))
        caps_hit += int(hit)
        a_new, beta_new = decode(x_new)
        arrs["alpha"][j] = a_new
        arrs["beta"][j, :n_thr] = beta_new
    return caps_hit


def _update_items_r(arrs, info, scheme, AR, BR, inner_iters, cap):
    caps_hit = 0
    kV = scheme.n_class_v
    for j in info.rep_items:
        uclass = arrs["u"][info.dim_u[j]]
        vcl = arrs["v"][info.dim_v[j]] if arrs["v"].shape[0] else np.zeros(1)
        members = info.members_of[j]
        ARj = AR[:, :, members].sum(axis=2)
        BRj = BR[:, :, members].sum(axis=2)
        has_gv = arrs["gv"] is not None and kV >= 2
        gu_free = not scheme.slope_u_zero
        gv_free = has_gv and not scheme.gv_fixed[j]
        delta_free = kV == 1 or not scheme.delta_fixed[j]
        layout = [name for name, free in (("gu", gu_free), ("gv", gv_free), ("delta", delta_free)) if free]
        if not layout:
            continue

        def decode(x):
            vals = {"gu": arrs["gu"][j], "gv": arrs["gv"][j] if has_gv else None, "delta": arrs["delta"][j]}
            for name, val in zip(layout, x):
                vals[name] = val
            return vals

        def fg(x):
            vals = decode(x)
            f_mat, g_gu, g_gv, g_d, _, _ = _item_r_fg(vals["gu"], vals["gv"], vals["delta"], uclass, vcl, ARj, BRj)
            grads = {"gu": g_gu, "gv": g_gv, "delta": g_d}
            return float(f_mat.sum()), np.array([grads[name] for name in layout])

        def hess(x):
            vals = decode(x)
            _, _, _, _, _, W = _item_r_fg(vals["gu"], vals["gv"], vals["delta"], uclass, vcl, ARj, BRj)
            derivs = {"gu": np.broadcast_to(uclass[:, None], W.shape), "delta": np.full(W.shape, -1.0)}
            if has_gv:
                derivs["gv"] = np.broadcast_to(vcl[None, :], W.shape)
            T = np.stack([derivs[name] for name in layout])
            return -np.einsum("aij,ij,bij->ab", T, W, T)

        vals0 = {"gu": arrs["gu"][j], "gv": arrs["gv"][j] if has_gv else 0.0, "delta": arrs["delta"][j]}
        x0 = np.array([vals0[n] for n in layout])
        lo = np.array([-cap if n in ("gu", "gv") else -np.inf for n in layout])
        hi = np.array([cap if n in ("gu", "gv") else np.inf for n in layout])
        x_new, hit = _maximize_block(x0, fg, inner_iters, bounds=(lo, hi), hess=hess)
        caps_hit += int(hit)
        vals = decode(x_new)
        arrs["gu"][j] = vals["gu"]
        if has_gv:
            arrs["gv"][j] = vals["gv"]
        arrs["delta"][j] = vals["delta"]
    return caps_hit


def _mirror_ties(arrs, scheme):
    for group in scheme.tie_groups:
        rep = int(scheme.tie_rep[group[0]])
        for j in group:
            arrs["alpha"][j] = arrs["alpha"][rep]
            arrs["beta"][j] = arrs["beta"][rep]
            arrs["gu"][j] = arrs["gu"][rep]
            if arrs["gv"] is not None:
                arrs["gv"][j] = arrs["gv"][rep]
            arrs["delta"][j] = arrs["delta"][rep]


class _DimStackU:
    """Item parameters of one outcome dimension stacked for vectorized
    evaluation of the support-point objective."""

    def __init__(self, arrs, info, s, NY, AR, BR):
        items = info.items_by_dim_u[s]
        self.alpha = arrs["alpha"][items]
        self.gu = arrs["gu"][items]
        self.delta = arrs["delta"][items]
        Lm1 = arrs["beta"].shape[1]
        beta = arrs["beta"][items].copy()
        # pad ragged thresholds with a huge value: cum ~ 0 there and the
        # corresponding NY entries are zero, so padded categories drop out
        for row, j in enumerate(items):
            beta[row, int(info.categories[j]) - 1 :] = 1e30
        self.beta = beta
        if arrs["gv"] is not None and arrs["v"].shape[0]:
            self.vload = arrs["v"][info.dim_v[items], :] * arrs["gv"][items, None]  # (J, kV)
        else:
            self.vload = np.zeros((len(items), AR.shape[1]))
        self.NY = NY[:, items, :]  # (kU, J, Lmax)
        self.AR = AR[:, :, items]  # (kU, kV, J)
        self.BR = BR[:, :, items]

    def fg(self, uval: float, h: int) -> tuple[float, float]:
        pred = self.alpha * uval  # (J,)
        z = pred[:, None] - self.beta
        np.clip(z, -PREDICTOR_CLAMP, PREDICTOR_CLAMP, out=z)
        cum = expit(z)
        P = _category_probs_from_cum(cum)
        NYh = self.NY[h]
        f = float((NYh * np.log(P)).sum())
        R = NYh / np.maximum(P, _R_FLOOR)
        D = cum * (1.0 - cum) * (R[:, :-1] - R[:, 1:])
        g = -float(self.alpha @ D.sum(axis=1))

        zr = self.gu[:, None] * uval + self.vload - self.delta[:, None]  # (J, kV)
        np.clip(zr, -PREDICTOR_CLAMP, PREDICTOR_CLAMP, out=zr)
        q = expit(zr)
        ARh = self.AR[h].T  # (J, kV)
        BRh = self.BR[h].T
        f += float((ARh * floored_log(q) + BRh * floored_log(1.0 - q)).sum())
        g += float(self.gu @ (ARh - (ARh + BRh) * q).sum(axis=1))
        return f, g


class _DimStackV:
    """Item parameters of one attempt dimension stacked for vectorized
    evaluation of the support-point objective (attempt side only)."""

    def __init__(self, arrs, info, t, AR, BR):
        items = info.items_by_dim_v[t]
        self.gv = arrs["gv"][items]
        self.delta = arrs["delta"][items]
        self.uload = arrs["u"][info.dim_u[items], :] * arrs["gu"][items, None]  # (J, kU)
        self.AR = AR[:, :, items]  # (kU, kV, J)
        self.BR = BR[:, :, items]

    def fg(self, vval: float, h: int) -> tuple[float, float]:
        z = self.uload + self.gv[:, None] * vval - self.delta[:, None]  # (J, kU)
        np.clip(z, -PREDICTOR_CLAMP, PREDICTOR_CLAMP, out=z)
        q = expit(z)
        ARh = self.AR[:, h, :].T  # (J, kU)
        BRh = self.BR[:, h, :].T
        f = float((ARh * floored_log(q) + BRh * floored_log(1.0 - q)).sum())
        g = float(self.gv @ (ARh - (ARh + BRh) * q).sum(axis=1))
        return f, g


def _as_vector_fg(scalar_fn):
    def fg(x):
        f, g = scalar_fn(float(x[0]))
        return f, np.array([g])

    return fg


def _update_support(arrs, info, scheme, NY, AR, BR, inner_iters):
    kU, kV = scheme.n_class_u, scheme.n_class_v
    for s in range(arrs["u"].shape[0]):
        stack = _DimStackU(arrs, info, s, NY, AR, BR)
        for h in range(kU):
            fg = _as_vector_fg(lambda val, h=h: stack.fg(val, h))
            x_new, _ = _maximize_block(np.array([arrs["u"][s, h]]), fg, inner_iters)
            arrs["u"][s, h] = float(x_new[0])
    if arrs["v"].shape[0] and kV >= 2:
        for t in range(arrs["v"].shape[0]):
            stack = _DimStackV(arrs, info, t, AR, BR)
            for h in range(kV):
                fg = _as_vector_fg(lambda val, h=h: stack.fg(val, h))
                x_new, _ = _maximize_block(np.array([arrs["v"][t, h]]), fg, inner_iters)
                arrs["v"][t, h] = float(x_new[0])


def _m_step_impl(w, params, design, data, ws, info, scheme, inner_iters, cap):
    # inner_iters counts damped-Newton passes per block; the item and support
    # blocks are interleaved because they share the support points (a ridge
    # that pure per-block iteration crawls along)
    wU, wV, NY, AR, BR = _aggregates(w, design, ws)
    arrs = _mutable_arrays(params)
    if scheme.n_class_u > 1:
        arrs["phi"] = _update_structural(arrs["phi"], ws.xt, wU, inner_iters)
    if scheme.n_class_v > 1:
        arrs["psi"] = _update_structural(arrs["psi"], ws.xt, wV, inner_iters)
    caps = 0
    for _ in range(inner_iters):
        caps += _update_items_y(arrs, info, scheme, NY, 1, cap)
        caps += _update_items_r(arrs, info, scheme, AR, BR, 1, cap)
        _mirror_ties(arrs, scheme)
        _update_support(arrs, info, scheme, NY, AR, BR, 1)
    return scheme.apply(_params_from_arrays(params, arrs)), caps


def m_step(weights: PosteriorWeights, params: ParameterSet, design: ItemDesign, data: Dataset) -> ParameterSet:
    """One generalized M-step: the expected complete-data objective never
    decreases. Requires params.constraints (as produced by init_params/fit)."""
    scheme = _require_scheme(params)
    ws = _Workspace(design, data)
    info = _DesignInfo(design, scheme)
    new_params, _ = _m_step_impl(weights.w, params, design, data, ws, info, scheme, inner_iters=2, cap=20.0)
    return new_params


def _require_scheme(params: ParameterSet) -> ConstraintScheme:
    if params.constraints is None:
        raise InvalidParameterError("parameter set carries no constraint scheme; build it via init_params or build_constraints().apply")
    return params.constraints


# --- initialization -------------------------------------------------------------


def _spread_points(k: int) -> np.ndarray:
    return np.zeros(1) if k == 1 else np.linspace(-2.0, 2.0, k)


def init_params(
    design: ItemDesign,
    config: LatentConfig,
    data: Dataset,
    strategy: str = "deterministic",
    seed: int = 0,
    scheme: ConstraintScheme | None = None,
) -> ParameterSet:
    """Starting values. "deterministic": equally spaced support points on
    [-2, 2], zero structural coefficients, unit slopes, thresholds at
    empirical-quantile logits and attempt difficulties at the empirical
    attempt-rate logit. "random": the deterministic start plus seeded noise,
    uniform(-1, 1) on support points and N(0, 0.25) on structural coefficients.
    """
    if strategy not in ("deterministic", "random"):
        raise InvalidOptionsError(f"unknown init strategy {strategy!r}")
    m = design.n_items
    S, T = config.n_dim_u, config.n_dim_v
    kU, kV = config.n_class_u, config.n_class_v
    C = data.n_covariates
    if scheme is None:
        scheme = build_constraints(design, config, C)

    u = np.tile(_spread_points(kU), (S, 1))
    v = np.tile(_spread_points(kV), (T, 1)) if T else np.zeros((0, max(kV, 1)))
    phi = np.zeros((kU - 1, C + 1))
    psi = np.zeros((kV - 1, C + 1))
    alpha = np.ones(m)
    gu = np.ones(m)
    gv = np.ones(m) if kV >= 2 else None
    Lmax = design.max_categories
    beta = np.full((m, Lmax - 1), np.nan)
    delta = np.zeros(m)

    answered = data.indicators == ANSWERED
    due = data.due
    for j in range(m):
        L = int(design.categories[j])
        idx = np.flatnonzero(answered[:, j])
        if idx.size:
            counts = np.bincount(data.responses[idx, j] - 1, minlength=L).astype(float)
            tail = counts[::-1].cumsum()[::-1]  # tail[y] = count of responses >= y+1
            phat = (tail[1:] + 0.5) / (idx.size + 1.0)
            row = np.clip(-np.log(phat / (1.0 - phat)), -4.0, 4.0)
        else:
            row = np.linspace(-1.0, 1.0, L - 1)
        row = np.maximum.accumulate(row)
        row += np.arange(L - 1) * 1e-3  # break exact ties
        beta[j, : L - 1] = row
        n_due = int(due[:, j].sum())
        qhat = (idx.size + 0.5) / (n_due + 1.0) if n_due else 0.5
        delta[j] = float(np.clip(-math.log(qhat / (1.0 - qhat)), -4.0, 4.0))
    for j in design.anchor_items_u:
        L = int(design.categories[j])
        beta[j, : L - 1] -= beta[j, 0]

    if strategy == "random":
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        u = u + rng.uniform(-1.0, 1.0, size=u.shape)
        if T:
            v = v + rng.uniform(-1.0, 1.0, size=v.shape)
        phi = phi + rng.normal(0.0, 0.5, size=phi.shape)
        psi = psi + rng.normal(0.0, 0.5, size=psi.shape)

    params = ParameterSet(
        support_u=u,
        support_v=v,
        memb_coef_u=phi,
        memb_coef_v=psi,
        discrimination=alpha,
        thresholds=beta,
        attempt_slope_u=gu,
        attempt_slope_v=gv,
        attempt_difficulty=delta,
    )
    return scheme.apply(params)


# --- EM driver ------------------------------------------------------------------


def _run_em(start: ParameterSet, design, data, ws, info, scheme, options: FitOptions):
    params = start
    trace: list[float] = []
    converged = False
    caps = 0
    prev = -np.inf
    it = 0
    while it < options.max_iter:
        lj = _log_joint(params, design, data, ws)
        flat = lj.reshape(ws.n, -1)
        lse = logsumexp(flat, axis=1)
        ll = float(lse.sum())
        trace.append(ll)
        if it > 0 and abs(ll - prev) < options.tol:
            converged = True
            break
        prev = ll
        w = np.exp(flat - lse[:, None]).reshape(lj.shape)
        params, c = _m_step_impl(
            w, params, design, data, ws, info, scheme, options.inner_iters, options.slope_cap
        )
        caps += c
        it += 1
    else:
        ll = marginal_loglik(params, design, data)
        trace.append(ll)
    return params, trace, converged, it, caps


def _restart_seed(master_seed: int, restart: int) -> int:
    return int(np.random.SeedSequence(entropy=master_seed, spawn_key=(restart,)).generate_state(1)[0])


def _run_restart_task(args):
    design, config, data, options, scheme, restart, start = args
    if start is None:
        strat = "deterministic" if (options.init_strategy != "random" and restart == 0) else "random"
        start = init_params(design, config, data, strat, _restart_seed(options.seed, restart), scheme)
    ws = _Workspace(design, data)
    info = _DesignInfo(design, scheme)
    return _run_em(start, design, data, ws, info, scheme, options)


def fit(
    design: ItemDesign,
    config: LatentConfig,
    data: Dataset,
    options: FitOptions | None = None,
    *,
    ties: Sequence[Sequence[int]] | None = None,
    fix_attempt_slope_u: bool = False,
    extra_inits: Sequence[ParameterSet] = (),
) -> FitResult:
    """Best-of-restarts EM fit; deterministic given options.seed.

    ties: optional item groups sharing all item parameters (homogeneity
    restrictions). fix_attempt_slope_u: zero every attempt slope on the outcome
    trait (ignorable-missingness restriction). extra_inits: additional starting
    points appended after the seeded restarts (e.g. warm starts).
    """
    options = options or FitOptions()
    report = validate_design(design, config, data)
    if not report.ok:
        raise InvalidDesignError("; ".join(report.violations))
    scheme = build_constraints(design, config, data.n_covariates, ties=ties, fix_attempt_slope_u=fix_attempt_slope_u)
    npar = count_free_parameters(design, config, data.n_covariates, ties=ties, fix_attempt_slope_u=fix_attempt_slope_u)

    tasks = [(design, config, data, options, scheme, r, None) for r in range(options.n_restarts)]
    for extra in extra_inits:
        tasks.append((design, config, data, options, scheme, len(tasks), scheme.apply(extra)))

    if options.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=options.n_jobs) as pool:
            results = list(pool.map(_run_restart_task, tasks))
    else:
        results = [_run_restart_task(t) for t in tasks]

    logliks = [r[1][-1] for r in results]
    best = int(np.argmax(logliks))
    params, trace, converged, iterations, caps = results[best]
    params = canonicalize(params)
    loglik = marginal_loglik(params, design, data)
    return FitResult(
        params=params,
        loglik=loglik,
        trace=tuple(trace),
        npar=npar,
        converged=converged,
        iterations=iterations,
        seed=options.seed,
        restart_index=best,
        n_obs=data.n_subjects,
        caps_hit=caps,
        restart_logliks=tuple(float(x) for x in logliks),
    )


# --- analytic score ---------------------------------------------------------------


def loglik_gradient(params: ParameterSet, design: ItemDesign, data: Dataset) -> np.ndarray:
    """Gradient of the marginal log-likelihood on the free-parameter vector.

    Assembled from the complete-data block gradients at the current posterior
    weights (Fisher's identity), in the constraint scheme's pack order.
    """
    scheme = _require_scheme(params)
    pieces = complete_data_gradients(params, design, data, e_step(params, design, data))
    return pack_gradient(scheme, pieces)


def complete_data_gradients(
    params: ParameterSet, design: ItemDesign, data: Dataset, weights: PosteriorWeights
) -> dict[str, np.ndarray]:
    """Block gradients of the expected complete-data log-likelihood, in natural
    coordinates, shaped like the corresponding parameter arrays."""
    scheme = _require_scheme(params)
    ws = _Workspace(design, data)
    info = _DesignInfo(design, scheme)
    w = weights.w
    wU, wV, NY, AR, BR = _aggregates(w, design, ws)
    kU, kV = params.n_class_u, params.n_class_v
    m = design.n_items

    out: dict[str, np.ndarray] = {}
    lam = class_weight_table(data.covariates, params.memb_coef_u)
    out["memb_coef_u"] = (wU[:, 1:] - lam[:, 1:]).T @ ws.xt if kU > 1 else np.zeros((0, ws.xt.shape[1]))
    if kV > 1:
        pi = class_weight_table(data.covariates, params.memb_coef_v)
        out["memb_coef_v"] = (wV[:, 1:] - pi[:, 1:]).T @ ws.xt
    else:
        out["memb_coef_v"] = np.zeros((0, ws.xt.shape[1]))

    g_alpha = np.zeros(m)
    g_beta = np.zeros_like(np.asarray(params.thresholds))
    g_gu = np.zeros(m)
    g_gv = np.zeros(m) if params.attempt_slope_v is not None else None
    g_delta = np.zeros(m)
    g_u = np.zeros_like(np.asarray(params.support_u))
    g_v = np.zeros_like(np.asarray(params.support_v))

    arrs = _mutable_arrays(params)
    for j in range(m):
        L = int(design.categories[j])
        s = info.dim_u[j]
        uclass = arrs["u"][s]
        _, ga, gb, D = _item_y_fg(arrs["alpha"][j], arrs["beta"][j, : L - 1], uclass, NY[:, j, :L])
        g_alpha[j] = ga
        g_beta[j, : L - 1] = gb
        g_u[s] += -arrs["alpha"][j] * D.sum(axis=1)

        vcl = arrs["v"][info.dim_v[j]] if arrs["v"].shape[0] else np.zeros(1)
        gv_j = arrs["gv"][j] if arrs["gv"] is not None else None
        _, ggu, ggv, gd, E, _ = _item_r_fg(arrs["gu"][j], gv_j, arrs["delta"][j], uclass, vcl, AR[:, :, j], BR[:, :, j])
        g_gu[j] = ggu
        if g_gv is not None:
            g_gv[j] = ggv
        g_delta[j] = gd
        g_u[s] += arrs["gu"][j] * E.sum(axis=1)
        if arrs["v"].shape[0] and gv_j is not None:
            g_v[info.dim_v[j]] += gv_j * E.sum(axis=0)

    out["support_u"] = g_u
    out["support_v"] = g_v
    out["discrimination"] = g_alpha
    out["thresholds"] = g_beta
    out["attempt_slope_u"] = g_gu
    out["attempt_slope_v"] = g_gv if g_gv is not None else np.zeros(m)
    out["attempt_difficulty"] = g_delta
    return out


def pack_gradient(scheme: ConstraintScheme, pieces: dict[str, np.ndarray]) -> np.ndarray:
    """Arrange block gradients into the packed free-parameter order, summing
    tied members into their representative's slot."""
    members_of: dict[int, list[int]] = {}
    for group in scheme.tie_groups:
        members_of[int(scheme.tie_rep[group[0]])] = list(group)

    def item_grad(arr, j, extra_idx=()):
        idxs = members_of.get(j, [j])
        return sum(arr[(i, *extra_idx)] for i in idxs)

    values = []
    for block, idx in scheme._entries():
        if block in ("support_u", "support_v", "memb_coef_u", "memb_coef_v"):
            values.append(pieces[block][idx])
        elif block == "thresholds":
            values.append(item_grad(pieces[block], idx[0], (idx[1],)))
        else:
            values.append(item_grad(pieces[block], idx[0]))
    return np.asarray(values, dtype=float)
