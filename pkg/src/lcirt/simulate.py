"""Synthetic data generation and brute-force probability oracles.

Generation follows the model's own causal order per subject: covariates, then
one class draw per latent trait, then per due item an attempt draw and, if
attempted, a graded response. Every subject owns an independent RNG substream
(`SeedSequence(seed).spawn`), so generation is order-independent and a fixed
seed reproduces the dataset byte for byte.

The brute-force functions re-derive pattern probabilities by direct
multiplication with their own scalar arithmetic; they share no code with the
vectorized likelihood and exist to cross-check it.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import EnumerationTooLargeError, InvalidDesignError
from .measurement import grm_category, indicator_prob
from .model import (
    ANSWERED,
    SKIPPED,
    STRUCTURAL_MISSING,
    Dataset,
    ItemDesign,
    LatentConfig,
    ParameterSet,
)
from .structural import class_weight_table

DEFAULT_COVARIATE_SPEC = (("bernoulli", 0.5),)

_MAX_BRUTE_ITEMS = 6
_MAX_BRUTE_PATTERNS = 20_000


def _draw_covariate(rng: np.random.Generator, spec) -> float:
    kind = spec[0]
    if kind == "bernoulli":
        return float(rng.random() < spec[1])
    if kind == "uniform":
        return float(rng.uniform(spec[1], spec[2]))
    if kind == "normal":
        return float(spec[1] + spec[2] * rng.standard_normal())
    raise InvalidDesignError(f"unknown covariate distribution {kind!r}")


def generate(
    params: ParameterSet,
    design: ItemDesign,
    config: LatentConfig,
    n: int,
    covariate_spec: Sequence | np.ndarray = DEFAULT_COVARIATE_SPEC,
    seed: int = 0,
    n_subgroups: int | None = None,
    not_due: np.ndarray | None = None,
) -> Dataset:
    """Simulate a dataset of `n` subjects from the generative model.

    covariate_spec: either a fixed (n, C) matrix or a sequence of per-column
        distributions among ("bernoulli", p), ("uniform", a, b),
        ("normal", mu, sd). C must match the structural coefficient width.
    n_subgroups: when set, subjects are assigned uniformly to one of g
        subgroups and, within every item group of the design (which must hold
        exactly g items), only the subgroup's item is due: the exam-by-group
        structural missingness pattern.
    not_due: optional explicit (n, m) boolean mask of structurally missing
        cells; mutually exclusive with n_subgroups.
    """
    m = design.n_items
    fixed_x = isinstance(covariate_spec, np.ndarray)
    if fixed_x:
        x_matrix = np.asarray(covariate_spec, dtype=float)
        if x_matrix.shape[0] != n:
            raise InvalidDesignError("fixed covariate matrix must have n rows")
        n_cov = x_matrix.shape[1]
    else:
        covariate_spec = tuple(covariate_spec)
        n_cov = len(covariate_spec)
    if params.memb_coef_u.size and params.memb_coef_u.shape[1] != n_cov + 1:
        raise InvalidDesignError(
            f"covariate spec provides {n_cov} columns, structural coefficients expect "
            f"{params.memb_coef_u.shape[1] - 1}"
        )
    if n_subgroups is not None and not_due is not None:
        raise InvalidDesignError("pass either n_subgroups or not_due, not both")
    groups = design.groups if n_subgroups is not None else {}
    if n_subgroups is not None:
        for label, idx in groups.items():
            if len(idx) != n_subgroups:
                raise InvalidDesignError(f"item group {label!r} has {len(idx)} items, expected {n_subgroups}")

    responses = np.zeros((n, m), dtype=np.int64)
    indicators = np.full((n, m), STRUCTURAL_MISSING, dtype=np.int64)
    covariates = np.zeros((n, n_cov))

    kU, kV = params.n_class_u, params.n_class_v
    # per-class probability tables; every subject's item draws only need a lookup
    cat_cdf = []
    for j in range(m):
        L = int(design.categories[j])
        probs = np.empty((kU, L))
        for h in range(kU):
            probs[h] = grm_category(j, params.support_u[:, h], params, design).probs
        cat_cdf.append(np.cumsum(probs, axis=1))
    q_table = np.empty((kU, kV, m))
    for h_u in range(kU):
        uh = params.support_u[:, h_u]
        for h_v in range(kV):
            vh = params.support_v[:, h_v] if params.n_dim_v else np.zeros(0)
            for j in range(m):
                q_table[h_u, h_v, j] = indicator_prob(j, uh, vh, params, design)

    group_items = list(groups.values())
    root = np.random.SeedSequence(seed)
    streams = root.spawn(n)
    for i in range(n):
        rng = np.random.default_rng(streams[i])
        due_i = np.ones(m, dtype=bool)
        if n_subgroups is not None:
            member = int(rng.integers(n_subgroups))
            for idx in group_items:
                due_i[list(idx)] = False
                due_i[idx[member]] = True
        elif not_due is not None:
            due_i = ~np.asarray(not_due, dtype=bool)[i]
        if fixed_x:
            covariates[i] = x_matrix[i]
        else:
            for c, spec in enumerate(covariate_spec):
                covariates[i, c] = _draw_covariate(rng, spec)

        h_u = h_v = 0
        if kU > 1:
            lam = class_weight_table(covariates[i : i + 1], params.memb_coef_u)[0]
            h_u = min(int(np.searchsorted(np.cumsum(lam), rng.random())), kU - 1)
        if kV > 1:
            pi = class_weight_table(covariates[i : i + 1], params.memb_coef_v)[0]
            h_v = min(int(np.searchsorted(np.cumsum(pi), rng.random())), kV - 1)

        q_row = q_table[h_u, h_v]
        for j in range(m):
            if not due_i[j]:
                continue
            if rng.random() < q_row[j]:
                indicators[i, j] = ANSWERED
                cdf = cat_cdf[j][h_u]
                responses[i, j] = 1 + min(int(np.searchsorted(cdf, rng.random() * cdf[-1])), len(cdf) - 1)
            else:
                indicators[i, j] = SKIPPED

    names = tuple(f"x{c + 1}" for c in range(n_cov))
    return Dataset(responses=responses, indicators=indicators, covariates=covariates, covariate_names=names)


# --- brute-force oracles ------------------------------------------------------


def _bf_logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _bf_class_weights(x: Iterable[float], coef: np.ndarray) -> list[float]:
    coef = np.asarray(coef, dtype=float)
    if coef.size == 0:
        return [1.0]
    xt = [1.0, *map(float, x)]
    logits = [0.0] + [sum(c * v for c, v in zip(row, xt)) for row in coef]
    mx = max(logits)
    es = [math.exp(z - mx) for z in logits]
    s = sum(es)
    return [e / s for e in es]


def _bf_category_probs(params: ParameterSet, design: ItemDesign, j: int, uh: np.ndarray) -> list[float]:
    L = int(design.categories[j])
    s = int(np.argmax(design.loads_u[j]))
    pred = float(params.discrimination[j]) * float(uh[s])
    cum = [1.0] + [_bf_logistic(pred - float(params.thresholds[j, yi])) for yi in range(L - 1)] + [0.0]
    return [cum[y] - cum[y + 1] for y in range(L)]


def _bf_attempt_prob(params: ParameterSet, design: ItemDesign, j: int, uh, vh) -> float:
    s = int(np.argmax(design.loads_u[j]))
    z = float(params.attempt_slope_u[j]) * float(uh[s])
    if params.attempt_slope_v is not None and design.n_dim_v:
        t = int(np.argmax(design.loads_v[j]))
        z += float(params.attempt_slope_v[j]) * float(vh[t])
    z -= float(params.attempt_difficulty[j])
    return _bf_logistic(z)


def brute_force_pattern_probs(
    params: ParameterSet,
    design: ItemDesign,
    config: LatentConfig,
    x: Sequence[float],
    due: Sequence[bool] | None = None,
) -> Mapping[tuple[int, ...], float]:
    """Probability of every complete (indicator, response) pattern for a
    subject with covariates `x`, by direct enumeration over class pairs.

    Pattern keys hold one code per item: STRUCTURAL_MISSING for items not due,
    SKIPPED, or the answered category 1..L_j. Only feasible for small
    instances; guarded.
    """
    m = design.n_items
    if m > _MAX_BRUTE_ITEMS:
        raise EnumerationTooLargeError(f"brute force limited to {_MAX_BRUTE_ITEMS} items, got {m}")
    due = np.ones(m, dtype=bool) if due is None else np.asarray(due, dtype=bool)
    n_patterns = 1
    for j in range(m):
        n_patterns *= 1 + int(design.categories[j]) if due[j] else 1
    if n_patterns > _MAX_BRUTE_PATTERNS:
        raise EnumerationTooLargeError(f"{n_patterns} patterns exceed the enumeration cap")

    kU, kV = config.n_class_u, config.n_class_v
    lam = _bf_class_weights(x, params.memb_coef_u)
    pi = _bf_class_weights(x, params.memb_coef_v) if kV >= 2 else [1.0]

    states_per_item = [((STRUCTURAL_MISSING,) if not due[j] else (SKIPPED, *range(1, int(design.categories[j]) + 1))) for j in range(m)]

    patterns: list[tuple[int, ...]] = [()]
    for j in range(m):
        patterns = [p + (s,) for p in patterns for s in states_per_item[j]]

    out: dict[tuple[int, ...], float] = {}
    for pattern in patterns:
        total = 0.0
        for h_u in range(kU):
            uh = params.support_u[:, h_u]
            for h_v in range(kV):
                vh = params.support_v[:, h_v] if params.n_dim_v else np.zeros(0)
                prob = lam[h_u] * pi[h_v]
                for j, state in enumerate(pattern):
                    if state == STRUCTURAL_MISSING:
                        continue
                    q = _bf_attempt_prob(params, design, j, uh, vh)
                    if state == SKIPPED:
                        prob *= 1.0 - q
                    else:
                        prob *= q * _bf_category_probs(params, design, j, uh)[state - 1]
                total += prob
        out[pattern] = total
    return out


def brute_force_subject_logprob(
    params: ParameterSet, design: ItemDesign, config: LatentConfig, data: Dataset, subject: int
) -> float:
    """Direct-multiplication log-probability of one subject's observed row."""
    kU, kV = config.n_class_u, config.n_class_v
    lam = _bf_class_weights(data.covariates[subject], params.memb_coef_u)
    pi = _bf_class_weights(data.covariates[subject], params.memb_coef_v) if kV >= 2 else [1.0]
    total = 0.0
    for h_u in range(kU):
        uh = params.support_u[:, h_u]
        for h_v in range(kV):
            vh = params.support_v[:, h_v] if params.n_dim_v else np.zeros(0)
            prob = lam[h_u] * pi[h_v]
            for j in range(design.n_items):
                r = data.indicators[subject, j]
                if r == STRUCTURAL_MISSING:
                    continue
                q = _bf_attempt_prob(params, design, j, uh, vh)
                if r == SKIPPED:
                    prob *= 1.0 - q
                else:
                    prob *= q * _bf_category_probs(params, design, j, uh)[data.responses[subject, j] - 1]
            total += prob
    return math.log(total)


def brute_force_dataset_loglik(params: ParameterSet, design: ItemDesign, config: LatentConfig, data: Dataset) -> float:
    return sum(
        brute_force_subject_logprob(params, design, config, data, i) for i in range(data.n_subjects)
    )
