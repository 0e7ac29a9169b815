"""Shared builders for small test models."""

from __future__ import annotations

import numpy as np
import pytest

from lcirt import (
    Dataset,
    FitResult,
    ItemDesign,
    LatentConfig,
    ParameterSet,
    build_constraints,
)


def make_design(m, L=3, with_v=True, groups=None, names=None):
    """Unidimensional design: every item loads dimension 1 of each trait,
    anchors at item 0."""
    return ItemDesign(
        categories=np.full(m, L) if np.isscalar(L) else np.asarray(L),
        loads_u=np.ones((m, 1), dtype=int),
        loads_v=np.ones((m, 1), dtype=int) if with_v else np.zeros((m, 0), dtype=int),
        anchor_items_u=np.array([0]),
        anchor_items_v=np.array([0]) if with_v else np.zeros(0, dtype=int),
        item_names=tuple(names) if names else None,
        group_labels=tuple(groups) if groups else None,
    )


def make_config(design, ku, kv):
    return LatentConfig(design.n_dim_u, design.n_dim_v, ku, kv)


def make_params(design, config, n_covariates=1, seed=0, spread=1.2):
    """Random valid parameter set: ordered thresholds, anchors applied."""
    rng = np.random.default_rng(seed)
    m = design.n_items
    S, T = config.n_dim_u, config.n_dim_v
    kU, kV = config.n_class_u, config.n_class_v
    Lmax = design.max_categories
    u = np.sort(rng.normal(0.0, spread, size=(S, kU)), axis=1)
    v = np.sort(rng.normal(0.0, spread, size=(T, kV)), axis=1) if T else np.zeros((0, max(kV, 1)))
    beta = np.full((m, Lmax - 1), np.nan)
    for j in range(m):
        L = int(design.categories[j])
        start = rng.normal(-0.6, 0.4)
        gaps = rng.uniform(0.4, 1.0, size=L - 2)
        beta[j, : L - 1] = start + np.concatenate([[0.0], np.cumsum(gaps)])
    for j in design.anchor_items_u:
        beta[j] -= beta[j, 0]  # keep gaps; the anchor's first threshold is fixed at 0
    scheme = build_constraints(design, config, n_covariates)
    params = ParameterSet(
        support_u=u,
        support_v=v,
        memb_coef_u=rng.normal(0.0, 0.5, size=(kU - 1, n_covariates + 1)),
        memb_coef_v=rng.normal(0.0, 0.5, size=(kV - 1, n_covariates + 1)),
        discrimination=rng.uniform(0.7, 1.8, size=m),
        thresholds=beta,
        attempt_slope_u=rng.uniform(0.5, 1.5, size=m),
        attempt_slope_v=rng.uniform(0.5, 1.5, size=m) if kV >= 2 else None,
        attempt_difficulty=rng.normal(0.0, 0.6, size=m),
    )
    return scheme.apply(params)


def make_dataset(design, rng_or_seed=0, n=6, all_states=True):
    """Small handcrafted dataset exercising all three indicator states."""
    rng = np.random.default_rng(rng_or_seed) if np.isscalar(rng_or_seed) else rng_or_seed
    m = design.n_items
    indicators = rng.choice([-1, 0, 1], size=(n, m), p=[0.2, 0.3, 0.5])
    for i in range(n):
        if np.all(indicators[i] == -1):
            indicators[i, rng.integers(m)] = 1
    responses = np.zeros((n, m), dtype=int)
    for i in range(n):
        for j in range(m):
            if indicators[i, j] == 1:
                responses[i, j] = rng.integers(1, design.categories[j] + 1)
    covariates = rng.integers(0, 2, size=(n, 1)).astype(float)
    return Dataset(responses=responses, indicators=indicators, covariates=covariates)


def fake_fit(loglik, npar, params=None, n_obs=100):
    """FitResult shell for arithmetic-only tests (BIC/LRT)."""
    if params is None:
        design = make_design(1, L=2, with_v=False)
        config = make_config(design, 1, 1)
        params = make_params(design, config, n_covariates=0)
    return FitResult(
        params=params,
        loglik=loglik,
        trace=(loglik,),
        npar=npar,
        converged=True,
        iterations=1,
        seed=0,
        restart_index=0,
        n_obs=n_obs,
    )


@pytest.fixture
def small_model():
    """m=4, L=3, kU=kV=2 design with a well-separated truth."""
    design = make_design(4, L=3, groups=("a", "a", "b", "b"))
    config = make_config(design, 2, 2)
    scheme = build_constraints(design, config, 1)
    true = scheme.apply(
        ParameterSet(
            support_u=np.array([[-1.0, 1.0]]),
            support_v=np.array([[-1.0, 1.0]]),
            memb_coef_u=np.array([[0.4, -0.6]]),
            memb_coef_v=np.array([[-0.3, 0.8]]),
            discrimination=np.array([1.0, 1.2, 0.8, 1.4]),
            thresholds=np.array([[0.0, 1.0], [-0.8, 0.6], [-0.5, 0.9], [-1.0, 0.2]]),
            attempt_slope_u=np.array([0.8, 1.1, 0.6, 1.0]),
            attempt_slope_v=np.array([1.0, 1.2, 0.8, 1.0]),
            attempt_difficulty=np.array([0.0, -0.4, 0.5, -0.6]),
        )
    )
    return design, config, true
