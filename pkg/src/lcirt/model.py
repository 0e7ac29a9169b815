"""Core data model: item design, latent configuration, datasets, parameters, constraints.

Two discrete latent traits drive the observables: an outcome trait (graded item
responses) and an attempt trait (binary indicators of whether an item was
attempted). Each item loads on exactly one dimension of each trait it measures.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .exceptions import InvalidDesignError, InvalidParameterError

# Response-indicator codes. STRUCTURAL_MISSING marks an item that was never due
# for the subject (contributes nothing to the likelihood); SKIPPED marks a due
# item the subject chose not to attempt; ANSWERED marks an attempted item with
# an observed graded response.
STRUCTURAL_MISSING = -1
SKIPPED = 0
ANSWERED = 1


def _as_readonly(a, dtype):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ItemDesign:
    """Confirmatory loading structure of the items.

    categories: per-item number of ordered response categories (>= 2).
    loads_u:    (m, S) binary matrix; row j marks the outcome dimension item j measures.
    loads_v:    (m, T) binary matrix for the attempt trait; shape (m, 0) disables it.
    anchor_items_u: one item index per outcome dimension (scale anchors).
    anchor_items_v: one item index per attempt dimension.
    group_labels: optional per-item block label (e.g. course of an exam group).
    """

    categories: np.ndarray
    loads_u: np.ndarray
    loads_v: np.ndarray
    anchor_items_u: np.ndarray
    anchor_items_v: np.ndarray
    item_names: tuple[str, ...] | None = None
    group_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "categories", _as_readonly(self.categories, np.int64))
        object.__setattr__(self, "loads_u", _as_readonly(np.atleast_2d(self.loads_u), np.int8))
        lv = np.asarray(self.loads_v)
        if lv.size == 0:
            lv = lv.reshape(self.categories.shape[0], 0)
        object.__setattr__(self, "loads_v", _as_readonly(lv, np.int8))
        object.__setattr__(self, "anchor_items_u", _as_readonly(self.anchor_items_u, np.int64))
        object.__setattr__(self, "anchor_items_v", _as_readonly(self.anchor_items_v, np.int64))
        m = self.categories.shape[0]
        if self.loads_u.shape[0] != m or self.loads_v.shape[0] != m:
            raise InvalidDesignError("loading matrices must have one row per item")
        if self.item_names is not None and len(self.item_names) != m:
            raise InvalidDesignError("item_names length must equal item count")
        if self.group_labels is not None and len(self.group_labels) != m:
            raise InvalidDesignError("group_labels length must equal item count")

    @property
    def n_items(self) -> int:
        return int(self.categories.shape[0])

    @property
    def n_dim_u(self) -> int:
        return int(self.loads_u.shape[1])

    @property
    def n_dim_v(self) -> int:
        return int(self.loads_v.shape[1])

    @property
    def max_categories(self) -> int:
        return int(self.categories.max())

    def dim_u_of(self) -> np.ndarray:
        """Outcome dimension index per item (valid designs only)."""
        return np.argmax(self.loads_u, axis=1)

    def dim_v_of(self) -> np.ndarray:
        return np.argmax(self.loads_v, axis=1) if self.n_dim_v else np.zeros(self.n_items, dtype=int)

    @property
    def groups(self) -> dict[str, tuple[int, ...]]:
        if self.group_labels is None:
            return {}
        out: dict[str, list[int]] = {}
        for j, g in enumerate(self.group_labels):
            out.setdefault(g, []).append(j)
        return {k: tuple(v) for k, v in out.items()}

    def name_of(self, j: int) -> str:
        return self.item_names[j] if self.item_names else f"item{j + 1}"

    def without_v(self) -> "ItemDesign":
        """Copy of the design with the attempt trait disabled."""
        return ItemDesign(
            categories=self.categories,
            loads_u=self.loads_u,
            loads_v=np.zeros((self.n_items, 0), dtype=np.int8),
            anchor_items_u=self.anchor_items_u,
            anchor_items_v=np.zeros(0, dtype=np.int64),
            item_names=self.item_names,
            group_labels=self.group_labels,
        )


def default_anchors(loads: np.ndarray) -> np.ndarray:
    """Lowest-indexed loading item per dimension."""
    n_dim = loads.shape[1]
    anchors = np.zeros(n_dim, dtype=np.int64)
    for d in range(n_dim):
        hits = np.flatnonzero(loads[:, d])
        if hits.size == 0:
            raise InvalidDesignError(f"no item loads on dimension {d + 1}")
        anchors[d] = hits[0]
    return anchors


@dataclass(frozen=True)
class LatentConfig:
    """Latent-class layout: dimensions and support-point counts per trait."""

    n_dim_u: int
    n_dim_v: int
    n_class_u: int
    n_class_v: int

    def __post_init__(self):
        if self.n_dim_u < 1 or self.n_class_u < 1 or self.n_dim_v < 0 or self.n_class_v < 1:
            raise InvalidDesignError("latent config counts out of range")
        if (self.n_dim_v == 0) != (self.n_class_v == 1):
            raise InvalidDesignError("attempt trait disabled iff n_dim_v == 0 and n_class_v == 1")


@dataclass(frozen=True)
class Dataset:
    """Observed data: graded responses, attempt indicators, covariates.

    responses:  (n, m) int; category in 1..L_j where answered, 0 elsewhere.
    indicators: (n, m) int; STRUCTURAL_MISSING / SKIPPED / ANSWERED.
    covariates: (n, C) float; the constant term is implicit, never stored.
    """

    responses: np.ndarray
    indicators: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] | None = None
    subject_ids: tuple[str, ...] | None = None
    meta: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "responses", _as_readonly(self.responses, np.int64))
        object.__setattr__(self, "indicators", _as_readonly(self.indicators, np.int64))
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(len(cov), -1)
        if cov.size == 0:
            cov = cov.reshape(self.responses.shape[0], 0)
        object.__setattr__(self, "covariates", _as_readonly(cov, float))
        if self.responses.shape != self.indicators.shape:
            raise InvalidDesignError("responses and indicators must have identical shape")
        if self.covariates.shape[0] != self.responses.shape[0]:
            raise InvalidDesignError("covariates must have one row per subject")

    @property
    def n_subjects(self) -> int:
        return int(self.responses.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.responses.shape[1])

    @property
    def n_covariates(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def due(self) -> np.ndarray:
        return self.indicators != STRUCTURAL_MISSING

    @property
    def answered(self) -> np.ndarray:
        return self.indicators == ANSWERED


@dataclass(frozen=True)
class ConstraintScheme:
    """Identification constraints plus optional restrictions.

    Anchor items pin the scale of each latent dimension: the outcome anchor has
    discrimination 1 and first threshold 0; the attempt anchor has attempt
    slope (V side) 1 and attempt difficulty 0 (only while the attempt trait is
    enabled). `tie_rep[j]` maps every item to the representative whose
    parameters it shares (identity when untied). `slope_u_zero` fixes every
    attempt slope on the outcome trait to zero (the ignorable-missingness
    restriction).
    """

    categories: np.ndarray
    n_dim_u: int
    n_dim_v: int
    n_class_u: int
    n_class_v: int
    n_covariates: int
    alpha_fixed: np.ndarray
    beta2_fixed: np.ndarray
    gv_fixed: np.ndarray
    delta_fixed: np.ndarray
    slope_u_zero: bool
    tie_rep: np.ndarray
    tie_groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        for name in ("categories", "alpha_fixed", "beta2_fixed", "gv_fixed", "delta_fixed", "tie_rep"):
            arr = getattr(self, name)
            dtype = bool if arr.dtype == bool or "fixed" in name else np.int64
            object.__setattr__(self, name, _as_readonly(arr, dtype))

    @property
    def n_items(self) -> int:
        return int(self.categories.shape[0])

    def is_rep(self, j: int) -> bool:
        return int(self.tie_rep[j]) == j

    # --- free-parameter layout -------------------------------------------
    # Block order: support_u, support_v, memb_coef_u, memb_coef_v, then item
    # blocks alpha, thresholds, attempt_slope_u, attempt_slope_v,
    # attempt_difficulty (representative items only).

    def _entries(self, names: Sequence[str] | None = None):
        """Yield (block, payload) for every free parameter, in pack order."""
        S, T, kU, kV, C = self.n_dim_u, self.n_dim_v, self.n_class_u, self.n_class_v, self.n_covariates
        for s in range(S):
            for h in range(kU):
                yield "support_u", (s, h)
        if kV >= 2:
            for t in range(T):
                for h in range(kV):
                    yield "support_v", (t, h)
        for h in range(kU - 1):
            for c in range(C + 1):
                yield "memb_coef_u", (h, c)
        for h in range(kV - 1):
            for c in range(C + 1):
                yield "memb_coef_v", (h, c)
        reps = [j for j in range(self.n_items) if self.is_rep(j)]
        for j in reps:
            if not self.alpha_fixed[j]:
                yield "discrimination", (j,)
        for j in reps:
            start = 1 if self.beta2_fixed[j] else 0
            for yi in range(start, int(self.categories[j]) - 1):
                yield "thresholds", (j, yi)
        if not self.slope_u_zero:
            for j in reps:
                yield "attempt_slope_u", (j,)
        if kV >= 2:
            for j in reps:
                if not self.gv_fixed[j]:
                    yield "attempt_slope_v", (j,)
        for j in reps:
            if kV == 1 or not self.delta_fixed[j]:
                yield "attempt_difficulty", (j,)

    def n_free(self) -> int:
        return sum(1 for _ in self._entries())

    def names(self, design: ItemDesign | None = None) -> list[str]:
        def iname(j):
            return design.name_of(j) if design is not None else f"item{j + 1}"

        out = []
        for block, idx in self._entries():
            if block == "support_u":
                out.append(f"support_u[dim{idx[0] + 1},class{idx[1] + 1}]")
            elif block == "support_v":
                out.append(f"support_v[dim{idx[0] + 1},class{idx[1] + 1}]")
            elif block == "memb_coef_u":
                out.append(f"memb_coef_u[class{idx[0] + 2},x{idx[1]}]")
            elif block == "memb_coef_v":
                out.append(f"memb_coef_v[class{idx[0] + 2},x{idx[1]}]")
            elif block == "thresholds":
                out.append(f"thresholds[{iname(idx[0])},cat{idx[1] + 2}]")
            else:
                out.append(f"{block}[{iname(idx[0])}]")
        return out

    def block_slices(self) -> dict[str, slice]:
        """Contiguous slice of the packed vector occupied by each block."""
        bounds: dict[str, list[int]] = {}
        for i, (block, _) in enumerate(self._entries()):
            bounds.setdefault(block, [i, i])[1] = i
        return {b: slice(lo, hi + 1) for b, (lo, hi) in bounds.items()}

    def pack(self, params: "ParameterSet") -> np.ndarray:
        arrays = _param_arrays(params)
        return np.array([arrays[block][idx] for block, idx in self._entries()], dtype=float)

    def unpack(self, template: "ParameterSet", vector: np.ndarray) -> "ParameterSet":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.n_free(),):
            raise InvalidParameterError(f"expected free vector of length {self.n_free()}")
        arrays = {k: np.array(v) for k, v in _param_arrays(template).items() if v is not None}
        for value, (block, idx) in zip(vector, self._entries()):
            arrays[block][idx] = value
        ps = replace(
            template,
            support_u=arrays["support_u"],
            support_v=arrays.get("support_v", template.support_v),
            memb_coef_u=arrays["memb_coef_u"],
            memb_coef_v=arrays["memb_coef_v"],
            discrimination=arrays["discrimination"],
            thresholds=arrays["thresholds"],
            attempt_slope_u=arrays["attempt_slope_u"],
            attempt_slope_v=arrays.get("attempt_slope_v", template.attempt_slope_v),
            attempt_difficulty=arrays["attempt_difficulty"],
        )
        return self.apply(ps)

    def apply(self, params: "ParameterSet") -> "ParameterSet":
        """Enforce anchors, restrictions and ties; returns a new ParameterSet."""
        alpha = np.array(params.discrimination)
        beta = np.array(params.thresholds)
        gu = np.array(params.attempt_slope_u)
        gv = None if params.attempt_slope_v is None else np.array(params.attempt_slope_v)
        delta = np.array(params.attempt_difficulty)
        for group in self.tie_groups:
            rep = int(self.tie_rep[group[0]])
            for j in group:
                alpha[j] = alpha[rep]
                beta[j] = beta[rep]
                gu[j] = gu[rep]
                if gv is not None:
                    gv[j] = gv[rep]
                delta[j] = delta[rep]
        alpha[self.alpha_fixed] = 1.0
        fixed_b2 = np.flatnonzero(self.beta2_fixed)
        beta[fixed_b2, 0] = 0.0
        if self.slope_u_zero:
            gu[:] = 0.0
        if self.n_class_v >= 2 and gv is not None:
            gv[self.gv_fixed] = 1.0
            delta[self.delta_fixed] = 0.0
        return replace(
            params,
            discrimination=alpha,
            thresholds=beta,
            attempt_slope_u=gu,
            attempt_slope_v=gv,
            attempt_difficulty=delta,
            constraints=self,
        )


def _param_arrays(params: "ParameterSet") -> dict[str, np.ndarray | None]:
    return {
        "support_u": params.support_u,
        "support_v": params.support_v,
        "memb_coef_u": params.memb_coef_u,
        "memb_coef_v": params.memb_coef_v,
        "discrimination": params.discrimination,
        "thresholds": params.thresholds,
        "attempt_slope_u": params.attempt_slope_u,
        "attempt_slope_v": params.attempt_slope_v,
        "attempt_difficulty": params.attempt_difficulty,
    }


@dataclass(frozen=True)
class ParameterSet:
    """All model parameters.

    support_u: (S, kU) support points of the outcome trait.
    support_v: (T, kV) support points of the attempt trait (T = 0 disables it).
    memb_coef_u: (kU-1, C+1) multinomial-logit coefficients (class 1 reference).
    memb_coef_v: (kV-1, C+1) likewise for the attempt trait.
    discrimination: (m,) graded-response slopes.
    thresholds: (m, Lmax-1) graded-response thresholds for categories 2..L_j,
        NaN-padded; nondecreasing within each item.
    attempt_slope_u: (m,) attempt-model slopes on the outcome trait.
    attempt_slope_v: (m,) attempt-model slopes on the attempt trait, or None.
    attempt_difficulty: (m,) attempt-model difficulties.
    """

    support_u: np.ndarray
    support_v: np.ndarray
    memb_coef_u: np.ndarray
    memb_coef_v: np.ndarray
    discrimination: np.ndarray
    thresholds: np.ndarray
    attempt_slope_u: np.ndarray
    attempt_slope_v: np.ndarray | None
    attempt_difficulty: np.ndarray
    constraints: ConstraintScheme | None = None
    standardized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "support_u", _as_readonly(np.atleast_2d(self.support_u), float))
        sv = np.asarray(self.support_v, dtype=float)
        if sv.size == 0:
            sv = sv.reshape(0, max(1, sv.shape[-1] if sv.ndim else 1))
        object.__setattr__(self, "support_v", _as_readonly(np.atleast_2d(sv) if sv.size else sv, float))
        for name in ("memb_coef_u", "memb_coef_v"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.size == 0:
                arr = arr.reshape(0, arr.shape[-1] if arr.ndim == 2 else 1)
            object.__setattr__(self, name, _as_readonly(arr, float))
        object.__setattr__(self, "discrimination", _as_readonly(self.discrimination, float))
        object.__setattr__(self, "thresholds", _as_readonly(np.atleast_2d(self.thresholds), float))
        object.__setattr__(self, "attempt_slope_u", _as_readonly(self.attempt_slope_u, float))
        if self.attempt_slope_v is not None:
            object.__setattr__(self, "attempt_slope_v", _as_readonly(self.attempt_slope_v, float))
        object.__setattr__(self, "attempt_difficulty", _as_readonly(self.attempt_difficulty, float))
        # tolerance admits finite-difference probes around tied thresholds;
        # category probabilities are floored, so such points stay evaluable
        diffs = np.diff(self.thresholds, axis=1)
        if np.any(diffs[~np.isnan(diffs)] < -1e-3):
            raise InvalidParameterError("thresholds must be nondecreasing within each item")

    @property
    def n_items(self) -> int:
        return int(self.discrimination.shape[0])

    @property
    def n_dim_u(self) -> int:
        return int(self.support_u.shape[0])

    @property
    def n_dim_v(self) -> int:
        return int(self.support_v.shape[0])

    @property
    def n_class_u(self) -> int:
        return int(self.support_u.shape[1])

    @property
    def n_class_v(self) -> int:
        return int(self.support_v.shape[1]) if self.support_v.shape[0] else 1

    @property
    def n_covariates(self) -> int:
        return int(self.memb_coef_u.shape[1]) - 1 if self.memb_coef_u.size else int(self.memb_coef_v.shape[1]) - 1 if self.memb_coef_v.size else 0


def build_constraints(
    design: ItemDesign,
    config: LatentConfig,
    n_covariates: int,
    ties: Sequence[Sequence[int]] | None = None,
    fix_attempt_slope_u: bool = False,
) -> ConstraintScheme:
    """Derive the identification scheme for a design/config pair."""
    m = design.n_items
    alpha_fixed = np.zeros(m, dtype=bool)
    beta2_fixed = np.zeros(m, dtype=bool)
    gv_fixed = np.zeros(m, dtype=bool)
    delta_fixed = np.zeros(m, dtype=bool)
    alpha_fixed[design.anchor_items_u] = True
    beta2_fixed[design.anchor_items_u] = True
    if config.n_class_v >= 2:
        gv_fixed[design.anchor_items_v] = True
        delta_fixed[design.anchor_items_v] = True

    tie_rep = np.arange(m, dtype=np.int64)
    tie_groups: list[tuple[int, ...]] = []
    if ties:
        seen: set[int] = set()
        for group in ties:
            group = tuple(sorted(int(j) for j in group))
            if len(group) < 2:
                continue
            if any(j in seen for j in group):
                raise InvalidDesignError("tie groups must be disjoint")
            seen.update(group)
            if len({int(design.categories[j]) for j in group}) != 1:
                raise InvalidDesignError("tied items must share the same category count")
            anchors = [j for j in group if alpha_fixed[j] or beta2_fixed[j] or gv_fixed[j] or delta_fixed[j]]
            if len(set(anchors)) > 1:
                raise InvalidDesignError("tie group contains two distinct anchor items")
            rep = anchors[0] if anchors else group[0]
            for j in group:
                tie_rep[j] = rep
            tie_groups.append(group)

    return ConstraintScheme(
        categories=design.categories,
        n_dim_u=config.n_dim_u,
        n_dim_v=config.n_dim_v,
        n_class_u=config.n_class_u,
        n_class_v=config.n_class_v,
        n_covariates=n_covariates,
        alpha_fixed=alpha_fixed,
        beta2_fixed=beta2_fixed,
        gv_fixed=gv_fixed,
        delta_fixed=delta_fixed,
        slope_u_zero=bool(fix_attempt_slope_u),
        tie_rep=tie_rep,
        tie_groups=tuple(tie_groups),
    )


def count_free_parameters(
    design: ItemDesign,
    config: LatentConfig,
    n_covariates: int,
    ties: Sequence[Sequence[int]] | None = None,
    fix_attempt_slope_u: bool = False,
) -> int:
    """Number of free parameters under the identification constraints.

    Outcome side: one slope plus L_j-1 thresholds per item, minus one slope and
    one threshold constraint per outcome dimension. Attempt side with the
    attempt trait enabled: three parameters per item minus one slope and one
    difficulty constraint per attempt dimension; disabled: the outcome slope
    and the difficulty stay free (2 per item, no constraints). Support points:
    every outcome point, plus every attempt point while enabled. Structural:
    (kU-1)(C+1) + (kV-1)(C+1).
    """
    m = design.n_items
    S, T = config.n_dim_u, config.n_dim_v
    kU, kV = config.n_class_u, config.n_class_v
    L = design.categories

    y_side = int(L.sum()) - 2 * S
    if kV >= 2:
        r_side = 3 * m - 2 * T
    else:
        r_side = 2 * m
    if fix_attempt_slope_u:
        r_side -= m
    support = S * kU + (T * kV if kV >= 2 else 0)
    structural = (kU - 1 + kV - 1) * (n_covariates + 1)

    total = y_side + r_side + support + structural

    scheme = build_constraints(design, config, n_covariates, ties=ties, fix_attempt_slope_u=fix_attempt_slope_u)
    for group in scheme.tie_groups:
        rep = int(scheme.tie_rep[group[0]])
        for j in group:
            if j == rep:
                continue
            per_item = int(L[j]) - (2 if (scheme.alpha_fixed[j] or scheme.beta2_fixed[j]) else 0)
            if kV >= 2:
                per_item += 3 - (2 if scheme.gv_fixed[j] else 0)
            else:
                per_item += 2
            if fix_attempt_slope_u:
                per_item -= 1
            total -= per_item
    return total


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_design(
    design: ItemDesign,
    config: LatentConfig,
    data: Dataset | None = None,
) -> ValidationReport:
    """Report-valued consistency check of design, config and (optionally) data."""
    bad: list[str] = []
    m = design.n_items

    if design.n_dim_u != config.n_dim_u:
        bad.append(f"design has {design.n_dim_u} outcome dimensions, config declares {config.n_dim_u}")
    if design.n_dim_v != config.n_dim_v:
        bad.append(f"design has {design.n_dim_v} attempt dimensions, config declares {config.n_dim_v}")
    if np.any(design.categories < 2):
        for j in np.flatnonzero(design.categories < 2):
            bad.append(f"item {j + 1} has fewer than 2 categories")
    if m == 0:
        bad.append("design has no items (no item loads only on one trait)")

    row_u = design.loads_u.sum(axis=1)
    for j in np.flatnonzero(row_u == 0):
        bad.append(f"item {j + 1} loads on no U-dimension")
    for j in np.flatnonzero(row_u > 1):
        bad.append(f"item {j + 1} loads on more than one U-dimension")
    if config.n_dim_v >= 1:
        row_v = design.loads_v.sum(axis=1)
        for j in np.flatnonzero(row_v == 0):
            bad.append(f"item {j + 1} loads on no V-dimension")
        for j in np.flatnonzero(row_v > 1):
            bad.append(f"item {j + 1} loads on more than one V-dimension")
        if design.anchor_items_v.shape[0] != design.n_dim_v:
            bad.append("one attempt anchor required per V-dimension")
        else:
            for t, j in enumerate(design.anchor_items_v):
                if not (0 <= j < m):
                    bad.append(f"V-anchor of dimension {t + 1} out of range")
                elif design.loads_v[j, t] != 1:
                    bad.append(f"V-anchor item {j + 1} does not load on dimension {t + 1}")

    if design.anchor_items_u.shape[0] != design.n_dim_u:
        bad.append("one outcome anchor required per U-dimension")
    else:
        for s, j in enumerate(design.anchor_items_u):
            if not (0 <= j < m):
                bad.append(f"U-anchor of dimension {s + 1} out of range")
            elif design.loads_u[j, s] != 1:
                bad.append(f"U-anchor item {j + 1} does not load on dimension {s + 1}")

    for s in range(design.n_dim_u):
        if design.loads_u[:, s].sum() == 0:
            bad.append(f"no item loads on U-dimension {s + 1}")

    if data is not None:
        if data.n_items != m:
            bad.append(f"dataset has {data.n_items} items, design has {m}")
        else:
            valid_codes = np.isin(data.indicators, (STRUCTURAL_MISSING, SKIPPED, ANSWERED))
            for i, j in zip(*np.nonzero(~valid_codes)):
                bad.append(f"subject {i + 1} item {j + 1}: invalid indicator code {data.indicators[i, j]}")
            ans = data.indicators == ANSWERED
            missing_y = ans & (data.responses == 0)
            for i, j in zip(*np.nonzero(missing_y)):
                bad.append(f"subject {i + 1} item {j + 1}: answered but response missing")
            out_of_range = ans & ((data.responses < 0) | (data.responses > design.categories[None, :])) & ~missing_y
            for i, j in zip(*np.nonzero(out_of_range)):
                bad.append(
                    f"subject {i + 1} item {j + 1}: response {data.responses[i, j]} outside 1..{design.categories[j]}"
                )
            not_ans = data.indicators != ANSWERED
            stray_y = not_ans & (data.responses != 0)
            for i, j in zip(*np.nonzero(stray_y)):
                bad.append(f"subject {i + 1} item {j + 1}: response present but item not answered")
            orphan = (data.indicators == STRUCTURAL_MISSING).all(axis=1)
            for i in np.flatnonzero(orphan):
                bad.append(f"subject {i + 1} has no due items")
        if not np.all(np.isfinite(data.covariates)):
            bad.append("covariates contain non-finite values")

    return ValidationReport(tuple(bad))


def canonicalize(params: ParameterSet) -> ParameterSet:
    """Resolve label switching: sort classes by support point (lexicographic
    over dimensions) and re-base the membership coefficients on the new
    reference class. Leaves the likelihood unchanged."""
    u, phi = _sort_side(params.support_u, params.memb_coef_u)
    if params.n_dim_v:
        v, psi = _sort_side(params.support_v, params.memb_coef_v)
    else:
        v, psi = params.support_v, params.memb_coef_v
    return replace(params, support_u=u, memb_coef_u=phi, support_v=v, memb_coef_v=psi)


def _sort_side(points: np.ndarray, coef: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = points.shape[1]
    if k <= 1:
        return points, coef
    perm = np.lexsort(points[::-1, :])
    if np.array_equal(perm, np.arange(k)):
        return points, coef
    new_points = points[:, perm]
    full = np.vstack([np.zeros((1, coef.shape[1])), coef])  # absolute logit rows
    full = full[perm] - full[perm[0]]
    return new_points, full[1:]
