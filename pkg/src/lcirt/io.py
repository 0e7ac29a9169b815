"""File formats: design files, parameter files, dataset CSV, fit and report JSON.

All formats are versioned. Parse failures raise DataFormatError carrying the
file position. Files written here are byte-deterministic for fixed inputs
(floats via repr, sorted JSON keys, no timestamps).
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .estimation import FitOptions, FitResult
from .exceptions import DataFormatError, InvalidDesignError
from .inference import StandardErrorReport, TestReport, bic
from .model import (
    ANSWERED,
    SKIPPED,
    STRUCTURAL_MISSING,
    Dataset,
    ItemDesign,
    LatentConfig,
    ParameterSet,
)

DESIGN_SCHEMA = "lcirt-design/v1"
PARAMS_SCHEMA = "lcirt-params/v1"
DATA_SCHEMA = "lcirt-data/v1"
FIT_SCHEMA = "lcirt-fit/v1"
REPORT_SCHEMA = "lcirt-report/v1"
SELECT_SCHEMA = "lcirt-select/v1"

MISSING_TOKEN = "NA"


@dataclass(frozen=True)
class CovariateColumn:
    """One declared covariate: numeric passes through, categorical is
    dummy-coded against its reference level at ingestion."""

    name: str
    kind: str = "numeric"
    levels: tuple[str, ...] | None = None
    reference: str | None = None
    simulate: tuple | None = None

    def expanded_names(self) -> list[str]:
        if self.kind == "numeric":
            return [self.name]
        return [f"{self.name}={lvl}" for lvl in self.levels if lvl != self.reference]


@dataclass(frozen=True)
class DesignFile:
    """Parsed design file: loading structure, latent layout, covariate coding."""

    design: ItemDesign
    config: LatentConfig
    covariates: tuple[CovariateColumn, ...]

    def expanded_covariate_names(self) -> list[str]:
        out: list[str] = []
        for col in self.covariates:
            out.extend(col.expanded_names())
        return out

    @property
    def n_covariates(self) -> int:
        return len(self.expanded_covariate_names())


def _ctx(path, where, msg) -> DataFormatError:
    return DataFormatError(f"{path}: {where}: {msg}")


def _need(obj: dict, key: str, path, where):
    if key not in obj:
        raise _ctx(path, where, f"missing field {key!r}")
    return obj[key]


def load_design(path) -> DesignFile:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    return design_file_from_dict(raw, path)


def design_file_from_dict(raw: dict, path="<design>") -> DesignFile:
    if raw.get("schema") != DESIGN_SCHEMA:
        raise _ctx(path, "schema", f"expected {DESIGN_SCHEMA!r}, got {raw.get('schema')!r}")

    latent = _need(raw, "latent", path, "top level")
    try:
        config = LatentConfig(
            n_dim_u=int(_need(latent, "n_dim_u", path, "latent")),
            n_dim_v=int(_need(latent, "n_dim_v", path, "latent")),
            n_class_u=int(_need(latent, "n_class_u", path, "latent")),
            n_class_v=int(_need(latent, "n_class_v", path, "latent")),
        )
    except InvalidDesignError as e:
        raise _ctx(path, "latent", str(e)) from e

    items = _need(raw, "items", path, "top level")
    if not isinstance(items, list) or not items:
        raise _ctx(path, "items", "must be a nonempty list")
    m = len(items)
    categories = np.zeros(m, dtype=int)
    loads_u = np.zeros((m, config.n_dim_u), dtype=np.int8)
    loads_v = np.zeros((m, config.n_dim_v), dtype=np.int8)
    names = []
    group_labels = []
    anchor_flags_u: dict[int, list[int]] = {}
    anchor_flags_v: dict[int, list[int]] = {}
    for j, item in enumerate(items):
        where = f"items[{j}]"
        names.append(str(_need(item, "name", path, where)))
        categories[j] = int(_need(item, "categories", path, where))
        du = int(_need(item, "dim_u", path, where))
        if not 1 <= du <= config.n_dim_u:
            raise _ctx(path, where, f"dim_u {du} outside 1..{config.n_dim_u}")
        loads_u[j, du - 1] = 1
        if config.n_dim_v >= 1:
            dv = int(_need(item, "dim_v", path, where))
            if not 1 <= dv <= config.n_dim_v:
                raise _ctx(path, where, f"dim_v {dv} outside 1..{config.n_dim_v}")
            loads_v[j, dv - 1] = 1
            if item.get("anchor_v"):
                anchor_flags_v.setdefault(dv - 1, []).append(j)
        if item.get("anchor_u"):
            anchor_flags_u.setdefault(du - 1, []).append(j)
        group_labels.append(str(item["group"]) if "group" in item else "")
    if len(set(names)) != m:
        raise _ctx(path, "items", "item names must be unique")

    def resolve_anchors(flags, loads, label):
        n_dim = loads.shape[1]
        anchors = np.zeros(n_dim, dtype=int)
        for d in range(n_dim):
            flagged = flags.get(d, [])
            if len(flagged) > 1:
                raise _ctx(path, "items", f"multiple {label} anchors declared for dimension {d + 1}")
            if flagged:
                anchors[d] = flagged[0]
            else:
                hits = np.flatnonzero(loads[:, d])
                if hits.size == 0:
                    raise _ctx(path, "items", f"no item loads on {label} dimension {d + 1}")
                anchors[d] = hits[0]
        return anchors

    anchors_u = resolve_anchors(anchor_flags_u, loads_u, "outcome")
    anchors_v = resolve_anchors(anchor_flags_v, loads_v, "attempt") if config.n_dim_v else np.zeros(0, dtype=int)

    cov_cols: list[CovariateColumn] = []
    for c, col in enumerate(raw.get("covariates", [])):
        where = f"covariates[{c}]"
        name = str(_need(col, "name", path, where))
        kind = str(col.get("kind", "numeric"))
        if kind == "numeric":
            sim = col.get("simulate")
            sim_t = None
            if sim is not None:
                dist = str(_need(sim, "dist", path, f"{where}.simulate"))
                if dist == "bernoulli":
                    sim_t = ("bernoulli", float(_need(sim, "p", path, f"{where}.simulate")))
                elif dist == "uniform":
                    sim_t = ("uniform", float(_need(sim, "low", path, f"{where}.simulate")), float(_need(sim, "high", path, f"{where}.simulate")))
                elif dist == "normal":
                    sim_t = ("normal", float(_need(sim, "mean", path, f"{where}.simulate")), float(_need(sim, "sd", path, f"{where}.simulate")))
                else:
                    raise _ctx(path, f"{where}.simulate", f"unknown dist {dist!r}")
            cov_cols.append(CovariateColumn(name=name, kind="numeric", simulate=sim_t))
        elif kind == "categorical":
            levels = tuple(str(v) for v in _need(col, "levels", path, where))
            reference = str(col.get("reference", levels[0]))
            if reference not in levels:
                raise _ctx(path, where, f"reference {reference!r} not among levels")
            cov_cols.append(CovariateColumn(name=name, kind="categorical", levels=levels, reference=reference))
        else:
            raise _ctx(path, where, f"unknown covariate kind {kind!r}")

    design = ItemDesign(
        categories=categories,
        loads_u=loads_u,
        loads_v=loads_v,
        anchor_items_u=anchors_u,
        anchor_items_v=anchors_v,
        item_names=tuple(names),
        group_labels=tuple(group_labels) if any(group_labels) else None,
    )
    return DesignFile(design=design, config=config, covariates=tuple(cov_cols))


def design_file_to_dict(df: DesignFile) -> dict:
    items = []
    dim_u = df.design.dim_u_of()
    dim_v = df.design.dim_v_of()
    for j in range(df.design.n_items):
        item = {
            "name": df.design.name_of(j),
            "categories": int(df.design.categories[j]),
            "dim_u": int(dim_u[j]) + 1,
        }
        if df.config.n_dim_v >= 1:
            item["dim_v"] = int(dim_v[j]) + 1
            if j in df.design.anchor_items_v:
                item["anchor_v"] = True
        if j in df.design.anchor_items_u:
            item["anchor_u"] = True
        if df.design.group_labels is not None:
            item["group"] = df.design.group_labels[j]
        items.append(item)
    covs = []
    for col in df.covariates:
        entry: dict = {"name": col.name, "kind": col.kind}
        if col.kind == "categorical":
            entry["levels"] = list(col.levels)
            entry["reference"] = col.reference
        elif col.simulate is not None:
            dist = col.simulate[0]
            if dist == "bernoulli":
                entry["simulate"] = {"dist": "bernoulli", "p": col.simulate[1]}
            elif dist == "uniform":
                entry["simulate"] = {"dist": "uniform", "low": col.simulate[1], "high": col.simulate[2]}
            else:
                entry["simulate"] = {"dist": "normal", "mean": col.simulate[1], "sd": col.simulate[2]}
        covs.append(entry)
    return {
        "schema": DESIGN_SCHEMA,
        "latent": {
            "n_dim_u": df.config.n_dim_u,
            "n_dim_v": df.config.n_dim_v,
            "n_class_u": df.config.n_class_u,
            "n_class_v": df.config.n_class_v,
        },
        "items": items,
        "covariates": covs,
    }


def save_design(path, df: DesignFile) -> None:
    Path(path).write_text(json.dumps(design_file_to_dict(df), indent=2, sort_keys=True) + "\n")


# --- parameters ------------------------------------------------------------------


def params_to_dict(params: ParameterSet) -> dict:
    return {
        "schema": PARAMS_SCHEMA,
        "n_covariates": params.n_covariates,
        "support_u": np.asarray(params.support_u).tolist(),
        "support_v": np.asarray(params.support_v).tolist(),
        "memb_coef_u": np.asarray(params.memb_coef_u).tolist(),
        "memb_coef_v": np.asarray(params.memb_coef_v).tolist(),
        "discrimination": np.asarray(params.discrimination).tolist(),
        "thresholds": [
            [None if np.isnan(x) else x for x in row] for row in np.asarray(params.thresholds)
        ],
        "attempt_slope_u": np.asarray(params.attempt_slope_u).tolist(),
        "attempt_slope_v": None
        if params.attempt_slope_v is None
        else np.asarray(params.attempt_slope_v).tolist(),
        "attempt_difficulty": np.asarray(params.attempt_difficulty).tolist(),
        "standardized": params.standardized,
    }


def params_from_dict(raw: dict, path="<params>") -> ParameterSet:
    if raw.get("schema") != PARAMS_SCHEMA:
        raise _ctx(path, "schema", f"expected {PARAMS_SCHEMA!r}, got {raw.get('schema')!r}")
    ncol = int(raw.get("n_covariates", 0)) + 1
    thresholds = np.array(
        [[np.nan if x is None else float(x) for x in row] for row in raw["thresholds"]]
    )
    sv = np.asarray(raw["support_v"], dtype=float)
    if sv.size == 0:
        sv = sv.reshape(0, 1)

    def coef(key):
        arr = np.asarray(raw[key], dtype=float)
        return arr.reshape(0, ncol) if arr.size == 0 else arr

    return ParameterSet(
        support_u=np.asarray(raw["support_u"], dtype=float),
        support_v=sv,
        memb_coef_u=coef("memb_coef_u"),
        memb_coef_v=coef("memb_coef_v"),
        discrimination=np.asarray(raw["discrimination"], dtype=float),
        thresholds=thresholds,
        attempt_slope_u=np.asarray(raw["attempt_slope_u"], dtype=float),
        attempt_slope_v=None
        if raw.get("attempt_slope_v") is None
        else np.asarray(raw["attempt_slope_v"], dtype=float),
        attempt_difficulty=np.asarray(raw["attempt_difficulty"], dtype=float),
        standardized=bool(raw.get("standardized", False)),
    )


def save_params(path, params: ParameterSet) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params), indent=2, sort_keys=True) + "\n")


def load_params(path) -> ParameterSet:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    return params_from_dict(raw, path)


# --- dataset CSV ------------------------------------------------------------------


def _format_float(x: float) -> str:
    return repr(float(x))


def expected_header(df: DesignFile) -> list[str]:
    header = ["subject"]
    header.extend(col.name for col in df.covariates)
    for j in range(df.design.n_items):
        name = df.design.name_of(j)
        header.extend([f"R_{name}", f"Y_{name}"])
    return header


def read_dataset(path, design_file: DesignFile) -> Dataset:
    """Parse and validate a dataset CSV against a design file.

    Layout: subject id, declared covariate columns, then R_<item>, Y_<item>
    pairs. R in {NA,0,1}, Y in {NA,1..L}. Categorical covariates hold level
    strings and are dummy-coded here. Subjects with every item structurally
    missing are rejected with their row numbers."""
    path = Path(path)
    df = design_file
    design = df.design
    m = design.n_items
    meta = None

    rows: list[list[str]] = []
    line_nums: list[int] = []
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#"):
                if meta is None and line.startswith(f"# {DATA_SCHEMA} "):
                    try:
                        meta = json.loads(line[len(f"# {DATA_SCHEMA} ") :])
                    except json.JSONDecodeError as e:
                        raise DataFormatError(f"{path}: line {lineno}: bad metadata: {e.msg}") from e
                continue
            rows.append(next(csv.reader([line])))
            line_nums.append(lineno)
    if not rows:
        raise DataFormatError(f"{path}: empty file")

    header, data_rows = rows[0], rows[1:]
    want = expected_header(df)
    if header != want:
        raise DataFormatError(
            f"{path}: line {line_nums[0]}: header mismatch: expected {want}, got {header}"
        )

    n = len(data_rows)
    exp_names = df.expanded_covariate_names()
    covariates = np.zeros((n, len(exp_names)))
    responses = np.zeros((n, m), dtype=np.int64)
    indicators = np.full((n, m), STRUCTURAL_MISSING, dtype=np.int64)
    subject_ids = []

    for i, row in enumerate(data_rows):
        lineno = line_nums[i + 1]
        if len(row) != len(want):
            raise DataFormatError(
                f"{path}: row at line {lineno}: expected {len(want)} cells, got {len(row)}"
            )
        subject_ids.append(row[0])
        pos = 1
        cpos = 0
        for col in df.covariates:
            cell = row[pos].strip()
            if col.kind == "numeric":
                try:
                    covariates[i, cpos] = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: row at line {lineno}, column {col.name}: not a number: {cell!r}"
                    ) from None
                cpos += 1
            else:
                if cell not in col.levels:
                    raise DataFormatError(
                        f"{path}: row at line {lineno}, column {col.name}: unknown level {cell!r}"
                    )
                for lvl in col.levels:
                    if lvl == col.reference:
                        continue
                    covariates[i, cpos] = 1.0 if cell == lvl else 0.0
                    cpos += 1
            pos += 1
        for j in range(m):
            r_cell = row[pos].strip()
            y_cell = row[pos + 1].strip()
            r_col, y_col = want[pos], want[pos + 1]
            pos += 2
            if r_cell == MISSING_TOKEN:
                r = STRUCTURAL_MISSING
            elif r_cell in ("0", "1"):
                r = SKIPPED if r_cell == "0" else ANSWERED
            else:
                raise DataFormatError(
                    f"{path}: row at line {lineno}, column {r_col}: expected NA, 0 or 1, got {r_cell!r}"
                )
            if y_cell == MISSING_TOKEN:
                y = 0
            else:
                try:
                    y = int(y_cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: row at line {lineno}, column {y_col}: expected NA or integer, got {y_cell!r}"
                    ) from None
            L = int(design.categories[j])
            if r == ANSWERED:
                if y == 0:
                    raise DataFormatError(
                        f"{path}: row at line {lineno}, column {y_col}: item answered but response is NA"
                    )
                if not 1 <= y <= L:
                    raise DataFormatError(
                        f"{path}: row at line {lineno}, column {y_col}: response {y} outside 1..{L}"
                    )
            elif y != 0:
                raise DataFormatError(
                    f"{path}: row at line {lineno}, column {y_col}: response present but {r_col} is {r_cell}"
                )
            indicators[i, j] = r
            responses[i, j] = y

    orphan_lines = [line_nums[i + 1] for i in range(n) if np.all(indicators[i] == STRUCTURAL_MISSING)]
    if orphan_lines:
        raise DataFormatError(
            f"{path}: subjects with no due items at lines: {', '.join(map(str, orphan_lines))}"
        )

    return Dataset(
        responses=responses,
        indicators=indicators,
        covariates=covariates,
        covariate_names=tuple(exp_names),
        subject_ids=tuple(subject_ids),
        meta=meta,
    )


def write_dataset(path, dataset: Dataset, design: ItemDesign, covariate_names=None) -> None:
    """Write a dataset CSV (numeric covariate columns, expanded names)."""
    path = Path(path)
    m = design.n_items
    names = list(covariate_names or dataset.covariate_names or [f"x{c + 1}" for c in range(dataset.n_covariates)])
    lines = []
    if dataset.meta is not None:
        lines.append(f"# {DATA_SCHEMA} " + json.dumps(dataset.meta, sort_keys=True))
    header = ["subject"] + names
    for j in range(m):
        header.extend([f"R_{design.name_of(j)}", f"Y_{design.name_of(j)}"])
    lines.append(",".join(header))
    ids = dataset.subject_ids or tuple(f"s{i + 1}" for i in range(dataset.n_subjects))
    for i in range(dataset.n_subjects):
        cells = [ids[i]]
        cells.extend(_format_float(x) for x in dataset.covariates[i])
        for j in range(m):
            r = dataset.indicators[i, j]
            cells.append(MISSING_TOKEN if r == STRUCTURAL_MISSING else str(int(r)))
            y = dataset.responses[i, j]
            cells.append(MISSING_TOKEN if y == 0 else str(int(y)))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def dataset_covariate_design(dataset: Dataset, design_file: DesignFile) -> DesignFile:
    """Design file whose covariates match a written (expanded, numeric) dataset."""
    cols = tuple(CovariateColumn(name=n) for n in (dataset.covariate_names or []))
    return DesignFile(design=design_file.design, config=design_file.config, covariates=cols)


# --- fit and report JSON -----------------------------------------------------------


def sha256_of(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _se_section(names, values, ses, flags) -> dict:
    return {
        "names": list(names),
        "values": [float(x) for x in values],
        "se": [None if not np.isfinite(x) else float(x) for x in ses],
        "flags": list(flags),
    }


def fit_to_dict(
    result: FitResult,
    design_file: DesignFile,
    params_std: ParameterSet,
    se_report: StandardErrorReport | None,
    bic_value: float,
    options: FitOptions,
    data_sha256: str | None = None,
) -> dict:
    out = {
        "schema": FIT_SCHEMA,
        "design": design_file_to_dict(design_file),
        "options": asdict(options),
        "seed": result.seed,
        "restart_index": result.restart_index,
        "restart_logliks": [float(x) for x in result.restart_logliks],
        "data": {"n": result.n_obs, "sha256": data_sha256},
        "loglik": float(result.loglik),
        "n_par": int(result.npar),
        "bic": float(bic_value),
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "caps_hit": int(result.caps_hit),
        "trace": [float(x) for x in result.trace],
        "params_raw": params_to_dict(result.params),
        "params_std": params_to_dict(params_std),
    }
    if se_report is not None:
        out["se_raw"] = _se_section(se_report.names, se_report.values, se_report.se, se_report.flags)
        out["se_std"] = _se_section(
            se_report.std_names, se_report.std_values, se_report.std_se, se_report.std_flags
        )
        out["hessian_rel_asymmetry"] = float(se_report.hessian_rel_asymmetry)
    return out


def save_fit(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_fit(path) -> dict:
    """Load a fit file and self-check its BIC arithmetic."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    if raw.get("schema") != FIT_SCHEMA:
        raise _ctx(path, "schema", f"expected {FIT_SCHEMA!r}, got {raw.get('schema')!r}")
    want = bic(raw["loglik"], raw["n_par"], raw["data"]["n"])
    if abs(want - raw["bic"]) > 1e-6 * max(1.0, abs(want)):
        raise _ctx(path, "bic", f"self-check failed: stored {raw['bic']}, recomputed {want}")
    return raw


def report_to_dict(report: TestReport, test: str, options: FitOptions, block: str | None = None) -> dict:
    out = {
        "schema": REPORT_SCHEMA,
        "test": test,
        "loglik_full": float(report.loglik_full),
        "loglik_restricted": float(report.loglik_restricted),
        "statistic": float(report.statistic),
        "df": int(report.df),
        "p_value": float(report.p_value),
        "options": asdict(options),
    }
    if block is not None:
        out["block"] = block
    return out


def save_report(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
