"""Command-line interface.

Every command is a batch job: read files, compute, write files. All randomness
flows from --seed (default 0, never entropy), outputs embed the resolved
options, and repeated runs with identical inputs produce identical bytes.
Exit codes: 0 success, 1 user error (with a JSON error object on stderr),
2 internal error.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import click
import numpy as np

from . import io as lio
from .estimation import FitOptions, fit, marginal_loglik
from .exceptions import DataFormatError, InvalidDesignError, LcirtError
from .inference import (
    average_class_probs,
    bic,
    posterior_classify,
    predict_item_probs,
    select_grid,
    standard_errors,
    standardize,
    test_group_homogeneity,
    test_ignorability,
)
from .model import validate_design
from .simulate import generate


def _parse_int_range(text: str) -> list[int]:
    """Accept "2..5" (inclusive), "2,3,5", or a single integer."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo_i, hi_i = int(lo), int(hi)
        if hi_i < lo_i:
            raise DataFormatError(f"empty range {text!r}")
        return list(range(lo_i, hi_i + 1))
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _parse_float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _fit_options(max_iter, tol, restarts, seed, threads) -> FitOptions:
    return FitOptions(max_iter=max_iter, tol=tol, n_restarts=restarts, seed=seed, n_jobs=threads)


def _load_inputs(design_path, data_path):
    df = lio.load_design(design_path)
    data = lio.read_dataset(data_path, df)
    report = validate_design(df.design, df.config, data)
    if not report.ok:
        raise InvalidDesignError("; ".join(report.violations))
    return df, data


_fit_opts = [
    click.option("--max-iter", default=2000, show_default=True, type=int),
    click.option("--tol", default=1e-8, show_default=True, type=float),
    click.option("--restarts", default=10, show_default=True, type=int),
    click.option("--seed", default=0, show_default=True, type=int),
    click.option("--threads", default=1, show_default=True, type=int, help="parallel restarts"),
]


def _with_fit_opts(fn):
    for opt in reversed(_fit_opts):
        fn = opt(fn)
    return fn


@click.group()
def cli():
    """Latent-class IRT models with non-ignorable missingness."""


@cli.command("simulate")
@click.option("--design", "design_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--params", "params_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--n", required=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--grouped", is_flag=True, help="exam-by-group structural missingness from item groups")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def simulate_cmd(design_path, params_path, n, seed, grouped, out_path):
    """Generate a synthetic dataset from a design and a parameter file."""
    df = lio.load_design(design_path)
    params = lio.load_params(params_path)
    spec = []
    for col in df.covariates:
        if col.kind != "numeric":
            raise InvalidDesignError(
                f"covariate {col.name!r} is categorical; simulation needs numeric columns"
            )
        spec.append(col.simulate or ("bernoulli", 0.5))
    n_subgroups = None
    if grouped:
        groups = df.design.groups
        if not groups:
            raise InvalidDesignError("--grouped requires item group labels in the design file")
        sizes = {len(v) for v in groups.values()}
        if len(sizes) != 1:
            raise InvalidDesignError("--grouped requires equally sized item groups")
        n_subgroups = sizes.pop()
    dataset = generate(
        params, df.design, df.config, n=n, covariate_spec=tuple(spec), seed=seed, n_subgroups=n_subgroups
    )
    meta = {
        "command": "simulate",
        "design": str(design_path),
        "params": str(params_path),
        "n": n,
        "seed": seed,
        "grouped": bool(grouped),
    }
    dataset = replace(dataset, covariate_names=tuple(col.name for col in df.covariates), meta=meta)
    lio.write_dataset(out_path, dataset, df.design)
    click.echo(f"wrote {n} subjects to {out_path}")


@cli.command("fit")
@click.option("--design", "design_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--no-se", is_flag=True, help="skip standard errors")
@_with_fit_opts
def fit_cmd(design_path, data_path, out_path, no_se, max_iter, tol, restarts, seed, threads):
    """Fit the model; write raw and standardized parameters, SEs and BIC."""
    df, data = _load_inputs(design_path, data_path)
    options = _fit_options(max_iter, tol, restarts, seed, threads)
    result = fit(df.design, df.config, data, options)
    params_std = standardize(result.params, df.design, average_class_probs(result.params, data))
    se_report = None if no_se else standard_errors(result, df.design, data)
    payload = lio.fit_to_dict(
        result,
        df,
        params_std,
        se_report,
        bic(result.loglik, result.npar, data.n_subjects),
        options,
        data_sha256=lio.sha256_of(data_path),
    )
    lio.save_fit(out_path, payload)
    click.echo(
        f"loglik={result.loglik:.4f} n_par={result.npar} bic={payload['bic']:.4f} "
        f"converged={result.converged} -> {out_path}"
    )


@cli.command("select")
@click.option("--design", "design_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ku", "ku_text", required=True, help="e.g. 2..5 or 2,3,4")
@click.option("--kv", "kv_text", required=True, help="e.g. 1..3")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_with_fit_opts
def select_cmd(design_path, data_path, ku_text, kv_text, out_path, max_iter, tol, restarts, seed, threads):
    """Fit a grid of class counts and flag the BIC-minimal row."""
    df, data = _load_inputs(design_path, data_path)
    options = _fit_options(max_iter, tol, restarts, seed, threads)
    cells = select_grid(df.design, df.config, data, _parse_int_range(ku_text), _parse_int_range(kv_text), options)
    meta = {"command": "select", "ku": ku_text, "kv": kv_text, "options": asdict(options)}
    with Path(out_path).open("w", newline="") as fh:
        fh.write(f"# {lio.SELECT_SCHEMA} " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["k_u", "k_v", "loglik", "n_par", "bic", "selected"])
        for cell in cells:
            writer.writerow(
                [cell.n_class_u, cell.n_class_v, repr(cell.loglik), cell.npar, repr(cell.bic), int(cell.selected)]
            )
    best = next(c for c in cells if c.selected)
    click.echo(f"selected k_u={best.n_class_u} k_v={best.n_class_v} (bic={best.bic:.4f}) -> {out_path}")


@cli.command("test-ignorability")
@click.option("--design", "design_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_with_fit_opts
def test_ignorability_cmd(design_path, data_path, out_path, max_iter, tol, restarts, seed, threads):
    """LRT of ignorable missingness (all attempt slopes on the outcome trait zero)."""
    df, data = _load_inputs(design_path, data_path)
    options = _fit_options(max_iter, tol, restarts, seed, threads)
    report = test_ignorability(df.design, df.config, data, options)
    lio.save_report(out_path, lio.report_to_dict(report, "ignorability", options))
    click.echo(f"LRT={report.statistic:.3f} df={report.df} p={report.p_value:.4g} -> {out_path}")


@cli.command("test-homogeneity")
@click.option("--design", "design_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--block", required=True, help="item group label from the design file")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_with_fit_opts
def test_homogeneity_cmd(design_path, data_path, block, out_path, max_iter, tol, restarts, seed, threads):
    """LRT of equal item parameters across one item group."""
    df, data = _load_inputs(design_path, data_path)
    options = _fit_options(max_iter, tol, restarts, seed, threads)
    report = test_group_homogeneity(df.design, df.config, data, block, options)
    lio.save_report(out_path, lio.report_to_dict(report, "homogeneity", options, block=block))
    click.echo(f"LRT={report.statistic:.3f} df={report.df} p={report.p_value:.4g} -> {out_path}")


@cli.command("predict")
@click.option("--fit", "fit_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--u", "u_text", default="-1,0,1", show_default=True)
@click.option("--v", "v_text", default="-1,0,1", show_default=True)
@click.option("--tail-category", default=2, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def predict_cmd(fit_path, u_text, v_text, tail_category, out_path):
    """Predicted category/passing/attempt probability tables at chosen trait values."""
    payload = lio.load_fit(fit_path)
    df = lio.design_file_from_dict(payload["design"])
    params_std = lio.params_from_dict(payload["params_std"])
    u_values = _parse_float_list(u_text)
    v_values = _parse_float_list(v_text)
    tables = predict_item_probs(params_std, df.design, u_values, v_values, tail_category)
    ref_u = int(np.argmin(np.abs(np.asarray(tables.u_values))))
    header = ["item", "group"]
    Lmax = tables.category_probs.shape[2]
    header += [f"pr_cat{y + 1}_at_u{tables.u_values[ref_u]:g}" for y in range(Lmax)]
    header += [f"pass_at_u{u:g}" for u in tables.u_values]
    header += ["pass_range"]
    header += [f"attempt_at_u{u:g}_v0" for u in tables.u_values]
    header += [f"attempt_at_u0_v{v:g}" for v in tables.v_values]
    header += ["attempt_range_u", "attempt_range_v"]
    ref_v = int(np.argmin(np.abs(np.asarray(tables.v_values))))
    groups = df.design.group_labels or [""] * df.design.n_items
    with Path(out_path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j in range(df.design.n_items):
            row = [tables.item_names[j], groups[j]]
            row += [("" if np.isnan(x) else repr(float(x))) for x in tables.category_probs[j, ref_u]]
            row += [repr(float(x)) for x in tables.tail_probs[j]]
            row += [repr(float(tables.tail_range[j]))]
            row += [repr(float(x)) for x in tables.attempt_probs[j, :, ref_v]]
            row += [repr(float(x)) for x in tables.attempt_probs[j, ref_u, :]]
            row += [repr(float(tables.attempt_range_u[j])), repr(float(tables.attempt_range_v[j]))]
            writer.writerow(row)
    click.echo(f"wrote prediction tables for {df.design.n_items} items -> {out_path}")


@cli.command("classify")
@click.option("--fit", "fit_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def classify_cmd(fit_path, data_path, out_path):
    """MAP class assignments and posteriors per subject."""
    payload = lio.load_fit(fit_path)
    df = lio.design_file_from_dict(payload["design"])
    params = lio.params_from_dict(payload["params_raw"])
    data = lio.read_dataset(data_path, df)
    if payload["data"].get("sha256") == lio.sha256_of(data_path):
        ll = marginal_loglik(params, df.design, data)
        if abs(ll - payload["loglik"]) > 1e-6 * max(1.0, abs(ll)):
            raise DataFormatError(
                f"{fit_path}: loglik self-check failed: stored {payload['loglik']}, recomputed {ll}"
            )
    cls = posterior_classify(params, df.design, data)
    ids = data.subject_ids or tuple(f"s{i + 1}" for i in range(data.n_subjects))
    kU = cls.posterior_u.shape[1]
    kV = cls.posterior_v.shape[1]
    with Path(out_path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["subject", "map_u", "map_v"]
            + [f"pu_{h + 1}" for h in range(kU)]
            + [f"pv_{h + 1}" for h in range(kV)]
        )
        for i in range(data.n_subjects):
            writer.writerow(
                [ids[i], int(cls.map_u[i]) + 1, int(cls.map_v[i]) + 1]
                + [repr(float(x)) for x in cls.posterior_u[i]]
                + [repr(float(x)) for x in cls.posterior_v[i]]
            )
    click.echo(f"classified {data.n_subjects} subjects -> {out_path}")


def _emit_error(kind: str, message: str) -> None:
    click.echo(json.dumps({"error": {"type": kind, "message": message}}), err=True)


def main(argv=None) -> int:
    try:
        cli(args=argv, standalone_mode=False, prog_name="lcirt")
        return 0
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.UsageError as e:
        _emit_error("UsageError", e.format_message())
        return 1
    except click.ClickException as e:
        _emit_error(type(e).__name__, e.format_message())
        return 1
    except LcirtError as e:
        _emit_error(type(e).__name__, str(e))
        return 1
    except Exception as e:  # pragma: no cover - internal errors
        _emit_error(type(e).__name__, str(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())
