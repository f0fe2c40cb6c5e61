"""Command-line front end: validate, estimate, simulate.

Exit codes: 0 success, 1 internal error, 2 input/validation error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
import traceback
from pathlib import Path

from . import __version__
from .errors import ConfigError, FetwfeError, InputError
from .panel import CohortCounts, PanelDataset, cohort_counts, load_panel, validate_rank_preconditions
from .pipeline import estimate
from .simulate import (
    PRESETS,
    load_sim_config,
    metrics_to_csv,
    metrics_to_json,
    preset_config,
    run_study,
)
from .solver import SolverConfig


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, inputs: list,
                    outputs: list, started: float) -> Path:
    manifest = {
        "command": command,
        "resolved_config": config,
        "input_digests": {str(p): _sha256(p) for p in inputs},
        "library_version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
        "outputs": [str(p) for p in outputs],
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("FETWFE_THREADS")
    return int(env) if env else 1


def _read_split_counts(path, data: PanelDataset) -> CohortCounts:
    """CSV with header cohort,count; cohort in source time labels, 0 = never."""
    label_to_r = {data.source_cohort_label(r): r for r in data.cohorts}
    n_0 = None
    n_r: dict[int, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            label = float(row["cohort"])
            count = int(row["count"])
            if label == 0:
                n_0 = count
            elif label in label_to_r:
                n_r[label_to_r[label]] = count
            else:
                raise InputError(f"split-counts cohort {label} is not a panel cohort")
    if n_0 is None or set(n_r) != set(data.cohorts):
        raise InputError(
            "split-counts file must cover the never-treated group (cohort=0) "
            "and every panel cohort"
        )
    return CohortCounts(n_0=n_0, n_r=n_r, n_tau=sum(n_r.values()))


def _read_weights(path, data: PanelDataset) -> dict:
    """CSV with header r,t,weight; r and t in source time labels."""
    label_to_r = {data.source_cohort_label(r): r for r in data.cohorts}
    time_to_t = {lab: i + 1 for i, lab in enumerate(data.time_labels)}
    weights = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            r = label_to_r.get(float(row["r"]))
            t = time_to_t.get(float(row["t"]))
            if r is None or t is None:
                raise InputError(f"weights row refers to unknown cell {dict(row)}")
            weights[(r, t)] = float(row["weight"])
    return weights


def cmd_validate(args) -> int:
    started = time.time()
    data = load_panel(args.csv, drop_always_treated=args.drop_always_treated)
    report = validate_rank_preconditions(data)
    counts = cohort_counts(data)
    print(
        f"panel ok: N={data.n_units} T={data.n_times} "
        f"cohorts={len(data.cohorts)} d={data.n_covariates} "
        f"never-treated={counts.n_0}"
    )
    for f in report.findings:
        print(f"[{f.severity}] {f.code}: {f.message}")
    if report.ok and not report.findings:
        print("no findings")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = report.to_dict()
        payload["panel"] = {
            "n_units": data.n_units,
            "n_times": data.n_times,
            "cohorts": [data.source_cohort_label(r) for r in data.cohorts],
            "d": data.n_covariates,
        }
        report_path = out_dir / "validation.json"
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
        _write_manifest(
            out_dir, "validate", {"drop_always_treated": args.drop_always_treated},
            [args.csv], [report_path], started,
        )
    return 0 if report.ok else 2


def _summary_text(data: PanelDataset, result) -> str:
    rep = result.report
    layout = result.design.layout
    lines = []
    lines.append("fused extended two-way fixed effects estimate")
    lines.append("=" * 46)
    lines.append(
        f"units: {data.n_units}  times: {data.n_times}  "
        f"cohorts: {len(data.cohorts)}  covariates: {data.n_covariates}  "
        f"p: {layout.p}"
    )
    lines.append(
        f"sigma^2: {result.vc.sigma_sq:.6g}  sigma_c^2: {result.vc.sigma_c_sq:.6g}  "
        f"({result.vc.source})"
    )
    lines.append(
        f"selected lambda: {result.fit.lam:.6g}  q: {result.fit.q}  "
        f"support: {result.fit.support_size}/{layout.p}  BIC: {result.fit.bic:.4f}"
    )
    lines.append("")
    if rep.overall_ci is not None:
        lines.append(
            f"overall ATT: {rep.overall_att:.6g}  "
            f"{rep.overall_ci_kind} CI: [{rep.overall_ci[0]:.6g}, "
            f"{rep.overall_ci[1]:.6g}]  (se {rep.overall_se:.6g})"
        )
    else:
        lines.append(f"overall ATT: {rep.overall_att:.6g}  CI: degenerate")
    lines.append("")
    lines.append("cohort ATT (equal time weights):")
    for r in layout.cohorts:
        label = data.source_cohort_label(r)
        ci = rep.cohort_ci.get(r)
        tail = (
            f"se {rep.cohort_se[r]:.6g}  CI [{ci[0]:.6g}, {ci[1]:.6g}]"
            if ci
            else "CI degenerate"
        )
        lines.append(f"  cohort {label:g} (t={r}): {rep.cohort_att[r]: .6g}   {tail}")
    lines.append("")
    lines.append("tau(r, t):")
    for (r, t) in sorted(rep.att_rt):
        label = data.source_cohort_label(r)
        lines.append(f"  r={label:g} t={data.time_labels[t - 1]:g}: {rep.att_rt[(r, t)]: .6g}")
    lines.append("")
    lines.append(f"trends diagnostic (all time-covariate coefs zero): {rep.ciun_flag}")
    for note in rep.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def cmd_estimate(args) -> int:
    started = time.time()
    data = load_panel(args.csv, drop_always_treated=args.drop_always_treated)
    report = validate_rank_preconditions(data)
    if not report.ok:
        for f in report.findings:
            print(f"[{f.severity}] {f.code}: {f.message}", file=sys.stderr)
        return 2
    solver = SolverConfig(
        q=args.q,
        lambda_grid_size=args.grid_size,
        lambda_min_ratio=args.lambda_min_ratio,
        ridge_lambda2=args.ridge_lambda2,
    )
    split = _read_split_counts(args.split_counts, data) if args.split_counts else None
    weights = _read_weights(args.weights, data) if args.weights else None
    result = estimate(
        data,
        solver=solver,
        sigma_sq=args.sigma_sq,
        sigma_c_sq=args.sigma_c_sq,
        alpha=args.alpha,
        split_counts=split,
        custom_weights=weights,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    payload = result.report.to_dict()
    payload["source_labels"] = {
        "cohorts": {str(r): data.source_cohort_label(r) for r in data.cohorts},
        "times": list(data.time_labels),
    }
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
    summary = _summary_text(data, result)
    summary_path = out_dir / "summary.txt"
    summary_path.write_text(summary, encoding="utf-8")
    print(summary)
    inputs = [args.csv] + ([args.split_counts] if args.split_counts else [])
    if args.weights:
        inputs.append(args.weights)
    config = {
        "q": args.q,
        "grid_size": args.grid_size,
        "lambda_min_ratio": args.lambda_min_ratio,
        "sigma_sq": args.sigma_sq,
        "sigma_c_sq": args.sigma_c_sq,
        "alpha": args.alpha,
        "ridge_lambda2": args.ridge_lambda2,
        "drop_always_treated": args.drop_always_treated,
        "split_counts": args.split_counts,
        "weights": args.weights,
    }
    _write_manifest(out_dir, "estimate", config, inputs, [report_path, summary_path], started)
    return 0


def cmd_simulate(args) -> int:
    started = time.time()
    if (args.config is None) == (args.preset is None):
        raise ConfigError("give exactly one of --config or --preset")
    if args.config:
        config = load_sim_config(args.config)
    else:
        config = preset_config(args.preset)
    overrides = {}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.competitors_raw:
        overrides["competitors_raw"] = True
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)
    metrics = run_study(config, threads=_threads(args))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "metrics.json"
    csv_path = out_dir / "metrics.csv"
    metrics_to_json(metrics, json_path)
    metrics_to_csv(metrics, csv_path)
    cfg = metrics.to_dict()["config"]
    _write_manifest(
        out_dir, "simulate", cfg,
        [args.config] if args.config else [], [json_path, csv_path], started,
    )
    print(f"replicates: {metrics.n_replicates} (skipped {metrics.n_skipped})")
    for m, (mean, se) in metrics.att_sq_err.items():
        print(f"att squared error {m}: {mean:.6g} ({se:.3g})")
    print(
        f"selection: {metrics.selection_overall[0]:.4f}  "
        f"recall: {metrics.selection_recall[0]:.4f}"
    )
    print(f"coverage conservative: {metrics.coverage_conservative[0]:.4f}")
    print(f"coverage exact: {metrics.coverage_exact[0]:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fetwfe",
        description="Fused extended two-way fixed effects for staggered adoptions",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    pv = sub.add_parser("validate", help="check a panel CSV")
    pv.add_argument("csv")
    pv.add_argument("--drop-always-treated", action="store_true")
    pv.add_argument("--out", default=None, help="directory for the JSON report")
    pv.set_defaults(func=cmd_validate)

    pe = sub.add_parser("estimate", help="fit the estimator on a panel CSV")
    pe.add_argument("csv")
    pe.add_argument("--q", type=float, default=0.5)
    pe.add_argument("--grid-size", type=int, default=100)
    pe.add_argument("--lambda-min-ratio", type=float, default=1e-4)
    pe.add_argument("--sigma-sq", type=float, default=None)
    pe.add_argument("--sigma-c-sq", type=float, default=None)
    pe.add_argument("--alpha", type=float, default=0.05)
    pe.add_argument("--ridge-lambda2", type=float, default=0.0)
    pe.add_argument("--drop-always-treated", action="store_true")
    pe.add_argument("--split-counts", default=None, help="cohort,count CSV")
    pe.add_argument("--weights", default=None, help="r,t,weight CSV aggregate")
    pe.add_argument("--out", default="fetwfe_estimate")
    pe.set_defaults(func=cmd_estimate)

    ps = sub.add_parser("simulate", help="run a Monte Carlo study")
    ps.add_argument("--config", default=None, help="TOML or JSON study config")
    ps.add_argument("--preset", default=None, choices=sorted(PRESETS))
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--threads", type=int, default=None,
                    help="defaults to FETWFE_THREADS or 1")
    ps.add_argument("--competitors-raw", action="store_true",
                    help="fit competitors on untransformed data")
    ps.add_argument("--out", default="fetwfe_simulate")
    ps.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FetwfeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
