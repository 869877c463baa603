"""Command-line front end: run one experiment, sweep a hyperparameter,
run the ablation ladder, or compare emitted reports.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import reporting
from .evaluation import aggregate_rounds, rounds_to_target
from .experiment import ExperimentConfig, compare_methods, load_datasets, run_experiment

SWEEP_PARAMS = {
    "R": ("participation_ratio", float),
    "N": ("distill_steps", int),
    "p": ("sample_size", int),
}


def _default_outdir(cli_value):
    if cli_value:
        return Path(cli_value)
    return Path(os.environ.get("FEDCPDP_RESULTS", "results"))


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config)
    for name in ("mode", "algorithm", "test_project", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    return config


def cmd_run(args) -> int:
    config = _load_config(args)
    report = run_experiment(config)
    outdir = _default_outdir(args.out) / f"{config.test_project}_{config.mode}_{config.algorithm}"
    paths = reporting.emit_report(report, outdir)
    if args.targets:
        _emit_rounds_to_target(report, args.targets, outdir)
    print(f"wrote {paths['json']}")
    print(f"mean F1 {reporting.percent(report.mean['f1'])}%  AUC {reporting.percent(report.mean['auc'])}%")
    return 0


def _emit_rounds_to_target(report, targets, outdir):
    """Communication-efficiency cells: mean rounds to stably reach each
    F1 target, censored ('>T') when any repeat never stabilizes."""
    horizon = report.config["rounds"]
    rows = []
    for target in targets:
        per_repeat = [
            rounds_to_target([r["f1"] for r in series], target)
            for series in report.round_series
        ]
        rows.append([report.test_project, f"{100 * target:.1f}%", aggregate_rounds(per_repeat, horizon)])
    path = Path(outdir) / "rounds_to_target.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["project", "target_f1", "rounds"])
        writer.writerows(rows)
    for project, target, cell in rows:
        print(f"rounds to F1>={target} on {project}: {cell}")
    return path


def cmd_sweep(args) -> int:
    config = _load_config(args)
    field, cast = SWEEP_PARAMS[args.param]
    values = [cast(v) for v in args.values.split(",")]
    datasets = load_datasets(config)
    outdir = _default_outdir(args.out) / f"sweep_{args.param}_{config.test_project}"
    outdir.mkdir(parents=True, exist_ok=True)

    results = []
    for value in values:
        cfg = dataclasses.replace(config, **{field: value})
        report = run_experiment(cfg, datasets)
        results.append((value, report.mean["f1"], report.mean["auc"]))
        print(f"{args.param}={value}: F1 {reporting.percent(report.mean['f1'])}%  "
              f"AUC {reporting.percent(report.mean['auc'])}%")

    with open(outdir / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([args.param, "f1", "auc"])
        writer.writerows([v, repr(f1), repr(auc)] for v, f1, auc in results)

    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [r[0] for r in results]
    ax.plot(xs, [100 * r[1] for r in results], marker="o", label="F1")
    ax.plot(xs, [100 * r[2] for r in results], marker="s", label="AUC")
    ax.set_xlabel(args.param)
    ax.set_ylabel("metric (%)")
    ax.set_title(f"{config.test_project}: sweep over {args.param}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(outdir / "sweep.png", dpi=120)
    plt.close(fig)
    print(f"wrote {outdir / 'sweep.csv'}")
    return 0


def cmd_ablate(args) -> int:
    """Ablation ladder: full method, distillation without correlation
    factors (uniform teacher weights), and plain averaging."""
    config = _load_config(args)
    datasets = load_datasets(config)
    outdir = _default_outdir(args.out) / f"ablation_{config.test_project}_{config.algorithm}"
    outdir.mkdir(parents=True, exist_ok=True)
    variants = [
        ("FedDP", dataclasses.replace(config, mode="FedDP", use_correlation=True)),
        ("no-factor", dataclasses.replace(config, mode="FedDP", use_correlation=False)),
        ("FLR", dataclasses.replace(config, mode="FLR")),
    ]
    rows = []
    for name, cfg in variants:
        report = run_experiment(cfg, datasets)
        reporting.emit_report(report, outdir / name)
        rows.append([name, *[repr(report.mean[m]) for m in reporting.METRICS]])
        print(f"{name:<10} F1 {reporting.percent(report.mean['f1'])}%  "
              f"AUC {reporting.percent(report.mean['auc'])}%")
    with open(outdir / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", *reporting.METRICS])
        writer.writerows(rows)
    return 0


def cmd_compare(args) -> int:
    reports = {}
    for spec in args.reports:
        name, _, pattern = spec.partition("=")
        if not pattern:
            raise ValueError(f"--reports entries look like NAME=GLOB, got {spec!r}")
        files = sorted(Path().glob(pattern)) if not Path(pattern).is_file() else [Path(pattern)]
        if not files:
            raise FileNotFoundError(f"no report files match {pattern!r}")
        reports.setdefault(name, []).extend(reporting.load_report(f) for f in files)
    tables = compare_methods(reports, ours=args.ours, metric=args.metric)
    outdir = _default_outdir(args.out)
    paths = reporting.emit_comparison(tables, outdir)
    print(reporting.render_comparison(tables))
    print(f"wrote {paths['text']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcpdp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config file (.json or .yaml)")
        p.add_argument("--out", default=None, help="results directory (default $FEDCPDP_RESULTS or ./results)")
        p.add_argument("--mode", default=None, choices=["Centralized", "FLR", "OpenFLR", "FedDP"])
        p.add_argument("--algorithm", default=None, choices=["FedAvg", "FedProx"])
        p.add_argument("--test-project", dest="test_project", default=None)
        p.add_argument("--seed", type=int, default=None)

    p_run = sub.add_parser("run", help="run one configured experiment")
    common(p_run)
    p_run.add_argument("--targets", type=float, nargs="*", default=None,
                       help="F1 targets (fractions) for rounds-to-target output")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="vary R, N, or p and replot")
    common(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_ablate = sub.add_parser("ablate", help="full / no-factor / plain-averaging ladder")
    common(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_compare = sub.add_parser("compare", help="significance tables from emitted reports")
    p_compare.add_argument("--reports", nargs="+", required=True, metavar="NAME=GLOB")
    p_compare.add_argument("--ours", required=True, help="method name treated as ours")
    p_compare.add_argument("--metric", default="f1", choices=["precision", "recall", "f1", "auc"])
    p_compare.add_argument("--out", default=None)
    p_compare.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # emit a machine-readable error record
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
