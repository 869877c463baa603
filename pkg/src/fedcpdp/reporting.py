"""Report persistence: full-precision JSON, paper-style percentage
tables, per-round CSV series, and matplotlib figures.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .experiment import ComparisonTable, ExperimentReport

METRICS = ("precision", "recall", "f1", "auc")


def percent(value) -> str:
    """Render a [0, 1] metric as a two-decimal percentage string."""
    return "" if value is None else f"{100 * value:.2f}"


def emit_report(report: ExperimentReport, outdir) -> dict[str, Path]:
    """Write report.json / summary.txt / rounds.csv plus round-series
    figures; returns the written paths. Non-figure outputs are
    byte-stable for fixed inputs."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}

    paths["json"] = outdir / "report.json"
    payload = {
        "config": report.config,
        "test_project": report.test_project,
        "repeats": report.repeats,
        "mean": report.mean,
        "std": report.std,
        "round_series": report.round_series,
        "round_log": report.round_log,
    }
    paths["json"].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    paths["summary"] = outdir / "summary.txt"
    lines = [
        f"project: {report.test_project}",
        f"mode: {report.config['mode']}  algorithm: {report.config['algorithm']}",
        "metric      " + "".join(f"{m:>12}" for m in METRICS),
        "mean (%)    " + "".join(f"{percent(report.mean.get(m)):>12}" for m in METRICS),
        "std (%)     " + "".join(f"{percent(report.std.get(m)):>12}" for m in METRICS),
    ]
    for i, rep in enumerate(report.repeats):
        lines.append(f"repeat {i:<5}" + "".join(f"{percent(rep.get(m)):>12}" for m in METRICS))
    paths["summary"].write_text("\n".join(lines) + "\n", encoding="utf-8")

    paths["rounds"] = outdir / "rounds.csv"
    with open(paths["rounds"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["repeat", "round", *METRICS])
        for repeat, series in enumerate(report.round_series):
            for round_no, row in enumerate(series, start=1):
                writer.writerow([repeat, round_no, *[repr(row[m]) for m in METRICS]])

    for metric in ("f1", "auc"):
        paths[f"fig_{metric}"] = _round_figure(report, metric, outdir / f"rounds_{metric}.png")
    return paths


def _round_figure(report: ExperimentReport, metric: str, path: Path) -> Path:
    series = np.array([[row[metric] for row in rep] for rep in report.round_series])
    rounds = np.arange(1, series.shape[1] + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    for rep in series:
        ax.plot(rounds, 100 * rep, color="steelblue", alpha=0.3, linewidth=0.8)
    ax.plot(rounds, 100 * series.mean(axis=0), color="crimson", linewidth=1.8, label="mean over repeats")
    ax.set_xlabel("communication round")
    ax.set_ylabel(f"{metric.upper()} (%)")
    ax.set_title(f"{report.test_project}: {report.config['mode']} / {report.config['algorithm']}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def load_report(path) -> ExperimentReport:
    """Inverse of emit_report's JSON output."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return ExperimentReport(
        config=payload["config"],
        test_project=payload["test_project"],
        repeats=payload["repeats"],
        mean=payload["mean"],
        std=payload["std"],
        round_series=payload["round_series"],
        round_log=payload.get("round_log", []),
    )


def render_comparison(tables: Sequence[ComparisonTable]) -> str:
    """Paper-table-style significance text: per-project rows plus an
    Avg. & W/T/L summary row per baseline."""
    blocks = []
    for table in tables:
        lines = [
            f"baseline: {table.baseline}  metric: {table.metric}",
            f"{'project':<16}{'ours (%)':>10}{'base (%)':>10}{'p-value':>10}  verdict",
        ]
        for row in table.rows:
            lines.append(
                f"{row.project:<16}{percent(row.mean_ours):>10}{percent(row.mean_baseline):>10}"
                f"{row.p_value:>10.4f}  {row.verdict}"
            )
        w, t, l = table.wtl
        lines.append(
            f"{'Avg. & W/T/L':<16}{percent(table.avg_ours):>10}{percent(table.avg_baseline):>10}"
            f"{'':>10}  {w}/{t}/{l}"
        )
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def emit_comparison(tables: Sequence[ComparisonTable], outdir) -> dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    text_path = outdir / "comparison.txt"
    text_path.write_text(render_comparison(tables), encoding="utf-8")
    csv_path = outdir / "comparison.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["baseline", "metric", "project", "mean_ours", "mean_baseline", "p_value", "verdict"])
        for table in tables:
            for row in table.rows:
                writer.writerow([
                    table.baseline, table.metric, row.project,
                    repr(row.mean_ours), repr(row.mean_baseline), repr(row.p_value), row.verdict,
                ])
    return {"text": text_path, "csv": csv_path}
