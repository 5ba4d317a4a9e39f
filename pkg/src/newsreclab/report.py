"""Report post-processing: tidy long-format CSV and rendered figures.

Takes one or more per-hour report CSVs, emits a long-format table
(run, hour, algorithm, metric, value) for downstream tooling, and renders
one line chart per metric plus an accuracy/novelty trade-off scatter to
PNG files next to the delimited output.
"""

from __future__ import annotations

import logging
import os
import re

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .harness import read_report_csv

log = logging.getLogger(__name__)


def _metric_columns(header):
    return [c for c in header if c not in ("hour", "algorithm", "n_measurements")]


def load_reports(paths):
    """[(label, header, rows)] for each per-hour report CSV."""
    reports = []
    expected = None
    for path in paths:
        header, rows = read_report_csv(path)
        if not {"hour", "algorithm"} <= set(header):
            raise ValueError(f"{path}: not a per-hour report (missing columns)")
        metrics = _metric_columns(header)
        if expected is None:
            expected = metrics
        elif metrics != expected:
            raise ValueError(
                f"{path}: metric columns {metrics} do not match {expected}"
            )
        label = os.path.splitext(os.path.basename(path))[0]
        reports.append((label, header, rows))
    return reports


def tidy_rows(reports):
    """Long-format rows: one (run, hour, algorithm, metric, value) each."""
    out = []
    for label, header, rows in reports:
        for row in rows:
            for metric in _metric_columns(header):
                out.append({
                    "run": label,
                    "hour": row["hour"],
                    "algorithm": row["algorithm"],
                    "metric": metric,
                    "value": row[metric],
                })
    return out


def write_tidy(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("run,hour,algorithm,metric,value\n")
        for row in rows:
            fh.write(
                f"{row['run']},{row['hour']},{row['algorithm']},"
                f"{row['metric']},{row['value']:.10g}\n"
            )


def _slug(metric):
    return re.sub(r"[^a-z0-9]+", "_", metric.lower().replace("@", "_at_")).strip("_")


def render_metric_figures(out_dir, reports):
    """One PNG per metric: value over evaluation hours, per algorithm."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if not reports:
        return paths
    metrics = _metric_columns(reports[0][1])
    multiple_runs = len(reports) > 1
    for metric in metrics:
        fig, ax = plt.subplots(figsize=(7.5, 4.2))
        for label, _, rows in reports:
            by_alg = {}
            for row in rows:
                by_alg.setdefault(row["algorithm"], []).append(
                    (row["hour"], row[metric])
                )
            for algorithm, points in sorted(by_alg.items()):
                points.sort()
                name = f"{label}:{algorithm}" if multiple_runs else algorithm
                ax.plot([p[0] for p in points], [p[1] for p in points],
                        marker="o", markersize=3, linewidth=1.2, label=name)
        ax.set_xlabel("hour")
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} per evaluation hour")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{_slug(metric)}.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def render_sweep_figure(out_dir, sweep_rows, accuracy_col, novelty_col):
    """Accuracy/novelty trade-off scatter across the regularization sweep."""
    os.makedirs(out_dir, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    xs = [row[novelty_col] for row in sweep_rows]
    ys = [row[accuracy_col] for row in sweep_rows]
    ax.plot(xs, ys, "-o", color="tab:blue")
    for row, x, y in zip(sweep_rows, xs, ys):
        ax.annotate(f"β={row['beta']:g}", (x, y), fontsize=8,
                    textcoords="offset points", xytext=(5, 4))
    ax.set_xlabel(novelty_col)
    ax.set_ylabel(accuracy_col)
    ax.set_title("accuracy vs novelty across the regularization sweep")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = os.path.join(out_dir, "beta_tradeoff.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
