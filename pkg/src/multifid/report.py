"""Render experiment results: Markdown tables and SVG figures.

Reads the ``results.csv`` produced by the runner, recomputes per-cell
aggregates independently, and emits a ``report.md`` whose tables mirror
the benchmark layout (mean and standard deviation per metric, best value
per design size in bold).  ELBO-trace files and one-dimensional
prediction-curve files found next to the results are turned into SVG
plots (mean curve with a +/-2 sigma band).
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import SchemaMismatch

_EXPECTED_HEADER = [
    "problem", "model", "hf_size", "rep", "seed",
    "r2", "rmse", "mnll", "train_seconds", "max_jitter", "warnings",
]


def read_results(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows or rows[0] != _EXPECTED_HEADER:
        raise SchemaMismatch(f"{path}: unexpected results header")
    if len(rows) < 2:
        raise SchemaMismatch(f"{path}: no result rows")
    out = []
    for raw in rows[1:]:
        if len(raw) != len(_EXPECTED_HEADER):
            raise SchemaMismatch(f"{path}: wrong column count in row {raw!r}")
        out.append(
            {
                "problem": raw[0],
                "model": raw[1],
                "hf_size": int(raw[2]),
                "rep": int(raw[3]),
                "seed": int(raw[4]),
                "r2": float(raw[5]),
                "rmse": float(raw[6]),
                "mnll": float(raw[7]),
                "train_seconds": float(raw[8]),
                "max_jitter": float(raw[9]),
                "warnings": raw[10],
            }
        )
    return out


def summary_markdown(summary) -> str:
    """Markdown tables from aggregate rows (one table per problem)."""
    lines = []
    problems = sorted({e["problem"] for e in summary})
    for prob in problems:
        sub = [e for e in summary if e["problem"] == prob]
        lines.append(f"## {prob}\n")
        lines.append(
            "| HF size | model | mean R2 | std R2 | mean RMSE | std RMSE "
            "| mean MNLL | std MNLL |"
        )
        lines.append("|---|---|---|---|---|---|---|---|")
        for size in sorted({e["hf_size"] for e in sub}):
            cells = [e for e in sub if e["hf_size"] == size]
            best_rmse = min(
                (e["rmse_mean"] for e in cells if np.isfinite(e["rmse_mean"])),
                default=np.nan,
            )
            best_mnll = min(
                (e["mnll_mean"] for e in cells if np.isfinite(e["mnll_mean"])),
                default=np.nan,
            )
            best_r2 = max(
                (e["r2_mean"] for e in cells if np.isfinite(e["r2_mean"])),
                default=np.nan,
            )
            for e in sorted(cells, key=lambda e: e["model"]):
                def cell(value, best):
                    txt = f"{value:.4g}"
                    return f"**{txt}**" if np.isfinite(value) and value == best else txt

                lines.append(
                    f"| {size} | {e['model']} | {cell(e['r2_mean'], best_r2)} "
                    f"| {e['r2_std']:.4g} | {cell(e['rmse_mean'], best_rmse)} "
                    f"| {e['rmse_std']:.4g} | {cell(e['mnll_mean'], best_mnll)} "
                    f"| {e['mnll_std']:.4g} |"
                )
        lines.append("")
    return "\n".join(lines) + "\n"


def render_report(results_csv, out_dir) -> dict:
    """Write report.md plus SVG plots; returns paths of produced files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .experiment import _aggregate

    results_csv = Path(results_csv)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = read_results(results_csv)
    summary = _aggregate(rows)
    report_path = out / "report.md"
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# Experiment report\n\n")
        fh.write(summary_markdown(summary))
    produced = {"report": str(report_path), "figures": []}

    base = results_csv.parent
    for trace_file in sorted((base / "traces").glob("*.csv")) if (base / "traces").is_dir() else []:
        data = np.genfromtxt(trace_file, delimiter=",", names=True)
        if data.size == 0:
            continue
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(np.atleast_1d(data["iteration"]), np.atleast_1d(data["elbo"]))
        ax.set_xlabel("iteration")
        ax.set_ylabel("ELBO")
        ax.set_title(trace_file.stem)
        fig.tight_layout()
        dest = out / f"trace_{trace_file.stem}.svg"
        fig.savefig(dest)
        plt.close(fig)
        produced["figures"].append(str(dest))

    pred_dir = base / "predictions"
    for pred_file in sorted(pred_dir.glob("*.csv")) if pred_dir.is_dir() else []:
        data = np.genfromtxt(pred_file, delimiter=",", names=True)
        if data.size == 0:
            continue
        x = np.atleast_1d(data["x"])
        mean = np.atleast_1d(data["mean"])
        sd = np.sqrt(np.maximum(np.atleast_1d(data["var"]), 0.0))
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.fill_between(x, mean - 2 * sd, mean + 2 * sd, alpha=0.3, label="+/-2 sigma")
        ax.plot(x, mean, label="prediction")
        ax.plot(x, np.atleast_1d(data["truth"]), "k.", ms=2, label="truth")
        ax.legend(fontsize=7)
        ax.set_title(pred_file.stem)
        fig.tight_layout()
        dest = out / f"pred_{pred_file.stem}.svg"
        fig.savefig(dest)
        plt.close(fig)
        produced["figures"].append(str(dest))
    return produced
