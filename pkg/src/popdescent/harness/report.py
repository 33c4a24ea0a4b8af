"""Report writers: per-trial CSV, trace CSV, markdown summary, convergence plot."""
from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ConfigError
from .experiment import TrialReport


def ema(series: Sequence[float], lam: float) -> np.ndarray:
    """Exponential moving average with ``ema[0] = x[0]`` and ``ema[t] = lam*x[t] + (1-lam)*ema[t-1]``."""
    if not 0 < lam <= 1:
        raise ValueError("lam must lie in (0, 1]")
    x = np.asarray(series, dtype=np.float64)
    out = np.empty_like(x)
    if x.size == 0:
        return out
    out[0] = x[0]
    for t in range(1, x.size):
        out[t] = lam * x[t] + (1.0 - lam) * out[t - 1]
    return out


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    if isinstance(value, (list, tuple)):
        return json.dumps(list(value))
    return str(value)


def write_results_csv(report: TrialReport, path: Path) -> None:
    rows = sorted(report.rows, key=lambda r: (r["seed"], report.methods.index(r["method"])))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(report.columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in report.columns])


def write_traces_csv(report: TrialReport, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "seed", "gradient_steps", "cv_loss"])
        for (method, seed), trace in sorted(report.traces.items(), key=lambda kv: (kv[0][1], report.methods.index(kv[0][0]))):
            for steps, loss in trace:
                writer.writerow([method, seed, steps, _fmt(float(loss))])


def _pm(mean: float, sd: float) -> str:
    if math.isnan(mean):
        return "n/a"
    return f"{mean:.4f} ± {sd:.4f}"


def summary_markdown(report: TrialReport) -> str:
    lines = [f"# {report.mode} results", ""]
    if report.data_source:
        lines += [f"Data: {report.data_source}. Seeds: {', '.join(str(s) for s in report.seeds)}.", ""]
    if report.mode == "sample-dist":
        lines += ["| Sampler | Seeds | P(low) | P(high) | median log10 | sd log10 |", "|---|---|---|---|---|---|"]
        for method in report.methods:
            rows = [r for r in report.rows if r["method"] == method]
            cells = []
            for col in ("p_low", "p_high", "log10_median", "log10_sd"):
                vals = np.array([r[col] for r in rows], dtype=np.float64)
                cells.append("n/a" if np.all(np.isnan(vals)) else f"{np.mean(vals):.4f}")
            lines.append(f"| {method} | {len(rows)} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    agg = report.aggregates()
    flags = report.summary.get("ablation_flags")
    if flags:
        header = "| Variant | Randomization | CV Selection | Regularization | Test Loss ± σ | Train Loss ± σ | Gradient Steps |"
        lines += [header, "|---|---|---|---|---|---|---|"]
    else:
        lines += ["| Method | Test Loss ± σ | Train Loss ± σ | Gradient Steps | Failed |", "|---|---|---|---|---|"]
    for method in report.methods:
        a = agg[method]
        steps = "n/a" if math.isnan(a["gradient_steps_mean"]) else f"{int(round(a['gradient_steps_mean'])):,}"
        test = _pm(a["test_loss_mean"], a["test_loss_sd"])
        train = _pm(a["train_loss_mean"], a["train_loss_sd"])
        if flags:
            r, c, g = flags[method]
            lines.append(f"| {method} | {r} | {c} | {g} | {test} | {train} | {steps} |")
        else:
            lines.append(f"| {method} | {test} | {train} | {steps} | {a['n_failed']} |")
    sens = report.summary.get("sensitivity")
    if sens:
        lines += ["", "| Method | Median per-seed σ across sweep | Mean test loss |", "|---|---|---|"]
        for method, s in sens.items():
            lines.append(f"| {method} | {s['median_sd']:.4f} | {s['mean_test_loss']:.4f} |")
    failed = [r for r in report.rows if r.get("status") != "ok"]
    if failed:
        lines += ["", "Failures:", ""]
        lines += [f"- {r['method']} seed {r['seed']}: {r['error']}" for r in failed]
    return "\n".join(lines) + "\n"


def convergence_curves(report: TrialReport, lam: float, points: int = 200) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per method: a common step grid, mean EMA-smoothed CV loss across seeds, and its sd."""
    out = {}
    for method in report.methods:
        traces = [report.traces[(method, s)] for s in report.seeds if report.traces.get((method, s))]
        if not traces:
            continue
        end = min(t[-1][0] for t in traces)
        grid = np.linspace(0, end, points)
        curves = []
        for t in traces:
            steps = np.array([p[0] for p in t], dtype=np.float64)
            smooth = ema([p[1] for p in t], lam)
            curves.append(np.interp(grid, steps, smooth))
        curves = np.array(curves)
        out[method] = (grid, curves.mean(axis=0), curves.std(axis=0))
    return out


def write_convergence_svg(report: TrialReport, path: Path, lam: float) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed salt keeps the generated element ids stable across runs
    matplotlib.rcParams["svg.hashsalt"] = "convergence"
    curves = convergence_curves(report, lam)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for method, (grid, mean, sd) in curves.items():
        ax.plot(grid, mean, label=method)
        ax.fill_between(grid, mean - sd, mean + sd, alpha=0.2)
    ax.set_xlabel("gradient steps")
    ax.set_ylabel(f"validation loss (EMA, λ={lam:g})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_report(report: TrialReport, out_dir, formats: Sequence[str] = ("csv", "markdown", "svg"), lam: float = 0.1) -> list[Path]:
    """Write the requested artifacts into ``out_dir``; returns the paths written."""
    if not report.methods:
        raise ConfigError("report has an empty method list")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    written = []
    if "csv" in formats:
        write_results_csv(report, out / "results.csv")
        written.append(out / "results.csv")
        if report.traces:
            write_traces_csv(report, out / "traces.csv")
            written.append(out / "traces.csv")
    if "markdown" in formats:
        (out / "summary.md").write_text(summary_markdown(report))
        written.append(out / "summary.md")
    if "svg" in formats and report.traces:
        write_convergence_svg(report, out / "convergence.svg", lam)
        written.append(out / "convergence.svg")
    return written
