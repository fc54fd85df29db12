"""Report figures rendered next to the delimited outputs.

All figures go through the Agg backend and suppress PNG date metadata so
re-running a report produces byte-identical files.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalReport
from .types import Metric

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Date": None}}
_CONDITION_COLORS = {"OURS": "#2a9d8f", "UNIFORM": "#e9c46a", "REFERENCE": "#7f7f7f"}


def _save(fig, path):
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def render_efficiency_figure(report: EvalReport, path) -> None:
    """Grouped bars: mean quality-per-TFLOP by condition and metric."""
    summary = report.summary["conditions"]
    metrics = [m.value for m in Metric]
    conditions = list(summary)
    x = np.arange(len(metrics))
    width = 0.8 / len(conditions)

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for k, cond in enumerate(conditions):
        means = [summary[cond]["metrics"][m]["mean_efficiency"] for m in metrics]
        errs = [summary[cond]["metrics"][m]["stderr_efficiency"] for m in metrics]
        ax.bar(x + (k - (len(conditions) - 1) / 2) * width, means, width,
               yerr=errs, capsize=3, label=cond,
               color=_CONDITION_COLORS.get(cond))
    ax.set_xticks(x)
    ax.set_xticklabels(metrics)
    ax.set_ylabel("quality / TFLOPs")
    ax.set_title("Quality-computation efficiency (higher is better)")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def render_relative_quality_figure(report: EvalReport, path) -> None:
    """Bar chart of mean adaptive-vs-uniform relative quality per metric."""
    rel = report.summary["relative_quality"]
    metrics = [m.value for m in Metric]
    means = [100.0 * rel[m]["mean"] for m in metrics]
    errs = [100.0 * rel[m]["stderr"] for m in metrics]

    fig, ax = plt.subplots(figsize=(5.4, 4.0))
    ax.bar(metrics, means, yerr=errs, capsize=3, color="#2a9d8f")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_ylabel("relative quality vs UNIFORM (%)")
    ax.set_title("Quality gain at matched average compute")
    fig.tight_layout()
    _save(fig, path)


def render_steps_figure(report: EvalReport, path) -> None:
    """Histogram of adaptive per-prompt step counts with the fixed baselines."""
    ours_steps = sorted(
        {row["prompt_id"]: row["steps"] for row in report.rows
         if row["condition"] == "OURS"}.values()
    )
    uniform_step = report.summary["uniform_step"]
    reference_step = report.summary["reference_step"]

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    bins = np.arange(0.5, max(list(ours_steps) + [reference_step]) + 1.5)
    ax.hist(ours_steps, bins=bins, color="#2a9d8f", alpha=0.85, label="OURS per prompt")
    ax.axvline(uniform_step, color="#e9c46a", linestyle="--", linewidth=2,
               label=f"UNIFORM ({uniform_step})")
    ax.axvline(reference_step, color="#7f7f7f", linestyle=":", linewidth=2,
               label=f"REFERENCE ({reference_step})")
    ax.set_xlabel("denoising steps")
    ax.set_ylabel("prompts")
    ax.set_title("Suggested step counts")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def render_report_figures(report: EvalReport, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [
        directory / "efficiency.png",
        directory / "relative_quality.png",
        directory / "steps.png",
    ]
    render_efficiency_figure(report, paths[0])
    render_relative_quality_figure(report, paths[1])
    render_steps_figure(report, paths[2])
    return paths
