"""Figure rendering for the report-producing subcommands.

All charts are written to files with the Agg backend; nothing here opens a
window.  Figures accompany the JSON/CSV artifacts, they never replace them.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .bounds import BoundReport  # noqa: E402
from .mapreduce import SimMetrics  # noqa: E402


def render_bound_chart(report: BoundReport, path: str | Path) -> Path:
    """Grouped bars of the three bounds per configuration plus totals."""
    path = Path(path)
    labels = [str(cb.index) for cb in report.configs] + ["total"]
    series = {
        "AGM": [cb.agm.absolute for cb in report.configs] + [report.totals["AGM"]],
        "DBP": [cb.dbp.absolute for cb in report.configs] + [report.totals["DBP"]],
        "MO": [cb.mo.absolute for cb in report.configs] + [report.totals["MO"]],
    }
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(labels)), 4))
    width = 0.27
    for i, (name, values) in enumerate(series.items()):
        xs = [x + (i - 1) * width for x in range(len(labels))]
        ax.bar(xs, [max(v, 1e-12) for v in values], width=width, label=name)
    if report.actual is not None:
        ax.axhline(max(report.actual, 1e-12), color="black", linestyle="--", label="actual")
    ax.set_yscale("log")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_xlabel("degree configuration")
    ax.set_ylabel("bound (tuples, log scale)")
    ax.set_title(f"output-size bounds, L={report.L}, IN={report.input_size}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_load_chart(metrics: SimMetrics, path: str | Path) -> Path:
    """Per-round load histograms from a simulated run."""
    path = Path(path)
    rounds = [r for r in metrics.per_round if r.load_histogram]
    n = max(1, len(rounds))
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.2 * n), squeeze=False)
    for ax, r in zip(axes[:, 0], rounds):
        loads = sorted(r.load_histogram)
        counts = [r.load_histogram[v] for v in loads]
        ax.bar(loads, counts, width=max(1, (loads[-1] - loads[0]) / 60 if len(loads) > 1 else 1))
        ax.set_title(
            f"{r.name}: {r.processors} processors, comm={r.communication}, max load={r.max_load}"
        )
        ax.set_xlabel("tuples received")
        ax.set_ylabel("processors")
    if not rounds:
        axes[0, 0].set_title("no rounds recorded")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_degree_chart(histograms: dict[str, dict[int, int]], path: str | Path) -> Path:
    """Bucket histograms per relation: bucket index vs tuple count."""
    path = Path(path)
    n = max(1, len(histograms))
    fig, axes = plt.subplots(n, 1, figsize=(6, 2.2 * n), squeeze=False)
    for ax, (name, hist) in zip(axes[:, 0], sorted(histograms.items())):
        buckets = sorted(hist)
        ax.bar(buckets, [hist[b] for b in buckets], width=0.8)
        ax.set_title(f"{name}: tuples per degree bucket of the full schema key")
        ax.set_xlabel("bucket index")
        ax.set_ylabel("tuples")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
