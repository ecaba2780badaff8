"""Report output: delimited files and rendered figures."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .data import ATTRIBUTES
from .metrics import EvalReport

__all__ = ["write_report_files", "render_figures"]

_TSV_COLUMNS = ("attribute", "tf1", "lcsf1", "classification_f1", "mean_segments", "lcsf1_pairs", "lcsf1_skipped")


def write_report_files(report: EvalReport, out_dir) -> dict[str, str]:
    """Write report.jsonl and report.tsv into out_dir; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    jsonl_path = os.path.join(out_dir, "report.jsonl")
    with open(jsonl_path, "w") as fh:
        fh.write(report.to_jsonl())

    tsv_path = os.path.join(out_dir, "report.tsv")
    records = report.to_records()
    with open(tsv_path, "w") as fh:
        fh.write("\t".join(_TSV_COLUMNS) + "\n")
        for rec in records:
            row = []
            for col in _TSV_COLUMNS:
                val = rec.get(col)
                row.append("" if val is None else str(val))
            fh.write("\t".join(row) + "\n")
    return {"jsonl": jsonl_path, "tsv": tsv_path}


def render_figures(report: EvalReport, out_dir, segment_counts: dict[str, list[int]] | None = None) -> list[str]:
    """Render metric bars (and a segment-count histogram when counts are
    provided) as PNG files; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    metric_names = ("tf1", "lcsf1", "classification_f1")
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(ATTRIBUTES))
    width = 0.25
    for i, metric in enumerate(metric_names):
        heights = []
        for attr in ATTRIBUTES:
            val = getattr(report.attributes[attr], metric)
            heights.append(0.0 if val is None else val)
        ax.bar(x + (i - 1) * width, heights, width, label=metric.replace("_", " "))
    ax.set_xticks(x)
    ax.set_xticklabels(ATTRIBUTES)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title("extraction and classification scores by attribute")
    ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, "metrics.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    if segment_counts:
        fig, ax = plt.subplots(figsize=(7, 4))
        max_count = max((max(v) for v in segment_counts.values() if v), default=1)
        bins = np.arange(max_count + 2) - 0.5
        for attr in ATTRIBUTES:
            counts = segment_counts.get(attr)
            if counts:
                ax.hist(counts, bins=bins, alpha=0.5, label=attr)
        ax.set_xlabel("contiguous segments per extraction")
        ax.set_ylabel("examples")
        ax.set_title("extraction contiguity")
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, "segments.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    return written
