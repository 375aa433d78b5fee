"""Deterministic figures from CSV artifacts (no model execution)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .protocols import read_report
from .scan_store import PLANE_IDS

__all__ = ["plot_report", "plot_log", "plot_attention"]

_SAVE_KW = dict(dpi=110, metadata={"Software": ""})


def plot_report(report_csv: str | Path, out_path: str | Path) -> Path:
    """Per-plane translation/rotation error bars."""
    report = read_report(report_csv)
    trans = [report.per_plane[p][0] for p in PLANE_IDS]
    rot = [report.per_plane[p][1] for p in PLANE_IDS]
    x = np.arange(len(PLANE_IDS))
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar(x - 0.2, trans, width=0.4, label="translation (mm)")
    ax.bar(x + 0.2, rot, width=0.4, label="rotation (deg)")
    ax.set_xticks(x)
    ax.set_xticklabels(PLANE_IDS, rotation=45, ha="right")
    ax.set_ylabel("mean absolute error")
    ax.set_title(f"per-plane guidance error (avg {report.overall_avg:.2f})")
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)
    return out_path


def _read_csv_columns(path: str | Path) -> dict[str, list[float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[float]] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for name, value in row.items():
                if value not in (None, ""):
                    cols[name].append(float(value))
    return cols


def plot_log(log_csv: str | Path, out_path: str | Path) -> Path:
    """Training-curve plot for pre-training or fine-tuning logs."""
    cols = _read_csv_columns(log_csv)
    fig, ax = plt.subplots(figsize=(8, 4))
    for name, values in cols.items():
        if name in ("step",) or not values:
            continue
        xs = np.linspace(0, len(cols.get("step", values)) - 1, len(values))
        ax.plot(xs, values, label=name)
    ax.set_xlabel("step")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title(Path(log_csv).stem)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)
    return out_path


def plot_attention(attention_csv: str | Path, out_path: str | Path) -> Path:
    """Heatmap of one head's query-by-key attention scores."""
    with open(attention_csv, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        mat = np.array([[float(v) for v in row] for row in reader])
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(mat, cmap="viridis", vmin=0.0, vmax=mat.max())
    ax.set_xlabel("key frame")
    ax.set_ylabel("query frame")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)
    return out_path
