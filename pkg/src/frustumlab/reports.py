"""Delimited report output and the matplotlib figures rendered alongside.

Every CLI report path writes a CSV plus a PNG figure next to it; figures
are rendered headless (Agg) so batch runs work anywhere.
"""

from __future__ import annotations

import csv
from dataclasses import asdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .clinical import DEFAULT_SAFE_ZONE
from .experiments import ExperimentReport
from .handeye import SamplingRow


def write_rows_csv(rows, path) -> Path:
    """Write a list of dataclass rows as CSV with a header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dicts = [asdict(r) for r in rows]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(dicts[0].keys()))
        writer.writeheader()
        for d in dicts:
            writer.writerow(d)
    return path


def render_sampling_figure(rows: list[SamplingRow], path) -> Path:
    """Mean +/- SD calibration errors against the subsample size."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ns = [r.n for r in rows]
    fig, (ax_t, ax_r) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax_t.errorbar(
        ns,
        [r.mean_trans_err for r in rows],
        yerr=[r.sd_trans_err for r in rows],
        fmt="o-",
        capsize=3,
    )
    ax_t.set_xlabel("number of pose pairs")
    ax_t.set_ylabel("translation error (mm)")
    ax_r.errorbar(
        ns,
        [r.mean_rot_err for r in rows],
        yerr=[r.sd_rot_err for r in rows],
        fmt="o-",
        color="tab:orange",
        capsize=3,
    )
    ax_r.set_xlabel("number of pose pairs")
    ax_r.set_ylabel("rotation error (deg)")
    for ax in (ax_t, ax_r):
        ax.grid(True, alpha=0.3)
    fig.suptitle("Hand-eye calibration error vs sample count")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_kwire_figure(report: ExperimentReport, path) -> Path:
    """Distribution of wire-to-tube-center errors per noise level."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    levels = sorted({r.level for r in report.rows}, key=lambda lv: _level_order(report, lv))
    data = [[r.mean_err_mm for r in report.rows if r.level == lv] for lv in levels]
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(levels), 3.8))
    ax.boxplot(data, tick_labels=levels)
    ax.set_ylabel("wire-to-tube-center error (mm)")
    ax.set_xlabel("noise level")
    ax.grid(True, axis="y", alpha=0.3)
    ax.set_title("K-wire placement error")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_tha_figure(report: ExperimentReport, path) -> Path:
    """Achieved cup angles with the safe zone and the target marked."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    zone = DEFAULT_SAFE_ZONE
    ax.add_patch(
        plt.Rectangle(
            (zone.anteversion_min, zone.abduction_min),
            zone.anteversion_max - zone.anteversion_min,
            zone.abduction_max - zone.abduction_min,
            alpha=0.15,
            color="tab:green",
            label="safe zone",
        )
    )
    levels = sorted({r.level for r in report.rows}, key=lambda lv: _level_order(report, lv))
    for lv in levels:
        rows = [r for r in report.rows if r.level == lv]
        ax.scatter(
            [r.anteversion_deg for r in rows],
            [r.abduction_deg for r in rows],
            s=18,
            alpha=0.8,
            label=lv,
        )
    ax.plot([15.0], [40.0], marker="*", markersize=14, color="black", label="target")
    ax.set_xlabel("anteversion (deg)")
    ax.set_ylabel("abduction (deg)")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    ax.set_title("Achieved cup orientation")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _level_order(report: ExperimentReport, level: str) -> int:
    for i, lv in enumerate(report.config.levels):
        if lv.label == level:
            return i
    return len(report.config.levels)


def render_coverage_figure(fractions: dict[str, float], path) -> Path:
    """Bar chart of frustum coverage fractions (interlock reports)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(fractions)
    fig, ax = plt.subplots(figsize=(1.6 + 0.9 * len(names), 3.4))
    ax.bar(np.arange(len(names)), [fractions[n] for n in names])
    ax.set_xticks(np.arange(len(names)), names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("fraction of box covered")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
