"""Deterministic figure emission: grouped bars, sweep lines, and image grids."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import imaging
from .evaluation import ExperimentReport, load_report, rescale_delta

PLOT_KINDS = ("bars", "sweep_lines", "image_grid")
_DPI = 120


def _save(fig, path: str) -> None:
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def plot_bars(report: ExperimentReport, out_path: str) -> str:
    """Grouped bar chart of transfer fooling rates (one group per target)."""
    section = report.sections.get("transfer", {}).get("attacks")
    if not section:
        raise ValueError("report has no transfer section; cannot plot bars")
    series = []  # (label, per-target rates)
    targets = None
    for attack, block in section.items():
        targets = block["targets"]
        matrix = np.asarray(block["matrix"])
        for i, source in enumerate(block["sources"]):
            series.append((f"{attack} src={source}", matrix[i]))
    fig, ax = plt.subplots(figsize=(2.0 + 1.4 * len(targets), 3.6))
    width = 0.84 / len(series)
    xs = np.arange(len(targets))
    for i, (label, rates) in enumerate(series):
        ax.bar(xs + i * width, rates, width, label=label)
    ax.set_xticks(xs + 0.42 - width / 2)
    ax.set_xticklabels(targets)
    ax.set_ylabel("fooling rate (%)")
    ax.set_ylim(0, 105)
    ax.set_title(report.attack_name)
    ax.legend(fontsize=6)
    fig.tight_layout()
    _save(fig, out_path)
    return out_path


def plot_sweep_lines(report: ExperimentReport, out_path: str) -> str:
    """One line per attack over the defense parameter sweep."""
    section = report.sections.get("sweep")
    if not section:
        raise ValueError("report has no sweep section; cannot plot sweep lines")
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for axis, param, label in ((axes[0], "quality", "JPEG quality"),
                               (axes[1], "bits", "bit depth")):
        for attack, curve in section.items():
            xs = [pt[param] for pt in curve if pt.get(param) is not None]
            ys = [pt["fooling_rate"] for pt in curve if pt.get(param) is not None]
            if xs:
                axis.plot(xs, ys, marker="o", label=attack)
        axis.set_xlabel(label)
        axis.set_ylabel("fooling rate (%)")
        axis.invert_xaxis()
        axis.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, out_path)
    return out_path


def plot_image_grid(report: ExperimentReport, out_path: str, base: str,
                    max_rows: int = 6) -> str:
    """Original / adversarial / amplified-perturbation triplets."""
    rows = []
    for record in report.records:
        orig_png = record.get("original_png")
        adv_png = record.get("adversarial_png")
        if not orig_png or not adv_png:
            continue
        orig = imaging.load_image(os.path.join(base, orig_png))
        adv = imaging.load_image(os.path.join(base, adv_png))
        rows.append((orig, adv, rescale_delta(orig, adv)))
        if len(rows) >= max_rows:
            break
    if not rows:
        raise ValueError("report records carry no image files; cannot plot a grid")
    fig, axes = plt.subplots(len(rows), 3, figsize=(5.2, 1.8 * len(rows)),
                             squeeze=False)
    for r, (orig, adv, delta) in enumerate(rows):
        for col, (img, title) in enumerate(
            ((orig, "original"), (adv, "adversarial"), (delta, "amplified delta"))
        ):
            axis = axes[r][col]
            axis.imshow(np.transpose(img, (1, 2, 0)))
            axis.set_axis_off()
            if r == 0:
                axis.set_title(title, fontsize=8)
    fig.tight_layout()
    _save(fig, out_path)
    return out_path


def plot(report_path: str, kind: str, out_dir: str | None = None) -> str:
    """Render one figure kind from a persisted report; returns the file path."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    report = load_report(report_path)
    out_dir = out_dir or os.path.dirname(os.path.abspath(report_path))
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, f"{report.experiment_id}_{kind}.png")
    if kind == "bars":
        return plot_bars(report, out_path)
    if kind == "sweep_lines":
        return plot_sweep_lines(report, out_path)
    return plot_image_grid(report, out_path,
                           base=os.path.dirname(os.path.abspath(report_path)))
