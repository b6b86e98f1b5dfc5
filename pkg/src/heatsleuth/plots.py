"""Figure rendering for completed runs.

Reads the delimited artifacts produced by :mod:`heatsleuth.experiment`
and renders matplotlib figures next to them: one trace plot per
inference window, a truth-versus-posterior-mean overlay on the unit
disc, and the sensor itinerary.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .shapes import ShapeKind, ShapeParams, boundary_point

TWO_PI = 2.0 * math.pi


class PlotError(RuntimeError):
    """Raised when a run directory lacks usable artifacts."""


def plot_traces(chain_csv: Path, truth_xi, out_path: Path) -> None:
    with open(chain_csv, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        data = [row for row in reader]
    if header is None or not data:
        raise PlotError(f"chain file {chain_csv.name} is empty")
    cols = {name: i for i, name in enumerate(header)}
    xi_cols = sorted((c for c in cols if c.startswith("xi")), key=lambda c: int(c[2:]))
    arr = np.array(data, dtype=float)
    iters = arr[:, cols["iter"]]

    fig, axes = plt.subplots(len(xi_cols), 1, figsize=(7, 2.0 * len(xi_cols)),
                             sharex=True, squeeze=False)
    for j, c in enumerate(xi_cols):
        ax = axes[j, 0]
        ax.plot(iters, arr[:, cols[c]], lw=0.5)
        if truth_xi is not None and j < len(truth_xi):
            ax.axhline(truth_xi[j], color="tab:red", ls="--", lw=1.0)
        ax.set_ylabel(rf"$\xi_{{{j + 1}}}$")
    axes[-1, 0].set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_reconstruction(recon_csv: Path, out_path: Path) -> None:
    with open(recon_csv, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    if header is None or not rows:
        raise PlotError("reconstruction.csv is empty")
    arr = np.array(rows, dtype=float)
    cols = {name: i for i, name in enumerate(header)}

    fig, ax = plt.subplots(figsize=(5, 5))
    th = np.linspace(0.0, TWO_PI, 256)
    ax.plot(np.cos(th), np.sin(th), color="k", lw=1.0)
    xt = np.append(arr[:, cols["x_true"]], arr[0, cols["x_true"]])
    yt = np.append(arr[:, cols["y_true"]], arr[0, cols["y_true"]])
    xm = np.append(arr[:, cols["x_mean"]], arr[0, cols["x_mean"]])
    ym = np.append(arr[:, cols["y_mean"]], arr[0, cols["y_mean"]])
    ax.plot(xt, yt, color="tab:blue", lw=1.5, label="true source")
    ax.plot(xm, ym, color="tab:orange", ls="--", lw=1.5, label="posterior mean")
    ax.set_aspect("equal")
    ax.set_xlim(-1.1, 1.1)
    ax.set_ylim(-1.1, 1.1)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_window_overlay(summary: dict, window: dict, out_path: Path) -> None:
    """Truth vs that window's posterior-mean boundary, sensor marked."""
    cfg = summary["config"]
    kind = ShapeKind(cfg["kind"])
    order = int(cfg.get("fourier_order", 0))
    truth = ShapeParams(kind, np.asarray(summary["truth_xi"]), order)
    mean = ShapeParams(kind, np.asarray(window["posterior_mean_xi"]), order)

    fig, ax = plt.subplots(figsize=(5, 5))
    th = np.linspace(0.0, TWO_PI, 257)
    ax.plot(np.cos(th), np.sin(th), color="k", lw=1.0)
    bt = boundary_point(truth, th)
    bm = boundary_point(mean, th)
    ax.plot(bt[:, 0], bt[:, 1], color="tab:blue", lw=1.5, label="true source")
    ax.plot(bm[:, 0], bm[:, 1], color="tab:orange", ls="--", lw=1.5,
            label="posterior mean")
    ang = float(window["theta"])
    ax.plot(math.cos(ang), math.sin(ang), "*", color="tab:red", ms=14,
            label="sensor")
    ax.set_aspect("equal")
    ax.set_xlim(-1.15, 1.15)
    ax.set_ylim(-1.15, 1.15)
    ax.set_title(f"window {window['k']}")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_movement(movement_csv: Path, out_path: Path) -> None:
    with open(movement_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise PlotError("movement.csv is empty")
    fig, ax = plt.subplots(figsize=(5, 5))
    th = np.linspace(0.0, TWO_PI, 256)
    ax.plot(np.cos(th), np.sin(th), color="k", lw=1.0)
    for row in rows:
        ang = float(row["theta"])
        ax.plot(math.cos(ang), math.sin(ang), "o", color="tab:red")
        ax.annotate(row["k"], (1.06 * math.cos(ang), 1.06 * math.sin(ang)),
                    ha="center", va="center", fontsize=9)
    ax.set_aspect("equal")
    ax.set_xlim(-1.2, 1.2)
    ax.set_ylim(-1.2, 1.2)
    ax.set_title("sensor dwell angles")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def emit_plots(run_dir, fmt: str = "svg") -> List[Path]:
    """Render all figures for a finished run directory."""
    run_dir = Path(run_dir)
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        raise PlotError(f"no summary.json under {run_dir}")
    with open(summary_path) as fh:
        summary = json.load(fh)
    truth_xi = summary.get("truth_xi")

    written: List[Path] = []
    for chain_csv in sorted(run_dir.glob("window_*_chain.csv")):
        out = run_dir / (chain_csv.stem.replace("_chain", "_trace") + f".{fmt}")
        plot_traces(chain_csv, truth_xi, out)
        written.append(out)

    for window in summary.get("windows", []):
        out = run_dir / f"window_{window['k']}_overlay.{fmt}"
        plot_window_overlay(summary, window, out)
        written.append(out)

    recon_csv = run_dir / "reconstruction.csv"
    if recon_csv.exists():
        out = run_dir / f"reconstruction.{fmt}"
        plot_reconstruction(recon_csv, out)
        written.append(out)

    movement_csv = run_dir / "movement.csv"
    if movement_csv.exists():
        out = run_dir / f"movement.{fmt}"
        plot_movement(movement_csv, out)
        written.append(out)

    if not written:
        raise PlotError(f"no plottable artifacts under {run_dir}")
    return written
