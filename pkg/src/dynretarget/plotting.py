"""Static SVG figures from run artifacts: Laplacian error, contact timelines, CEM cost curves."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import io
from .retarget_cost import build_laplacian, laplacian_errors

PLOT_KINDS = ("laplacian_error", "contact_timeline", "cost_curve")


class PlotError(ValueError):
    pass


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "dynretarget"  # stable element ids
    plt.rcParams["svg.fonttype"] = "none"  # keep labels as searchable text
    return plt


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _runs_by_method(run_dirs) -> dict[str, list[Path]]:
    out: dict[str, list[Path]] = {}
    for d in map(Path, run_dirs):
        info = json.loads((d / "run.json").read_text())
        out.setdefault(info["method"], []).append(d)
    return out


def _keypoints(d: Path):
    x = io.read_keypoints(d / "keypoints.txt")
    ref = io.read_keypoints(d / "reference.txt")
    if x.T == 0:
        raise PlotError(f"empty trajectory in {d}")
    return x, ref


def plot_laplacian_error(run_dirs, out: Path, keypoint: str = "pelvis") -> Path:
    """One curve per method: the keypoint's Laplacian error over time, averaged over seeds."""
    runs = _runs_by_method(run_dirs)
    curves = {}
    for method, dirs in runs.items():
        errs = []
        for d in dirs:
            x, ref = _keypoints(d)
            if keypoint not in x.names:
                raise PlotError(f"run {d} has no keypoint {keypoint!r}")
            L = build_laplacian(x.adjacency, x.m)
            errs.append(laplacian_errors(x.frames, ref.frames, L)[:, x.names.index(keypoint)])
        curves[method] = (np.arange(len(errs[0])) * x.dt, np.mean(errs, axis=0))
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for method, (t, e) in curves.items():
        ax.plot(t, e, label=method.upper())
    ax.set_xlabel("time [s]")
    ax.set_ylabel(f"{keypoint} Laplacian error [m]")
    ax.legend()
    fig.tight_layout()
    path = _save(fig, Path(out) / f"laplacian_error_{keypoint}.svg")
    plt.close(fig)
    return path


def plot_contact_timeline(run_dirs, out: Path) -> Path:
    """One lane per method (first seed) plus a ground-truth lane when labels exist."""
    runs = _runs_by_method(run_dirs)
    lanes = []
    truth = None
    for method, dirs in runs.items():
        d = sorted(dirs)[0]
        c = io.read_contacts(d / "contacts.txt")
        if c.T == 0:
            raise PlotError(f"empty trajectory in {d}")
        lanes.append((method.upper(), c))
        if truth is None and (d / "truth.txt").is_file():
            truth = io.read_contacts(d / "truth.txt")
    if truth is not None:
        lanes.append(("truth", truth))
    groups = lanes[0][1].groups
    plt = _pyplot()
    fig, axes = plt.subplots(len(groups), 1, figsize=(7, 1.0 + 0.5 * len(lanes) * len(groups)), squeeze=False)
    for g, (ax, group) in enumerate(zip(axes[:, 0], groups)):
        for row, (label, c) in enumerate(lanes):
            on = c.flags[:, g]
            t = np.arange(c.T) * c.dt
            spans = [(t[i], c.dt) for i in np.flatnonzero(on)]
            ax.broken_barh(spans, (row - 0.4, 0.8))
        ax.set_yticks(range(len(lanes)), [label for label, _ in lanes])
        ax.set_title(group, fontsize=9)
    axes[-1, 0].set_xlabel("time [s]")
    fig.tight_layout()
    path = _save(fig, Path(out) / "contact_timeline.svg")
    plt.close(fig)
    return path


def plot_cost_curve(run_dirs, out: Path) -> Path:
    """Final best horizon cost per replan for each planned run."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    n = 0
    for method, dirs in _runs_by_method(run_dirs).items():
        for d in sorted(dirs):
            diag = json.loads((d / "diagnostics.json").read_text())
            if "best_costs" not in diag:
                continue
            best = [h[-1] for h in diag["best_costs"]]
            if not best:
                raise PlotError(f"empty trajectory in {d}")
            ax.semilogy(diag["replan_steps"], best, label=f"{method.upper()} seed {diag['seed']}")
            n += 1
    if n == 0:
        plt.close(fig)
        raise PlotError("no planner diagnostics among the runs (GR has no cost curve)")
    ax.set_xlabel("control step")
    ax.set_ylabel("best horizon cost")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = _save(fig, Path(out) / "cost_curve.svg")
    plt.close(fig)
    return path


def plot(run_dirs, kind: str, out, keypoint: str = "pelvis") -> Path:
    if kind not in PLOT_KINDS:
        raise PlotError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "laplacian_error":
        return plot_laplacian_error(run_dirs, out, keypoint)
    if kind == "contact_timeline":
        return plot_contact_timeline(run_dirs, out)
    return plot_cost_curve(run_dirs, out)
