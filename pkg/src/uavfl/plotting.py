"""Figures for the CLI report path. Always renders off-screen to PNG."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .scenario import CLUSTER_CENTERS, CLUSTER_RADIUS  # noqa: E402

_META = {"Software": None}  # keep output files byte-stable across matplotlib builds


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_trajectory(result, scenario, path, stride: int = 5):
    pos = scenario.arrays.positions
    Q = np.asarray(result.trajectory)
    fig, ax = plt.subplots(figsize=(5.2, 5))
    for c in CLUSTER_CENTERS:
        ax.add_patch(plt.Circle(c, CLUSTER_RADIUS, fill=False, ls=":", color="0.6"))
    ax.scatter(pos[:, 0], pos[:, 1], s=18, c="tab:blue", label="devices")
    ax.plot(Q[:, 0], Q[:, 1], color="tab:red", lw=1)
    ax.plot(Q[::stride, 0], Q[::stride, 1], "o", ms=2.5, color="tab:red", label="UAV")
    ax.plot(*Q[0], "k^", ms=7, label="launch")
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.legend(loc="upper left", fontsize=8)
    return _save(fig, path)


def plot_history(history, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(range(len(history)), history, "o-")
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("completion time (s)")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_schedule(schedule, path):
    a = np.asarray(schedule)
    fig, ax = plt.subplots(figsize=(6, 0.3 * a.shape[0] + 1.2))
    ax.imshow(a, aspect="auto", interpolation="nearest", cmap="Greys")
    ax.set_xlabel("round")
    ax.set_ylabel("device")
    return _save(fig, path)


def plot_schemes(rows, path):
    """Grouped bars of completion time by scheme, one group per energy budget."""
    schemes = sorted({r["scheme"] for r in rows}, key=[r["scheme"] for r in rows].index)
    energies = sorted({r["energy"] for r in rows})
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    width = 0.8 / max(len(energies), 1)
    for j, e in enumerate(energies):
        vals = [next((r["completion_time"] for r in rows if r["scheme"] == s and r["energy"] == e), np.nan)
                for s in schemes]
        vals = [np.nan if v is None else v for v in vals]
        ax.bar(np.arange(len(schemes)) + j * width, vals, width, label=f"E = {e:g} J")
    ax.set_xticks(np.arange(len(schemes)) + width * (len(energies) - 1) / 2)
    ax.set_xticklabels(schemes, rotation=15, fontsize=8)
    ax.set_ylabel("completion time (s)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_sweep(rows, path):
    """Completion time against accuracy target, one line per (scheme, energy)."""
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    keys = sorted({(r["scheme"], r["energy"]) for r in rows})
    for scheme, e in keys:
        pts = sorted((r["epsilon"], r["completion_time"]) for r in rows
                     if r["scheme"] == scheme and r["energy"] == e and r["completion_time"] is not None)
        if pts:
            ax.plot(*zip(*pts), "o-", label=f"{scheme}, E = {e:g} J")
    ax.set_xlabel("accuracy target")
    ax.set_ylabel("completion time (s)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_fl(log, path, bound=None):
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    a1.plot(log.loss)
    a1.set_xlabel("round")
    a1.set_ylabel("global loss")
    a2.semilogy(log.grad_sq, label="squared gradient norm")
    a2.axhline(log.avg_grad_sq, color="tab:green", ls="--", label="average")
    if bound is not None and np.isfinite(bound):
        a2.axhline(bound, color="tab:red", ls=":", label="bound")
    a2.set_xlabel("round")
    a2.legend(fontsize=8)
    for ax in (a1, a2):
        ax.grid(alpha=0.3)
    return _save(fig, path)
