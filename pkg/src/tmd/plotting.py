"""Figures written next to the CSV/JSON reports (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .envs import ACTIONS, MOVES  # noqa: E402

plt.rcParams.update(
    {
        "font.size": 9,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "figure.dpi": 120,
        "savefig.bbox": "tight",
    }
)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_metrics(rows, path) -> Path:
    """Loss curves from training metric rows."""
    steps = np.array([r["step"] for r in rows])
    fig, axes = plt.subplots(1, 2, figsize=(7.5, 2.8))
    for key in ("nce", "total"):
        vals = np.array([r[key] for r in rows], dtype=float)
        if np.isfinite(vals).any():
            axes[0].plot(steps, vals, label=key)
    axes[0].set_xlabel("step")
    axes[0].set_title("contrastive / total")
    axes[0].legend(frameon=False)
    for key in ("l_i", "l_t", "policy"):
        vals = np.array([r[key] for r in rows], dtype=float)
        if np.isfinite(vals).any():
            axes[1].plot(steps, vals, label=key)
    axes[1].set_xlabel("step")
    axes[1].set_title("invariance / policy")
    if axes[1].lines:
        axes[1].legend(frameon=False)
    return _save(fig, path)


def plot_success(labels, means, errs, path, title="success rate") -> Path:
    fig, ax = plt.subplots(figsize=(1.1 * len(labels) + 1.5, 2.8))
    x = np.arange(len(labels))
    ax.bar(x, means, yerr=errs, color="0.6", edgecolor="0.2", capsize=3)
    ax.set_xticks(x, labels, rotation=20, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("success")
    ax.set_title(title)
    return _save(fig, path)


def plot_distance_table(values, n_states, path, title="distance") -> Path:
    """Heat map of the state-to-state block; infinities shown as blank cells."""
    block = np.array(values[:n_states, :n_states], dtype=float)
    block[~np.isfinite(block)] = np.nan
    fig, ax = plt.subplots(figsize=(4, 3.4))
    im = ax.imshow(block, cmap="viridis", interpolation="nearest")
    ax.set_xlabel("goal")
    ax.set_ylabel("state")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, path)


def plot_policy(gw, actions, goal: int, path, title=None) -> Path:
    """Arrow field of greedy actions toward one goal on a gridworld."""
    spec = gw.spec
    fig, ax = plt.subplots(figsize=(0.5 * spec.width + 1, 0.5 * spec.height + 0.6))
    for (x, y) in spec.walls:
        ax.add_patch(plt.Rectangle((x - 0.5, y - 0.5), 1, 1, color="0.25"))
    for (x, y) in spec.teleport_cells:
        ax.add_patch(plt.Rectangle((x - 0.5, y - 0.5), 1, 1, color="tab:orange", alpha=0.6))
    for s, (x, y) in enumerate(gw.cells):
        if s == goal:
            ax.plot(x, y, "*", color="tab:red", ms=12)
            continue
        dx, dy = MOVES[ACTIONS[int(actions[goal, s])]]
        if dx == dy == 0:
            ax.plot(x, y, "o", color="0.4", ms=3)
        else:
            ax.arrow(x - 0.25 * dx, y - 0.25 * dy, 0.4 * dx, 0.4 * dy, head_width=0.15, color="tab:blue")
    ax.set_xlim(-0.5, spec.width - 0.5)
    ax.set_ylim(spec.height - 0.5, -0.5)
    ax.set_aspect("equal")
    ax.set_xticks(range(spec.width))
    ax.set_yticks(range(spec.height))
    ax.set_title(title or f"greedy actions toward {gw.cells[goal]}")
    return _save(fig, path)
