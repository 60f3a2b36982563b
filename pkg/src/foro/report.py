"""Matplotlib renderings of run artifacts.

Figures are written next to the delimited output files; rendering is
headless (Agg) and never required for the numeric pipeline.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_accuracy_matrix(matrix: list[list[float]], path) -> None:
    """Lower-triangular accuracy heatmap: rows = tasks learned, cols = task."""
    num_tasks = len(matrix)
    grid = np.full((num_tasks, num_tasks), np.nan)
    for j, row in enumerate(matrix):
        grid[j, :len(row)] = row
    fig, ax = plt.subplots(figsize=(1.2 * num_tasks + 2, 1.0 * num_tasks + 1.5))
    im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis")
    for j in range(num_tasks):
        for t in range(j + 1):
            ax.text(t, j, f"{grid[j, t]:.2f}", ha="center", va="center",
                    color="white" if grid[j, t] < 0.6 else "black", fontsize=8)
    ax.set_xlabel("task $t$")
    ax.set_ylabel("tasks learned $j$")
    ax.set_xticks(range(num_tasks), [str(t + 1) for t in range(num_tasks)])
    ax.set_yticks(range(num_tasks), [str(j + 1) for j in range(num_tasks)])
    ax.set_title("per-task test accuracy")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_fitness_curves(curves: dict[int, list[float]], path) -> None:
    """Best-so-far fitness per generation, one line per task."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for task_id in sorted(curves):
        values = curves[task_id]
        ax.plot(range(1, len(values) + 1), values, label=f"task {task_id + 1}")
    ax.set_xlabel("generation")
    ax.set_ylabel("best-so-far fitness")
    ax.set_title("prompt search progress")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
