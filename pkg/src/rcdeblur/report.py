"""Figure rendering for deblur runs: kernel heatmap and convergence
curves, written next to the CSV trace."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["figure.figsize"] = (6.4, 4.2)
plt.rcParams["font.size"] = 9
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3


def save_kernel_figure(kernel: np.ndarray, path: str, title: str = "recovered kernel") -> None:
    fig, ax = plt.subplots()
    im = ax.imshow(kernel, cmap="inferno", interpolation="nearest")
    ax.set_title(title)
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_trace_figure(trace_rows, path: str) -> None:
    """Convergence curves over all solves of a run.

    ``trace_rows`` is a sequence of (phase, round, TraceRecord) triples
    in execution order.
    """
    if not trace_rows:
        return
    residual = [rec.residual_norm for _, _, rec in trace_rows]
    lagrangian = [rec.lagrangian for _, _, rec in trace_rows]
    steps = np.arange(len(trace_rows))
    boundaries = [
        i
        for i in range(1, len(trace_rows))
        if trace_rows[i][:2] != trace_rows[i - 1][:2]
    ]

    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 5.4))
    ax1.semilogy(steps, residual, marker=".", lw=1)
    ax1.set_ylabel("residual norm")
    ax2.plot(steps, lagrangian, marker=".", lw=1, color="tab:orange")
    ax2.set_ylabel("lagrangian")
    ax2.set_xlabel("outer iteration (all refinement rounds)")
    for ax in (ax1, ax2):
        for b in boundaries:
            ax.axvline(b - 0.5, color="gray", lw=0.6, ls=":")
    ax1.set_title("solver convergence per refinement round")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
