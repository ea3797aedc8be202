"""SVG line charts of error norms and state trajectories."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_errors(metrics: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, m in metrics.items():
        err = np.asarray(m["errors"], dtype=float)
        ax.semilogy(np.arange(err.size), np.maximum(err, 1e-16), label=name)
    ax.set_xlabel("step k")
    ax.set_ylabel("||x_k - x*||")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_states(traj, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    S = traj.states
    for i in range(S.shape[1]):
        ax.plot(np.arange(S.shape[0]), S[:, i], lw=1, label=f"x_{i}")
    ax.set_xlabel("step k")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if S.shape[1] <= 12:
        ax.legend(fontsize="small", ncol=2)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
