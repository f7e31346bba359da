"""Optional PNG figures next to the CSV outputs (``--figures``)."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def trajectory_figures(stem: Path, header, rows, n_coords: int, n_integrals: int) -> list:
    """Coordinates against time and the relative drift of each integral."""
    plt = _pyplot()
    rows = np.asarray(rows, float)
    out = []
    if rows.size == 0:
        return out
    t = rows[:, 0]
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in range(n_coords):
        ax.plot(t, rows[:, 1 + k], label=header[1 + k])
    ax.set_xlabel("t")
    ax.legend()
    path = stem.with_name(stem.name + "_coords.png")
    fig.savefig(path, dpi=100)
    plt.close(fig)
    out.append(path)

    H = rows[:, -n_integrals:]
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in range(n_integrals):
        h0 = H[0, k]
        d = np.abs(H[:, k] - h0) / (abs(h0) if abs(h0) > 1e-8 else 1.0)
        ax.semilogy(t, np.maximum(d, 1e-18), label=header[-n_integrals + k])
    ax.set_xlabel("t")
    ax.set_ylabel("drift")
    ax.legend()
    path = stem.with_name(stem.name + "_drift.png")
    fig.savefig(path, dpi=100)
    plt.close(fig)
    out.append(path)
    return out


def separation_figures(stem: Path, header, rows, n: int) -> list:
    """(u, s) curves against time."""
    plt = _pyplot()
    rows = np.asarray(rows, float)
    if rows.size == 0:
        return []
    t = rows[:, 0]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for k in range(n):
        axes[0].plot(t, rows[:, 1 + k], label=header[1 + k])
        axes[1].plot(rows[:, 1 + k], rows[:, 1 + n + k], label=f"{header[1 + k]}, {header[1 + n + k]}")
    axes[0].set_xlabel("t")
    axes[1].set_xlabel("u")
    axes[1].set_ylabel("s")
    for ax in axes:
        ax.legend()
    path = stem.with_name(stem.name + ".png")
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return [path]
