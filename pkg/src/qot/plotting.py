"""Figures for the command-line reports, drawn with the non-interactive Agg backend.

matplotlib is imported lazily so that runs with ``--no-plots`` never touch it.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    _pyplot().close(fig)
    return path


def distance_matrix(W: np.ndarray, path: Path, labels=None) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 4))
    M = np.where(np.isfinite(W), W, np.nan)
    im = ax.imshow(M, cmap="viridis")
    n = W.shape[0]
    labels = labels or [str(i) for i in range(n)]
    ax.set_xticks(range(n), labels)
    ax.set_yticks(range(n), labels)
    for i in range(n):
        for j in range(n):
            ax.text(j, i, "inf" if not np.isfinite(W[i, j]) else f"{W[i, j]:.3f}",
                    ha="center", va="center", color="w", fontsize=8)
    fig.colorbar(im, ax=ax, label="W")
    ax.set_title("transport distance")
    return _save(fig, path)


def geodesic(grid, entropies, speeds, path: Path) -> Path:
    plt = _pyplot()
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3.2))
    a.plot(grid, entropies, "o-", ms=3)
    a.set_xlabel("t")
    a.set_ylabel("Ent")
    a.set_title("entropy along the geodesic")
    mids = 0.5 * (np.asarray(grid[:-1]) + np.asarray(grid[1:]))
    b.plot(mids, speeds, "s-", ms=3)
    b.set_xlabel("t")
    b.set_ylabel("speed")
    b.set_title("edge speeds")
    return _save(fig, path)


def entropy_flow(rows: list, path: Path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for s in sorted({r["state"] for r in rows}):
        rs = [r for r in rows if r["state"] == s]
        t = [r["t"] for r in rs]
        line, = ax.plot(t, [r["distance"] for r in rs], "o-", ms=3, label=f"W, state {s}")
        ax.plot(t, [r["stated"] for r in rs], "--", color=line.get_color(), lw=1)
        ax.plot(t, [r["sqrt"] for r in rs], ":", color=line.get_color(), lw=1)
    ax.plot([], [], "k--", lw=1, label="(t/2) dEnt")
    ax.plot([], [], "k:", lw=1, label="sqrt(t dEnt)")
    ax.set_xlabel("t")
    ax.set_ylabel("W(rho, h_t rho)")
    ax.set_title("distance to the heat flow")
    ax.legend(fontsize=7)
    return _save(fig, path)


def chain(rows: list, path: Path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    st = [r["stage"] for r in rows if np.isfinite(r["distance"])]
    W = [r["distance"] for r in rows if np.isfinite(r["distance"])]
    gap = [r["gap"] for r in rows if np.isfinite(r["distance"])]
    ax.errorbar(st, W, yerr=gap, fmt="o-", capsize=3)
    ax.set_xlabel("stage")
    ax.set_ylabel("W_j")
    ax.set_title("per-stage distance")
    return _save(fig, path)


def certification(margins: dict, path: Path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    names = list(margins)
    vals = [margins[k] if np.isfinite(margins[k]) else np.nan for k in names]
    ax.bar(names, vals, color=["tab:green" if (v == v and v >= 0) else "tab:red" for v in vals])
    ax.axhline(0, color="k", lw=0.8)
    ax.set_ylabel("worst margin")
    ax.set_title("curvature checks")
    return _save(fig, path)
