"""Static PNG audit plots (matplotlib, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 100


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return path


def phase_preview(values, path, title="", label="radians", pixel=None):
    """Image with a colorbar; ``label`` annotates the colour scale."""
    fig, ax = plt.subplots(figsize=(5, 4.2))
    extent = None
    if pixel:
        h, w = np.shape(values)
        extent = (0, w * pixel * 1e6, h * pixel * 1e6, 0)
        ax.set_xlabel("x (µm)")
        ax.set_ylabel("y (µm)")
    im = ax.imshow(values, cmap="gray", extent=extent)
    cb = fig.colorbar(im, ax=ax)
    cb.set_label(label)
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def residual_plot(history, path, kinds=None, title="residual history"):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    h = np.asarray(history, dtype=float)
    ax.semilogy(np.arange(len(h)), h, lw=1, color="k")
    if kinds:
        k = np.asarray(["INIT"] + list(kinds))
        er = np.flatnonzero(k == "ER")
        ax.semilogy(er, h[er], ".", ms=3, color="tab:red", label="ER")
        ax.legend()
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def shift_plot(rows, path):
    """Registered shifts per projection, one line per position and axis."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    positions = sorted({r["position"] for r in rows})
    for pos in positions:
        sel = sorted((r for r in rows if r["position"] == pos), key=lambda r: r["projection"])
        proj = [r["projection"] for r in sel]
        ax.plot(proj, [r["dy"] for r in sel], "o-", ms=3, label=f"pos {pos} dy")
        ax.plot(proj, [r["dx"] for r in sel], "s--", ms=3, label=f"pos {pos} dx")
    ax.set_xlabel("projection")
    ax.set_ylabel("shift (px)")
    ax.set_title("image alignment")
    if positions:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    return _save(fig, path)
