"""Localization-error figures (PNG) for evaluation reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps the PNG bytes reproducible
_PNG_META = {"Software": None}
TOLERANCE = 0.015


def plot_error_scatter(errors: np.ndarray, path, tolerance: float = TOLERANCE) -> None:
    """3D scatter of signed (dx, dy, dz) errors in cm with the tolerance cube outlined."""
    e = np.asarray(errors, dtype=np.float64).reshape(-1, 3) * 100.0
    fig = plt.figure(figsize=(5.5, 5.0), dpi=100)
    ax = fig.add_subplot(projection="3d")
    if len(e):
        inside = np.all(np.abs(e) <= tolerance * 100.0, axis=1)
        ax.scatter(e[inside, 0], e[inside, 1], e[inside, 2], s=8, c="tab:blue", label="within tolerance")
        if (~inside).any():
            ax.scatter(e[~inside, 0], e[~inside, 1], e[~inside, 2], s=12, c="tab:red", marker="x",
                       label="outside tolerance")
    t = tolerance * 100.0
    for a in (-t, t):
        for b in (-t, t):
            ax.plot([-t, t], [a, a], [b, b], c="0.6", lw=0.6)
            ax.plot([a, a], [-t, t], [b, b], c="0.6", lw=0.6)
            ax.plot([a, a], [b, b], [-t, t], c="0.6", lw=0.6)
    lim = max(t * 1.3, float(np.abs(e).max()) * 1.1 if len(e) else 0.0)
    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    ax.set_zlim(-lim, lim)
    ax.set_xlabel("dx (cm)")
    ax.set_ylabel("dy (cm)")
    ax.set_zlabel("dz (cm)")
    ax.set_title(f"picking-point localization error (n={len(e)})")
    if len(e):
        ax.legend(loc="upper left", fontsize=8)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def plot_error_histograms(histogram: dict, path, tolerance: float = TOLERANCE) -> None:
    """One bar chart per axis from :func:`pickpoint.eval.error_histogram` data."""
    edges = np.asarray(histogram["edges"]) * 100.0
    centers = 0.5 * (edges[1:] + edges[:-1])
    width = float(edges[1] - edges[0]) if len(edges) > 1 else 1.0
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4), dpi=100, sharey=True)
    for ax, axis in zip(axes, "xyz"):
        ax.bar(centers, histogram[axis], width=width * 0.9, color="tab:blue")
        for s in (-1, 1):
            ax.axvline(s * tolerance * 100.0, color="tab:red", lw=0.8, ls="--")
        ax.set_xlabel(f"d{axis} (cm)")
    axes[0].set_ylabel("matched detections")
    fig.suptitle("per-axis localization error")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
