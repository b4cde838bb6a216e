"""Figures for reports: RD curves and training loss traces, written straight to image files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
}


def figsize(width=5.0, ratio=GOLDEN):
    return (width, width * ratio)


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_rd_curves(curves: dict, path, title=None, baselines: dict | None = None):
    """PSNR vs bpp, one marker line per label; baseline curves are drawn dashed."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize())
        for label, (rates, quals) in sorted(curves.items()):
            order = np.argsort(rates)
            ax.plot(np.asarray(rates)[order], np.asarray(quals)[order], "o-", ms=3, label=label)
        for label, (rates, quals) in sorted((baselines or {}).items()):
            order = np.argsort(rates)
            ax.plot(np.asarray(rates)[order], np.asarray(quals)[order], "s--", ms=3, label=label)
        ax.set_xlabel("bpp")
        ax.set_ylabel("PSNR (dB)")
        if title:
            ax.set_title(title)
        if curves or baselines:
            ax.legend(loc="lower right")
        return _save(fig, path)


def plot_loss_trace(trace, path, title=None):
    """Loss, distortion and rate against step on a shared x axis."""
    steps = np.array([r["step"] for r in trace])
    with plt.rc_context(RC):
        fig, (ax_j, ax_r) = plt.subplots(2, 1, sharex=True, figsize=figsize(5.0, 0.9))
        ax_j.semilogy(steps, [r["J"] for r in trace], lw=0.8, label="J")
        ax_j.semilogy(steps, [r["D"] for r in trace], lw=0.8, label="D (MSE)")
        ax_j.set_ylabel("loss")
        ax_j.legend(loc="upper right")
        ax_r.plot(steps, [r["R_bpp"] for r in trace], lw=0.8, color="C2")
        ax_r.set_ylabel("R (bpp)")
        ax_r.set_xlabel("step")
        if title:
            ax_j.set_title(title)
        return _save(fig, path)
