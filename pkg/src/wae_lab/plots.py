"""Figures written next to the metrics CSV.

Everything here renders to a file through the Agg backend; nothing is shown
interactively.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no Software/date chunks, so reruns produce identical PNG bytes
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def training_curves(trace, path, title=None):
    epochs = [r.epoch for r in trace.records]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    axes[0].semilogy(epochs, [r.recon for r in trace.records], label="reconstruction")
    axes[0].semilogy(epochs, [max(r.total, 1e-16) for r in trace.records], label="total", alpha=0.7)
    axes[0].set_xlabel("epoch")
    axes[0].legend(frameon=False)
    axes[1].plot(epochs, [r.penalty for r in trace.records], color="C2", label="penalty")
    if trace.records and trace.records[0].disc_loss is not None:
        axes[1].plot(epochs, [r.disc_loss for r in trace.records], color="C3", label="discriminator")
    axes[1].set_xlabel("epoch")
    axes[1].legend(frameon=False)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def latent_scatter(codes, prior_samples, path, labels=None):
    """Encoded codes over prior draws (first two latent coordinates)."""
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    ax.scatter(prior_samples[:, 0], prior_samples[:, -1], s=4, c="0.75", label="prior")
    ax.scatter(codes[:, 0], codes[:, -1], s=4, c=labels if labels is not None else "C0",
               cmap="tab10", label="encoded")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(frameon=False, loc="upper right")
    fig.tight_layout()
    _save(fig, path)


def data_vs_samples(data, samples, path):
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    ax.scatter(data[:, 0], data[:, 1], s=4, c="0.6", label="data")
    ax.scatter(samples[:, 0], samples[:, 1], s=4, c="C1", label="samples")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(frameon=False, loc="upper right")
    fig.tight_layout()
    _save(fig, path)


def image_grid(grid: np.ndarray, path, title=None):
    fig, ax = plt.subplots(figsize=(grid.shape[1] / 40 + 1, grid.shape[0] / 40 + 1))
    ax.imshow(grid, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
    ax.axis("off")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def gap_histogram(gaps, path, threshold=1e-9):
    gaps = np.asarray(gaps, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.hist(np.log10(np.maximum(gaps, 1e-18)), bins=30, color="C0")
    ax.axvline(np.log10(threshold), color="C3", ls="--", label="tolerance")
    ax.set_xlabel("log10 |gap|")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)
