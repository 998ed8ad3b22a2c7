"""Figure rendering for report-producing subcommands.

Every figure lands next to the delimited data it visualizes; the data files
remain the authoritative outputs and the only ones covered by the
byte-reproducibility contract.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_bias_histograms(report, path) -> None:
    centers = 0.5 * (report.bin_edges[:-1] + report.bin_edges[1:])
    width = report.bin_edges[1] - report.bin_edges[0]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(centers, report.hist_pos, width=width, alpha=0.6, label="positive pairs")
    ax.bar(centers, report.hist_neg, width=width, alpha=0.6, label="negative pairs")
    ax.set_xlabel("cosine similarity")
    ax.set_ylabel("pair count")
    ax.set_title(
        f"semantic similarity by side "
        f"(overlap: pos {report.mean_overlap_pos:.3f}, neg {report.mean_overlap_neg:.3f})"
    )
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_loss_curve(curve, path, dev_curve=None) -> None:
    steps = [s for s, _ in curve]
    losses = [v for _, v in curve]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=1.0, label="training loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if dev_curve:
        ax2 = ax.twinx()
        ax2.plot([s for s, _ in dev_curve], [v for _, v in dev_curve],
                 "o-", color="tab:orange", ms=3, label="dev metric")
        ax2.set_ylabel("dev Spearman")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_sweep_heatmap(grid, lambda_p_values, lambda_n_values, path) -> None:
    grid = np.asarray(grid, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(grid, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(lambda_p_values)), [str(v) for v in lambda_p_values])
    ax.set_yticks(range(len(lambda_n_values)), [str(v) for v in lambda_n_values])
    ax.set_xlabel("positive-side weight")
    ax.set_ylabel("negative-side weight")
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            if np.isfinite(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center",
                        color="w", fontsize=7)
    fig.colorbar(im, ax=ax, label="dev Spearman")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_sts_scatter(pred, gold, rho, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(gold, pred, s=8, alpha=0.5)
    ax.set_xlabel("gold score")
    ax.set_ylabel("predicted cosine")
    ax.set_title(f"Spearman = {rho:.4f}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
