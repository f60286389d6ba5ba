"""Figure rendering for the pipeline reports.

Every CSV the CLI writes has a matching figure renderer here, so runs
produce plots next to the delimited output.  All figures go straight to
file via the Agg backend; nothing opens a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from pgso.train import ConvergenceResult, SweepResult, TrainHistory


def plot_history(history: TrainHistory, path) -> None:
    """Loss/accuracy curves, operator-parameter trajectories and spectral
    support bounds against the training epochs."""
    epochs = [r.epoch for r in history.records]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))

    ax = axes[0, 0]
    ax.plot(epochs, [r.train_loss for r in history.records], color="tab:red")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")

    ax = axes[0, 1]
    ax.plot(epochs, [r.val_acc for r in history.records], label="validation")
    ax.plot(epochs, [r.test_acc for r in history.records], label="test")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend()

    ax = axes[1, 0]
    trajectories = np.array([r.params for r in history.records])
    for i, name in enumerate(history.param_names):
        ax.plot(epochs, trajectories[:, i], label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("operator parameters")
    if len(history.param_names) <= 8:
        ax.legend(ncol=2, fontsize=8)

    ax = axes[1, 1]
    lo = [r.support_lo for r in history.records]
    hi = [r.support_hi for r in history.records]
    if np.all(np.isfinite(lo)):
        ax.plot(epochs, lo, label="support lower bound")
        ax.plot(epochs, hi, label="support upper bound")
        ax.fill_between(epochs, lo, hi, alpha=0.15)
        ax.legend()
    else:
        ax.text(0.5, 0.5, "telemetry off", ha="center", va="center")
    ax.set_xlabel("epoch")
    ax.set_ylabel("spectral support")

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sweep(sweep: SweepResult, path) -> None:
    """Mean +- std of each final operator parameter across the grid axis."""
    keys = [cell.key for cell in sweep.cells]
    names = sweep.cells[0].param_names
    x = np.arange(len(keys))
    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(keys)), 4.5))
    for i, name in enumerate(names):
        means = [cell.param_mean[i] for cell in sweep.cells]
        stds = [cell.param_std[i] for cell in sweep.cells]
        ax.errorbar(x, means, yerr=stds, marker="o", capsize=3, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(keys, rotation=30, ha="right", fontsize=8)
    ax.set_xlabel(sweep.axis)
    ax.set_ylabel("final parameter value")
    ax.legend(ncol=4, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_init_trajectories(sweep: SweepResult, path) -> None:
    """Per-parameter trajectories, one panel per operator parameter, one
    line per initialisation."""
    cells = [c for c in sweep.cells if c.histories]
    if not cells:
        raise ValueError("sweep carries no histories to plot")
    names = cells[0].histories[0].param_names
    ncols = 4
    nrows = int(np.ceil(len(names) / ncols))
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.6 * nrows), squeeze=False)
    for i, name in enumerate(names):
        ax = axes[i // ncols][i % ncols]
        for cell in cells:
            hist = cell.histories[0]
            epochs = [r.epoch for r in hist.records]
            ax.plot(epochs, [r.params[i] for r in hist.records], label=cell.key)
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("epoch", fontsize=8)
    for j in range(len(names), nrows * ncols):
        axes[j // ncols][j % ncols].axis("off")
    handles, labels = axes[0][0].get_legend_handles_labels()
    fig.legend(handles, labels, loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_convergence(result: ConvergenceResult, path) -> None:
    """Loss and accuracy of the fixed-operator baseline vs the trained
    operator, aligned by epoch."""
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for label, hist in (("fixed operator", result.baseline), ("trained operator", result.trained)):
        epochs = [r.epoch for r in hist.records]
        ax_loss.plot(epochs, [r.train_loss for r in hist.records], label=label)
        ax_acc.plot(epochs, [r.val_acc for r in hist.records], label=label)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_loss.legend()
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("validation accuracy")
    ax_acc.set_ylim(0, 1.02)
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
