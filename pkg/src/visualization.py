import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_threshold_trajectories(trace, path):
    """Per-layer firing threshold against training iteration."""
    thresholds = np.asarray(trace.thresholds, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    if thresholds.size:
        for layer in range(thresholds.shape[1]):
            ax.plot(thresholds[:, layer], label=f"L{layer + 1}")
        ax.legend()
    ax.set_xlabel("Iteration")
    ax.set_ylabel("Firing threshold")
    ax.set_title(f"Thresholds ({trace.trainer}, {trace.mapping}, T={trace.time_steps})")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_branch_losses(trace, path):
    """Validation loss of the ANN branch and of the SNN branch per epoch."""
    epochs = [record.epoch for record in trace.epochs]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [record.ann_loss for record in trace.epochs], label="ANN branch")
    ax.plot(epochs, [record.snn_loss for record in trace.epochs], linestyle="--", label="SNN branch")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Validation loss")
    ax.legend()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path
