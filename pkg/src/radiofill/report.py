"""Figure rendering: every experiment emits plots next to its CSV output."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_metric_curve(path, xs, psnr_values, ssim_values, xlabel):
    """Two-panel line plot: mean PSNR and mean SSIM against a sweep axis."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(xs, psnr_values, marker="o", color="tab:blue")
    ax1.set_xlabel(xlabel)
    ax1.set_ylabel("mean PSNR (dB)")
    ax1.grid(alpha=0.3)
    ax2.plot(xs, ssim_values, marker="s", color="tab:orange")
    ax2.set_xlabel(xlabel)
    ax2.set_ylabel("mean SSIM")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_mode_bars(path, labels, psnr_values, ssim_values):
    """Grouped bar chart of mean PSNR/SSIM per operating mode (or subset)."""
    x = np.arange(len(labels))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.bar(x, psnr_values, color="tab:blue")
    ax1.set_xticks(x, labels, rotation=20)
    ax1.set_ylabel("mean PSNR (dB)")
    ax2.bar(x, ssim_values, color="tab:orange")
    ax2.set_xticks(x, labels, rotation=20)
    ax2.set_ylabel("mean SSIM")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sample_grid(gt, defective, restored):
    """Compose rows of [ground truth | defective | restored | abs error].

    Inputs are (N, H, W, 3) arrays in [0, 1]; the result is one (N*H, 4*W, 3)
    image array with exactly four columns per sample.
    """
    gt = np.asarray(gt, dtype=np.float32)
    defective = np.asarray(defective, dtype=np.float32)
    restored = np.asarray(restored, dtype=np.float32)
    error = np.clip(np.abs(restored - gt), 0.0, 1.0)
    rows = [np.concatenate([gt[i], defective[i], restored[i], error[i]], axis=1) for i in range(len(gt))]
    return np.clip(np.concatenate(rows, axis=0), 0.0, 1.0)


def save_sample_grid(path, gt, defective, restored):
    grid = sample_grid(gt, defective, restored)
    plt.imsave(path, grid)
    return grid.shape


def save_loss_curve(path, losses):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(1, len(losses) + 1), losses, color="tab:green")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
