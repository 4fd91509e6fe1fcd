"""Reference PSNR/SSIM and run-level aggregation.

Conventions (recorded in every MetricsRecord): data range 1.0, PSNR capped at
100 dB for exact matches, SSIM over uniform 7x7 valid windows with k1=0.01,
k2=0.03, computed per channel and averaged.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from filelock import FileLock

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03

RESULTS_COLUMNS = (
    "run_id",
    "mode",
    "L",
    "k",
    "n_sensors",
    "mean_psnr",
    "mean_ssim",
    "config_hash",
    "seed",
)


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for images in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _window_stats(x, window):
    views = np.lib.stride_tricks.sliding_window_view(x, (window, window))
    return views.mean(axis=(-1, -2)), (views**2).mean(axis=(-1, -2)), views


def _ssim_channel(a, b, window, k1, k2):
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    mu_a, sq_a, views_a = _window_stats(a, window)
    mu_b, sq_b, views_b = _window_stats(b, window)
    var_a = sq_a - mu_a**2
    var_b = sq_b - mu_b**2
    cov = (views_a * views_b).mean(axis=(-1, -2)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, window=SSIM_WINDOW, k1=SSIM_K1, k2=SSIM_K2):
    """Mean structural similarity over uniform valid windows, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.ndim != 3:
        raise ValueError(f"expected (H, W) or (H, W, C) images, got shape {a.shape}")
    h, w = a.shape[:2]
    if h < window or w < window:
        raise ValueError(f"image {h}x{w} is smaller than the {window}x{window} SSIM window")
    per_channel = [_ssim_channel(a[..., c], b[..., c], window, k1, k2) for c in range(a.shape[-1])]
    return float(np.mean(per_channel))


@dataclass
class MetricsRecord:
    """Per-run evaluation summary with per-sample values kept alongside."""

    run_id: str
    mode: str
    mean_psnr: float
    mean_ssim: float
    psnr_values: list
    ssim_values: list
    config_summary: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "run_id": self.run_id,
            "mode": self.mode,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "psnr_values": list(self.psnr_values),
            "ssim_values": list(self.ssim_values),
            "config_summary": self.config_summary,
            "ssim_window": SSIM_WINDOW,
            "ssim_k1": SSIM_K1,
            "ssim_k2": SSIM_K2,
            "psnr_cap_db": PSNR_CAP_DB,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def aggregate(run_id, mode, psnr_values, ssim_values, config_summary=None):
    """Arithmetic means over per-sample metrics; capped PSNRs enter as-is."""
    psnr_values = [float(v) for v in psnr_values]
    ssim_values = [float(v) for v in ssim_values]
    if not psnr_values or not ssim_values:
        raise ValueError("cannot aggregate an empty metrics list")
    return MetricsRecord(
        run_id=run_id,
        mode=mode,
        mean_psnr=float(np.mean(psnr_values)),
        mean_ssim=float(np.mean(ssim_values)),
        psnr_values=psnr_values,
        ssim_values=ssim_values,
        config_summary=config_summary or {},
    )


def append_results_row(csv_path, record, L="", k="", n_sensors="", config_hash="", seed=""):
    """Append one row to the shared results CSV under an exclusive lock."""
    row = {
        "run_id": record.run_id,
        "mode": record.mode,
        "L": L,
        "k": k,
        "n_sensors": n_sensors,
        "mean_psnr": f"{record.mean_psnr:.9g}",
        "mean_ssim": f"{record.mean_ssim:.9g}",
        "config_hash": config_hash,
        "seed": seed,
    }
    lock = FileLock(str(csv_path) + ".lock")
    with lock:
        fresh = not os.path.exists(csv_path)
        with open(csv_path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=RESULTS_COLUMNS)
            if fresh:
                writer.writeheader()
            writer.writerow(row)


def read_results_rows(csv_path):
    if not os.path.exists(csv_path):
        return []
    with open(csv_path, newline="") as fh:
        return list(csv.DictReader(fh))
