"""Loading, temporal alignment, and windowing of image/CSI streams.

The image stream is the reference clock: for every image frame the nearest
CSI frame is found by binary search (ties break toward the earlier CSI frame,
preferring a measurement not later than the image). Training units are
fixed-length windows whose CSI block *ends* at the frame aligned with the
window's last image, so inference never consumes future CSI.
"""

import os
from dataclasses import dataclass, replace

import numpy as np

from . import storage
from .masking import MaskSpec, apply_mask, build_mask
from .seeding import derive_seed
from .storage import CorruptDatasetError, DatasetError, ManifestVersionError  # noqa: F401

__all__ = [
    "ImageSequence",
    "CsiSequence",
    "SyncedSample",
    "WindowConfigError",
    "load_dataset",
    "read_manifest",
    "isochronize",
    "window_samples",
    "load_csi_csv",
]


class WindowConfigError(ValueError):
    """Requested window geometry cannot be satisfied by the sequences."""


def _check_strictly_increasing(ts, label):
    ts = np.asarray(ts, dtype=np.float64)
    if ts.ndim != 1 or ts.size == 0:
        raise ValueError(f"{label} timestamps must be a non-empty 1D array")
    if np.any(np.diff(ts) <= 0):
        raise ValueError(f"{label} timestamps must be strictly increasing")
    return ts


@dataclass
class ImageSequence:
    camera_id: int
    timestamps: np.ndarray  # (T,) float64
    frames: np.ndarray  # (T, H, W, 3) float32 in [0, 1]

    def __post_init__(self):
        self.timestamps = _check_strictly_increasing(self.timestamps, "image")
        self.frames = np.asarray(self.frames)
        if self.frames.shape[0] != self.timestamps.shape[0]:
            raise ValueError(
                f"frame count {self.frames.shape[0]} != timestamp count {self.timestamps.shape[0]}"
            )
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"frames must be (T, H, W, 3), got {self.frames.shape}")


@dataclass
class CsiSequence:
    sensor_id: int
    timestamps: np.ndarray  # (T,) float64
    values: np.ndarray  # (T, n_tx, n_rx, n_subcarriers) complex

    def __post_init__(self):
        self.timestamps = _check_strictly_increasing(self.timestamps, "CSI")
        self.values = np.asarray(self.values)
        if self.values.shape[0] != self.timestamps.shape[0]:
            raise ValueError(
                f"CSI frame count {self.values.shape[0]} != timestamp count {self.timestamps.shape[0]}"
            )
        if self.values.ndim != 4:
            raise ValueError(f"CSI values must be (T, n_tx, n_rx, n_sub), got {self.values.shape}")

    @property
    def period(self):
        return float(np.median(np.diff(self.timestamps))) if len(self.timestamps) > 1 else 0.0


@dataclass
class SyncedSample:
    """One training unit: an image window paired with trailing CSI windows."""

    window_index: int
    gt_window: np.ndarray  # (L_img, H, W, 3)
    defective_window: np.ndarray  # (L_img, H, W, 3)
    mask_window: np.ndarray  # (L_img, H, W) bool, True = occluded
    csi_windows: dict  # sensor_id -> (L_csi, n_tx, n_rx, n_sub) complex
    image_indices: np.ndarray  # (L_img,) indices into the source image sequence
    csi_indices: dict  # sensor_id -> (L_img,) aligned CSI index per image


def load_dataset(directory):
    """Load every stream of a session directory.

    Returns (image sequences, CSI sequences), both sorted by id. Raises
    CorruptDatasetError when a binary's size disagrees with the manifest and
    ManifestVersionError for unknown manifest versions.
    """
    manifest = storage.read_manifest(directory)
    for key in ("cameras", "sensors"):
        if key not in manifest:
            raise DatasetError(f"manifest in {directory} lacks required key {key!r}")

    images = []
    for cam in sorted(manifest["cameras"], key=lambda c: c["camera_id"]):
        frames = storage.read_raw(
            os.path.join(directory, cam["frames_file"]), storage.IMAGE_DTYPE, cam["frames_shape"]
        )
        ts = storage.read_raw(
            os.path.join(directory, cam["timestamps_file"]),
            storage.TS_DTYPE,
            cam["timestamps_shape"],
        )
        images.append(ImageSequence(camera_id=cam["camera_id"], timestamps=ts, frames=frames))

    csis = []
    for sen in sorted(manifest["sensors"], key=lambda s: s["sensor_id"]):
        values = storage.read_complex(
            os.path.join(directory, sen["values_file"]), sen["values_shape"]
        )
        ts = storage.read_raw(
            os.path.join(directory, sen["timestamps_file"]),
            storage.TS_DTYPE,
            sen["timestamps_shape"],
        )
        csis.append(CsiSequence(sensor_id=sen["sensor_id"], timestamps=ts, values=values))
    return images, csis


def read_manifest(directory):
    return storage.read_manifest(directory)


def isochronize(image_ts, csi_ts):
    """Index of the nearest CSI timestamp for every image timestamp.

    Binary-search based; ties break toward the earlier CSI index. Image
    timestamps outside the CSI span clamp to the first/last CSI frame.
    """
    image_ts = _check_strictly_increasing(image_ts, "image")
    csi_ts = _check_strictly_increasing(csi_ts, "CSI")
    right = np.searchsorted(csi_ts, image_ts, side="left")
    right = np.clip(right, 0, len(csi_ts) - 1)
    left = np.clip(right - 1, 0, len(csi_ts) - 1)
    take_left = np.abs(image_ts - csi_ts[left]) <= np.abs(csi_ts[right] - image_ts)
    return np.where(take_left, left, right)


def window_samples(images, csi_list, L_img, L_csi, stride, mask_spec=None):
    """Yield SyncedSamples over an image sequence.

    Each window covers `L_img` consecutive image frames; per sensor, the CSI
    window is the `L_csi` frames ending at the CSI index aligned with the
    window's last image. Windows whose CSI span would start before the CSI
    sequence are skipped. When `mask_spec` is given, one mask is built per
    window (seeded by the window index) and held static across its frames.
    """
    if L_img < 1 or L_csi < 1:
        raise WindowConfigError(f"window lengths must be >= 1, got L_img={L_img}, L_csi={L_csi}")
    if stride < 1:
        raise WindowConfigError(f"stride must be >= 1, got {stride}")
    shortest = min(len(c.timestamps) for c in csi_list)
    if L_csi > shortest:
        raise WindowConfigError(
            f"L_csi={L_csi} exceeds the shortest CSI sequence ({shortest} frames)"
        )

    mappings = {c.sensor_id: isochronize(images.timestamps, c.timestamps) for c in csi_list}
    by_id = {c.sensor_id: c for c in csi_list}
    n_img = len(images.timestamps)
    h, w = images.frames.shape[1:3]

    window_index = 0
    for start in range(0, n_img - L_img + 1, stride):
        idx = np.arange(start, start + L_img)
        last = idx[-1]
        begins = {sid: mappings[sid][last] - L_csi + 1 for sid in mappings}
        if any(b < 0 for b in begins.values()):
            window_index += 1
            continue
        gt = images.frames[idx]
        if mask_spec is not None:
            per_window = replace(mask_spec, seed=derive_seed(mask_spec.seed, "window", window_index))
            mask = build_mask(per_window, (h, w))
            defective, _ = apply_mask(gt, mask, mask_spec.fill_value)
        else:
            mask = np.zeros((h, w), dtype=bool)
            defective = gt.copy()
        yield SyncedSample(
            window_index=window_index,
            gt_window=gt,
            defective_window=defective,
            mask_window=np.broadcast_to(mask, (L_img, h, w)).copy(),
            csi_windows={
                sid: by_id[sid].values[begins[sid] : begins[sid] + L_csi] for sid in begins
            },
            image_indices=idx,
            csi_indices={sid: mappings[sid][idx] for sid in mappings},
        )
        window_index += 1


def load_csi_csv(path, n_tx, n_rx, n_subcarriers, sensor_id=0):
    """Import an external CSI capture from CSV.

    Row format: timestamp, then 2 * n_tx * n_rx * n_subcarriers floats with
    real and imaginary parts interleaved.
    """
    raw = np.loadtxt(path, delimiter=",", ndmin=2)
    expected_cols = 1 + 2 * n_tx * n_rx * n_subcarriers
    if raw.shape[1] != expected_cols:
        raise DatasetError(
            f"{path}: expected {expected_cols} columns "
            f"(timestamp + {expected_cols - 1} interleaved floats), found {raw.shape[1]}"
        )
    ts = raw[:, 0].astype(np.float64)
    pairs = raw[:, 1:].astype(np.float32).reshape(len(raw), n_tx, n_rx, n_subcarriers, 2)
    values = pairs[..., 0] + 1j * pairs[..., 1]
    return CsiSequence(sensor_id=sensor_id, timestamps=ts, values=values.astype(np.complex64))
