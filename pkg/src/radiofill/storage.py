"""On-disk layout for simulated capture sessions.

A session directory holds `manifest.json` plus one raw little-endian binary
per stream: `camera<k>.img` / `camera<k>.ts` for image frames and
`sensor<id>.csi` / `sensor<id>.ts` for channel estimates. Binaries carry no
header; shapes, element types, and byte order live only in the manifest.

Element encodings:
  images      float32 pixels in [0, 1]
  CSI         interleaved float32 (real, imag) pairs per complex value
  timestamps  float64 seconds from session start
"""

import json
import os

import numpy as np

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

IMAGE_DTYPE = "<f4"
TS_DTYPE = "<f8"
CSI_PAIR_DTYPE = "<f4"


class DatasetError(Exception):
    """Base class for session-directory failures."""


class CorruptDatasetError(DatasetError):
    """A binary's byte count disagrees with the manifest shape."""


class ManifestVersionError(DatasetError):
    """The manifest declares a version this code does not understand."""


def camera_frames_file(camera_id):
    return f"camera{camera_id}.img"


def camera_ts_file(camera_id):
    return f"camera{camera_id}.ts"


def sensor_values_file(sensor_id):
    return f"sensor{sensor_id}.csi"


def sensor_ts_file(sensor_id):
    return f"sensor{sensor_id}.ts"


def write_raw(path, values, dtype):
    try:
        np.ascontiguousarray(values).astype(dtype, copy=False).tofile(path)
    except OSError as exc:
        raise DatasetError(f"failed to write {path}: {exc}") from exc


def read_raw(path, dtype, shape):
    """Read a headerless binary, verifying its size against `shape` exactly."""
    itemsize = np.dtype(dtype).itemsize
    expected = int(np.prod(shape)) * itemsize
    try:
        actual = os.path.getsize(path)
    except OSError as exc:
        raise DatasetError(f"failed to stat {path}: {exc}") from exc
    if actual != expected:
        raise CorruptDatasetError(
            f"{path}: expected {expected} bytes for shape {tuple(shape)} of {dtype}, found {actual}"
        )
    data = np.fromfile(path, dtype=dtype)
    return data.reshape(shape)


def write_complex(path, values):
    """Write a complex tensor as interleaved (real, imag) float32 pairs."""
    flat = np.ascontiguousarray(values, dtype=np.complex64)
    write_raw(path, flat.view(np.float32), CSI_PAIR_DTYPE)


def read_complex(path, shape):
    pair_shape = tuple(shape) + (2,)
    pairs = read_raw(path, CSI_PAIR_DTYPE, pair_shape)
    return np.ascontiguousarray(pairs).view(np.complex64).reshape(shape)


def write_manifest(directory, manifest):
    path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise DatasetError(f"failed to write {path}: {exc}") from exc


def read_manifest(directory):
    path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DatasetError(f"failed to read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorruptDatasetError(f"{path} is not valid JSON: {exc}") from exc
    version = manifest.get("version")
    if version != MANIFEST_VERSION:
        raise ManifestVersionError(
            f"{path}: manifest version {version!r} is not supported (expected {MANIFEST_VERSION})"
        )
    return manifest
