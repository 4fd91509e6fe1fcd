"""CSI amplitude preprocessing: cleaning, PCA compression, normalization.

Phase is discarded entirely; only the per-subcarrier modulus feeds the model.
Dead (null/guard) subcarriers are dropped by a temporal-variance floor, the
surviving frequency axis can be compressed with PCA, and features are
z-scored. Every statistic is fit on the training split only and reapplied
verbatim at inference, so the fitted pipeline is immutable and serializable.
"""

import json
from dataclasses import dataclass

import numpy as np


class PreprocessError(ValueError):
    pass


def extract_amplitude(csi):
    """Element-wise modulus; shape preserved, result non-negative."""
    return np.abs(csi)


def clean_subcarriers(amp, variance_floor=1e-12):
    """Drop subcarriers whose temporal variance never exceeds the floor.

    `amp` is (T, n_tx, n_rx, n_subcarriers). A subcarrier survives when at
    least one antenna pair shows temporal variance above `variance_floor`.
    Returns (amplitudes restricted to survivors, surviving index list) so the
    same selection can be replayed at inference.
    """
    if variance_floor < 0:
        raise PreprocessError("variance_floor must be >= 0")
    amp = np.asarray(amp)
    # Variance is shift-invariant; centering on the first frame keeps it
    # exactly zero for constant carriers instead of picking up rounding dust.
    var = (amp.astype(np.float64) - amp[0:1]).var(axis=0)  # (n_tx, n_rx, n_sub)
    keep = var.max(axis=(0, 1)) > variance_floor
    kept = np.nonzero(keep)[0]
    if kept.size == 0:
        raise PreprocessError(
            f"all {amp.shape[-1]} subcarriers fell at or below the variance floor "
            f"{variance_floor}; nothing left to process"
        )
    return amp[..., kept], kept.tolist()


@dataclass
class PcaModel:
    """PCA over the subcarrier axis, with a fixed component-sign convention."""

    mean: np.ndarray  # (n_features,)
    components: np.ndarray  # (k, n_features), orthonormal rows
    explained_variance_ratio: np.ndarray  # (k,), non-increasing

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            components=np.asarray(d["components"], dtype=np.float64),
            explained_variance_ratio=np.asarray(d["explained_variance_ratio"], dtype=np.float64),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_pca(amp, k):
    """Fit PCA with subcarriers as features, pooling samples over all other axes.

    `amp` is an array (..., n_features) or a sequence of such arrays
    (concatenated). Determinism: components come from an SVD and each row's
    largest-magnitude coordinate is forced positive.
    """
    if isinstance(amp, (list, tuple)):
        amp = np.concatenate([np.asarray(a).reshape(-1, np.asarray(a).shape[-1]) for a in amp])
    amp = np.asarray(amp, dtype=np.float64)
    x = amp.reshape(-1, amp.shape[-1])
    if x.shape[0] == 0:
        raise PreprocessError("cannot fit PCA on empty data")
    n_features = x.shape[1]
    if not 1 <= k <= n_features:
        raise PreprocessError(f"k={k} must lie in [1, {n_features}] (feature count)")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:k].copy()
    flip = components[np.arange(k), np.abs(components).argmax(axis=1)] < 0
    components[flip] *= -1.0
    total = float((s**2).sum())
    evr = (s[:k] ** 2) / total if total > 0 else np.zeros(k)
    return PcaModel(mean=mean, components=components, explained_variance_ratio=evr)


def pca_transform(model, amp):
    """Centered projection onto the model's components (affine in the input)."""
    amp = np.asarray(amp, dtype=np.float64)
    if amp.shape[-1] != model.mean.shape[0]:
        raise PreprocessError(
            f"input feature count {amp.shape[-1]} does not match model ({model.mean.shape[0]})"
        )
    return (amp - model.mean) @ model.components.T


def pca_inverse(model, projected):
    return np.asarray(projected, dtype=np.float64) @ model.components + model.mean


@dataclass
class NormStats:
    mean: np.ndarray  # (n_features,)
    std: np.ndarray  # (n_features,)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
        )


def fit_norm(x):
    x = np.asarray(x, dtype=np.float64).reshape(-1, np.asarray(x).shape[-1])
    return NormStats(mean=x.mean(axis=0), std=x.std(axis=0))


def normalize(x, stats):
    """Per-feature z-score with training statistics.

    Features whose training std is zero (or not finite) are centered only,
    never divided.
    """
    x = np.asarray(x, dtype=np.float64)
    centered = x - stats.mean
    safe = np.where(np.isfinite(stats.std) & (stats.std > 0), stats.std, 1.0)
    return centered / safe


class CsiPreprocessor:
    """Per-sensor amplitude pipeline: clean -> (optional PCA) -> z-score.

    Fit once on training windows, then applied unchanged everywhere. When PCA
    is disabled the per-sensor cleaned subcarrier counts must agree, because
    the model expects one common feature width across sensors.
    """

    def __init__(self, pca_k=None, variance_floor=1e-12):
        self.pca_k = pca_k
        self.variance_floor = variance_floor
        self.kept = {}  # sensor_id -> kept subcarrier indices
        self.n_inputs = {}  # sensor_id -> subcarrier count seen at fit time
        self.pca = {}  # sensor_id -> PcaModel or None
        self.norm = {}  # sensor_id -> NormStats
        self._fitted = False

    def fit(self, train_csi_by_sensor):
        """`train_csi_by_sensor`: sensor_id -> (T, n_tx, n_rx, n_sub) complex."""
        for sensor_id in sorted(train_csi_by_sensor):
            amp = extract_amplitude(train_csi_by_sensor[sensor_id])
            cleaned, kept = clean_subcarriers(amp, self.variance_floor)
            self.kept[sensor_id] = kept
            self.n_inputs[sensor_id] = amp.shape[-1]
            if self.pca_k is not None:
                model = fit_pca(cleaned, self.pca_k)
                feats = pca_transform(model, cleaned)
            else:
                model = None
                feats = cleaned
            self.pca[sensor_id] = model
            self.norm[sensor_id] = fit_norm(feats)
        self._fitted = True
        self.feature_dim()  # fail fast on mismatched widths
        return self

    def transform_sensor(self, sensor_id, csi):
        """(L, n_tx, n_rx, n_sub) complex -> (L, n_tx, n_rx, f) float64."""
        if not self._fitted:
            raise PreprocessError("preprocessor must be fit before transform")
        if sensor_id not in self.kept:
            raise PreprocessError(f"sensor {sensor_id} was not part of the fit")
        if np.asarray(csi).shape[-1] != self.n_inputs[sensor_id]:
            raise PreprocessError(
                f"sensor {sensor_id}: pipeline was fit on {self.n_inputs[sensor_id]} "
                f"subcarriers, got {np.asarray(csi).shape[-1]}"
            )
        amp = extract_amplitude(csi)[..., self.kept[sensor_id]]
        model = self.pca[sensor_id]
        feats = pca_transform(model, amp) if model is not None else amp
        return normalize(feats, self.norm[sensor_id])

    def transform(self, csi_by_sensor):
        return {sid: self.transform_sensor(sid, csi) for sid, csi in csi_by_sensor.items()}

    def feature_dim(self):
        """Per-frame feature width per sensor (subcarrier features only)."""
        if not self._fitted:
            raise PreprocessError("preprocessor must be fit before querying dims")
        dims = {
            sid: (self.pca_k if self.pca[sid] is not None else len(self.kept[sid]))
            for sid in self.kept
        }
        widths = set(dims.values())
        if len(widths) > 1:
            raise PreprocessError(
                f"sensors disagree on feature width ({dims}); enable PCA or adjust the "
                "variance floor so all sensors keep the same subcarrier count"
            )
        return widths.pop()

    def sensor_ids(self):
        return sorted(self.kept)

    def to_dict(self):
        return {
            "pca_k": self.pca_k,
            "variance_floor": self.variance_floor,
            "sensors": {
                str(sid): {
                    "kept": self.kept[sid],
                    "n_subcarriers": self.n_inputs[sid],
                    "pca": self.pca[sid].to_dict() if self.pca[sid] is not None else None,
                    "norm": self.norm[sid].to_dict(),
                }
                for sid in self.kept
            },
        }

    @classmethod
    def from_dict(cls, d):
        pre = cls(pca_k=d["pca_k"], variance_floor=d["variance_floor"])
        for sid_str, entry in d["sensors"].items():
            sid = int(sid_str)
            pre.kept[sid] = list(entry["kept"])
            pre.n_inputs[sid] = int(entry["n_subcarriers"])
            pre.pca[sid] = PcaModel.from_dict(entry["pca"]) if entry["pca"] is not None else None
            pre.norm[sid] = NormStats.from_dict(entry["norm"])
        pre._fitted = bool(pre.kept)
        return pre
