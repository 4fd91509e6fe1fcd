"""Declarative experiment runners: operating modes, window length, PCA, sensors.

Each runner trains one model per sweep point under a fixed epoch budget,
evaluates mean PSNR/SSIM, appends one row per point to a shared results CSV
(locked, append-only, carrying the config hash and seed), and renders figures
next to the CSV. Runners are resumable: a point whose (config hash, run id)
already has a row is skipped, so re-invoking a finished sweep reruns nothing
and an interrupted one completes only the missing points.
"""

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import data, metrics, report, scene
from .masking import MaskSpec
from .preprocess import CsiPreprocessor
from .seeding import derive_seed

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """A run/experiment configuration is malformed."""


EXPERIMENT_KINDS = ("mode_comparison", "window_sweep", "pca_ablation", "sensor_study")


@dataclass
class ExperimentConfig:
    name: str
    dataset: str
    kind: str
    out_dir: str
    seed: int = 0
    camera: int = 0
    sensors: list = None  # default: every sensor in the dataset
    L_img: int = 8
    L_csi: int = 64
    stride: int = 8
    pca_k: int = 10  # None disables PCA
    mask: dict = field(default_factory=lambda: {"kind": "rectangle", "coverage": 0.9})
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval_split: str = "train"  # train | test | all
    train_fraction: float = 1.0
    modes: list = field(default_factory=lambda: ["multimodal", "image-only", "rf-only"])
    L_list: list = field(default_factory=list)
    pca_k_list: list = field(default_factory=list)
    sensor_subsets: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}, expected {EXPERIMENT_KINDS}")
        if self.eval_split not in ("train", "test", "all"):
            raise ConfigError(f"eval_split must be train/test/all, got {self.eval_split!r}")
        if self.kind == "window_sweep" and not self.L_list:
            raise ConfigError("window_sweep requires a non-empty L_list")
        if self.kind == "pca_ablation" and not self.pca_k_list:
            raise ConfigError("pca_ablation requires a non-empty pca_k_list")
        if self.kind == "sensor_study" and not self.sensor_subsets:
            raise ConfigError("sensor_study requires non-empty sensor_subsets")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("version", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment config fields: {sorted(unknown)}")
        for required in ("name", "dataset", "kind", "out_dir"):
            if required not in d:
                raise ConfigError(f"missing required field {required!r}")
        return cls(**d)


def config_hash(cfg):
    """Content hash of the resolved configuration (stable across processes)."""
    payload = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Shared preparation: windows -> split -> preprocessing -> tensors
# ---------------------------------------------------------------------------


@dataclass
class PreparedRun:
    train_tensors: dict
    eval_tensors: dict
    train_samples: list
    eval_samples: list
    preprocessor: "CsiPreprocessor"
    model_cfg: "object"
    sensor_ids: list


def prepare_run(cfg, sensor_ids=None, L_csi=None, pca_k="inherit", preprocessor=None):
    """Window the dataset, fit preprocessing on the training split, collate.

    Passing an already-fitted `preprocessor` (e.g. from a checkpoint) skips
    the fit and reuses its statistics verbatim.
    """
    from .model import ModelConfig, samples_to_tensors

    sensor_ids = list(sensor_ids if sensor_ids is not None else (cfg.sensors or []))
    L_csi = int(L_csi if L_csi is not None else cfg.L_csi)
    pca_k = cfg.pca_k if pca_k == "inherit" else pca_k

    images, csis = data.load_dataset(cfg.dataset)
    image_seq = next((i for i in images if i.camera_id == cfg.camera), None)
    if image_seq is None:
        raise ConfigError(f"camera {cfg.camera} not present in dataset {cfg.dataset}")
    if not sensor_ids:
        sensor_ids = [c.sensor_id for c in csis]
    available = {c.sensor_id for c in csis}
    missing = set(sensor_ids) - available
    if missing:
        raise ConfigError(f"sensors {sorted(missing)} not present in dataset (has {sorted(available)})")
    csis = [c for c in csis if c.sensor_id in sensor_ids]

    mask_spec = MaskSpec(**{**cfg.mask, "seed": derive_seed(cfg.seed, "mask")})
    samples = list(
        data.window_samples(image_seq, csis, cfg.L_img, L_csi, cfg.stride, mask_spec)
    )
    if not samples:
        raise ConfigError(
            f"no usable windows (L_img={cfg.L_img}, L_csi={L_csi}, stride={cfg.stride})"
        )
    n_train = max(1, int(round(cfg.train_fraction * len(samples))))
    train_samples = samples[:n_train]
    heldout = samples[n_train:]

    if preprocessor is not None:
        pre = preprocessor
    else:
        pre = CsiPreprocessor(pca_k=pca_k)
        pre.fit(
            {
                sid: np.concatenate([s.csi_windows[sid] for s in train_samples])
                for sid in sensor_ids
            }
        )

    train_tensors = samples_to_tensors(train_samples, pre)
    if cfg.eval_split == "train" or not heldout:
        eval_samples = train_samples
        eval_tensors = train_tensors
    elif cfg.eval_split == "test":
        eval_samples = heldout
        eval_tensors = samples_to_tensors(heldout, pre)
    else:
        eval_samples = samples
        eval_tensors = samples_to_tensors(samples, pre)

    csi_feature_dim = train_tensors["csi"].shape[-1]
    h, w = image_seq.frames.shape[1:3]
    model_cfg = ModelConfig.from_dict(
        {
            **{
                "image_size": [h, w],
                "mask_fill": mask_spec.fill_value,
            },
            **cfg.model,
            **{
                "csi_feature_dim": int(csi_feature_dim),
                "n_sensors": len(sensor_ids),
                "L_img": cfg.L_img,
                "L_csi": L_csi,
                "csi_patch_len": _patch_len_for(L_csi, cfg.model.get("csi_patch_len", 8)),
            },
        }
    )
    return PreparedRun(
        train_tensors=train_tensors,
        eval_tensors=eval_tensors,
        train_samples=train_samples,
        eval_samples=eval_samples,
        preprocessor=pre,
        model_cfg=model_cfg,
        sensor_ids=sorted(sensor_ids),
    )


def _patch_len_for(L_csi, requested):
    """Largest divisor of L_csi not exceeding the requested patch length."""
    for d in range(min(requested, L_csi), 0, -1):
        if L_csi % d == 0:
            return d
    return 1


def _train_and_eval(cfg, prepared, mode, run_id, checkpoint_path=None):
    from .model import TrainConfig, build_model, count_parameters, evaluate_model, save_checkpoint, train_model

    train_cfg = TrainConfig(**{**cfg.train, "mode": mode, "seed": derive_seed(cfg.seed, run_id)})
    model = build_model(prepared.model_cfg, seed=train_cfg.seed)
    result, optimizer = train_model(model, prepared.train_tensors, train_cfg)
    psnr_values, ssim_values, restored = evaluate_model(model, prepared.eval_tensors, mode)
    record = metrics.aggregate(
        run_id,
        mode,
        psnr_values,
        ssim_values,
        config_summary={
            "L_csi": prepared.model_cfg.L_csi,
            "pca_k": prepared.preprocessor.pca_k,
            "sensors": prepared.sensor_ids,
            "parameters": count_parameters(model),
            "train_seconds": result.wall_seconds,
            "epochs": result.epochs_done,
        },
    )
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path,
            model,
            prepared.preprocessor,
            train_cfg,
            train_meta={"loss_curve": result.loss_curve, "epoch": result.epochs_done},
            optimizer=optimizer,
        )
    return record, result, model, restored


# ---------------------------------------------------------------------------
# Resume bookkeeping
# ---------------------------------------------------------------------------


def _results_path(cfg):
    return os.path.join(cfg.out_dir, "results.csv")


def _completed_run_ids(cfg):
    chash = config_hash(cfg)
    return {
        row["run_id"]
        for row in metrics.read_results_rows(_results_path(cfg))
        if row.get("config_hash") == chash
    }


def _record_point(cfg, record, L="", k=""):
    metrics.append_results_row(
        _results_path(cfg),
        record,
        L=L,
        k=("" if k is None else k),
        n_sensors=len(record.config_summary.get("sensors", [])),
        config_hash=config_hash(cfg),
        seed=cfg.seed,
    )
    record.save(os.path.join(cfg.out_dir, record.run_id.replace("/", "_") + ".json"))


@dataclass
class SweepOutcome:
    ran: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    failed: list = field(default_factory=list)
    records: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


def run_mode_comparison(cfg):
    """Train/evaluate each operating mode under one seed and identical splits."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    outcome = SweepOutcome()
    done = _completed_run_ids(cfg)
    prepared = prepare_run(cfg)
    for mode in cfg.modes:
        run_id = f"{cfg.name}/{mode}"
        if run_id in done:
            outcome.skipped.append(run_id)
            continue
        ckpt = os.path.join(cfg.out_dir, f"{mode}.ckpt")
        record, _, _, restored = _train_and_eval(cfg, prepared, mode, run_id, ckpt)
        _record_point(cfg, record, L=prepared.model_cfg.L_csi, k=prepared.preprocessor.pca_k)
        _save_grid(cfg, prepared, restored, f"samples_{mode}.png")
        outcome.ran.append(run_id)
        outcome.records[run_id] = record
    rows = _rows_for(cfg)
    if rows:
        labels = [r["run_id"].split("/", 1)[1] for r in rows]
        report.save_mode_bars(
            os.path.join(cfg.out_dir, "modes.png"),
            labels,
            [float(r["mean_psnr"]) for r in rows],
            [float(r["mean_ssim"]) for r in rows],
        )
    return outcome


def run_window_sweep(cfg):
    """One training per CSI window length; emits a metric-vs-L curve."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    outcome = SweepOutcome()
    done = _completed_run_ids(cfg)
    mode = cfg.modes[0] if cfg.modes else "multimodal"
    for L in cfg.L_list:
        run_id = f"{cfg.name}/L={L}"
        if run_id in done:
            outcome.skipped.append(run_id)
            continue
        try:
            prepared = prepare_run(cfg, L_csi=L)
        except (ConfigError, data.WindowConfigError) as exc:
            log.warning("skipping infeasible L=%s: %s", L, exc)
            outcome.failed.append(run_id)
            continue
        record, _, _, _ = _train_and_eval(cfg, prepared, mode, run_id)
        _record_point(cfg, record, L=L, k=prepared.preprocessor.pca_k)
        outcome.ran.append(run_id)
        outcome.records[run_id] = record
    rows = sorted(_rows_for(cfg), key=lambda r: int(r["L"]))
    if rows:
        report.save_metric_curve(
            os.path.join(cfg.out_dir, "window_sweep.png"),
            [int(r["L"]) for r in rows],
            [float(r["mean_psnr"]) for r in rows],
            [float(r["mean_ssim"]) for r in rows],
            xlabel="CSI window length L",
        )
    return outcome


def run_pca_ablation(cfg):
    """Sweep the PCA target dimension (None = no compression)."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    outcome = SweepOutcome()
    done = _completed_run_ids(cfg)
    mode = cfg.modes[0] if cfg.modes else "multimodal"
    table = []
    for k in cfg.pca_k_list:
        label = "none" if k is None else str(k)
        run_id = f"{cfg.name}/k={label}"
        if run_id in done:
            outcome.skipped.append(run_id)
            continue
        prepared = prepare_run(cfg, pca_k=k)
        record, result, model, _ = _train_and_eval(cfg, prepared, mode, run_id)
        _record_point(cfg, record, L=prepared.model_cfg.L_csi, k=k)
        outcome.ran.append(run_id)
        outcome.records[run_id] = record
        table.append(
            {
                "k": label,
                "parameters": record.config_summary["parameters"],
                "train_seconds": record.config_summary["train_seconds"],
                "mean_psnr": record.mean_psnr,
                "mean_ssim": record.mean_ssim,
            }
        )
    if table:
        with open(os.path.join(cfg.out_dir, "pca_ablation.json"), "w") as fh:
            json.dump(table, fh, indent=2)
        labels = [t["k"] for t in table]
        report.save_mode_bars(
            os.path.join(cfg.out_dir, "pca_ablation.png"),
            labels,
            [t["mean_psnr"] for t in table],
            [t["mean_ssim"] for t in table],
        )
    return outcome


def run_sensor_study(cfg):
    """Train per sensor subset; adds per-pedestrian footprint errors."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    outcome = SweepOutcome()
    done = _completed_run_ids(cfg)
    mode = cfg.modes[0] if cfg.modes else "rf-only"
    manifest = data.read_manifest(cfg.dataset)
    for subset in cfg.sensor_subsets:
        label = "+".join(str(s) for s in sorted(subset))
        run_id = f"{cfg.name}/sensors={label}"
        if run_id in done:
            outcome.skipped.append(run_id)
            continue
        prepared = prepare_run(cfg, sensor_ids=subset)
        record, _, _, restored = _train_and_eval(cfg, prepared, mode, run_id)
        footprint_mse = per_pedestrian_footprint_mse(cfg, manifest, prepared, restored)
        record.config_summary["footprint_mse"] = footprint_mse
        _record_point(cfg, record, L=prepared.model_cfg.L_csi, k=prepared.preprocessor.pca_k)
        outcome.ran.append(run_id)
        outcome.records[run_id] = record
    rows = _rows_for(cfg)
    if rows:
        labels = [r["run_id"].split("=", 1)[1] for r in rows]
        report.save_mode_bars(
            os.path.join(cfg.out_dir, "sensor_study.png"),
            labels,
            [float(r["mean_psnr"]) for r in rows],
            [float(r["mean_ssim"]) for r in rows],
        )
    return outcome


RUNNERS = {
    "mode_comparison": run_mode_comparison,
    "window_sweep": run_window_sweep,
    "pca_ablation": run_pca_ablation,
    "sensor_study": run_sensor_study,
}


def run_experiment(cfg):
    return RUNNERS[cfg.kind](cfg)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _rows_for(cfg):
    chash = config_hash(cfg)
    return [
        r
        for r in metrics.read_results_rows(_results_path(cfg))
        if r.get("config_hash") == chash
    ]


def _save_grid(cfg, prepared, restored, filename, max_samples=6):
    idx = np.linspace(0, len(prepared.eval_samples) - 1, min(max_samples, len(prepared.eval_samples)))
    idx = np.unique(idx.astype(int))
    gt = prepared.eval_tensors["gt"].numpy()[idx, 0]
    defective = prepared.eval_tensors["defective"].numpy()[idx, 0]
    restored_first = restored[idx, 0]
    report.save_sample_grid(os.path.join(cfg.out_dir, filename), gt, defective, restored_first)


def per_pedestrian_footprint_mse(cfg, manifest, prepared, restored):
    """Masked-region MSE restricted to each pedestrian's rendered footprint.

    Re-renders each pedestrian alone (from the manifest's room and scenario
    description) at the ground-truth frame times, takes the pixels that
    differ from the backdrop as that pedestrian's footprint, and averages the
    squared restoration error over footprint pixels that were occluded.
    """
    room = scene.room_from_dict(manifest["room"])
    trajectories = [scene.trajectory_from_dict(t) for t in manifest["scenarios"]]
    images, _ = data.load_dataset(cfg.dataset)
    image_seq = next(i for i in images if i.camera_id == cfg.camera)
    background = manifest.get("background", scene.BACKGROUND_LEVEL)

    errors = {t.pedestrian_id: [] for t in trajectories}
    gt = prepared.eval_tensors["gt"].numpy()
    mask = prepared.eval_tensors["mask"].numpy().astype(bool)
    for s_idx, sample in enumerate(prepared.eval_samples):
        times = image_seq.timestamps[sample.image_indices]
        for traj in trajectories:
            positions = scene.trajectory_positions(traj, times)
            for f_idx in range(len(times)):
                lone = scene.render_frame(
                    room, cfg.camera, [(positions[f_idx], traj.color)]
                )
                footprint = np.any(np.abs(lone - background) > 1e-6, axis=-1)
                region = footprint & mask[s_idx, f_idx]
                if not region.any():
                    continue
                diff = restored[s_idx, f_idx][region] - gt[s_idx, f_idx][region]
                errors[traj.pedestrian_id].append(float(np.mean(diff**2)))
    return {
        str(pid): (float(np.mean(v)) if v else math.nan) for pid, v in errors.items()
    }
