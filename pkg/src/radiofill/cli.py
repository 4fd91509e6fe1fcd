"""Command-line surface: simulate, preprocess, train, eval, sweep, report.

Stable exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 training
divergence, 5 checkpoint mismatch, 6 partial sweep failure. Every
artifact-producing command writes a run manifest into its output directory
before doing any work; all randomness flows from --seed (or the config's
seed) through stable purpose-keyed sub-seeds.
"""

import argparse
import csv
import datetime
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass

from . import __version__, storage
from .errors import CheckpointMismatchError, TrainingDivergedError
from .experiments import ConfigError, ExperimentConfig, config_hash, prepare_run, run_experiment
from .seeding import derive_seed

log = logging.getLogger("radiofill")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_CHECKPOINT = 5
EXIT_SWEEP_PARTIAL = 6


@dataclass
class RunManifest:
    command: str
    config_path: str
    config_hash: str
    seed: int
    tool_version: str
    started_at: str
    finished_at: str = ""
    outputs: list = None

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "run_manifest.json"), "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _start_manifest(command, config_path, cfg_dict, seed, out_dir, outputs):
    manifest = RunManifest(
        command=command,
        config_path=str(config_path or ""),
        config_hash=hashlib.sha256(json.dumps(cfg_dict, sort_keys=True).encode()).hexdigest()[:16],
        seed=int(seed),
        tool_version=__version__,
        started_at=_now(),
        outputs=list(outputs),
    )
    manifest.write(out_dir)
    return manifest


def _finish_manifest(manifest, out_dir):
    manifest.finished_at = _now()
    manifest.write(out_dir)


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON (line {exc.lineno}): {exc.msg}") from exc


def _require(cfg, path):
    cur = cfg
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise ConfigError(f"missing required field {path!r}")
        cur = cur[part]
    return cur


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

SIMULATE_DEFAULTS = {
    "version": 1,
    "duration_s": 30.0,
    "seed": 0,
    "room": {
        "width": 6.0,
        "depth": 4.0,
        "tx_pose": [0.5, 2.0],
        "cameras": [
            {
                "position": [3.0, 0.2],
                "view_direction": [0.0, 1.0],
                "field_of_view": 1.5707963267948966,
                "image_size": [64, 64],
            }
        ],
        "sensors": [
            {"sensor_id": 1, "position": [1.0, 1.0]},
            {"sensor_id": 2, "position": [5.0, 1.0]},
            {"sensor_id": 3, "position": [1.0, 3.0]},
            {"sensor_id": 4, "position": [5.0, 3.0]},
        ],
    },
    "channel": {
        "n_tx": 1,
        "n_rx": 1,
        "n_subcarriers": 64,
        "carrier_wavelengths": None,
        "reflection_gain": 1.0,
        "noise_std": 0.005,
        "csi_rate": 100.0,
        "camera_rate": 10.0,
    },
    "scenarios": [
        {
            "pedestrian_id": 1,
            "color": [0.85, 0.15, 0.15],
            "motion": "counterclockwise-loop",
            "room_loop": {"period": 12.0, "margin_frac": 0.2},
        }
    ],
}


def _build_simulation(cfg):
    from . import scene

    room_d = _require(cfg, "room")
    for key in ("width", "depth", "tx_pose", "cameras", "sensors"):
        _require(cfg, f"room.{key}")
    room = scene.room_from_dict(room_d)
    channel = scene.channel_params_from_dict({**SIMULATE_DEFAULTS["channel"], **cfg.get("channel", {})})
    scenarios = []
    for idx, sc in enumerate(_require(cfg, "scenarios")):
        if "room_loop" not in sc and "waypoints" not in sc:
            raise ConfigError(f"scenarios[{idx}] needs either 'waypoints' or 'room_loop'")
        if "room_loop" in sc:
            loop = sc["room_loop"]
            waypoints = scene.room_loop(
                room,
                period=loop.get("period", 12.0),
                clockwise=sc.get("motion", "clockwise-loop") == "clockwise-loop",
                margin_frac=loop.get("margin_frac", 0.2),
            )
        else:
            waypoints = [(t, tuple(p)) for t, p in sc["waypoints"]]
        scenarios.append(
            scene.PedestrianTrajectory(
                pedestrian_id=sc.get("pedestrian_id", idx + 1),
                color=tuple(sc.get("color", [0.85, 0.15, 0.15])),
                waypoints=waypoints,
                motion=sc.get("motion", "straight-line"),
            )
        )
    return room, scenarios, channel, float(_require(cfg, "duration_s"))


def cmd_simulate(args):
    if args.print_config:
        print(json.dumps(SIMULATE_DEFAULTS, indent=2, sort_keys=True))
        return EXIT_OK
    from . import scene

    cfg = _load_json(args.config)
    if cfg.get("version") != 1:
        raise ConfigError(f"unsupported simulate config version {cfg.get('version')!r}")
    try:
        room, scenarios, channel, duration = _build_simulation(cfg)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    manifest = _start_manifest(
        "simulate", args.config, cfg, seed, args.out, [storage.MANIFEST_NAME]
    )
    scene.generate_dataset(room, scenarios, channel, duration, args.out, seed=seed)
    _finish_manifest(manifest, args.out)
    log.info("dataset written to %s", args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------


def cmd_preprocess(args):
    import numpy as np

    from . import data
    from .preprocess import CsiPreprocessor

    _, csis = data.load_dataset(args.dataset)
    if args.sensors:
        csis = [c for c in csis if c.sensor_id in set(args.sensors)]
        if not csis:
            raise ConfigError(f"no requested sensors found in {args.dataset}")
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    manifest = _start_manifest(
        "preprocess", args.dataset, {"pca_k": args.pca_k, "train_fraction": args.train_fraction},
        args.seed, out_dir, [os.path.basename(args.out)],
    )
    pre = CsiPreprocessor(pca_k=args.pca_k)
    cut = {c.sensor_id: c.values[: max(1, int(round(args.train_fraction * len(c.values))))] for c in csis}
    pre.fit(cut)
    with open(args.out, "w") as fh:
        json.dump(pre.to_dict(), fh, indent=2)
    _finish_manifest(manifest, out_dir)
    log.info("preprocessor (feature width %d) written to %s", pre.feature_dim(), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "version": 1,
    "seed": 0,
    "camera": 0,
    "sensors": None,
    "L_img": 8,
    "L_csi": 64,
    "stride": 8,
    "pca_k": 10,
    "train_fraction": 1.0,
    "eval_split": "train",
    "mask": {"kind": "rectangle", "coverage": 0.9, "fill_value": 0.0},
    "model": {},
    "train": {"epochs": 100, "batch_size": 8, "lr": 1e-3, "ssim_weight": 0.2},
}


def _experiment_from_train_config(cfg, dataset, out_dir, name):
    merged = {**TRAIN_DEFAULTS, **cfg}
    merged.pop("version", None)
    return ExperimentConfig(
        name=name,
        dataset=dataset,
        kind="mode_comparison",
        out_dir=out_dir,
        seed=merged["seed"],
        camera=merged["camera"],
        sensors=merged["sensors"],
        L_img=merged["L_img"],
        L_csi=merged["L_csi"],
        stride=merged["stride"],
        pca_k=merged["pca_k"],
        mask=merged["mask"],
        model=merged["model"],
        train=merged["train"],
        eval_split=merged["eval_split"],
        train_fraction=merged["train_fraction"],
    )


def cmd_train(args):
    if args.print_config:
        print(json.dumps(TRAIN_DEFAULTS, indent=2, sort_keys=True))
        return EXIT_OK
    from .model import TrainConfig, build_model, load_checkpoint, restore_optimizer, save_checkpoint, train_model

    cfg = _load_json(args.config)
    if cfg.get("version") != 1:
        raise ConfigError(f"unsupported train config version {cfg.get('version')!r}")
    if args.seed is not None:
        cfg["seed"] = args.seed
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    exp = _experiment_from_train_config(cfg, args.dataset, out_dir, "train")
    if args.mode == "rf-only" and exp.mask.get("kind") != "full":
        log.info("rf-only mode: forcing a full occlusion mask regardless of mask config")
        exp.mask = {**exp.mask, "kind": "full", "coverage": 1.0}
    manifest = _start_manifest(
        "train", args.config, exp.to_dict(), exp.seed, out_dir,
        [os.path.basename(args.out), "loss_curve.csv"],
    )

    prepared = prepare_run(exp)
    train_cfg = TrainConfig(
        **{**exp.train, "mode": args.mode, "seed": derive_seed(exp.seed, "train", args.mode)}
    )
    prior_curve = []
    start_epoch = 0
    if args.resume:
        model, stored_pre, _, meta, opt_state = load_checkpoint(args.resume)
        if model.cfg.csi_feature_dim != prepared.model_cfg.csi_feature_dim:
            raise CheckpointMismatchError(
                f"resumed checkpoint expects {model.cfg.csi_feature_dim} CSI features per frame, "
                f"dataset yields {prepared.model_cfg.csi_feature_dim}"
            )
        # Rebuild the samples with the checkpoint's fitted preprocessing so the
        # continued run sees identical inputs.
        from .model import samples_to_tensors

        prepared.preprocessor = stored_pre
        prepared.train_tensors = samples_to_tensors(prepared.train_samples, stored_pre)
        optimizer = restore_optimizer(model, opt_state, train_cfg.lr)
        prior_curve = list(meta.get("loss_curve", []))
        start_epoch = int(meta.get("epoch", len(prior_curve)))
    else:
        model = build_model(prepared.model_cfg, seed=train_cfg.seed)
        optimizer = None

    total = start_epoch + train_cfg.epochs
    result, optimizer = train_model(
        model, prepared.train_tensors, train_cfg,
        total_epochs=total, start_epoch=start_epoch, optimizer=optimizer,
    )
    curve = prior_curve + result.loss_curve
    save_checkpoint(
        args.out, model, prepared.preprocessor, train_cfg,
        train_meta={
            "loss_curve": curve,
            "epoch": result.epochs_done,
            "run_config": exp.to_dict(),
        },
        optimizer=optimizer,
    )
    curve_path = os.path.join(out_dir, "loss_curve.csv")
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(curve):
            writer.writerow([i + 1, f"{loss:.9g}"])
    _finish_manifest(manifest, out_dir)
    log.info("checkpoint written to %s (%d epochs, final loss %.5f)", args.out, len(curve), curve[-1])
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args):
    from . import metrics
    from .model import evaluate_model, load_checkpoint, samples_to_tensors

    model, pre, train_cfg, meta, _ = load_checkpoint(args.checkpoint)
    if args.config:
        cfg = _load_json(args.config)
    elif "run_config" in meta:
        # Window and mask exactly as the checkpoint was trained.
        stored = meta["run_config"]
        cfg = {
            "version": 1,
            "seed": stored.get("seed", 0),
            "camera": stored.get("camera", 0),
            "sensors": stored.get("sensors"),
            "L_img": stored["L_img"],
            "L_csi": stored["L_csi"],
            "stride": stored["stride"],
            "train_fraction": stored.get("train_fraction", 1.0),
            "mask": stored["mask"],
            "model": stored.get("model", {}),
            "train": stored.get("train", {}),
        }
    else:
        cfg = dict(TRAIN_DEFAULTS)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg["eval_split"] = args.split
    cfg["pca_k"] = pre.pca_k
    exp = _experiment_from_train_config(cfg, args.dataset, args.out_dir, "eval")
    if train_cfg.mode == "rf-only" and exp.mask.get("kind") != "full":
        exp.mask = {**exp.mask, "kind": "full", "coverage": 1.0}
    manifest = _start_manifest(
        "eval", args.checkpoint, exp.to_dict(), exp.seed, args.out_dir,
        ["metrics.json", "results.csv", "samples.png"],
    )
    from .preprocess import PreprocessError

    try:
        prepared = prepare_run(exp, sensor_ids=pre.sensor_ids(), preprocessor=pre)
    except PreprocessError as exc:
        raise CheckpointMismatchError(
            f"checkpoint preprocessing does not fit dataset {args.dataset}: {exc}"
        ) from exc
    if prepared.model_cfg.csi_feature_dim != model.cfg.csi_feature_dim:
        raise CheckpointMismatchError(
            f"dataset yields {prepared.model_cfg.csi_feature_dim} CSI features per frame but the "
            f"checkpoint expects {model.cfg.csi_feature_dim}"
        )
    tensors = prepared.eval_tensors
    psnr_values, ssim_values, restored = evaluate_model(model, tensors, train_cfg.mode)
    record = metrics.aggregate(
        f"eval/{args.split}", train_cfg.mode, psnr_values, ssim_values,
        config_summary={"checkpoint": args.checkpoint, "split": args.split},
    )
    record.save(os.path.join(args.out_dir, "metrics.json"))
    metrics.append_results_row(
        os.path.join(args.out_dir, "results.csv"), record,
        L=model.cfg.L_csi, k=pre.pca_k, n_sensors=model.cfg.n_sensors,
        config_hash=config_hash(exp), seed=exp.seed,
    )
    from . import report

    n_show = min(6, tensors["gt"].shape[0])
    report.save_sample_grid(
        os.path.join(args.out_dir, "samples.png"),
        tensors["gt"].numpy()[:n_show, 0],
        tensors["defective"].numpy()[:n_show, 0],
        restored[:n_show, 0],
    )
    _finish_manifest(manifest, args.out_dir)
    log.info(
        "eval %s: mean PSNR %.3f dB, mean SSIM %.4f over %d frames",
        args.split, record.mean_psnr, record.mean_ssim, len(psnr_values),
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep + report
# ---------------------------------------------------------------------------


def cmd_sweep(args):
    cfg_dict = _load_json(args.experiment)
    cfg = ExperimentConfig.from_dict(cfg_dict)
    if args.seed is not None:
        cfg.seed = args.seed
    manifest = _start_manifest(
        "sweep", args.experiment, cfg.to_dict(), cfg.seed, cfg.out_dir, ["results.csv"]
    )
    outcome = run_experiment(cfg)
    _finish_manifest(manifest, cfg.out_dir)
    log.info(
        "sweep %s: %d ran, %d skipped, %d failed",
        cfg.name, len(outcome.ran), len(outcome.skipped), len(outcome.failed),
    )
    if outcome.failed:
        log.error("failed points: %s", ", ".join(outcome.failed))
        return EXIT_SWEEP_PARTIAL
    return EXIT_OK


def cmd_report(args):
    from . import metrics, report

    rows = metrics.read_results_rows(args.results)
    if not rows:
        raise ConfigError(f"no rows found in {args.results}")
    os.makedirs(args.out_dir, exist_ok=True)
    manifest = _start_manifest(
        "report", args.results, {"rows": len(rows)}, 0, args.out_dir, ["summary.csv"]
    )
    with open(os.path.join(args.out_dir, "summary.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    labels = [r["run_id"] for r in rows]
    report.save_mode_bars(
        os.path.join(args.out_dir, "metrics_by_run.png"),
        labels,
        [float(r["mean_psnr"]) for r in rows],
        [float(r["mean_ssim"]) for r in rows],
    )
    with_L = [r for r in rows if r.get("L")]
    if len({r["L"] for r in with_L}) > 1:
        ordered = sorted(with_L, key=lambda r: int(r["L"]))
        report.save_metric_curve(
            os.path.join(args.out_dir, "metrics_vs_L.png"),
            [int(r["L"]) for r in ordered],
            [float(r["mean_psnr"]) for r in ordered],
            [float(r["mean_ssim"]) for r in ordered],
            xlabel="CSI window length L",
        )
    _finish_manifest(manifest, args.out_dir)
    log.info("report written to %s", args.out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="radiofill",
        description="CSI-guided occlusion removal: simulate, preprocess, train, eval, sweep, report.",
    )
    parser.add_argument("--version", action="version", version=f"radiofill {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic capture session")
    p.add_argument("--config", help="simulation config JSON")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--print-config", action="store_true", help="dump the default config and exit")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", help="fit the CSI preprocessing pipeline on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output preprocessor JSON")
    p.add_argument("--pca-k", type=int, default=10)
    p.add_argument("--sensors", type=int, nargs="*", default=None)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the restoration model")
    p.add_argument("--dataset")
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--mode", choices=["multimodal", "image-only", "rf-only"], default="multimodal")
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--config", help="training config JSON used for windowing/masking")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a declarative experiment")
    p.add_argument("--experiment", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render figures and a summary from a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and not args.print_config and (not args.config or not args.out):
        parser.error("simulate requires --config and --out")
    if args.command == "train" and not args.print_config and (
        not args.dataset or not args.config or not args.out
    ):
        parser.error("train requires --dataset, --config, and --out")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except CheckpointMismatchError as exc:
        log.error("checkpoint mismatch: %s", exc)
        return EXIT_CHECKPOINT
    except storage.DatasetError as exc:
        log.error("dataset error: %s", exc)
        return EXIT_IO
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
