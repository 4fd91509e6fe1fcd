import hashlib
import json
import os

import numpy as np
import pytest

from radiofill import cli, metrics, storage
from radiofill.data import load_dataset


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def simulate_config(**overrides):
    cfg = {
        "version": 1,
        "duration_s": 4.0,
        "seed": 3,
        "room": {
            "width": 6.0,
            "depth": 4.0,
            "tx_pose": [0.5, 2.0],
            "cameras": [
                {
                    "position": [3.0, 0.2],
                    "view_direction": [0.0, 1.0],
                    "field_of_view": 1.5707963267948966,
                    "image_size": [32, 32],
                }
            ],
            "sensors": [
                {"sensor_id": 1, "position": [1.2, 1.0]},
                {"sensor_id": 2, "position": [4.8, 1.0]},
            ],
        },
        "channel": {
            "n_tx": 1,
            "n_rx": 1,
            "n_subcarriers": 16,
            "reflection_gain": 1.0,
            "noise_std": 0.002,
            "csi_rate": 50.0,
            "camera_rate": 10.0,
        },
        "scenarios": [
            {
                "pedestrian_id": 1,
                "color": [0.85, 0.15, 0.15],
                "motion": "counterclockwise-loop",
                "room_loop": {"period": 4.0, "margin_frac": 0.2},
            }
        ],
    }
    cfg.update(overrides)
    return cfg


def train_config(**overrides):
    cfg = {
        "version": 1,
        "seed": 5,
        "camera": 0,
        "L_img": 4,
        "L_csi": 16,
        "stride": 4,
        "pca_k": 4,
        "train_fraction": 1.0,
        "eval_split": "train",
        "mask": {"kind": "rectangle", "coverage": 0.9, "fill_value": 0.0},
        "model": {
            "patch_size": 4,
            "embed_dim": 16,
            "n_heads": 2,
            "n_layers_img": 2,
            "n_layers_csi": 1,
            "attn_window": 4,
            "decoder_channels": [16, 12, 8],
            "agg_img_dim": 8,
            "agg_csi_dim": 8,
            "csi_patch_len": 4,
        },
        "train": {"epochs": 2, "batch_size": 8, "lr": 1e-3},
    }
    cfg.update(overrides)
    return cfg


def write_json(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def dataset_digest(directory, skip=("run_manifest.json",)):
    h = hashlib.sha256()
    for name in sorted(os.listdir(directory)):
        if name in skip:
            continue
        h.update(name.encode())
        with open(os.path.join(directory, name), "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = write_json(root / "sim.json", simulate_config())
    out = root / "dataset"
    assert run_cli("simulate", "--config", cfg_path, "--out", out) == cli.EXIT_OK
    return str(out)


@pytest.fixture(scope="module")
def cli_checkpoint(tmp_path_factory, cli_dataset):
    root = tmp_path_factory.mktemp("ckpt")
    cfg_path = write_json(root / "train.json", train_config())
    ckpt = root / "model.ckpt"
    assert run_cli(
        "train", "--dataset", cli_dataset, "--config", cfg_path, "--mode", "multimodal",
        "--out", ckpt,
    ) == cli.EXIT_OK
    return str(ckpt)


class TestSimulate:
    def test_print_config(self, capsys):
        assert run_cli("simulate", "--print-config") == cli.EXIT_OK
        dumped = json.loads(capsys.readouterr().out)
        assert dumped["room"]["width"] == 6.0

    def test_dataset_has_expected_counts(self, cli_dataset):
        manifest = storage.read_manifest(cli_dataset)
        assert manifest["cameras"][0]["frames_shape"][0] == 40  # 4 s * 10 fps
        assert manifest["sensors"][0]["values_shape"][0] == 200  # 4 s * 50 Hz
        assert os.path.exists(os.path.join(cli_dataset, "run_manifest.json"))

    def test_missing_field_exits_2_naming_it(self, tmp_path, caplog):
        cfg = simulate_config()
        del cfg["room"]["width"]
        cfg_path = write_json(tmp_path / "bad.json", cfg)
        code = run_cli("simulate", "--config", cfg_path, "--out", tmp_path / "d")
        assert code == cli.EXIT_CONFIG
        assert "width" in caplog.text

    def test_invalid_json_exits_2(self, tmp_path):
        bad = tmp_path / "broken.json"
        bad.write_text("{not json")
        assert run_cli("simulate", "--config", bad, "--out", tmp_path / "d") == cli.EXIT_CONFIG

    def test_same_seed_byte_identical(self, tmp_path):
        cfg_path = write_json(tmp_path / "sim.json", simulate_config(duration_s=2.0))
        digests = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run_cli("simulate", "--config", cfg_path, "--out", out) == cli.EXIT_OK
            digests.append(dataset_digest(out))
        assert digests[0] == digests[1]

    def test_different_seed_differs(self, tmp_path):
        cfg_path = write_json(tmp_path / "sim.json", simulate_config(duration_s=2.0))
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli("simulate", "--config", cfg_path, "--out", out_a, "--seed", 1) == 0
        assert run_cli("simulate", "--config", cfg_path, "--out", out_b, "--seed", 2) == 0
        assert dataset_digest(out_a) != dataset_digest(out_b)


class TestPreprocessCommand:
    def test_writes_pipeline_json(self, cli_dataset, tmp_path):
        out = tmp_path / "pre.json"
        assert run_cli(
            "preprocess", "--dataset", cli_dataset, "--out", out, "--pca-k", 4
        ) == cli.EXIT_OK
        payload = json.loads(out.read_text())
        assert payload["pca_k"] == 4
        assert set(payload["sensors"]) == {"1", "2"}
        # PCA component rows are serialized by value.
        comp = np.asarray(payload["sensors"]["1"]["pca"]["components"])
        assert comp.shape == (4, 16)


class TestTrain:
    def test_print_config(self, capsys):
        assert run_cli("train", "--print-config") == cli.EXIT_OK
        assert json.loads(capsys.readouterr().out)["train"]["epochs"] == 100

    def test_checkpoint_and_curve_written(self, cli_checkpoint):
        out_dir = os.path.dirname(cli_checkpoint)
        assert os.path.exists(cli_checkpoint)
        assert os.path.exists(os.path.join(out_dir, "loss_curve.csv"))
        manifest = json.loads(open(os.path.join(out_dir, "run_manifest.json")).read())
        assert manifest["command"] == "train"
        assert manifest["finished_at"]

    def test_rf_only_forces_full_mask_with_notice(self, cli_dataset, tmp_path, caplog):
        import logging

        caplog.set_level(logging.INFO)
        cfg_path = write_json(tmp_path / "train.json", train_config())
        code = run_cli(
            "train", "--dataset", cli_dataset, "--config", cfg_path,
            "--mode", "rf-only", "--out", tmp_path / "rf.ckpt",
        )
        assert code == cli.EXIT_OK
        assert "full occlusion mask" in caplog.text

    def test_missing_dataset_exits_3(self, tmp_path):
        cfg_path = write_json(tmp_path / "train.json", train_config())
        code = run_cli(
            "train", "--dataset", tmp_path / "nope", "--config", cfg_path,
            "--out", tmp_path / "x.ckpt",
        )
        assert code == cli.EXIT_IO

    def test_resume_continues_loss_curve(self, cli_dataset, cli_checkpoint, tmp_path):
        cfg_path = write_json(tmp_path / "train.json", train_config(train={"epochs": 2, "batch_size": 8, "lr": 1e-3}))
        out = tmp_path / "resumed.ckpt"
        code = run_cli(
            "train", "--dataset", cli_dataset, "--config", cfg_path,
            "--out", out, "--resume", cli_checkpoint,
        )
        assert code == cli.EXIT_OK
        rows = list(open(os.path.dirname(str(out)) + "/loss_curve.csv"))
        assert len(rows) == 1 + 4  # header + 2 prior + 2 new epochs


class TestEval:
    def test_eval_outputs_and_determinism(self, cli_dataset, cli_checkpoint, tmp_path):
        records = []
        for name in ("e1", "e2"):
            out_dir = tmp_path / name
            code = run_cli(
                "eval", "--dataset", cli_dataset, "--checkpoint", cli_checkpoint,
                "--split", "train", "--out-dir", out_dir,
            )
            assert code == cli.EXIT_OK
            records.append(json.loads((out_dir / "metrics.json").read_text()))
        assert records[0]["mean_psnr"] == records[1]["mean_psnr"]
        assert records[0]["psnr_values"] == records[1]["psnr_values"]

    def test_grid_has_four_columns_and_means_recompute(self, cli_dataset, cli_checkpoint, tmp_path):
        out_dir = tmp_path / "e"
        assert run_cli(
            "eval", "--dataset", cli_dataset, "--checkpoint", cli_checkpoint,
            "--split", "train", "--out-dir", out_dir,
        ) == cli.EXIT_OK
        import matplotlib.image as mpimg

        grid = mpimg.imread(out_dir / "samples.png")
        assert grid.shape[1] == 4 * 32  # four 32-px columns per sample
        payload = json.loads((out_dir / "metrics.json").read_text())
        assert abs(payload["mean_psnr"] - np.mean(payload["psnr_values"])) < 1e-9
        assert abs(payload["mean_ssim"] - np.mean(payload["ssim_values"])) < 1e-9

    def test_mismatched_dataset_exits_5(self, cli_checkpoint, tmp_path):
        # A dataset with a different subcarrier count yields a different
        # feature width than the checkpoint expects.
        cfg = simulate_config(duration_s=3.0)
        cfg["channel"]["n_subcarriers"] = 8
        cfg_path = write_json(tmp_path / "sim.json", cfg)
        other = tmp_path / "other"
        assert run_cli("simulate", "--config", cfg_path, "--out", other) == cli.EXIT_OK
        code = run_cli(
            "eval", "--dataset", other, "--checkpoint", cli_checkpoint,
            "--split", "train", "--out-dir", tmp_path / "e",
        )
        assert code == cli.EXIT_CHECKPOINT


class TestSweepAndReport:
    def _sweep_config(self, dataset, out_dir, L_list):
        return {
            "version": 1,
            "name": "cli-sweep",
            "dataset": str(dataset),
            "kind": "window_sweep",
            "out_dir": str(out_dir),
            "seed": 5,
            "L_img": 4,
            "L_csi": 16,
            "stride": 4,
            "pca_k": 4,
            "mask": {"kind": "rectangle", "coverage": 0.9, "fill_value": 0.0},
            "model": train_config()["model"],
            "train": {"epochs": 1, "batch_size": 8},
            "eval_split": "train",
            "modes": ["multimodal"],
            "L_list": L_list,
        }

    def test_sweep_rows_resume_and_report(self, cli_dataset, tmp_path):
        out_dir = tmp_path / "sweep"
        cfg_path = write_json(
            tmp_path / "exp.json", self._sweep_config(cli_dataset, out_dir, [8, 16])
        )
        assert run_cli("sweep", "--experiment", cfg_path) == cli.EXIT_OK
        rows = metrics.read_results_rows(out_dir / "results.csv")
        assert len(rows) == 2
        # Re-running skips all points and adds no rows.
        assert run_cli("sweep", "--experiment", cfg_path) == cli.EXIT_OK
        assert len(metrics.read_results_rows(out_dir / "results.csv")) == 2

        report_dir = tmp_path / "report"
        assert run_cli(
            "report", "--results", out_dir / "results.csv", "--out-dir", report_dir
        ) == cli.EXIT_OK
        assert (report_dir / "summary.csv").exists()
        assert (report_dir / "metrics_by_run.png").exists()
        assert (report_dir / "metrics_vs_L.png").exists()

    def test_partial_failure_exits_6(self, cli_dataset, tmp_path):
        out_dir = tmp_path / "partial"
        cfg_path = write_json(
            tmp_path / "exp.json", self._sweep_config(cli_dataset, out_dir, [8, 99_999])
        )
        assert run_cli("sweep", "--experiment", cfg_path) == cli.EXIT_SWEEP_PARTIAL
        assert len(metrics.read_results_rows(out_dir / "results.csv")) == 1

    def test_unknown_experiment_field_exits_2(self, cli_dataset, tmp_path):
        cfg = self._sweep_config(cli_dataset, tmp_path / "x", [8])
        cfg["mystery"] = True
        cfg_path = write_json(tmp_path / "exp.json", cfg)
        assert run_cli("sweep", "--experiment", cfg_path) == cli.EXIT_CONFIG

    def test_report_without_rows_exits_2(self, tmp_path):
        missing = tmp_path / "none.csv"
        assert run_cli("report", "--results", missing, "--out-dir", tmp_path / "r") == cli.EXIT_CONFIG
