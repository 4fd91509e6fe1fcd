import numpy as np
import pytest
import torch

from radiofill import metrics
from radiofill.model import (
    CheckpointMismatchError,
    TrainConfig,
    TrainingDivergedError,
    build_model,
    load_checkpoint,
    reconstruction_loss,
    restore_optimizer,
    save_checkpoint,
    train_model,
)
from radiofill.model.train import uniform_ssim
from radiofill.preprocess import CsiPreprocessor

from test_model import micro_config, micro_inputs


def micro_tensors(cfg, n=8, seed=0):
    g = torch.Generator().manual_seed(seed)
    h, w = cfg.image_size
    gt = torch.rand(n, cfg.L_img, h, w, 3, generator=g)
    mask = (torch.rand(n, cfg.L_img, h, w, generator=g) > 0.5).float()
    defective = gt * (1 - mask.unsqueeze(-1))
    csi = torch.randn(n, cfg.n_sensors, cfg.L_csi, cfg.csi_feature_dim, generator=g)
    return {"gt": gt, "defective": defective, "mask": mask, "csi": csi}


def fitted_preprocessor(n_sub=8, pca_k=3, sensors=(1,)):
    rng = np.random.default_rng(0)
    pre = CsiPreprocessor(pca_k=pca_k)
    pre.fit(
        {
            sid: rng.standard_normal((40, 1, 1, n_sub))
            + 1j * rng.standard_normal((40, 1, 1, n_sub))
            for sid in sensors
        }
    )
    return pre


class TestLoss:
    def test_zero_weight_equals_mae_exactly(self):
        g = torch.Generator().manual_seed(1)
        pred = torch.rand(2, 2, 16, 16, 3, generator=g)
        target = torch.rand(2, 2, 16, 16, 3, generator=g)
        loss = reconstruction_loss(pred, target, ssim_weight=0.0)
        assert torch.equal(loss, (pred - target).abs().mean())

    def test_positive_weight_adds_ssim_term(self):
        g = torch.Generator().manual_seed(2)
        pred = torch.rand(1, 2, 16, 16, 3, generator=g)
        target = torch.rand(1, 2, 16, 16, 3, generator=g)
        mae = (pred - target).abs().mean()
        loss = reconstruction_loss(pred, target, ssim_weight=0.2)
        assert loss > mae  # imperfect SSIM contributes positively

    def test_perfect_prediction_zero_loss(self):
        img = torch.rand(1, 1, 16, 16, 3)
        loss = reconstruction_loss(img, img, ssim_weight=0.2)
        assert abs(float(loss)) < 1e-6

    def test_torch_ssim_matches_reference(self):
        g = torch.Generator().manual_seed(3)
        a = torch.rand(1, 3, 16, 16, generator=g)
        b = torch.rand(1, 3, 16, 16, generator=g)
        ours = float(uniform_ssim(a.double(), b.double()))
        ref = metrics.ssim(
            a[0].permute(1, 2, 0).numpy().astype(np.float64),
            b[0].permute(1, 2, 0).numpy().astype(np.float64),
        )
        assert abs(ours - ref) < 1e-9


class TestTrainLoop:
    def test_loss_decreases_on_overfit_fixture(self):
        cfg = micro_config()
        tensors = micro_tensors(cfg, n=8)
        model = build_model(cfg, 0)
        tc = TrainConfig(epochs=30, batch_size=4, lr=3e-3, seed=0)
        result, _ = train_model(model, tensors, tc)
        assert result.loss_curve[29] < result.loss_curve[0]

    def test_equal_seeds_equal_first_epoch_losses(self):
        cfg = micro_config()
        tensors = micro_tensors(cfg, n=6)
        losses = []
        for _ in range(2):
            model = build_model(cfg, 7)
            tc = TrainConfig(epochs=2, batch_size=3, seed=7)
            result, _ = train_model(model, tensors, tc)
            losses.append(result.loss_curve)
        assert losses[0] == losses[1]  # bit-identical

    def test_different_seeds_differ(self):
        cfg = micro_config()
        tensors = micro_tensors(cfg, n=6)
        curves = []
        for seed in (1, 2):
            model = build_model(cfg, seed)
            result, _ = train_model(model, tensors, TrainConfig(epochs=1, batch_size=3, seed=seed))
            curves.append(result.loss_curve[0])
        assert curves[0] != curves[1]

    def test_divergence_detected(self):
        cfg = micro_config()
        tensors = micro_tensors(cfg, n=4)
        model = build_model(cfg, 0)
        with torch.no_grad():
            model.patch_embed.proj.weight.fill_(float("nan"))
        with pytest.raises(TrainingDivergedError, match="non-finite"):
            train_model(model, tensors, TrainConfig(epochs=1, batch_size=4, seed=0))

    def test_empty_training_set_rejected(self):
        cfg = micro_config()
        tensors = {k: v[:0] for k, v in micro_tensors(cfg).items()}
        model = build_model(cfg, 0)
        with pytest.raises(ValueError, match="empty"):
            train_model(model, tensors, TrainConfig(epochs=1, seed=0))

    def test_early_stop_callback(self):
        cfg = micro_config()
        tensors = micro_tensors(cfg, n=4)
        model = build_model(cfg, 0)
        result, _ = train_model(
            model,
            tensors,
            TrainConfig(epochs=50, batch_size=4, seed=0),
            epoch_callback=lambda epoch, loss: epoch >= 4,
        )
        assert result.epochs_done == 5


class TestCheckpoint:
    def test_roundtrip_bit_identical_forward(self, tmp_path):
        cfg = micro_config()
        tensors = micro_tensors(cfg, n=4)
        model = build_model(cfg, 0)
        tc = TrainConfig(epochs=2, batch_size=4, seed=0)
        result, optimizer = train_model(model, tensors, tc)
        path = tmp_path / "model.ckpt"
        pre = fitted_preprocessor()
        save_checkpoint(path, model, pre, tc, {"loss_curve": result.loss_curve}, optimizer)

        loaded, pre2, tc2, meta, opt_state = load_checkpoint(path)
        d, m, c = micro_inputs(cfg, batch=2, seed=5)
        with torch.no_grad():
            a = model(d, m, c)
            b = loaded(d, m, c)
        assert torch.equal(a, b)
        assert tc2.epochs == 2
        assert meta["loss_curve"] == result.loss_curve
        assert opt_state  # adam moments captured
        probe = np.random.default_rng(1).standard_normal((5, 1, 1, 8)) + 0j
        assert np.allclose(pre.transform_sensor(1, probe), pre2.transform_sensor(1, probe))

    def test_config_mismatch_rejected(self, tmp_path):
        cfg = micro_config()
        model = build_model(cfg, 0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, fitted_preprocessor(), TrainConfig(seed=0))
        other = micro_config(embed_dim=16, n_heads=2)
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(path, expect_model_cfg=other)

    def test_missing_member_rejected(self, tmp_path):
        import zipfile

        cfg = micro_config()
        model = build_model(cfg, 0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, fitted_preprocessor(), TrainConfig(seed=0))
        # Rewrite the archive without one weight entry.
        broken = tmp_path / "broken.ckpt"
        with zipfile.ZipFile(path) as src, zipfile.ZipFile(broken, "w") as dst:
            for name in src.namelist():
                if "patch_embed.proj.weight" in name:
                    continue
                dst.writestr(name, src.read(name))
        with pytest.raises(CheckpointMismatchError, match="patch_embed.proj.weight"):
            load_checkpoint(broken)

    def test_weights_are_float32_little_endian(self, tmp_path):
        import io
        import zipfile

        cfg = micro_config()
        model = build_model(cfg, 0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, fitted_preprocessor(), TrainConfig(seed=0))
        with zipfile.ZipFile(path) as zf:
            weight_names = [n for n in zf.namelist() if n.startswith("weights/")]
            assert weight_names
            arr = np.lib.format.read_array(io.BytesIO(zf.read(weight_names[0])))
            assert arr.dtype == np.dtype("<f4")

    def test_resume_continues_without_discontinuity(self, tmp_path):
        cfg = micro_config()
        tensors = micro_tensors(cfg, n=8)
        model = build_model(cfg, 0)
        tc = TrainConfig(epochs=30, batch_size=4, lr=3e-3, seed=0)
        result, optimizer = train_model(model, tensors, tc, total_epochs=35)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, fitted_preprocessor(), tc, {"epoch": 30}, optimizer)

        loaded, _, _, meta, opt_state = load_checkpoint(path)
        resumed_opt = restore_optimizer(loaded, opt_state, tc.lr)
        tc_more = TrainConfig(epochs=5, batch_size=4, lr=3e-3, seed=0)
        result2, _ = train_model(
            loaded, tensors, tc_more, total_epochs=35, start_epoch=meta["epoch"],
            optimizer=resumed_opt,
        )
        last = result.loss_curve[-1]
        first_resumed = result2.loss_curve[0]
        assert abs(first_resumed - last) <= 0.10 * last
