"""Training, evaluation, and checkpoint archives for the restoration network.

The loss pairs a pixel term with the evaluation metric itself:
mean absolute error + ssim_weight * (1 - SSIM). Training is deterministic
given the seed (seeded init, seeded shuffling, no stochastic layers), and the
learning rate follows a cosine schedule computed from the epoch index so
resumed runs continue the same schedule.

A checkpoint is a single zip archive: every weight as a named little-endian
float32 `.npy` entry, the model configuration and preprocessing pipeline as
JSON by value, and (when available) optimizer state for seamless resumption.
Loading rebuilds a bit-identical forward function.
"""

import io
import json
import math
import time
import zipfile
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .. import metrics
from ..errors import CheckpointMismatchError, TrainingDivergedError
from ..preprocess import CsiPreprocessor
from ..seeding import derive_seed
from .net import ModelConfig, RadioFillNet


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    lr: float = 1e-3
    lr_min: float = 1e-5
    ssim_weight: float = 0.2
    mode: str = "multimodal"
    seed: int = 0

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def uniform_ssim(pred, target, window=metrics.SSIM_WINDOW, k1=metrics.SSIM_K1, k2=metrics.SSIM_K2):
    """Differentiable SSIM over uniform valid windows; inputs (N, C, H, W)."""
    c1, c2 = k1**2, k2**2
    mu_p = F.avg_pool2d(pred, window, stride=1)
    mu_t = F.avg_pool2d(target, window, stride=1)
    var_p = F.avg_pool2d(pred * pred, window, stride=1) - mu_p**2
    var_t = F.avg_pool2d(target * target, window, stride=1) - mu_t**2
    cov = F.avg_pool2d(pred * target, window, stride=1) - mu_p * mu_t
    num = (2 * mu_p * mu_t + c1) * (2 * cov + c2)
    den = (mu_p**2 + mu_t**2 + c1) * (var_p + var_t + c2)
    return (num / den).mean()


def reconstruction_loss(pred, target, ssim_weight=0.2):
    """MAE over all pixels plus ssim_weight * (1 - SSIM); pure MAE at weight 0."""
    mae = (pred - target).abs().mean()
    if ssim_weight == 0:
        return mae
    b, L = pred.shape[:2]
    p = pred.reshape(b * L, *pred.shape[2:]).permute(0, 3, 1, 2)
    t = target.reshape(b * L, *target.shape[2:]).permute(0, 3, 1, 2)
    return mae + ssim_weight * (1.0 - uniform_ssim(p, t))


def samples_to_tensors(samples, preprocessor, dtype=torch.float32):
    """Collate SyncedSamples into training tensors.

    CSI windows go through the fitted preprocessor and flatten per frame to
    (n_sensors, L_csi, feature_dim), sensors ordered by id. Returns a dict of
    gt, defective, mask, csi tensors stacked over samples.
    """
    sensor_ids = preprocessor.sensor_ids()
    gt, defective, mask, csi = [], [], [], []
    for s in samples:
        gt.append(torch.from_numpy(np.ascontiguousarray(s.gt_window)))
        defective.append(torch.from_numpy(np.ascontiguousarray(s.defective_window)))
        mask.append(torch.from_numpy(s.mask_window.astype(np.float32)))
        feats = []
        for sid in sensor_ids:
            f = preprocessor.transform_sensor(sid, s.csi_windows[sid])
            feats.append(f.reshape(f.shape[0], -1))  # (L_csi, tx*rx*f)
        csi.append(torch.from_numpy(np.stack(feats).astype(np.float32)))
    return {
        "gt": torch.stack(gt).to(dtype),
        "defective": torch.stack(defective).to(dtype),
        "mask": torch.stack(mask).to(dtype),
        "csi": torch.stack(csi).to(dtype),
    }


def _cosine_lr(cfg, epoch, total_epochs):
    if total_epochs <= 1:
        return cfg.lr
    frac = min(max(epoch / (total_epochs - 1), 0.0), 1.0)
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + math.cos(math.pi * frac))


@dataclass
class TrainResult:
    loss_curve: list = field(default_factory=list)
    wall_seconds: float = 0.0
    epochs_done: int = 0


def train_model(
    model,
    tensors,
    cfg,
    total_epochs=None,
    start_epoch=0,
    optimizer=None,
    epoch_callback=None,
):
    """Run the training loop, returning the loss curve and the optimizer.

    `tensors` is the dict from samples_to_tensors. `total_epochs` anchors the
    cosine schedule (defaults to cfg.epochs) so a resumed run with
    start_epoch > 0 follows the same schedule as an uninterrupted one.
    `epoch_callback(epoch, mean_loss)` may return True to stop early.
    """
    total_epochs = total_epochs or cfg.epochs
    n = tensors["gt"].shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    if optimizer is None:
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    shuffle_rng = torch.Generator().manual_seed(derive_seed(cfg.seed, "shuffle", start_epoch))

    result = TrainResult()
    started = time.time()
    model.train()
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        lr = _cosine_lr(cfg, epoch, total_epochs)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = torch.randperm(n, generator=shuffle_rng)
        epoch_losses = []
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            optimizer.zero_grad()
            restored = model(
                tensors["defective"][idx], tensors["mask"][idx], tensors["csi"][idx], cfg.mode
            )
            loss = reconstruction_loss(restored, tensors["gt"][idx], cfg.ssim_weight)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"loss became non-finite ({value}) at epoch {epoch}, batch {i // cfg.batch_size}; "
                    f"lr={lr:.3g}, mode={cfg.mode}"
                )
            loss.backward()
            optimizer.step()
            epoch_losses.append(value)
        mean_loss = float(np.mean(epoch_losses))
        result.loss_curve.append(mean_loss)
        result.epochs_done = epoch + 1
        if epoch_callback is not None and epoch_callback(epoch, mean_loss):
            break
    result.wall_seconds = time.time() - started
    model.eval()
    return result, optimizer


@torch.no_grad()
def evaluate_model(model, tensors, mode, batch_size=8):
    """Per-frame PSNR/SSIM of restored vs ground-truth windows."""
    model.eval()
    psnr_values, ssim_values = [], []
    restored_frames = []
    n = tensors["gt"].shape[0]
    for i in range(0, n, batch_size):
        sl = slice(i, i + batch_size)
        restored = model(tensors["defective"][sl], tensors["mask"][sl], tensors["csi"][sl], mode)
        restored = restored.cpu().numpy()
        gt = tensors["gt"][sl].cpu().numpy()
        for w_idx in range(restored.shape[0]):
            for f_idx in range(restored.shape[1]):
                psnr_values.append(metrics.psnr(restored[w_idx, f_idx], gt[w_idx, f_idx]))
                ssim_values.append(metrics.ssim(restored[w_idx, f_idx], gt[w_idx, f_idx]))
        restored_frames.append(restored)
    return psnr_values, ssim_values, np.concatenate(restored_frames)


# ---------------------------------------------------------------------------
# Checkpoint archive
# ---------------------------------------------------------------------------

_WEIGHT_PREFIX = "weights/"
_OPT_PREFIX = "optimizer/"


def _write_npy(zf, name, array):
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(array), allow_pickle=False)
    zf.writestr(name, buf.getvalue())


def _read_npy(zf, name):
    with zf.open(name) as fh:
        return np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)


def save_checkpoint(path, model, preprocessor, train_cfg, train_meta=None, optimizer=None):
    """Write the single-archive checkpoint described in the module docstring."""
    meta = dict(train_meta or {})
    meta["train_config"] = train_cfg.to_dict()
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, tensor in model.state_dict().items():
            _write_npy(
                zf,
                _WEIGHT_PREFIX + name + ".npy",
                tensor.detach().cpu().numpy().astype("<f4"),
            )
        zf.writestr("model_config.json", json.dumps(model.cfg.to_dict(), sort_keys=True))
        zf.writestr("preprocess.json", json.dumps(preprocessor.to_dict(), sort_keys=True))
        zf.writestr("train_meta.json", json.dumps(meta, sort_keys=True))
        if optimizer is not None:
            state = optimizer.state_dict()
            named = [n for n, _ in model.named_parameters()]
            for group in state["param_groups"]:
                for p_idx in group["params"]:
                    p_state = state["state"].get(p_idx)
                    if p_state is None:
                        continue
                    base = f"{_OPT_PREFIX}{named[p_idx]}"
                    _write_npy(zf, base + ".exp_avg.npy", p_state["exp_avg"].cpu().numpy())
                    _write_npy(zf, base + ".exp_avg_sq.npy", p_state["exp_avg_sq"].cpu().numpy())
                    _write_npy(zf, base + ".step.npy", np.asarray(float(p_state["step"])))


def load_checkpoint(path, expect_model_cfg=None):
    """Rebuild (model, preprocessor, train_cfg, meta, optimizer_state) from an archive.

    Raises CheckpointMismatchError when the archive's weights do not line up
    with its declared configuration, or when `expect_model_cfg` is given and
    differs from the stored one.
    """
    with zipfile.ZipFile(path) as zf:
        names = set(zf.namelist())
        for required in ("model_config.json", "preprocess.json", "train_meta.json"):
            if required not in names:
                raise CheckpointMismatchError(f"{path}: missing archive member {required}")
        model_cfg = ModelConfig.from_dict(json.loads(zf.read("model_config.json")))
        if expect_model_cfg is not None and expect_model_cfg != model_cfg:
            raise CheckpointMismatchError(
                f"{path}: stored model configuration differs from the requested one"
            )
        preprocessor = CsiPreprocessor.from_dict(json.loads(zf.read("preprocess.json")))
        meta = json.loads(zf.read("train_meta.json"))
        train_cfg = TrainConfig.from_dict(meta.pop("train_config"))

        model = RadioFillNet(model_cfg)
        state = {}
        for name, tensor in model.state_dict().items():
            member = _WEIGHT_PREFIX + name + ".npy"
            if member not in names:
                raise CheckpointMismatchError(f"{path}: missing weight {name}")
            arr = _read_npy(zf, member)
            if tuple(arr.shape) != tuple(tensor.shape):
                raise CheckpointMismatchError(
                    f"{path}: weight {name} has shape {arr.shape}, expected {tuple(tensor.shape)}"
                )
            state[name] = torch.from_numpy(np.ascontiguousarray(arr)).to(tensor.dtype)
        model.load_state_dict(state)
        model.eval()

        opt_state = {}
        for name in names:
            if name.startswith(_OPT_PREFIX):
                opt_state[name[len(_OPT_PREFIX) : -len(".npy")]] = _read_npy(zf, name)
    return model, preprocessor, train_cfg, meta, opt_state


def restore_optimizer(model, opt_state, lr):
    """Build an Adam optimizer and load archived moments, if any."""
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    if not opt_state:
        return optimizer
    for name, param in model.named_parameters():
        exp_avg = opt_state.get(f"{name}.exp_avg")
        exp_avg_sq = opt_state.get(f"{name}.exp_avg_sq")
        step = opt_state.get(f"{name}.step")
        if exp_avg is None or exp_avg_sq is None or step is None:
            continue
        optimizer.state[param] = {
            "step": torch.tensor(float(np.asarray(step).reshape(-1)[0])),
            "exp_avg": torch.from_numpy(np.ascontiguousarray(exp_avg)),
            "exp_avg_sq": torch.from_numpy(np.ascontiguousarray(exp_avg_sq)),
        }
    return optimizer
