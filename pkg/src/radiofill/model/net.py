"""The multimodal restoration network.

Four stages. Input: the defective image window (plus its occlusion mask as a
fourth channel) is cut into non-overlapping patches and linearly projected
with a learned positional table, while CSI windows skip embedding and
positional encoding entirely and are merely segmented into flat time-patches.
Encoding: a windowed-attention (shifted-window) encoder for image tokens with
one patch-merging stage, and a conventional pre-norm transformer for CSI
tokens. Aggregation: both feature sets are projected down, placed on the
merged patch grid (CSI features are token-pooled and broadcast), and
concatenated with a pooled copy of the raw defective input. Decoding: a
convolution + 2x upsampling stack back to full resolution, with a learned
1x1 skip from the raw defective input added before the bounded output
activation.

The three operating modes share one architecture: `image-only` zeroes the CSI
tokens, `rf-only` replaces the visual input with a fully-masked constant fill.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..seeding import derive_seed

MODES = ("multimodal", "image-only", "rf-only")

MLP_RATIO = 2


@dataclass
class ModelConfig:
    image_size: tuple = (64, 64)
    patch_size: int = 8
    embed_dim: int = 64
    n_heads: int = 4
    n_layers_img: int = 4
    n_layers_csi: int = 2
    attn_window: int = 4
    csi_feature_dim: int = 10  # per-frame features per sensor (k * n_tx * n_rx)
    n_sensors: int = 4
    L_img: int = 8
    L_csi: int = 64
    csi_patch_len: int = 8
    decoder_channels: tuple = (96, 64, 32, 16)
    agg_img_dim: int = 32
    agg_csi_dim: int = 32
    mask_fill: float = 0.0

    def __post_init__(self):
        h, w = self.image_size
        if h % self.patch_size or w % self.patch_size:
            raise ValueError(
                f"image size {self.image_size} must be divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.n_heads:
            raise ValueError(f"embed_dim {self.embed_dim} must be divisible by n_heads {self.n_heads}")
        gh, gw = self.grid_size
        for side in (gh, gw):
            win = min(self.attn_window, side)
            if side % win:
                raise ValueError(f"attn_window {self.attn_window} must divide grid side {side}")
        if gh % 2 or gw % 2:
            raise ValueError(f"patch grid {gh}x{gw} must be even for patch merging")
        for side in (gh // 2, gw // 2):
            win = min(self.attn_window, side)
            if side % win:
                raise ValueError(
                    f"attn_window {self.attn_window} must divide the merged grid side {side}"
                )
        if self.L_csi % self.csi_patch_len:
            raise ValueError(
                f"L_csi {self.L_csi} must be divisible by csi_patch_len {self.csi_patch_len}"
            )
        upscale = 2 ** len(self.decoder_channels)
        if upscale != self.patch_size * 2:
            raise ValueError(
                f"decoder needs log2(2 * patch_size) = {int(math.log2(self.patch_size * 2))} "
                f"stages to restore full resolution, got {len(self.decoder_channels)}"
            )

    @property
    def grid_size(self):
        return self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size

    @property
    def merged_grid_size(self):
        gh, gw = self.grid_size
        return gh // 2, gw // 2

    @property
    def n_csi_tokens(self):
        return self.n_sensors * (self.L_csi // self.csi_patch_len)

    @property
    def csi_token_dim(self):
        return self.csi_patch_len * self.csi_feature_dim

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["image_size"] = list(d["image_size"])
        d["decoder_channels"] = list(d["decoder_channels"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        if "image_size" in d:
            d["image_size"] = tuple(d["image_size"])
        if "decoder_channels" in d:
            d["decoder_channels"] = tuple(d["decoder_channels"])
        return cls(**d)


def segment_csi(csi, csi_patch_len):
    """Cut CSI windows into flat time-patches; no parameters involved.

    `csi` is (B, n_sensors, L_csi, feature_dim). The time axis is split into
    contiguous chunks of `csi_patch_len` frames; each chunk flattens into one
    token. Sensor windows concatenate along the token axis, so the result is
    (B, n_sensors * L_csi / csi_patch_len, csi_patch_len * feature_dim).
    """
    b, s, L, f = csi.shape
    if L % csi_patch_len:
        raise ValueError(f"L_csi {L} is not divisible by csi_patch_len {csi_patch_len}")
    return csi.reshape(b, s, L // csi_patch_len, csi_patch_len * f).reshape(
        b, s * (L // csi_patch_len), csi_patch_len * f
    )


class MultiheadSelfAttention(nn.Module):
    def __init__(self, dim, n_heads):
        super().__init__()
        self.n_heads = n_heads
        self.scale = (dim // n_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):  # (B, N, C)
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.n_heads, c // self.n_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


def window_partition(x, window):
    """(B, H, W, C) -> (B * nH * nW, window * window, C)."""
    b, h, w, c = x.shape
    x = x.reshape(b, h // window, window, w // window, window, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window * window, c)

def window_reverse(x, window, h, w):
    b = x.shape[0] // ((h // window) * (w // window))
    x = x.reshape(b, h // window, w // window, window, window, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, -1)


class SwinBlock(nn.Module):
    """Pre-norm windowed attention block, optionally on a cyclically shifted grid."""

    def __init__(self, dim, n_heads, window, shift):
        super().__init__()
        self.window = window
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiheadSelfAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * MLP_RATIO)

    def forward(self, x):  # (B, H, W, C) patch grid
        _, h, w, _ = x.shape
        y = self.norm1(x)
        if self.shift:
            y = torch.roll(y, shifts=(-self.shift, -self.shift), dims=(1, 2))
        y = window_partition(y, self.window)
        y = self.attn(y)
        y = window_reverse(y, self.window, h, w)
        if self.shift:
            y = torch.roll(y, shifts=(self.shift, self.shift), dims=(1, 2))
        x = x + y
        return x + self.mlp(self.norm2(x))


class PatchMerging(nn.Module):
    """2x2 neighborhood concat + linear: grid halves, channels double."""

    def __init__(self, dim):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduce = nn.Linear(4 * dim, 2 * dim)

    def forward(self, x):  # (B, H, W, C)
        b, h, w, c = x.shape
        x = x.reshape(b, h // 2, 2, w // 2, 2, c).permute(0, 1, 3, 2, 4, 5)
        x = x.reshape(b, h // 2, w // 2, 4 * c)
        return self.reduce(self.norm(x))


class PatchEmbed(nn.Module):
    """Non-overlapping patches -> linear projection -> + learned positions."""

    def __init__(self, cfg):
        super().__init__()
        self.patch = cfg.patch_size
        gh, gw = cfg.grid_size
        self.proj = nn.Linear(cfg.patch_size**2 * 4, cfg.embed_dim)
        self.pos = nn.Parameter(torch.empty(cfg.L_img, gh * gw, cfg.embed_dim))
        nn.init.trunc_normal_(self.pos, std=0.02)

    def forward(self, x):  # (B, L, H, W, 4)
        b, L, h, w, c = x.shape
        p = self.patch
        x = x.reshape(b, L, h // p, p, w // p, p, c).permute(0, 1, 2, 4, 3, 5, 6)
        x = x.reshape(b, L, (h // p) * (w // p), p * p * c)
        return self.proj(x) + self.pos


class ImageEncoder(nn.Module):
    """Alternating plain/shifted windowed attention with one merging stage.

    Windowed attention runs within each frame; the patch-merging stage sits
    after the first half of the blocks, halving the grid and doubling the
    channel count for the remainder.
    """

    def __init__(self, cfg):
        super().__init__()
        gh, gw = cfg.grid_size
        n_pre = (cfg.n_layers_img + 1) // 2
        win_pre = min(cfg.attn_window, gh, gw)
        self.pre = nn.ModuleList(
            SwinBlock(cfg.embed_dim, cfg.n_heads, win_pre, (win_pre // 2) if i % 2 else 0)
            for i in range(n_pre)
        )
        self.merge = PatchMerging(cfg.embed_dim)
        win_post = min(cfg.attn_window, gh // 2, gw // 2)
        self.post = nn.ModuleList(
            SwinBlock(cfg.embed_dim * 2, cfg.n_heads, win_post, (win_post // 2) if i % 2 else 0)
            for i in range(cfg.n_layers_img - n_pre)
        )
        self.grid = (gh, gw)

    def forward(self, x):  # (B, L, P, C)
        b, L, p, c = x.shape
        gh, gw = self.grid
        x = x.reshape(b * L, gh, gw, c)
        for block in self.pre:
            x = block(x)
        x = self.merge(x)
        for block in self.post:
            x = block(x)
        return x.reshape(b, L, (gh // 2) * (gw // 2), 2 * c)


class TransformerBlock(nn.Module):
    """Standard pre-norm block with full self-attention."""

    def __init__(self, dim, n_heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiheadSelfAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * MLP_RATIO)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class CsiEncoder(nn.Module):
    """Input projection + full-attention transformer over CSI tokens.

    The first learned map lives here: tokens arrive as raw flattened patches
    with no embedding or positional encoding, so the encoder is permutation
    equivariant over the token axis.
    """

    def __init__(self, cfg):
        super().__init__()
        self.in_proj = nn.Linear(cfg.csi_token_dim, cfg.embed_dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.embed_dim, cfg.n_heads) for _ in range(cfg.n_layers_csi)
        )

    def forward(self, tokens):  # (B, N, D)
        x = self.in_proj(tokens)
        for block in self.blocks:
            x = block(x)
        return x


class Aggregation(nn.Module):
    """Project both feature sets down and lay them out on the merged grid.

    Image features keep their grid position; CSI features are mean-pooled
    over tokens and broadcast spatially; the raw defective input (with mask
    channel) is average-pooled onto the same grid and concatenated, giving
    agg_img_dim + agg_csi_dim + 3 + 1 fused channels.
    """

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.img_proj = nn.Linear(cfg.embed_dim * 2, cfg.agg_img_dim)
        self.csi_proj = nn.Linear(cfg.embed_dim, cfg.agg_csi_dim)

    def forward(self, img_feats, csi_feats, raw):  # raw: (B, L, H, W, 4)
        b, L, _, _ = img_feats.shape
        gh, gw = self.cfg.merged_grid_size
        img = self.img_proj(img_feats).reshape(b, L, gh, gw, self.cfg.agg_img_dim)
        csi = self.csi_proj(csi_feats.mean(dim=1))  # (B, agg_csi_dim)
        csi = csi[:, None, None, None, :].expand(b, L, gh, gw, self.cfg.agg_csi_dim)
        h, w = self.cfg.image_size
        pool = raw.reshape(b * L, h, w, 4).permute(0, 3, 1, 2)
        pool = F.avg_pool2d(pool, kernel_size=(h // gh, w // gw))
        pool = pool.permute(0, 2, 3, 1).reshape(b, L, gh, gw, 4)
        return torch.cat([img, csi, pool], dim=-1)


class Decoder(nn.Module):
    """Conv + 2x upsampling stack back to pixels, with an input skip.

    Frames decode independently with shared weights. The skip is a learned
    1x1 projection of the raw defective input added to the final layer's
    pre-activation; a sigmoid bounds outputs to [0, 1].
    """

    def __init__(self, cfg):
        super().__init__()
        c_in = cfg.agg_img_dim + cfg.agg_csi_dim + 4
        convs = []
        for ch in cfg.decoder_channels:
            convs.append(nn.Conv2d(c_in, ch, kernel_size=3, padding=1))
            c_in = ch
        self.convs = nn.ModuleList(convs)
        self.out = nn.Conv2d(c_in, 3, kernel_size=3, padding=1)
        self.skip = nn.Conv2d(4, 3, kernel_size=1)

    def forward(self, fused, raw):  # fused: (B, L, gh, gw, C); raw: (B, L, H, W, 4)
        b, L = fused.shape[:2]
        x = fused.reshape(b * L, *fused.shape[2:]).permute(0, 3, 1, 2)
        for conv in self.convs:
            x = F.interpolate(F.gelu(conv(x)), scale_factor=2, mode="nearest")
        raw = raw.reshape(b * L, *raw.shape[2:]).permute(0, 3, 1, 2)
        x = torch.sigmoid(self.out(x) + self.skip(raw))
        h, w = x.shape[-2:]
        return x.permute(0, 2, 3, 1).reshape(b, L, h, w, 3)


class RadioFillNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg)
        self.image_encoder = ImageEncoder(cfg)
        self.csi_encoder = CsiEncoder(cfg)
        self.aggregate = Aggregation(cfg)
        self.decoder = Decoder(cfg)

    def forward(self, defective, mask, csi, mode="multimodal"):
        """Restore an image window.

        defective: (B, L, H, W, 3) floats in [0, 1]
        mask:      (B, L, H, W) floats/bools, 1 = occluded
        csi:       (B, n_sensors, L_csi, csi_feature_dim) floats
        mode:      multimodal | image-only | rf-only

        rf-only forces a full mask and constant-fill visual input, so the
        output cannot depend on scene pixels; image-only zeroes the CSI
        tokens, so the output cannot depend on CSI values.
        """
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
        mask = mask.to(defective.dtype)
        if mode == "rf-only":
            mask = torch.ones_like(mask)
            defective = torch.full_like(defective, self.cfg.mask_fill)
        raw = torch.cat([defective, mask.unsqueeze(-1)], dim=-1)
        tokens = self.patch_embed(raw)
        img_feats = self.image_encoder(tokens)
        csi_tokens = segment_csi(csi, self.cfg.csi_patch_len)
        if mode == "image-only":
            csi_tokens = torch.zeros_like(csi_tokens)
        csi_feats = self.csi_encoder(csi_tokens)
        fused = self.aggregate(img_feats, csi_feats, raw)
        return self.decoder(fused, raw)


def build_model(cfg, seed=0):
    """Construct the network with a deterministic weight initialization."""
    torch.manual_seed(derive_seed(seed, "model-init"))
    return RadioFillNet(cfg)


def count_parameters(model):
    """Exact count of trainable parameters."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def csi_encoder_input_params(cfg):
    """Closed-form size of the CSI encoder's input projection (weights + bias)."""
    return cfg.csi_token_dim * cfg.embed_dim + cfg.embed_dim
