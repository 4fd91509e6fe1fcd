"""Occlusion masks: turning ground-truth frames into defective ones.

True mask entries mark occluded pixels. The defective frame carries
`fill_value` there; the mask itself is handed to the model as an extra input
channel, since at small image sizes the fill alone does not make the occluded
region evident.
"""

from dataclasses import dataclass

import numpy as np

MASK_KINDS = ("rectangle", "full", "random-blocks")
BLOCK_SIZE = 8

# Contract on realized coverage: |occluded fraction - requested| <= 2 % of
# the pixel count (exact for kind="full").
COVERAGE_TOL = 0.02


@dataclass
class MaskSpec:
    kind: str = "rectangle"
    coverage: float = 0.9
    fill_value: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}, expected one of {MASK_KINDS}")
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError(f"coverage must lie in [0, 1], got {self.coverage}")
        if not 0.0 <= self.fill_value <= 1.0:
            raise ValueError(f"fill_value must lie in [0, 1], got {self.fill_value}")


def build_mask(spec, shape):
    """Boolean (H, W) mask with occluded fraction within 2 % of the request."""
    h, w = int(shape[0]), int(shape[1])
    if h < 1 or w < 1:
        raise ValueError(f"mask shape must be positive, got {shape}")
    if spec.kind == "full":
        return np.ones((h, w), dtype=bool)
    target = int(round(spec.coverage * h * w))
    if target == 0:
        return np.zeros((h, w), dtype=bool)
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "rectangle":
        return _rectangle_mask(h, w, target, rng)
    return _block_mask(h, w, target, rng)


def _rectangle_mask(h, w, target, rng):
    # Pick the rectangle whose area is closest to the target, then trim or
    # grow by partial rows so the realized count lands on the target exactly.
    best = None
    for rh in range(1, h + 1):
        rw = min(w, max(1, int(round(target / rh))))
        err = abs(rh * rw - target)
        if best is None or err < best[0]:
            best = (err, rh, rw)
    _, rh, rw = best
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    mask = np.zeros((h, w), dtype=bool)
    mask[top : top + rh, left : left + rw] = True
    return _adjust_count(mask, target)


def _block_mask(h, w, target, rng):
    block = max(1, min(BLOCK_SIZE, h, w))
    anchors = [
        (r, c)
        for r in range(0, h, block)
        for c in range(0, w, block)
    ]
    rng.shuffle(anchors)
    mask = np.zeros((h, w), dtype=bool)
    count = 0
    for r, c in anchors:
        if count >= target:
            break
        mask[r : r + block, c : c + block] = True
        count = int(mask.sum())
    return _adjust_count(mask, target)


def _adjust_count(mask, target):
    """Flip pixels at the occluded/free boundary until the count is exact."""
    count = int(mask.sum())
    if count > target:
        ys, xs = np.nonzero(mask)
        drop = count - target
        mask[ys[-drop:], xs[-drop:]] = False
    elif count < target:
        ys, xs = np.nonzero(~mask)
        add = target - count
        mask[ys[:add], xs[:add]] = True
    return mask


def apply_mask(frames, mask, fill_value=0.0):
    """Set occluded pixels of every frame/channel to `fill_value`.

    `frames` is (..., H, W, 3); `mask` is (H, W) or broadcastable to the
    frame's spatial dims. Unoccluded pixels pass through bit-identical.
    """
    frames = np.asarray(frames)
    mask = np.asarray(mask, dtype=bool)
    if frames.shape[-3:-1] != mask.shape[-2:]:
        raise ValueError(
            f"mask shape {mask.shape} does not match frame spatial shape {frames.shape[-3:-1]}"
        )
    defective = frames.copy()
    defective[..., mask, :] = np.asarray(fill_value, dtype=frames.dtype)
    return defective, mask
