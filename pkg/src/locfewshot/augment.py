"""Joint geometric augmentation of an image and its mask."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

MAX_RESAMPLES = 10


@dataclass(frozen=True)
class AugmentPolicy:
    horizontal_flip_prob: float = 0.5
    rotation_range: float = 15.0  # degrees, symmetric
    translation_range: float = 0.1  # fraction of height/width, symmetric
    scale_range: tuple[float, float] = (0.8, 1.25)
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.horizontal_flip_prob <= 1:
            raise ValueError("horizontal_flip_prob must lie in [0, 1]")
        if self.rotation_range < 0 or self.translation_range < 0:
            raise ValueError("ranges must be nonnegative")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad scale_range {self.scale_range}")

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentPolicy":
        return cls(0.0, 0.0, 0.0, (1.0, 1.0), seed)


def _draw_transform(policy: AugmentPolicy, rng, shape):
    """Forward 2x2 matrix and offset on (row, col) coordinates about the center."""
    h, w = shape
    flip = rng.random() < policy.horizontal_flip_prob
    theta = math.radians(rng.uniform(-policy.rotation_range, policy.rotation_range))
    scale = rng.uniform(*policy.scale_range)
    t = rng.uniform(-policy.translation_range, policy.translation_range, size=2) * (h, w)
    c, s = math.cos(theta), math.sin(theta)
    m = scale * np.array([[c, -s], [s, c]])
    if flip:
        m = m @ np.diag([1.0, -1.0])
    return m, t


def _apply(arr: np.ndarray, m: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Bilinear resampling of ``H x W x C``; out-of-frame samples read 0."""
    h, w = arr.shape[:2]
    center = np.array([(h - 1) / 2, (w - 1) / 2])
    inv = np.linalg.inv(m)
    # output o samples input at inv @ (o - center - t) + center
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out_pts = np.stack([rows.ravel(), cols.ravel()]) - (center + t)[:, None]
    src = inv @ out_pts + center[:, None]
    # grid_sample wants (x, y) normalized so that -1 and 1 hit the corner pixel centers
    gx = 2 * src[1] / max(w - 1, 1) - 1
    gy = 2 * src[0] / max(h - 1, 1) - 1
    grid = torch.from_numpy(np.stack([gx, gy], axis=-1).reshape(1, h, w, 2))
    x = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]
    out = F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros", align_corners=True)
    return out[0].numpy().transpose(1, 2, 0)


def apply_transform(image, mask, m, t):
    """Warp an image (filled with its mean outside the frame) and its mask (filled with 0)."""
    img = np.asarray(image, dtype=np.float64)
    msk = np.asarray(mask, dtype=np.float64)
    gray = img.ndim == 2
    img3 = img[..., None] if gray else img
    fill = img3.reshape(-1, img3.shape[-1]).mean(0)
    stacked = np.concatenate([img3 - fill, msk[..., None]], axis=-1)
    out = _apply(stacked, m, t)
    img_t = out[..., :-1] + fill
    msk_t = np.clip(out[..., -1], 0.0, 1.0)
    return (img_t[..., 0] if gray else img_t), msk_t


def augment_pair(image: np.ndarray, mask: np.ndarray, policy: AugmentPolicy, draw_index: int):
    """Apply one random flip/rotate/scale/translate to both arrays.

    Deterministic per ``(policy.seed, draw_index)``. The image is resampled
    bilinearly with out-of-frame pixels filled by its mean; the mask is
    resampled bilinearly, filled with 0 and clamped to [0, 1]. A transform that
    empties a nonempty mask is redrawn; after ``MAX_RESAMPLES`` failures the
    pair comes back untouched. Returns arrays of the input dtypes.
    """
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image {image.shape[:2]} and mask {mask.shape} differ")
    rng = np.random.default_rng([int(policy.seed), int(draw_index)])
    had_mass = float(np.asarray(mask, dtype=np.float64).sum()) > 0
    for _ in range(MAX_RESAMPLES):
        m, t = _draw_transform(policy, rng, mask.shape)
        if np.allclose(m, np.eye(2)) and not np.any(t):
            return image.copy(), mask.copy()
        img_t, msk_t = apply_transform(image, mask, m, t)
        if not had_mass or msk_t.sum() > 0:
            return _cast(img_t, image.dtype), _cast(msk_t, mask.dtype)
    return image.copy(), mask.copy()


def _cast(arr, dtype):
    if np.issubdtype(dtype, np.integer):
        info = np.iinfo(dtype)
        return np.clip(np.rint(arr), info.min, info.max).astype(dtype)
    if dtype == bool:
        return arr >= 0.5
    return arr.astype(dtype)
