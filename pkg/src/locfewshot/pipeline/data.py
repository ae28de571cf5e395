"""Turning dataset samples into model-ready tensors."""
from __future__ import annotations

import numpy as np
import torch

from ..augment import AugmentPolicy, augment_pair
from ..ingestion.dataset import AnnotatedSample, FewShotDataset


def _area_resize(arr: np.ndarray, size: int) -> np.ndarray:
    h, w = arr.shape[:2]
    if (h, w) == (size, size):
        return arr.astype(np.float32)
    if h % size == 0 and w % size == 0:
        fh, fw = h // size, w // size
        x = arr.astype(np.float32)
        out = np.zeros((size, size) + arr.shape[2:], dtype=np.float32)
        for i in range(fh):
            for j in range(fw):
                out += x[i::fh, j::fw]
        return out / np.float32(fh * fw)
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
    t = t.permute(2, 0, 1)[None] if t.ndim == 3 else t[None, None]
    out = torch.nn.functional.interpolate(t, size=(size, size), mode="area")[0]
    return (out.permute(1, 2, 0) if arr.ndim == 3 else out[0]).numpy()


class SampleLoader:
    """Resizes (area averaging) and optionally augments samples of one dataset.

    Images come out as ``3 x s x s`` floats in [0, 1]; masks as ``s x s`` soft
    masks. ``image_size=None`` keeps the native resolution.
    """

    def __init__(self, dataset: FewShotDataset, image_size: int | None = None, policy: AugmentPolicy | None = None):
        self.dataset = dataset
        self.image_size = image_size
        self.policy = policy
        self._images: dict[int, np.ndarray] = {}

    def _resize(self, arr):
        if self.image_size is None:
            return arr.astype(np.float32)
        return _area_resize(arr, self.image_size)

    def image(self, image_id: int) -> np.ndarray:
        img = self._images.get(image_id)
        if img is None:
            img = self._resize(self.dataset.image(image_id)) / np.float32(255.0)
            img.flags.writeable = False
            self._images[image_id] = img
        return img

    def mask(self, sample: AnnotatedSample) -> np.ndarray:
        return self._resize(sample.mask.astype(np.float32))

    def pair(self, sample: AnnotatedSample, mask_kind: str = "gt", draw_index: int | None = None):
        img = self.image(sample.image_id)
        if mask_kind == "gt":
            m = self.mask(sample)
        else:
            m = np.ones(img.shape[:2], dtype=np.float32)
        if self.policy is not None and draw_index is not None:
            # ones/none masks still follow the geometry so the frame border is consistent
            img, m = augment_pair(img, m, self.policy, draw_index)
            img, m = img.astype(np.float32), m.astype(np.float32)
        return img, m

    def batch(self, samples, mask_kind: str = "gt", draw_base: int | None = None, draw_offset: int = 0):
        """Stack ``samples`` into ``(images B x 3 x s x s, masks B x s x s)``.

        Sample ``i`` uses augmentation draw ``draw_base * 1000 + draw_offset + i``.
        """
        imgs, masks = [], []
        for i, s in enumerate(samples):
            draw = None if draw_base is None else draw_base * 1000 + draw_offset + i
            img, m = self.pair(s, mask_kind, draw)
            imgs.append(img)
            masks.append(m)
        images = torch.from_numpy(np.stack(imgs)).permute(0, 3, 1, 2).contiguous()
        return images, torch.from_numpy(np.stack(masks))
