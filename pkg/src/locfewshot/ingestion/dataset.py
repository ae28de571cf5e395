from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .manifest import RawDataset
from .rasterize import rasterize


@dataclass(eq=False)
class AnnotatedSample:
    """One (image, class) pair; the mask is the union of that class's annotations."""

    image_id: int
    class_id: int
    packed_mask: np.ndarray
    shape: tuple[int, int]
    annotation_kind: str
    area_fraction: float

    @classmethod
    def from_mask(cls, image_id, class_id, mask, kind="mask"):
        mask = np.asarray(mask, dtype=bool)
        return cls(int(image_id), int(class_id), np.packbits(mask, axis=None), mask.shape, kind,
                   float(mask.mean()))

    @property
    def mask(self) -> np.ndarray:
        h, w = self.shape
        return np.unpackbits(self.packed_mask, count=h * w).reshape(h, w).astype(bool)

    @property
    def key(self) -> tuple[int, int]:
        return (self.image_id, self.class_id)


class FewShotDataset:
    """Images held in memory plus their class-level samples."""

    def __init__(self, images: dict[int, np.ndarray], samples: list[AnnotatedSample], categories: dict[int, str]):
        self.images = images
        self.samples = sorted(samples, key=lambda s: s.key)
        self.categories = categories
        self.by_class: dict[int, list[int]] = defaultdict(list)
        self.image_classes: dict[int, set[int]] = defaultdict(set)
        for i, s in enumerate(self.samples):
            self.by_class[s.class_id].append(i)
            self.image_classes[s.image_id].add(s.class_id)
        self.by_class = dict(self.by_class)
        self.image_classes = dict(self.image_classes)

    def __len__(self):
        return len(self.samples)

    @property
    def classes(self) -> list[int]:
        return sorted(self.by_class)

    @property
    def image_ids(self) -> set[int]:
        return set(self.image_classes)

    def image(self, image_id: int) -> np.ndarray:
        return self.images[image_id]

    def class_samples(self, class_id: int) -> list[AnnotatedSample]:
        return [self.samples[i] for i in self.by_class.get(class_id, [])]

    def restrict(self, classes=None, exclude_images=()) -> "FewShotDataset":
        classes = set(self.by_class if classes is None else classes)
        exclude = set(exclude_images)
        keep = [s for s in self.samples if s.class_id in classes and s.image_id not in exclude]
        used = {s.image_id for s in keep}
        images = {i: im for i, im in self.images.items() if i in used}
        return FewShotDataset(images, keep, {c: n for c, n in self.categories.items() if c in classes})

    def channel_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel mean and std of pixel values scaled to [0, 1]."""
        total = np.zeros(3)
        sq = np.zeros(3)
        count = 0
        for im in self.images.values():
            x = im.reshape(-1, 3).astype(np.float64) / 255.0
            total += x.sum(0)
            sq += (x * x).sum(0)
            count += len(x)
        mean = total / count
        std = np.sqrt(np.maximum(sq / count - mean**2, 1e-12))
        return mean.astype(np.float32), std.astype(np.float32)

    @classmethod
    def from_raw(cls, raw: RawDataset, images: dict[int, np.ndarray] | None = None) -> "FewShotDataset":
        """Build samples from a (filtered) raw dataset; loads PNGs when ``images`` is None."""
        groups = defaultdict(list)
        for a in raw.annotations:
            groups[(a.image_id, a.category_id)].append(a)
        if images is None:
            images = {i: _load_image(raw.root, raw.images[i].file) for i in sorted({k[0] for k in groups})}
        samples = []
        for (image_id, class_id), anns in sorted(groups.items()):
            rec = raw.images[image_id]
            mask = np.zeros((rec.height, rec.width), dtype=bool)
            for a in anns:
                mask |= rasterize(a.geometry, rec.height, rec.width)
            if mask.any():
                samples.append(AnnotatedSample.from_mask(image_id, class_id, mask, anns[0].kind))
        used = {s.image_id for s in samples}
        return cls({i: images[i] for i in used}, samples, dict(raw.categories))


def _load_image(root, file) -> np.ndarray:
    from PIL import Image

    path = Path(file) if root is None else Path(root) / file
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)
