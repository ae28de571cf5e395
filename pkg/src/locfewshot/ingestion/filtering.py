from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass

from .manifest import RawDataset

MIN_IMAGES_PER_CLASS = 200
MIN_AREA_FRACTION = 0.002


def filter_dataset(
    raw: RawDataset,
    min_images: int | None = MIN_IMAGES_PER_CLASS,
    min_area_fraction: float = MIN_AREA_FRACTION,
) -> RawDataset:
    """Drop small annotations, then classes seen in fewer than ``min_images`` images.

    The area cut runs first, so a class can fall below the image threshold
    because its small annotations were removed. The area boundary is inclusive.
    ``min_images=None`` disables the class cut (datasets with provided splits).
    """
    kept = [a for a in raw.annotations if a.area_fraction >= min_area_fraction - 1e-12]
    if min_images is not None:
        images_per_class = defaultdict(set)
        for a in kept:
            images_per_class[a.category_id].add(a.image_id)
        good = {c for c, imgs in images_per_class.items() if len(imgs) >= min_images}
        kept = [a for a in kept if a.category_id in good]
        categories = {c: n for c, n in raw.categories.items() if c in good}
    else:
        categories = dict(raw.categories)
    return raw.subset(kept, categories)


@dataclass(frozen=True)
class DatasetStats:
    samples: int
    classes: int
    imgs_per_class: float
    classes_per_img: float
    mean_area_per_sample: float

    def to_dict(self) -> dict:
        d = asdict(self)
        return {
            "Samples": d["samples"],
            "Classes": d["classes"],
            "Imgs/Class": d["imgs_per_class"],
            "Classes/Img": d["classes_per_img"],
            "Mean Area/Sample": d["mean_area_per_sample"],
        }


def compute_stats(raw: RawDataset) -> DatasetStats:
    """Summary statistics where a sample is one image-annotation pair."""
    if not raw.annotations:
        raise ValueError("cannot compute statistics of an empty dataset")
    imgs_per_class = defaultdict(set)
    classes_per_img = defaultdict(set)
    for a in raw.annotations:
        imgs_per_class[a.category_id].add(a.image_id)
        classes_per_img[a.image_id].add(a.category_id)
    n = len(raw.annotations)
    return DatasetStats(
        samples=n,
        classes=len(imgs_per_class),
        imgs_per_class=sum(map(len, imgs_per_class.values())) / len(imgs_per_class),
        classes_per_img=sum(map(len, classes_per_img.values())) / len(classes_per_img),
        mean_area_per_sample=sum(a.area_fraction for a in raw.annotations) / n,
    )
