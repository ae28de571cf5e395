"""COCO-style manifest reading and writing.

Schema (JSON object)::

    images:      [{id: int, file: str, height: int, width: int}]
    categories:  [{id: int, name: str}]
    annotations: [{id: int, image_id: int, category_id: int,
                   segmentation: [[x0, y0, x1, y1, ...], ...]   # polygon rings
                               | {counts: [int], size: [h, w]}  # uncompressed RLE
                   bbox: [x, y, w, h]}]                          # used if no segmentation

Image files are resolved relative to the manifest's directory.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .rasterize import GeometryError, annotation_kind, rasterize

log = logging.getLogger(__name__)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ImageRecord:
    id: int
    file: str
    height: int
    width: int


@dataclass
class AnnotationRecord:
    id: int
    image_id: int
    category_id: int
    geometry: dict
    kind: str
    area_fraction: float


@dataclass
class RawDataset:
    images: dict[int, ImageRecord]
    categories: dict[int, str]
    annotations: list[AnnotationRecord]
    root: Path | None = None
    rejected: list[tuple[int, str]] = field(default_factory=list)

    def mask(self, ann: AnnotationRecord):
        img = self.images[ann.image_id]
        return rasterize(ann.geometry, img.height, img.width)

    def subset(self, annotations: list[AnnotationRecord], categories=None) -> "RawDataset":
        cats = self.categories if categories is None else categories
        used = {a.image_id for a in annotations}
        images = {i: r for i, r in self.images.items() if i in used}
        return RawDataset(images, dict(cats), list(annotations), self.root, list(self.rejected))


def _geometry(rec: dict) -> dict:
    return {k: rec[k] for k in ("segmentation", "bbox") if rec.get(k) is not None}


def parse_manifest(doc: dict, root: Path | None = None) -> RawDataset:
    try:
        images = {
            int(r["id"]): ImageRecord(int(r["id"]), str(r.get("file", "")), int(r["height"]), int(r["width"]))
            for r in doc["images"]
        }
        categories = {int(c["id"]): str(c["name"]) for c in doc["categories"]}
        raw_anns = list(doc["annotations"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest: {exc}") from exc

    missing_img = sorted({int(a["image_id"]) for a in raw_anns if int(a["image_id"]) not in images})
    missing_cat = sorted({int(a["category_id"]) for a in raw_anns if int(a["category_id"]) not in categories})
    if missing_img or missing_cat:
        raise ManifestError(
            f"dangling references: image_ids={missing_img} category_ids={missing_cat}"
        )

    annotations, rejected = [], []
    for a in raw_anns:
        img = images[int(a["image_id"])]
        geom = _geometry(a)
        try:
            mask = rasterize(geom, img.height, img.width)
        except (GeometryError, TypeError, ValueError) as exc:
            log.warning("rejecting annotation %s: %s", a.get("id"), exc)
            rejected.append((int(a.get("id", -1)), str(exc)))
            continue
        area = float(mask.sum()) / (img.height * img.width)
        annotations.append(
            AnnotationRecord(int(a["id"]), img.id, int(a["category_id"]), geom, annotation_kind(geom), area)
        )
    return RawDataset(images, categories, annotations, root, rejected)


def load_annotations(manifest_path) -> RawDataset:
    path = Path(manifest_path)
    with open(path) as fh:
        doc = json.load(fh)
    return parse_manifest(doc, root=path.parent)


def manifest_dict(raw: RawDataset) -> dict:
    return {
        "images": [
            {"id": r.id, "file": r.file, "height": r.height, "width": r.width}
            for r in sorted(raw.images.values(), key=lambda r: r.id)
        ],
        "categories": [{"id": k, "name": v} for k, v in sorted(raw.categories.items())],
        "annotations": [
            {"id": a.id, "image_id": a.image_id, "category_id": a.category_id, **a.geometry}
            for a in raw.annotations
        ],
    }


def save_manifest(raw: RawDataset, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest_dict(raw), fh)
