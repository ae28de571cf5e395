"""Geometry to binary mask conversion.

Coordinates follow the COCO convention: ``x`` is the column, ``y`` the row, and
pixel ``(r, c)`` covers the unit square ``[c, c+1) x [r, r+1)``. A pixel is
inside a region when its center ``(c + 0.5, r + 0.5)`` is.
"""
from __future__ import annotations

import numpy as np


class GeometryError(ValueError):
    pass


def rasterize_polygon(coords, height: int, width: int) -> np.ndarray:
    """Even-odd fill of one or more flat ``[x0, y0, x1, y1, ...]`` rings."""
    if len(coords) and np.isscalar(coords[0]):
        coords = [coords]
    mask = np.zeros((height, width), dtype=bool)
    for ring in coords:
        pts = np.asarray(ring, dtype=np.float64).reshape(-1, 2)
        if len(pts) < 3:
            raise GeometryError(f"polygon ring needs >= 3 vertices, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("polygon has non-finite vertices")
        mask ^= _even_odd(pts, height, width)
    return mask


def _even_odd(pts: np.ndarray, height: int, width: int) -> np.ndarray:
    out = np.zeros((height, width), dtype=bool)
    r0 = max(int(np.floor(pts[:, 1].min() - 0.5)), 0)
    r1 = min(int(np.ceil(pts[:, 1].max() + 0.5)), height)
    c0 = max(int(np.floor(pts[:, 0].min() - 0.5)), 0)
    c1 = min(int(np.ceil(pts[:, 0].max() + 0.5)), width)
    if r1 <= r0 or c1 <= c0:
        return out
    py = (np.arange(r0, r1) + 0.5)[:, None]
    px = (np.arange(c0, c1) + 0.5)[None, :]
    inside = np.zeros((r1 - r0, c1 - c0), dtype=bool)
    x1, y1 = pts[:, 0], pts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for a, b, c, d in zip(x1, y1, x2, y2):
        if b == d:
            continue
        straddles = (b > py) != (d > py)
        x_cross = a + (py - b) * (c - a) / (d - b)
        inside ^= straddles & (px < x_cross)
    out[r0:r1, c0:c1] = inside
    return out


def rasterize_bbox(bbox, height: int, width: int) -> np.ndarray:
    x, y, w, h = (float(v) for v in bbox)
    if not all(np.isfinite([x, y, w, h])) or w < 0 or h < 0:
        raise GeometryError(f"invalid bbox {bbox}")
    mask = np.zeros((height, width), dtype=bool)
    # pixel centers c + 0.5 in [x, x + w)
    c0 = max(int(np.ceil(x - 0.5)), 0)
    c1 = min(int(np.ceil(x + w - 0.5)), width)
    r0 = max(int(np.ceil(y - 0.5)), 0)
    r1 = min(int(np.ceil(y + h - 0.5)), height)
    if c1 > c0 and r1 > r0:
        mask[r0:r1, c0:c1] = True
    return mask


def rle_encode(mask: np.ndarray) -> dict:
    """COCO uncompressed RLE (column-major, counts start with a zero run)."""
    flat = np.asarray(mask, dtype=bool).ravel(order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"counts": counts, "size": [int(mask.shape[0]), int(mask.shape[1])]}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    counts = np.asarray(rle["counts"], dtype=np.int64)
    if counts.sum() != h * w or np.any(counts < 0):
        raise GeometryError("RLE counts do not cover the mask")
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape((h, w), order="F")


def rasterize(geometry: dict, height: int, width: int) -> np.ndarray:
    """Rasterize an annotation geometry dict.

    ``geometry`` carries either ``segmentation`` (polygon ring list or RLE dict)
    or ``bbox`` ``[x, y, w, h]``; segmentation wins when both are present.
    Returns a boolean ``height x width`` mask, possibly empty.
    """
    seg = geometry.get("segmentation")
    if seg:
        if isinstance(seg, dict):
            mask = rle_decode(seg)
            if mask.shape != (height, width):
                raise GeometryError(f"RLE size {mask.shape} != image {(height, width)}")
            return mask
        return rasterize_polygon(seg, height, width)
    if geometry.get("bbox") is not None:
        return rasterize_bbox(geometry["bbox"], height, width)
    raise GeometryError("annotation has neither segmentation nor bbox")


def annotation_kind(geometry: dict) -> str:
    seg = geometry.get("segmentation")
    if seg:
        return "mask" if isinstance(seg, dict) else "polygon"
    return "bbox"
