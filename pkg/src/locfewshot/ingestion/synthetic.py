"""Synthetic busy scenes: textured shapes scattered over a noisy background.

Each class is one (shape, texture) pair. A scene holds several objects of
distinct classes drawn back to front, so later objects occlude earlier ones;
the per-object masks record only the visible pixels.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .manifest import AnnotationRecord, ImageRecord, RawDataset, save_manifest
from .rasterize import rasterize_polygon, rle_encode

SHAPES = ("circle", "square", "triangle", "star", "cross", "hexagon", "diamond", "arrow")

# (name, color a, color b, pattern)
TEXTURES = (
    ("red", (220, 30, 30), None, "solid"),
    ("blue", (30, 60, 230), None, "solid"),
    ("yellow", (240, 220, 20), None, "solid"),
    ("green-hstripe", (20, 190, 60), (245, 245, 245), "hstripe"),
    ("magenta-vstripe", (230, 40, 220), (20, 20, 20), "vstripe"),
    ("orange-checker", (250, 140, 0), (40, 40, 160), "checker"),
    ("cyan-dots", (0, 230, 230), (30, 30, 30), "dots"),
    ("purple-diag", (140, 40, 200), (240, 240, 120), "diag"),
    ("white", (250, 250, 250), None, "solid"),
    ("black-checker", (10, 10, 10), (240, 240, 240), "checker"),
)


def _unit_polygon(shape: str) -> np.ndarray:
    """Vertices (x, y) of a shape with circumradius ~1 centered at the origin."""
    def ngon(n, r=1.0, phase=0.0):
        t = phase + 2 * np.pi * np.arange(n) / n
        return np.stack([r * np.cos(t), r * np.sin(t)], axis=1)

    if shape == "circle":
        return ngon(32)
    if shape == "square":
        return ngon(4, phase=np.pi / 4)
    if shape == "triangle":
        return ngon(3, phase=-np.pi / 2)
    if shape == "hexagon":
        return ngon(6)
    if shape == "diamond":
        return np.array([[0, -1], [0.55, 0], [0, 1], [-0.55, 0]], dtype=float)
    if shape == "star":
        outer, inner = ngon(5, 1.0, -np.pi / 2), ngon(5, 0.42, -np.pi / 2 + np.pi / 5)
        return np.stack([outer, inner], axis=1).reshape(-1, 2)
    if shape == "cross":
        a, b = 1.0, 0.33
        return np.array([[-b, -a], [b, -a], [b, -b], [a, -b], [a, b], [b, b],
                         [b, a], [-b, a], [-b, b], [-a, b], [-a, -b], [-b, -b]], dtype=float)
    if shape == "arrow":
        return np.array([[-1, -0.3], [0.2, -0.3], [0.2, -0.75], [1, 0],
                         [0.2, 0.75], [0.2, 0.3], [-1, 0.3]], dtype=float)
    raise ValueError(f"unknown shape {shape!r}")


def _polygon_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def class_vocabulary(n_classes: int) -> list[tuple[str, str]]:
    """First ``n_classes`` (shape, texture) pairs, shape-major."""
    vocab = [(s, t[0]) for s, t in itertools.product(SHAPES, TEXTURES)]
    if not 1 <= n_classes <= len(vocab):
        raise ValueError(f"n_classes must be in [1, {len(vocab)}]")
    return vocab[:n_classes]


@dataclass(frozen=True)
class SceneSpec:
    canvas: int = 128
    n_classes: int = 40
    objects_range: tuple[int, int] = (5, 10)
    area_range: tuple[float, float] = (0.02, 0.10)
    min_visible: float = 0.5
    pixel_noise: float = 6.0
    color_jitter: float = 18.0
    max_retries: int = 50

    def __post_init__(self):
        lo, hi = self.objects_range
        if not 1 <= lo <= hi <= self.n_classes:
            raise ValueError(f"objects_range {self.objects_range} infeasible for {self.n_classes} classes")
        if not 0 < self.area_range[0] <= self.area_range[1] < 1:
            raise ValueError(f"bad area_range {self.area_range}")


@dataclass
class SceneObject:
    class_id: int
    mask: np.ndarray


class PlacementError(RuntimeError):
    pass


def _texture_canvas(texture, size: int, rng) -> np.ndarray:
    _, a, b, pattern = texture
    yy, xx = np.mgrid[0:size, 0:size]
    if pattern == "solid":
        sel = np.ones((size, size), dtype=bool)
    elif pattern == "hstripe":
        sel = (yy // 3) % 2 == 0
    elif pattern == "vstripe":
        sel = (xx // 3) % 2 == 0
    elif pattern == "checker":
        sel = ((yy // 4) + (xx // 4)) % 2 == 0
    elif pattern == "dots":
        sel = ((yy % 5) >= 2) | ((xx % 5) >= 2)
    elif pattern == "diag":
        sel = ((xx + yy) // 3) % 2 == 0
    else:
        raise ValueError(pattern)
    out = np.empty((size, size, 3), dtype=np.float64)
    out[sel] = a
    out[~sel] = b if b is not None else a
    return out


def _background(size: int, rng) -> np.ndarray:
    base = rng.uniform(70, 150) + rng.uniform(-20, 20, size=3)
    coarse = rng.normal(0, 18, size=(size // 16 + 1, size // 16 + 1, 1))
    smooth = np.kron(coarse, np.ones((16, 16, 1)))[:size, :size]
    return base + smooth + rng.normal(0, 4, size=(size, size, 3))


def _shape_mask(shape: str, area_px: float, size: int, rng) -> np.ndarray | None:
    pts = _unit_polygon(shape)
    theta = rng.uniform(0, 2 * np.pi)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    pts = pts @ rot.T
    pts *= math.sqrt(area_px / _polygon_area(pts))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = hi - lo
    if np.any(span >= size - 2):
        return None
    offset = rng.uniform(1 - lo, size - 1 - hi)
    return rasterize_polygon((pts + offset).ravel(), size, size)


def _try_scene(spec: SceneSpec, rng, anchor_class: int | None):
    size = spec.canvas
    vocab = class_vocabulary(spec.n_classes)
    n_obj = int(rng.integers(spec.objects_range[0], spec.objects_range[1] + 1))
    others = [c for c in range(spec.n_classes) if c != anchor_class]
    chosen = list(rng.choice(others, size=n_obj - (anchor_class is not None), replace=False))
    if anchor_class is not None:
        chosen.insert(int(rng.integers(0, n_obj)), anchor_class)

    image = _background(size, rng)
    owner = np.full((size, size), -1, dtype=np.int64)
    full_area = []
    tex_index = {t[0]: t for t in TEXTURES}
    for k, cls in enumerate(chosen):
        shape, tex = vocab[cls]
        for _ in range(spec.max_retries):
            area = rng.uniform(*spec.area_range) * size * size
            mask = _shape_mask(shape, area, size, rng)
            if mask is None or not mask.any():
                continue
            trial = owner.copy()
            trial[mask] = k
            visible = np.bincount(trial[trial >= 0], minlength=k + 1)[:k]
            if all(visible[j] >= spec.min_visible * full_area[j] for j in range(k)):
                break
        else:
            raise PlacementError(f"could not place object {k} ({shape}, {tex})")
        owner = trial
        full_area.append(int(mask.sum()))
        jitter = rng.uniform(-spec.color_jitter, spec.color_jitter, size=3)
        image[mask] = (_texture_canvas(tex_index[tex], size, rng) + jitter)[mask]

    image += rng.normal(0, spec.pixel_noise, size=image.shape)
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    objects = [SceneObject(int(cls), owner == k) for k, cls in enumerate(chosen)]
    return image, objects


def generate_synthetic_scene(spec: SceneSpec, seed: int, anchor_class: int | None = None):
    """Deterministic scene for ``seed``; returns ``(image uint8 HxWx3, [SceneObject])``.

    ``anchor_class`` forces one class into the scene. A scene whose objects
    cannot be placed within ``max_retries`` is regenerated from a fresh sub-seed.
    """
    for attempt in range(100):
        rng = np.random.default_rng([int(seed), attempt])
        try:
            return _try_scene(spec, rng, anchor_class)
        except PlacementError:
            continue
    raise PlacementError(f"scene {seed} unplaceable after 100 regenerations")


@dataclass
class SyntheticCorpus:
    raw: RawDataset
    images: dict[int, np.ndarray]


def generate_corpus(spec: SceneSpec, scenes_per_class: int, seed: int = 0, out_dir=None) -> SyntheticCorpus:
    """Every class anchors ``scenes_per_class`` scenes; other objects are random.

    When ``out_dir`` is given, writes ``manifest.json`` and ``images/*.png`` there.
    """
    vocab = class_vocabulary(spec.n_classes)
    categories = {c: f"{s}/{t}" for c, (s, t) in enumerate(vocab)}
    images, records, anns = {}, {}, []
    for image_id in range(spec.n_classes * scenes_per_class):
        anchor = image_id % spec.n_classes
        img, objects = generate_synthetic_scene(spec, seed * 1_000_003 + image_id, anchor)
        images[image_id] = img
        records[image_id] = ImageRecord(image_id, f"images/{image_id:06d}.png", spec.canvas, spec.canvas)
        for obj in objects:
            geom = {"segmentation": rle_encode(obj.mask)}
            area = float(obj.mask.sum()) / (spec.canvas * spec.canvas)
            anns.append(AnnotationRecord(len(anns), image_id, obj.class_id, geom, "mask", area))
    raw = RawDataset(records, categories, anns)
    if out_dir is not None:
        from PIL import Image

        out = Path(out_dir)
        (out / "images").mkdir(parents=True, exist_ok=True)
        for image_id, img in images.items():
            Image.fromarray(img).save(out / records[image_id].file)
        save_manifest(raw, out / "manifest.json")
        raw.root = out
    return SyntheticCorpus(raw, images)
