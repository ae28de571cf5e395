import json

import numpy as np
import pytest

from locfewshot.ingestion import (FewShotDataset, SceneSpec, compute_stats, filter_dataset,
                                  generate_synthetic_scene, load_annotations, parse_manifest)
from locfewshot.ingestion.manifest import ManifestError, save_manifest
from locfewshot.ingestion.rasterize import (GeometryError, rasterize, rasterize_bbox, rasterize_polygon,
                                            rle_decode, rle_encode)


def box(ann_id, image_id, cat, w, h):
    return {"id": ann_id, "image_id": image_id, "category_id": cat, "bbox": [0, 0, w, h]}


def filtering_fixture():
    """100x100 images. 20 px is exactly 0.2% of an image, 19 px is 0.19%."""
    anns = []
    add = lambda img, cat, w, h: anns.append(box(len(anns), img, cat, w, h))
    for i in range(200):
        add(i, 1, 4, 5)  # boundary area, kept
    for i in range(200, 399):
        add(i, 2, 10, 10)  # 199 images, dropped
    for i in range(201):
        add(i, 3, 19, 1) if i == 0 else add(i, 3, 10, 10)  # 201 -> 200 images after the area cut
    for i in range(200):
        add(i, 4, 19, 1) if i == 0 else add(i, 4, 10, 10)  # 200 -> 199 images after the area cut
    return {
        "images": [{"id": i, "file": f"{i}.png", "height": 100, "width": 100} for i in range(400)],
        "categories": [{"id": c, "name": f"c{c}"} for c in (1, 2, 3, 4)],
        "annotations": anns,
    }


class TestRasterize:
    def test_bbox_pixel_count(self):
        assert rasterize_bbox([0, 0, 4, 5], 100, 100).sum() == 20
        assert rasterize_bbox([2.6, 0, 1, 1], 10, 10).sum() == 1

    def test_polygon_rectangle(self):
        m = rasterize_polygon([[1, 1, 5, 1, 5, 4, 1, 4]], 10, 10)
        expected = np.zeros((10, 10), bool)
        expected[1:4, 1:5] = True
        assert np.array_equal(m, expected)

    def test_polygon_triangle_area(self):
        m = rasterize_polygon([[0, 0, 200, 0, 0, 200]], 200, 200)
        assert abs(m.sum() - 20000) < 300

    def test_polygon_too_few_points(self):
        with pytest.raises(GeometryError):
            rasterize_polygon([[0, 0, 1, 1]], 4, 4)

    def test_rle_roundtrip(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m = rng.random((7, 9)) > 0.6
            assert np.array_equal(rle_decode(rle_encode(m)), m)
        m = np.ones((3, 3), bool)
        assert rle_encode(m)["counts"][0] == 0

    def test_rle_column_major(self):
        m = np.zeros((2, 2), bool)
        m[1, 0] = True
        assert rle_encode(m)["counts"] == [1, 1, 2]

    def test_segmentation_wins_over_bbox(self):
        m = rasterize({"segmentation": [[0, 0, 2, 0, 2, 2, 0, 2]], "bbox": [0, 0, 5, 5]}, 6, 6)
        assert m.sum() == 4


class TestManifest:
    def test_dangling_reference(self):
        doc = filtering_fixture()
        doc["annotations"].append(box(9999, 12345, 1, 5, 5))
        with pytest.raises(ManifestError, match="12345"):
            parse_manifest(doc)

    def test_malformed_geometry_rejected_not_fatal(self):
        doc = {"images": [{"id": 0, "file": "a.png", "height": 8, "width": 8}],
               "categories": [{"id": 1, "name": "x"}],
               "annotations": [{"id": 0, "image_id": 0, "category_id": 1, "segmentation": [[0, 0, 1, 1]]},
                               box(1, 0, 1, 4, 4)]}
        raw = parse_manifest(doc)
        assert [a.id for a in raw.annotations] == [1]
        assert raw.rejected[0][0] == 0

    def test_save_load_roundtrip(self, tmp_path):
        raw = parse_manifest(filtering_fixture())
        save_manifest(raw, tmp_path / "m.json")
        again = load_annotations(tmp_path / "m.json")
        assert len(again.annotations) == len(raw.annotations)
        assert [a.area_fraction for a in again.annotations] == [a.area_fraction for a in raw.annotations]


class TestFiltering:
    def test_rules(self):
        out = filter_dataset(parse_manifest(filtering_fixture()))
        assert sorted(out.categories) == [1, 3]
        kept = {(a.image_id, a.category_id) for a in out.annotations}
        assert (0, 1) in kept  # exactly 0.2%: kept
        assert (0, 3) not in kept  # 0.19%: dropped
        assert all(a.area_fraction >= 0.002 for a in out.annotations)

    def test_class_cut_disabled(self):
        out = filter_dataset(parse_manifest(filtering_fixture()), min_images=None)
        assert sorted({a.category_id for a in out.annotations}) == [1, 2, 3, 4]

    def test_stats(self):
        s = compute_stats(filter_dataset(parse_manifest(filtering_fixture())))
        assert s.samples == 400
        assert s.classes == 2
        assert s.imgs_per_class == 200
        assert s.classes_per_img == 400 / 201
        assert s.mean_area_per_sample == pytest.approx(0.006, abs=1e-15)
        assert set(s.to_dict()) == {"Samples", "Classes", "Imgs/Class", "Classes/Img", "Mean Area/Sample"}

    def test_stats_empty(self):
        raw = parse_manifest({"images": [], "categories": [], "annotations": []})
        with pytest.raises(ValueError):
            compute_stats(raw)


class TestDataset:
    def test_masks_union_per_image_class(self):
        doc = {"images": [{"id": 0, "file": "a.png", "height": 10, "width": 10}],
               "categories": [{"id": 1, "name": "x"}],
               "annotations": [box(0, 0, 1, 2, 2), {"id": 1, "image_id": 0, "category_id": 1, "bbox": [5, 5, 2, 2]}]}
        ds = FewShotDataset.from_raw(parse_manifest(doc), {0: np.zeros((10, 10, 3), np.uint8)})
        assert len(ds.samples) == 1
        assert ds.samples[0].mask.sum() == 8

    def test_restrict(self, small_dataset):
        c = small_dataset.classes[:3]
        sub = small_dataset.restrict(classes=c)
        assert sub.classes == sorted(c)
        drop = set(list(sub.image_ids)[:5])
        assert not (sub.restrict(exclude_images=drop).image_ids & drop)


class TestSynthetic:
    def test_scene_contract(self):
        spec = SceneSpec()
        for seed in range(5):
            img, objs = generate_synthetic_scene(spec, seed)
            assert img.shape == (128, 128, 3) and img.dtype == np.uint8
            assert 5 <= len(objs) <= 10
            assert len({o.class_id for o in objs}) == len(objs)
            cover = np.zeros((128, 128), int)
            for o in objs:
                cover += o.mask
                assert o.mask.sum() >= spec.min_visible * spec.area_range[0] * 128 * 128 - 1
            assert cover.max() <= 1  # visible masks never overlap

    def test_deterministic(self):
        a, oa = generate_synthetic_scene(SceneSpec(), 11)
        b, ob = generate_synthetic_scene(SceneSpec(), 11)
        assert np.array_equal(a, b) and [o.class_id for o in oa] == [o.class_id for o in ob]

    def test_anchor_class_present(self):
        _, objs = generate_synthetic_scene(SceneSpec(), 3, anchor_class=17)
        assert 17 in {o.class_id for o in objs}

    def test_corpus_writes_manifest(self, tmp_path):
        from locfewshot.ingestion import generate_corpus
        corpus = generate_corpus(SceneSpec(n_classes=4, objects_range=(2, 3)), 2, seed=0, out_dir=tmp_path)
        doc = json.loads((tmp_path / "manifest.json").read_text())
        assert len(doc["images"]) == 8
        raw = load_annotations(tmp_path / "manifest.json")
        ds = FewShotDataset.from_raw(raw)
        assert np.array_equal(ds.image(0), corpus.images[0])
