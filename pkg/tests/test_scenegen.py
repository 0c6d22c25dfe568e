import json

import numpy as np
import pytest

from tilelab.catalog import BACKGROUND_COLOR, Catalog, CatalogError, TileSpec, default_catalog
from tilelab.geometry import intersection_area, polygon_of
from tilelab.render import border_color, rasterize
from tilelab.scenegen import (
    CompositionJitter,
    GlobalJitter,
    Photometrics,
    PhotometricRanges,
    JitterRanges,
    SceneError,
    SceneGenConfig,
    SceneSpec,
    Shadow,
    TilePose,
    annotate,
    check_dense_packing,
    dumps_canonical,
    generate_dataset,
    jittered_box,
    sample_composition,
    sample_scene,
)

CAT = default_catalog()


class TestCatalog:
    def test_default_catalog_valid(self):
        assert len(CAT) == 6
        assert CAT.get("tri_red").shape == "right_triangle"

    def test_unknown_spec(self):
        with pytest.raises(KeyError):
            CAT.get("nope")

    def test_symmetry_must_hold(self):
        with pytest.raises(CatalogError):
            TileSpec("bad", "rectangle", (10, 10, 10), (70.0, 35.0), symmetry=4)

    def test_color_separation_enforced(self):
        a = TileSpec("a", "square", (100, 100, 100), (50, 50), symmetry=4)
        b = TileSpec("b", "rectangle", (110, 110, 110), (70, 35), symmetry=2)
        with pytest.raises(CatalogError):
            Catalog((a, b))

    def test_round_trip(self):
        again = Catalog.from_dict(CAT.to_dict())
        assert again == CAT


class TestSampleScene:
    def test_deterministic(self):
        cfg = SceneGenConfig(max_tiles=6)
        a = sample_scene(42, cfg)
        b = sample_scene(42, cfg)
        assert dumps_canonical(a.to_dict()) == dumps_canonical(b.to_dict())

    def test_single_tile_in_bounds(self):
        scene = sample_scene(7, SceneGenConfig(max_tiles=1))
        assert len(scene.tiles) == 1
        ann = annotate(scene, CAT)[0]
        x0, y0, x1, y1 = ann.aabb
        w, h = scene.image_size
        assert 0 <= x0 and 0 <= y0 and x1 <= w and y1 <= h

    def test_dense_packing_invariant(self):
        # direct check with the geometry intersection oracle
        for seed in (42, 7, 99):
            scene = sample_scene(seed, SceneGenConfig(max_tiles=6))
            assert len(scene.tiles) <= 6
            anns = annotate(scene, CAT)
            polys = [a.vertices for a in anns]
            for i in range(len(polys)):
                for j in range(i + 1, len(polys)):
                    limit = 0.01 * min(polys[i].area, polys[j].area) + 1e-9
                    assert intersection_area(polys[i], polys[j]) <= limit

    def test_empty_catalog_rejected(self):
        with pytest.raises(Exception):
            sample_scene(1, SceneGenConfig(catalog=Catalog(()), max_tiles=2))

    def test_scene_json_round_trip(self):
        scene = sample_scene(3, SceneGenConfig(max_tiles=4, photometrics=PhotometricRanges(),
                                               jitter=JitterRanges()))
        again = SceneSpec.from_dict(json.loads(dumps_canonical(scene.to_dict())))
        assert dumps_canonical(again.to_dict()) == dumps_canonical(scene.to_dict())


class TestValidation:
    def test_photometrics_ranges(self):
        with pytest.raises(SceneError):
            Photometrics(brightness_gain=0.5)
        with pytest.raises(SceneError):
            Photometrics(gamma=2.0)
        with pytest.raises(SceneError):
            Photometrics(noise_sigma=11.0)

    def test_jitter_scale_range(self):
        with pytest.raises(SceneError):
            GlobalJitter(scale=0.5)

    def test_shadow_strength(self):
        with pytest.raises(SceneError):
            Shadow(cx=0, cy=0, rx=10, ry=10, strength=0.9)


class TestAnnotate:
    def test_single_tile_annotation_matches_pose(self):
        tile = TilePose("square_blue", 200.0, 150.0, 37.0)
        scene = SceneSpec(tiles=(tile,))
        ann = annotate(scene, CAT)[0]
        assert ann.cx == pytest.approx(200.0)
        assert ann.cy == pytest.approx(150.0)
        assert ann.theta_deg == pytest.approx(37.0)  # canonical for k=4
        assert ann.shape == "square"

    def test_jitter_rotation_shifts_theta(self):
        tile = TilePose("tri_red", 240.0, 240.0, 20.0)
        jitter = GlobalJitter(rotation_deg=10.0)
        scene = SceneSpec(tiles=(tile,), global_jitter=jitter)
        ann = annotate(scene, CAT)[0]
        assert ann.theta_deg == pytest.approx(30.0)

    def test_vertices_equal_polygon_of(self):
        scene = sample_scene(5, SceneGenConfig(max_tiles=5, jitter=JitterRanges()))
        for ann in annotate(scene, CAT):
            spec = CAT.get(ann.spec_id)
            again = polygon_of(spec.shape, ann.box)
            np.testing.assert_array_equal(ann.vertices.vertices, again.vertices)

    def test_annotations_invariant_to_photometrics(self):
        base = sample_scene(11, SceneGenConfig(max_tiles=5))
        noisy = SceneSpec(
            image_size=base.image_size,
            tiles=base.tiles,
            photometrics=Photometrics(0.8, 1.2, 9.0),
            global_jitter=base.global_jitter,
            rng_seed=base.rng_seed,
        )
        a = [x.to_dict() for x in annotate(base, CAT)]
        b = [x.to_dict() for x in annotate(noisy, CAT)]
        assert a == b

    def test_jitter_equivariance(self):
        tile = TilePose("semi_purple", 230.0, 210.0, 42.0)
        jitter = GlobalJitter(scale=1.05, rotation_deg=7.0, translation=(4.0, -3.0))
        plain = SceneSpec(tiles=(tile,))
        moved = SceneSpec(tiles=(tile,), global_jitter=jitter)
        v0 = annotate(plain, CAT)[0].vertices.vertices
        v1 = annotate(moved, CAT)[0].vertices.vertices
        expected = jitter.apply(v0, plain.image_size)
        np.testing.assert_allclose(v1, expected, atol=1e-9)


class TestRasterize:
    def test_empty_scene_uniform_background(self):
        img = rasterize(SceneSpec(image_size=(64, 64)), CAT)
        assert img.shape == (64, 64, 3)
        assert np.all(img == np.array(BACKGROUND_COLOR, np.uint8))

    def test_interior_pixels_exact_color(self):
        tile = TilePose("tri_red", 240.0, 240.0, 0.0)
        img = rasterize(SceneSpec(tiles=(tile,)), CAT)
        color = np.array(CAT.get("tri_red").color, np.uint8)
        # sample well inside the triangle, away from border and antialiasing
        patch = img[218:232, 218:232]
        assert np.all(patch == color)

    def test_border_pixels_darker(self):
        tile = TilePose("square_blue", 100.0, 100.0, 0.0)
        img = rasterize(SceneSpec(tiles=(tile,)), CAT)
        spec = CAT.get("square_blue")
        # 1 px inside the left edge (x = 100-25 = 75): border shade
        assert tuple(img[100, 76]) == border_color(spec.color)

    def test_deterministic_bytes(self):
        scene = sample_scene(9, SceneGenConfig(max_tiles=5, photometrics=PhotometricRanges()))
        a = rasterize(scene, CAT)
        b = rasterize(scene, CAT)
        assert np.array_equal(a, b)

    def test_noise_changes_pixels_deterministically(self):
        tile = TilePose("square_blue", 100.0, 100.0, 0.0)
        noisy = SceneSpec(tiles=(tile,), photometrics=Photometrics(noise_sigma=5.0), rng_seed=3)
        a = rasterize(noisy, CAT)
        b = rasterize(noisy, CAT)
        assert np.array_equal(a, b)
        clean = rasterize(SceneSpec(tiles=(tile,), rng_seed=3), CAT)
        assert not np.array_equal(a, clean)

    def test_shadow_darkens(self):
        shadow = Shadow(cx=240, cy=240, rx=100, ry=100, strength=0.3)
        scene = SceneSpec(photometrics=Photometrics(shadow=shadow))
        img = rasterize(scene, CAT)
        assert img[240, 240, 0] < BACKGROUND_COLOR[0]
        assert img[10, 10, 0] == BACKGROUND_COLOR[0]


class TestSampleComposition:
    def test_zero_jitter_mushroom_tiles(self):
        scene = sample_composition("mushroom", CompositionJitter(0, 0), seed=5)
        assert len(scene.tiles) == 4
        ids = sorted(t.spec_id for t in scene.tiles)
        assert ids in (
            ["quarter_dkgreen", "quarter_dkgreen", "rect_green", "rect_green"],
            ["quarter_dkgreen", "quarter_dkgreen", "tri_red", "tri_red"],
        )
        assert scene.composition is not None
        assert scene.composition.template_id == "mushroom"

    def test_forced_alternative(self):
        scene = sample_composition(
            "mushroom", CompositionJitter(0, 0), seed=5, alternatives={1: 1}
        )
        assert sum(t.spec_id == "tri_red" for t in scene.tiles) == 2
        assert scene.composition.alternatives == (0, 1)

    def test_zero_jitter_is_dense_packed(self):
        for seed in range(5):
            scene = sample_composition("mushroom", CompositionJitter(0, 0), seed=seed)
            assert check_dense_packing(scene, CAT)

    def test_unknown_template(self):
        with pytest.raises(KeyError):
            sample_composition("fir_tree", seed=1)

    def test_deterministic(self):
        a = sample_composition("mushroom", CompositionJitter(1.5, 2.0), seed=8)
        b = sample_composition("mushroom", CompositionJitter(1.5, 2.0), seed=8)
        assert dumps_canonical(a.to_dict()) == dumps_canonical(b.to_dict())


class TestGenerateDataset:
    def test_empty(self, tmp_path):
        manifest = generate_dataset(0, 7, tmp_path)
        assert manifest.count == 0
        assert manifest.entries == ()
        assert (tmp_path / "manifest.json").exists()

    def test_deterministic_bytes(self, tmp_path):
        cfg = SceneGenConfig(max_tiles=4)
        m1 = generate_dataset(6, 7, tmp_path / "a", mode="mixed", config=cfg)
        m2 = generate_dataset(6, 7, tmp_path / "b", mode="mixed", config=cfg)
        assert (tmp_path / "a/manifest.json").read_bytes() == (tmp_path / "b/manifest.json").read_bytes()
        for e1, e2 in zip(m1.entries, m2.entries):
            for key in ("annotation_path", "scene_path", "image_path"):
                a = (tmp_path / "a" / e1[key]).read_bytes()
                b = (tmp_path / "b" / e2[key]).read_bytes()
                assert a == b

    def test_io_failure_reported_per_entry(self, tmp_path):
        out = tmp_path / "d"
        for sub in ("images", "annotations", "scenes"):
            (out / sub).mkdir(parents=True)
        # pre-create a directory where the image file should go
        (out / "images/000001.png").mkdir()
        with pytest.raises(SceneError, match="entry 000001"):
            generate_dataset(3, 1, out, config=SceneGenConfig(max_tiles=2))

    def test_files_exist(self, tmp_path):
        manifest = generate_dataset(3, 1, tmp_path, config=SceneGenConfig(max_tiles=3))
        assert manifest.count == 3
        for e in manifest.entries:
            for key in ("image_path", "annotation_path", "scene_path"):
                assert (tmp_path / e[key]).exists()

    def test_parallel_matches_serial(self, tmp_path):
        cfg = SceneGenConfig(max_tiles=3)
        generate_dataset(4, 3, tmp_path / "s", config=cfg, workers=1)
        generate_dataset(4, 3, tmp_path / "p", config=cfg, workers=4)
        assert (tmp_path / "s/manifest.json").read_bytes() == (tmp_path / "p/manifest.json").read_bytes()
        for i in range(4):
            a = (tmp_path / "s" / f"annotations/{i:06d}.json").read_bytes()
            b = (tmp_path / "p" / f"annotations/{i:06d}.json").read_bytes()
            assert a == b

    def test_compositions_mode_matches_templates(self, tmp_path):
        from tilelab.compose import get_template

        manifest = generate_dataset(4, 5, tmp_path, mode="compositions")
        for e in manifest.entries:
            scene = SceneSpec.from_dict(json.loads((tmp_path / e["scene_path"]).read_text()))
            assert scene.composition is not None
            template = get_template(scene.composition.template_id)
            expected = sorted(
                slot.spec_id or CAT.spec_for_shape(slot.shape).id
                for gi, group in enumerate(template.parts)
                for slot in group.alternatives[scene.composition.alternatives[gi]]
            )
            assert sorted(t.spec_id for t in scene.tiles) == expected

    def test_bad_mode(self, tmp_path):
        with pytest.raises(SceneError):
            generate_dataset(1, 1, tmp_path, mode="nope")


class TestJitteredBox:
    def test_identity(self):
        tile = TilePose("square_blue", 100.0, 120.0, 30.0)
        box = jittered_box(tile, CAT.get("square_blue"), GlobalJitter(), (480, 480))
        assert (box.cx, box.cy, box.theta) == (100.0, 120.0, 30.0)
        assert (box.w, box.h) == (50.0, 50.0)

    def test_scale_and_rotation(self):
        tile = TilePose("rect_green", 240.0, 240.0, 10.0)
        jit = GlobalJitter(scale=1.1, rotation_deg=5.0)
        box = jittered_box(tile, CAT.get("rect_green"), jit, (480, 480))
        assert box.w == pytest.approx(77.0)
        assert box.theta == pytest.approx(15.0)
        assert (box.cx, box.cy) == pytest.approx((240.0, 240.0))  # center fixed
