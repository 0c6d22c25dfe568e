import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tilelab.catalog import default_catalog
from tilelab.encoding import (
    AnchorLevel,
    EncodingError,
    LossConfig,
    PredictionTensor,
    apply_offsets,
    build_anchors,
    classification_loss,
    classification_loss_grad,
    decode,
    encode,
    focal_loss,
    focal_loss_grad,
    load_predictions,
    offsets_of,
    orientation_loss,
    orientation_loss_grad,
    perfect_predictions,
    regression_loss,
    regression_loss_grad,
    sample_hard_negatives,
    save_predictions,
    softmax,
)
from tilelab.evaluation import match_detections
from tilelab.geometry import orientation_error_deg
from tilelab.scenegen import JitterRanges, SceneGenConfig, annotate, sample_scene

from .oracles import central_difference

CAT = default_catalog()


class TestBuildAnchors:
    def test_96_grid(self):
        levels = tuple(AnchorLevel(s, 1.25 * s) for s in (8, 16, 32))
        grid = build_anchors((96, 96), levels)
        assert grid.n_anchors == 144 + 36 + 9

    def test_480_grid(self):
        levels = tuple(AnchorLevel(s, 1.25 * s) for s in (16, 32, 64))
        grid = build_anchors((480, 480), levels)
        assert grid.n_anchors == 900 + 225 + 64

    def test_stride_equals_image(self):
        grid = build_anchors((96, 96), (AnchorLevel(96, 100.0),))
        assert grid.n_anchors == 1
        np.testing.assert_allclose(grid.anchors[0], [48.0, 48.0, 100.0, 100.0])

    def test_empty_levels(self):
        with pytest.raises(EncodingError):
            build_anchors((96, 96), ())

    def test_order_stable(self):
        a = build_anchors((480, 480)).anchors
        b = build_anchors((480, 480)).anchors
        np.testing.assert_array_equal(a, b)


def scene_targets(seed, max_tiles=6):
    cfg = SceneGenConfig(max_tiles=max_tiles, jitter=JitterRanges())
    scene = sample_scene(seed, cfg)
    anns = annotate(scene, CAT)
    grid = build_anchors(scene.image_size)
    return scene, anns, grid


class TestEncode:
    def test_gt_equal_to_anchor_zero_offsets(self):
        grid = build_anchors((480, 480))
        # craft an annotation whose aabb equals anchor 0 exactly
        from tilelab.scenegen import SceneSpec, TilePose, annotate as ann_fn

        anchor = grid.anchors[930]  # a 40px anchor from the stride-32 level
        tile = TilePose("square_blue", float(anchor[0]), float(anchor[1]), 0.0)
        ann = ann_fn(SceneSpec(tiles=(tile,)), CAT)[0]
        # square is 50x50 but the anchor is 40x40; force exact match by
        # computing against an anchor-sized box instead: use offsets_of
        target = encode([ann], grid)
        i = np.flatnonzero(target.positive_mask)
        # the claimed anchors all regress to the same aabb
        boxes = apply_offsets(grid.anchors[i], target.offsets[i])
        for b in boxes:
            assert b[0] == pytest.approx(anchor[0], abs=1e-5)
            assert b[1] == pytest.approx(anchor[1], abs=1e-5)
            assert b[2] == pytest.approx(50.0, abs=1e-4)

    def test_offset_formula_half_anchor_shift(self):
        anchors = np.array([[100.0, 100.0, 40.0, 40.0]])
        boxes = np.array([[120.0, 100.0, 40.0, 40.0]])
        off = offsets_of(anchors, boxes)
        np.testing.assert_allclose(off, [[0.5, 0.0, 0.0, 0.0]], atol=1e-12)

    def test_every_gt_has_positive_anchor(self):
        for seed in range(40):
            _, anns, grid = scene_targets(seed, max_tiles=8)
            t = encode(anns, grid)
            assert set(t.assigned_gt[t.positive_mask]) == set(range(len(anns)))

    def test_negative_sampling_ratio_one(self):
        _, anns, grid = scene_targets(3)
        t = encode(anns, grid)
        n_pos = int(t.positive_mask.sum())
        assert int(t.negative_mask.sum()) == n_pos
        assert not (t.negative_mask & t.positive_mask).any()
        assert (t.negative_mask <= t.negative_candidates).all()

    def test_negative_sampling_deterministic(self):
        _, anns, grid = scene_targets(3)
        a = encode(anns, grid, seed=5)
        b = encode(anns, grid, seed=5)
        np.testing.assert_array_equal(a.negative_mask, b.negative_mask)
        c = encode(anns, grid, seed=6)
        assert not np.array_equal(a.negative_mask, c.negative_mask)

    def test_empty_scene(self):
        grid = build_anchors((480, 480))
        t = encode([], grid)
        assert not t.positive_mask.any()
        assert t.negative_candidates.all()
        assert not t.negative_mask.any()

    def test_orientation_target_only_for_positives(self):
        _, anns, grid = scene_targets(4)
        t = encode(anns, grid)
        assert (t.orientation_target[~t.positive_mask] == -1).all()
        assert (t.orientation_target[t.positive_mask] >= 0).all()


class TestFocalLoss:
    def test_perfect_prediction_zero(self):
        assert focal_loss(1.0) == 0.0

    def test_paper_default_point(self):
        # alpha (1-p)^gamma (-ln p) at p=0.9, alpha=0.25, gamma=2
        assert focal_loss(0.9) == pytest.approx(2.634e-4, rel=1e-3)

    def test_reduces_to_cross_entropy(self):
        cfg = LossConfig(alpha=1.0, gamma=0.0)
        for p in (0.1, 0.5, 0.9, 1.0):
            assert focal_loss(p, cfg) == pytest.approx(-math.log(p), abs=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(EncodingError):
            focal_loss(0.0)
        with pytest.raises(EncodingError):
            focal_loss(-0.1)
        with pytest.raises(EncodingError):
            focal_loss(1.1)

    @given(st.floats(0.01, 0.99))
    @settings(max_examples=50, deadline=None)
    def test_monotonically_decreasing(self, p):
        assert focal_loss(p) > focal_loss(min(1.0, p + 0.01))

    def test_grad_matches_fd(self):
        # abs floor covers the cancellation regime near p=1 where the true
        # gradient itself is ~1e-7
        for p in (0.05, 0.3, 0.7, 0.999):
            for cfg in (LossConfig(), LossConfig(alpha=0.5, gamma=0.0), LossConfig(gamma=1.0)):
                x = np.array([p])
                fd = central_difference(lambda v: focal_loss(float(v[0]), cfg), x)
                assert focal_loss_grad(p, cfg) == pytest.approx(float(fd[0]), rel=1e-4, abs=1e-9)

    def test_grad_at_one_is_zero_for_positive_gamma(self):
        assert focal_loss_grad(1.0, LossConfig(gamma=2.0)) == 0.0


class TestLossConfig:
    def test_alpha_bounds(self):
        with pytest.raises(EncodingError):
            LossConfig(alpha=0.0)
        with pytest.raises(EncodingError):
            LossConfig(alpha=1.1)
        assert LossConfig(alpha=1.0).alpha == 1.0  # plain cross-entropy weighting

    def test_gamma_bounds(self):
        with pytest.raises(EncodingError):
            LossConfig(gamma=-1.0)


def random_prediction(rng, n_anchors, n_classes=6, n_bins=48):
    return PredictionTensor(
        class_logits=rng.normal(0, 1.5, (n_anchors, n_classes + 1)).astype(np.float64),
        orientation_logits=rng.normal(0, 1.5, (n_anchors, n_bins)).astype(np.float64),
        offsets=rng.normal(0, 0.5, (n_anchors, 4)).astype(np.float64),
    )


class TestBatchLosses:
    def test_perfect_orientation_near_zero(self):
        _, anns, grid = scene_targets(2)
        t = encode(anns, grid)
        pred = perfect_predictions(t)
        assert orientation_loss(pred.orientation_logits, t) < 1e-12

    def test_uniform_orientation_logits_formula(self):
        _, anns, grid = scene_targets(2)
        t = encode(anns, grid)
        logits = np.zeros((grid.n_anchors, 48))
        cfg = LossConfig()
        expected = cfg.alpha * (1 - 1 / 48) ** cfg.gamma * math.log(48)
        assert orientation_loss(logits, t, cfg) == pytest.approx(expected, rel=1e-12)

    def test_orientation_matches_scalar_path(self):
        _, anns, grid = scene_targets(5)
        t = encode(anns, grid)
        rng = np.random.default_rng(0)
        pred = random_prediction(rng, grid.n_anchors)
        pos = np.flatnonzero(t.positive_mask)
        probs = softmax(pred.orientation_logits[pos])
        p_t = probs[np.arange(pos.size), t.orientation_target[pos]]
        expected = float(np.mean([focal_loss(float(p)) for p in p_t]))
        assert orientation_loss(pred.orientation_logits, t) == pytest.approx(expected, rel=1e-9)

    def test_regression_exact_zero(self):
        _, anns, grid = scene_targets(2)
        t = encode(anns, grid)
        assert regression_loss(t.offsets.copy(), t) == 0.0

    def test_regression_smooth_l1_value(self):
        _, anns, grid = scene_targets(2)
        t = encode(anns, grid)
        pred = t.offsets.astype(np.float64) + 0.5 * t.positive_mask[:, None]
        # |err| = 0.5 on every positive coordinate -> 0.5 * 0.25 = 0.125
        assert regression_loss(pred, t) == pytest.approx(0.125, rel=1e-9)

    def test_classification_perfect_near_zero(self):
        _, anns, grid = scene_targets(2)
        t = encode(anns, grid)
        pred = perfect_predictions(t)
        assert classification_loss(pred.class_logits, t) < 1e-12

    def test_all_grads_match_finite_differences(self):
        rng = np.random.default_rng(42)
        rel_tol = 1e-5
        for trial in range(4):
            grid = build_anchors((96, 96), (AnchorLevel(32, 40.0),))
            scene = sample_scene(trial + 10, SceneGenConfig(image_size=(96, 96), max_tiles=2))
            anns = annotate(scene, CAT)
            t = encode(anns, grid)
            pred = random_prediction(rng, grid.n_anchors)

            checks = [
                (pred.class_logits, lambda x: classification_loss(x, t),
                 classification_loss_grad(pred.class_logits, t)),
                (pred.orientation_logits, lambda x: orientation_loss(x, t),
                 orientation_loss_grad(pred.orientation_logits, t)),
                (pred.offsets, lambda x: regression_loss(x, t),
                 regression_loss_grad(pred.offsets, t)),
            ]
            for x, f, analytic in checks:
                fd = central_difference(f, x.copy())
                denom = np.maximum(np.abs(analytic), np.abs(fd))
                mask = denom > 1e-12
                rel = np.abs(analytic - fd)[mask] / denom[mask]
                assert rel.max() < rel_tol if mask.any() else True

    def test_hard_negatives_pick_top_losses(self):
        _, anns, grid = scene_targets(6)
        t = encode(anns, grid)
        rng = np.random.default_rng(1)
        pred = random_prediction(rng, grid.n_anchors)
        mask = sample_hard_negatives(pred, t, LossConfig())
        assert int(mask.sum()) == int(t.positive_mask.sum())
        probs = softmax(pred.class_logits)
        losses = focal_loss(np.clip(probs[:, 0], 1e-12, 1.0))
        chosen = losses[mask]
        others = losses[t.negative_candidates & ~mask]
        assert chosen.min() >= others.max() - 1e-12


class TestDecode:
    def test_round_trip_recovers_ground_truth(self):
        scene, anns, grid = scene_targets(21, max_tiles=8)
        t = encode(anns, grid)
        dets = decode(perfect_predictions(t), grid, CAT)
        assert len(dets) == len(anns)
        r = match_detections(dets, anns)
        assert len(r.matches) == len(anns)
        for pi, gi, _ in r.matches:
            d, a = dets[pi], anns[gi]
            assert d.shape == a.shape
            gx = (a.aabb[0] + a.aabb[2]) / 2
            gy = (a.aabb[1] + a.aabb[3]) / 2
            assert abs(d.axis_box[0] - gx) <= 0.01
            assert abs(d.axis_box[1] - gy) <= 0.01
            sym = CAT.get(a.spec_id).symmetry
            assert orientation_error_deg(d.pose.theta, a.theta_deg, sym) <= 3.75 + 1e-9

    def test_all_background_empty(self):
        grid = build_anchors((96, 96), (AnchorLevel(32, 40.0),))
        pred = PredictionTensor(
            class_logits=np.tile([10.0] + [0.0] * 6, (grid.n_anchors, 1)),
            orientation_logits=np.zeros((grid.n_anchors, 48)),
            offsets=np.zeros((grid.n_anchors, 4)),
        )
        assert decode(pred, grid, CAT) == []

    def test_duplicate_candidates_suppressed(self):
        scene, anns, grid = scene_targets(33, max_tiles=1)
        t = encode(anns, grid)
        dets = decode(perfect_predictions(t), grid, CAT)
        assert len(dets) == 1  # several positive anchors, one survivor

    def test_nms_antichain(self):
        from tilelab.geometry import rotated_iou

        for seed in (40, 41, 42):
            scene, anns, grid = scene_targets(seed, max_tiles=8)
            t = encode(anns, grid)
            dets = decode(perfect_predictions(t), grid, CAT, nms_iou=0.45)
            for i in range(len(dets)):
                for j in range(i + 1, len(dets)):
                    if dets[i].shape == dets[j].shape:
                        assert rotated_iou(dets[i].vertices, dets[j].vertices) <= 0.45 + 1e-9

    def test_ordering_deterministic(self):
        scene, anns, grid = scene_targets(44, max_tiles=6)
        t = encode(anns, grid)
        pred = perfect_predictions(t)
        a = decode(pred, grid, CAT)
        b = decode(pred, grid, CAT)
        assert [d.source_index for d in a] == [d.source_index for d in b]
        scores = [d.score for d in a]
        assert scores == sorted(scores, reverse=True)

    def test_shape_mismatch_rejected(self):
        grid = build_anchors((96, 96), (AnchorLevel(32, 40.0),))
        pred = PredictionTensor(
            class_logits=np.zeros((5, 7)),
            orientation_logits=np.zeros((5, 48)),
            offsets=np.zeros((5, 4)),
        )
        with pytest.raises(EncodingError):
            decode(pred, grid, CAT)

    def test_max_out_limits(self):
        scene, anns, grid = scene_targets(21, max_tiles=8)
        t = encode(anns, grid)
        dets = decode(perfect_predictions(t), grid, CAT, max_out=2)
        assert len(dets) == 2


class TestOffsetInvertibility:
    @given(
        st.floats(50, 400), st.floats(50, 400), st.floats(20, 120), st.floats(20, 120),
        st.floats(60, 420), st.floats(60, 420), st.floats(25, 110), st.floats(25, 110),
    )
    @settings(max_examples=80, deadline=None)
    def test_round_trip(self, ax, ay, aw, ah, bx, by, bw, bh):
        anchors = np.array([[ax, ay, aw, ah]])
        boxes = np.array([[bx, by, bw, bh]])
        back = apply_offsets(anchors, offsets_of(anchors, boxes))
        np.testing.assert_allclose(back, boxes, rtol=1e-9, atol=1e-9)


class TestTensorIO:
    def _pred(self):
        rng = np.random.default_rng(3)
        return random_prediction(rng, 189)

    def test_round_trip_concatenated(self, tmp_path):
        pred = self._pred()
        path = tmp_path / "pred.tensor"
        save_predictions(pred, path)
        again = load_predictions(path)
        np.testing.assert_allclose(again.class_logits, pred.class_logits.astype(np.float32))
        np.testing.assert_allclose(again.offsets, pred.offsets.astype(np.float32))

    def test_round_trip_separate_blob(self, tmp_path):
        pred = self._pred()
        path = tmp_path / "pred.json"
        save_predictions(pred, path, data_path="pred.bin")
        assert (tmp_path / "pred.bin").exists()
        again = load_predictions(path)
        np.testing.assert_allclose(
            again.orientation_logits, pred.orientation_logits.astype(np.float32)
        )

    def test_truncated_rejected(self, tmp_path):
        pred = self._pred()
        path = tmp_path / "pred.tensor"
        save_predictions(pred, path)
        data = path.read_bytes()
        path.write_bytes(data[:-100])
        with pytest.raises(EncodingError):
            load_predictions(path)

    def test_anchor_count_mismatch_rejected(self, tmp_path):
        pred = self._pred()
        path = tmp_path / "pred.tensor"
        save_predictions(pred, path)
        grid = build_anchors((480, 480))  # 1189 anchors != 189
        with pytest.raises(EncodingError):
            load_predictions(path, grid)

    def test_bad_layout_rejected(self, tmp_path):
        path = tmp_path / "pred.tensor"
        header = (
            b'{"anchors": 1, "classes": 6, "bins": 48, "layout": "offsets|class", '
            b'"dtype": "f32le", "data_offset": 256}'
        )
        path.write_bytes(header + b" " * (255 - len(header)) + b"\n" + b"\x00" * 236)
        with pytest.raises(EncodingError):
            load_predictions(path)

    def test_decode_from_loaded_tensor(self, tmp_path):
        scene, anns, grid = scene_targets(50, max_tiles=4)
        t = encode(anns, grid)
        pred = perfect_predictions(t)
        path = tmp_path / "pred.tensor"
        save_predictions(pred, path)
        dets = decode(load_predictions(path, grid), grid, CAT)
        assert len(dets) == len(anns)
