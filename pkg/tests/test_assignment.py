import math

import numpy as np
import pytest

from rboxloc.assignment import (
    DEFAULT_SCALE_RANGES,
    UNBOUNDED_RANGES,
    assign_hbox_targets,
    assign_rbox_targets,
    box_frame_offsets,
    centerness,
    check_scale_ranges,
    count_positives,
    encode_hbox_offsets,
    feature_to_image,
    generate_anchors,
)
from rboxloc.geometry import HBox, Point2, RBox
from oracles import enumerate_assignment

SHAPES_256 = [(32, 32, 8), (16, 16, 16), (8, 8, 32), (4, 4, 64), (2, 2, 128)]


def random_gt(rng, size=256):
    w = rng.uniform(8, 120)
    h = rng.uniform(8, 120)
    margin = math.hypot(w, h) / 2 + 1
    return RBox(
        rng.uniform(margin, size - margin),
        rng.uniform(margin, size - margin),
        w, h,
        rng.uniform(-math.pi / 2, math.pi / 2),
    )


class TestFeatureToImage:
    def test_origin(self):
        p = feature_to_image(0, 0, 8)
        assert (p.x, p.y) == (4, 4)

    def test_stride_16(self):
        # row 2, column 3: row offset 8 + 2*16, column offset 8 + 3*16
        p = feature_to_image(2, 3, 16)
        assert (p.y, p.x) == (40, 56)

    def test_stride_128(self):
        p = feature_to_image(1, 0, 128)
        assert (p.y, p.x) == (192, 64)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            feature_to_image(-1, 0, 8)


class TestBoxFrameOffsets:
    def test_center(self):
        b = RBox(5, 5, 4, 2, 0.3)
        left, top, right, bottom, theta = box_frame_offsets(Point2(5, 5), b)
        assert (left, top, right, bottom) == pytest.approx((2, 1, 2, 1), abs=1e-12)
        assert theta == 0.3

    def test_axis_aligned_arithmetic(self):
        got = box_frame_offsets(Point2(1, 0.5), RBox(0, 0, 4, 2, 0))
        assert got == pytest.approx((3, 1.5, 1, 0.5, 0), abs=1e-12)

    def test_quarter_turn_against_rotation_oracle(self):
        b = RBox(0, 0, 4, 2, math.pi / 2)
        p = Point2(0.5, 1)
        got = box_frame_offsets(p, b)
        # oracle: rotate the offset by -theta explicitly
        c, s = math.cos(b.theta), math.sin(b.theta)
        bx = c * (p.x - b.cx) + s * (p.y - b.cy)
        by = -s * (p.x - b.cx) + c * (p.y - b.cy)
        expected = (b.w / 2 + bx, b.h / 2 + by, b.w / 2 - bx, b.h / 2 - by, b.theta)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got[0] + got[2] == pytest.approx(b.w, abs=1e-12)
        assert got[1] + got[3] == pytest.approx(b.h, abs=1e-12)

    def test_sum_identities_random(self):
        rng = np.random.default_rng(22)
        for _ in range(200):
            b = random_gt(rng)
            # sample a point inside via box-frame coordinates
            u = rng.uniform(-b.w / 2, b.w / 2)
            v = rng.uniform(-b.h / 2, b.h / 2)
            c, s = math.cos(b.theta), math.sin(b.theta)
            p = Point2(b.cx + u * c - v * s, b.cy + u * s + v * c)
            left, top, right, bottom, _ = box_frame_offsets(p, b)
            assert left + right == pytest.approx(b.w, abs=1e-6)
            assert top + bottom == pytest.approx(b.h, abs=1e-6)
            assert min(left, top, right, bottom) >= 0

    def test_outside_point_rejected(self):
        with pytest.raises(ValueError):
            box_frame_offsets(Point2(10, 0), RBox(0, 0, 2, 2, 0))


class TestCenterness:
    def test_center_is_one(self):
        assert centerness(2, 3, 2, 3) == 1.0

    def test_edge_is_zero(self):
        assert centerness(0, 2, 4, 2) == 0.0

    def test_formula(self):
        assert centerness(1, 2, 3, 2) == pytest.approx(math.sqrt(1 / 3))

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            centerness(0, 1, 0, 1)

    def test_bounds(self):
        rng = np.random.default_rng(23)
        for _ in range(500):
            left, top, right, bottom = rng.uniform(0, 50, size=4)
            if left + right == 0 or top + bottom == 0:
                continue
            value = centerness(left, top, right, bottom)
            assert 0.0 <= value <= 1.0
            if value == 1.0:
                assert left == right and top == bottom


class TestScaleRanges:
    def test_default_valid(self):
        assert check_scale_ranges(DEFAULT_SCALE_RANGES) == DEFAULT_SCALE_RANGES

    def test_rejects_gap(self):
        with pytest.raises(ValueError):
            check_scale_ranges(((0, 64), (65, 128), (128, 256), (256, 512), (512, math.inf)))

    def test_rejects_bounded_tail(self):
        with pytest.raises(ValueError):
            check_scale_ranges(((0, 64), (64, 128), (128, 256), (256, 512), (512, 1024)))


class TestAssignRbox:
    def test_whole_image_positive(self):
        gt = RBox(8, 8, 100, 100, 0.0)
        targets = assign_rbox_targets([(2, 2, 8)], gt, [(0.0, math.inf)])
        assert len(targets) == 4
        assert count_positives(targets) == 4

    def test_tiny_box_single_positive(self):
        gt = RBox(4, 4, 0.5, 0.5, 0.0)
        targets = assign_rbox_targets([(2, 2, 8)], gt, [(0.0, math.inf)])
        positives = [t for t in targets if t.is_positive]
        assert len(positives) == 1
        assert (positives[0].i, positives[0].j) == (0, 0)

    def test_zero_positives_is_not_an_error(self):
        gt = RBox(6.5, 6.5, 0.5, 0.5, 0.0)  # misses every stride-8 point
        targets = assign_rbox_targets([(2, 2, 8)], gt, [(0.0, math.inf)])
        assert count_positives(targets) == 0

    @pytest.mark.parametrize("ranged", [True, False])
    def test_matches_enumeration_oracle(self, ranged):
        rng = np.random.default_rng(24)
        ranges = DEFAULT_SCALE_RANGES if ranged else UNBOUNDED_RANGES
        for _ in range(30):
            gt = random_gt(rng)
            targets = assign_rbox_targets(SHAPES_256, gt, ranges)
            expected = enumerate_assignment(
                SHAPES_256, (gt.cx, gt.cy, gt.w, gt.h, gt.theta), ranges
            )
            got = {(t.k, t.i, t.j): t for t in targets if t.is_positive}
            assert set(got) == set(expected)
            for key, (cn, reg) in expected.items():
                assert got[key].centerness == pytest.approx(cn, abs=1e-9)
                assert got[key].regression == pytest.approx(reg, abs=1e-9)

    def test_scan_order_and_completeness(self):
        gt = RBox(64, 64, 30, 20, 0.4)
        targets = assign_rbox_targets(SHAPES_256, gt)
        assert len(targets) == sum(h * w for h, w, _ in SHAPES_256)
        flat = [(t.k, t.i, t.j) for t in targets]
        expected = [
            (int(s).bit_length() - 1, i, j)
            for h, w, s in SHAPES_256 for i in range(h) for j in range(w)
        ]
        assert flat == expected

    def test_growing_box_keeps_positives(self):
        rng = np.random.default_rng(25)
        for _ in range(20):
            gt = random_gt(rng, size=200)
            grown = RBox(gt.cx, gt.cy, gt.w * 1.5, gt.h * 1.5, gt.theta)
            small = {
                (t.k, t.i, t.j)
                for t in assign_rbox_targets(SHAPES_256, gt, UNBOUNDED_RANGES)
                if t.is_positive
            }
            big = {
                (t.k, t.i, t.j)
                for t in assign_rbox_targets(SHAPES_256, grown, UNBOUNDED_RANGES)
                if t.is_positive
            }
            assert small <= big

    def test_positive_invariants(self):
        rng = np.random.default_rng(26)
        gt = random_gt(rng)
        for t in assign_rbox_targets(SHAPES_256, gt):
            if not t.is_positive:
                assert t.centerness is None and t.regression is None
                continue
            left, top, right, bottom, theta = t.regression
            assert left + right == pytest.approx(gt.w, abs=1e-6)
            assert top + bottom == pytest.approx(gt.h, abs=1e-6)
            assert 0.0 <= t.centerness <= 1.0
            assert theta == gt.normalized().theta


class TestAssignMultiGt:
    def test_smaller_box_wins_overlap(self):
        shapes = [(4, 4, 8)]
        ranges = [(0.0, math.inf)]
        big = RBox(16, 16, 30, 30, 0.0)
        small = RBox(12, 12, 10, 10, 0.0)
        from rboxloc.assignment import assign_rbox_targets_multi

        merged = assign_rbox_targets_multi(shapes, [big, small], ranges)
        for t in merged:
            if not t.is_positive:
                continue
            in_small = abs(t.point.x - 12) <= 5 and abs(t.point.y - 12) <= 5
            if in_small:
                assert t.regression[4] == small.theta
                assert t.regression[0] + t.regression[2] == pytest.approx(small.w)
            else:
                assert t.regression[0] + t.regression[2] == pytest.approx(big.w)

    def test_single_gt_matches_plain_assignment(self):
        from rboxloc.assignment import assign_rbox_targets_multi

        gt = RBox(16, 16, 20, 12, 0.4)
        shapes = [(4, 4, 8), (2, 2, 16), (1, 1, 32), (1, 1, 64), (1, 1, 128)]
        assert assign_rbox_targets_multi(shapes, [gt]) == assign_rbox_targets(shapes, gt)

    def test_empty_gt_list_rejected(self):
        from rboxloc.assignment import assign_rbox_targets_multi

        with pytest.raises(ValueError):
            assign_rbox_targets_multi([(2, 2, 8)], [])


class TestAssignHbox:
    def test_exact_anchor(self):
        gt = HBox(10, 10, 20, 20)
        out = assign_hbox_targets([gt], gt)
        assert out[0].label == "positive"
        assert out[0].offsets == pytest.approx((0, 0, 0, 0), abs=1e-12)

    def test_disjoint_anchor(self):
        out = assign_hbox_targets([HBox(0, 0, 1, 1)], HBox(10, 10, 12, 12))
        assert out[0].label == "negative"

    def test_low_iou_negative(self):
        out = assign_hbox_targets([HBox(0, 0, 2, 2)], HBox(1, 1, 3, 3), 0.5, 0.4)
        assert out[0].iou == pytest.approx(1 / 7)
        assert out[0].label == "negative"

    def test_ignore_band(self):
        # IoU exactly 0.45: overlap chosen to land between the thresholds
        anchor = HBox(0, 0, 1, 1)
        gt = HBox(0, 0, 1, 1 / 0.45 - 1e-9)
        out = assign_hbox_targets([anchor], gt, 0.5, 0.4)
        assert out[0].label == "ignore"

    def test_offsets_roundtrip(self):
        from rboxloc.decode import decode_anchor_offsets

        rng = np.random.default_rng(27)
        for _ in range(100):
            anchor = HBox(0, 0, rng.uniform(4, 40), rng.uniform(4, 40))
            gx = rng.uniform(-10, 10)
            gy = rng.uniform(-10, 10)
            gw = rng.uniform(2, 50)
            gh = rng.uniform(2, 50)
            gt = HBox(gx, gy, gx + gw, gy + gh)
            back = decode_anchor_offsets(anchor, encode_hbox_offsets(anchor, gt))
            assert (back.xmin, back.ymin, back.xmax, back.ymax) == pytest.approx(
                (gt.xmin, gt.ymin, gt.xmax, gt.ymax), abs=1e-9
            )

    def test_bad_thresholds(self):
        with pytest.raises(ValueError):
            assign_hbox_targets([], HBox(0, 0, 1, 1), 0.4, 0.5)


class TestAnchors:
    def test_layout(self):
        anchors = generate_anchors([(2, 2, 8)], scale=4.0)
        assert len(anchors) == 4
        first = anchors[0]
        assert (first.xmin, first.ymin, first.xmax, first.ymax) == (-12, -12, 20, 20)
        assert first.w == 32  # 4 strides

    def test_count_over_pyramid(self):
        anchors = generate_anchors(SHAPES_256)
        assert len(anchors) == sum(h * w for h, w, _ in SHAPES_256)
