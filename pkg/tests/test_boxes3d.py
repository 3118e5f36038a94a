import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import boxes
from monouda.boxes3d import (Box3D, Detection, aligned_size_iou, bev_corners, bev_iou, convex_intersection, flip_box,
                             iou3d, nms, normalize_angle, pair_errors, polygon_area, vertical_overlap, yaw_difference)
from oracles import greedy_nms, raster_bev_iou


def unit(cx=0.0, cy=0.0, cz=10.0, yaw=0.0, d=(1.0, 1.0, 1.0)):
    return Box3D(cx, cy, cz, *d, yaw)


class TestBox:
    @pytest.mark.parametrize("dims", [(0, 1, 1), (1, -1, 1), (1, 1, 0)])
    def test_positive_dims(self, dims):
        with pytest.raises(ValueError):
            Box3D(0, 0, 10, *dims, 0.0)

    @pytest.mark.parametrize("yaw,expected", [(math.pi, -math.pi), (3 * math.pi / 2, -math.pi / 2),
                                              (-3 * math.pi, -math.pi), (0.25, 0.25)])
    def test_yaw_normalized(self, yaw, expected):
        assert Box3D(0, 0, 10, 1, 1, 1, yaw).yaw == pytest.approx(expected)

    @given(st.floats(-50, 50))
    def test_normalize_range(self, a):
        n = normalize_angle(a)
        assert -math.pi <= n < math.pi
        assert math.cos(n) == pytest.approx(math.cos(a), abs=1e-9)
        assert math.sin(n) == pytest.approx(math.sin(a), abs=1e-9)

    def test_dict_round_trip(self):
        b = Box3D(1.5, -0.2, 33.0, 4.2, 1.9, 1.6, -2.0, class_id=0)
        assert Box3D.from_dict(b.to_dict()) == b
        assert set(b.to_dict()) == {"cls", "loc", "dim", "yaw"}

    def test_array_round_trip(self):
        b = Box3D(1.5, -0.2, 33.0, 4.2, 1.9, 1.6, -2.0)
        assert Box3D.from_array(b.as_array()) == b

    def test_detection_score_range(self):
        with pytest.raises(ValueError):
            Detection(unit(), 1.5)


class TestBevIoU:
    def test_identical(self):
        b = Box3D(2, 0, 20, 4, 2, 1.5, 0.7)
        assert bev_iou(b, b) == pytest.approx(1.0, abs=1e-12)

    def test_far_apart(self):
        assert bev_iou(unit(cx=0.0), unit(cx=100.0)) == 0.0

    def test_half_offset_squares(self):
        # overlap 0.5, union 1.5
        assert bev_iou(unit(), unit(cx=0.5)) == pytest.approx(1 / 3, abs=1e-12)

    def test_rotated_square_in_square(self):
        # a 45 degree square of side 1 inside itself rotated: octagon overlap
        a, b = unit(), unit(yaw=math.pi / 4)
        inter = 2 * (math.sqrt(2) - 1)  # regular octagon area for unit squares
        assert bev_iou(a, b) == pytest.approx(inter / (2 - inter), abs=1e-12)

    def test_touching_edges(self):
        assert bev_iou(unit(), unit(cx=1.0)) == 0.0

    def test_area_sign_and_corners(self):
        pts = bev_corners(Box3D(0, 0, 0, 4, 2, 1, 0.3))
        assert polygon_area(pts) == pytest.approx(8.0)

    def test_convex_intersection_disjoint(self):
        a = bev_corners(unit())
        b = bev_corners(unit(cx=5))
        assert convex_intersection(a, b) == []

    @settings(max_examples=60)
    @given(boxes(), boxes())
    def test_symmetry(self, a, b):
        assert bev_iou(a, b) == pytest.approx(bev_iou(b, a), abs=1e-12)
        assert iou3d(a, b) == pytest.approx(iou3d(b, a), abs=1e-12)

    @settings(max_examples=60)
    @given(boxes(), boxes())
    def test_range(self, a, b):
        assert 0.0 <= bev_iou(a, b) <= 1.0
        assert 0.0 <= iou3d(a, b) <= 1.0

    @settings(max_examples=40)
    @given(boxes(spread=2.0), boxes(spread=2.0), st.floats(0.1, 10.0))
    def test_scale_equivariance(self, a, b, lam):
        def scaled(x):
            return Box3D(x.cx * lam, x.cy * lam, x.cz * lam, x.dx * lam, x.dy * lam, x.dz * lam, x.yaw)
        assert bev_iou(scaled(a), scaled(b)) == pytest.approx(bev_iou(a, b), abs=1e-9)
        assert iou3d(scaled(a), scaled(b)) == pytest.approx(iou3d(a, b), abs=1e-9)

    def test_against_rasterization(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a = Box3D(0, 0, 10, *rng.uniform(1, 4, 2), 1.0, rng.uniform(-math.pi, math.pi))
            b = Box3D(*rng.uniform(-1.5, 1.5, 1), 0, 10 + rng.uniform(-1.5, 1.5), *rng.uniform(1, 4, 2), 1.0,
                      rng.uniform(-math.pi, math.pi))
            assert bev_iou(a, b) == pytest.approx(raster_bev_iou(a, b, 600), abs=2e-3)


class TestIoU3D:
    def test_identical(self):
        b = Box3D(2, 0.5, 20, 4, 2, 1.5, 0.7)
        assert iou3d(b, b) == pytest.approx(1.0, abs=1e-12)

    def test_vertical_disjoint(self):
        assert iou3d(unit(cy=0.0), unit(cy=5.0)) == 0.0

    def test_offset_cubes(self):
        # overlap 0.5 * 1 * 0.5 over 2 - 0.25
        a, b = unit(), unit(cx=0.5, cy=0.5)
        assert iou3d(a, b) == pytest.approx(0.25 / 1.75, abs=1e-12)
        assert vertical_overlap(a, b) == pytest.approx(0.5)


class TestNms:
    def test_single(self):
        d = Detection(unit(), 0.5)
        assert nms([d], 0.5) == [d]

    def test_duplicate_suppressed(self):
        a, b = Detection(unit(), 0.9), Detection(unit(), 0.8)
        assert nms([b, a], 0.5) == [a]

    def test_ties_keep_input_order(self):
        a, b = Detection(unit(), 0.7), Detection(unit(yaw=0.01), 0.7)
        assert nms([a, b], 0.5) == [a]
        assert nms([b, a], 0.5) == [b]

    def test_max_keep(self):
        dets = [Detection(unit(cx=3.0 * i), 0.1 * (i + 1)) for i in range(5)]
        kept = nms(dets, 0.5, max_keep=2)
        assert [d.score for d in kept] == pytest.approx([0.5, 0.4])

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        dets = [Detection(Box3D(rng.uniform(-3, 3), 0, rng.uniform(8, 14), rng.uniform(1, 4), rng.uniform(1, 2),
                                1.5, rng.uniform(-math.pi, math.pi)), float(rng.uniform()))
                for _ in range(20)]
        thr = float(rng.choice([0.05, 0.3, 0.5]))
        assert nms(dets, thr) == greedy_nms(dets, thr)

    @settings(max_examples=30)
    @given(st.lists(st.tuples(boxes(spread=2.0), st.floats(0, 1)), min_size=1, max_size=12), st.floats(0.0, 0.9))
    def test_survivors_pairwise_below_threshold(self, items, thr):
        dets = [Detection(b, s) for b, s in items]
        kept = nms(dets, thr)
        assert all(k in dets for k in kept)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert bev_iou(kept[i].box, kept[j].box) <= thr


class TestPairErrors:
    def test_identical(self):
        b = Box3D(1, 0, 20, 4, 2, 1.5, 0.3)
        assert pair_errors(b, b) == pytest.approx((0.0, 0.0, 0.0), abs=1e-12)

    def test_shift(self):
        b = Box3D(1, 0, 20, 4, 2, 1.5, 0.3)
        shifted = Box3D(3, 0, 20, 4, 2, 1.5, 0.3)
        assert pair_errors(shifted, b) == pytest.approx((2.0, 0.0, 0.0), abs=1e-12)

    def test_scale_error(self):
        a, b = Box3D(0, 0, 20, 4, 2, 1.5, 0), Box3D(0, 0, 20, 2, 2, 1.5, 0)
        assert aligned_size_iou(a, b) == pytest.approx(0.5)
        assert pair_errors(a, b)[1] == pytest.approx(0.5)

    @pytest.mark.parametrize("a,b,expected", [(0.1, -0.1, 0.2), (3.0, -3.0, 2 * math.pi - 6.0), (0.0, math.pi, math.pi)])
    def test_yaw_difference(self, a, b, expected):
        assert yaw_difference(a, b) == pytest.approx(expected)

    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_yaw_difference_range(self, a, b):
        assert 0.0 <= yaw_difference(a, b) <= math.pi + 1e-12


class TestFlip:
    @given(boxes())
    def test_involution(self, b):
        back = flip_box(flip_box(b))
        assert back.cx == b.cx and back.cz == b.cz
        assert math.cos(back.yaw) == pytest.approx(math.cos(b.yaw), abs=1e-12)
        assert math.sin(back.yaw) == pytest.approx(math.sin(b.yaw), abs=1e-12)

    def test_mirror(self):
        f = flip_box(Box3D(2.0, 0.5, 10.0, 4, 2, 1.5, 0.3))
        assert f.cx == -2.0
        assert f.yaw == pytest.approx(math.pi - 0.3)

    @given(boxes(), boxes())
    def test_flip_preserves_iou(self, a, b):
        assert bev_iou(flip_box(a), flip_box(b)) == pytest.approx(bev_iou(a, b), abs=1e-9)
