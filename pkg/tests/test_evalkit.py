import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from monouda.boxes3d import Box3D, Detection, bev_iou, iou3d, pair_errors
from monouda.evalkit import (EvalConfig, UndefinedGapError, aggregate_errors, average_precision, closed_gap, evaluate,
                             match_detections, recall_anchors)
from oracles import brute_match, exhaustive_ap

CAR = (4.0, 1.8, 1.5)


def car(cx, cz, yaw=0.0):
    return Box3D(cx, 0.0, cz, *CAR, yaw)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(iou_threshold=0.0), dict(iou_threshold=1.0), dict(ap_mode="AP20"),
                                    dict(match_space="2D")])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            EvalConfig(**kw)

    def test_anchors(self):
        assert recall_anchors("AP11").tolist() == pytest.approx([i / 10 for i in range(11)])
        a40 = recall_anchors("AP40")
        assert len(a40) == 40 and a40[0] == pytest.approx(1 / 40) and a40[-1] == 1.0


class TestMatching:
    def test_exact_hit(self):
        g = car(0, 20)
        m = match_detections([[Detection(g, 0.9)]], [[g]])
        assert m.flags.tolist() == [True]
        assert m.pairs == [(g, g)]

    def test_double_detection(self):
        g = car(0, 20)
        m = match_detections([[Detection(g, 0.6), Detection(g, 0.9)]], [[g]])
        assert m.flags.tolist() == [True, False]
        assert m.scores.tolist() == [0.9, 0.6]

    def test_scenes_do_not_mix(self):
        g = car(0, 20)
        m = match_detections([[Detection(g, 0.9)], []], [[], [g]])
        assert m.flags.tolist() == [False]
        assert m.n_gt == 1

    def test_threshold_inclusive(self):
        g = car(0, 20)
        shifted = car(1.0, 20)
        v = iou3d(shifted, g)
        assert match_detections([[Detection(shifted, 0.5)]], [[g]], EvalConfig(iou_threshold=v)).flags[0]

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("space", ["BEV", "3D"])
    def test_random_scenes_vs_brute_force(self, seed, space):
        rng = np.random.default_rng(seed)
        gts, dets = [], []
        for _ in range(3):
            g = [car(rng.uniform(-8, 8), rng.uniform(10, 40), rng.uniform(-math.pi, math.pi)) for _ in range(10)]
            d = [Detection(Box3D(b.cx + rng.normal(0, 0.6), rng.normal(0, 0.2), b.cz + rng.normal(0, 0.8),
                                 *CAR, b.yaw + rng.normal(0, 0.2)), float(rng.uniform()))
                 for b in g for _ in range(rng.integers(0, 3))]
            gts.append(g)
            dets.append(d)
        cfg = EvalConfig(match_space=space)
        fn = iou3d if space == "3D" else bev_iou
        assert match_detections(dets, gts, cfg).flags.tolist() == brute_match(dets, gts, fn, 0.5)


class TestAveragePrecision:
    def test_hand_case(self):
        flags, scores = [True, False, True], [0.9, 0.8, 0.7]
        assert average_precision(flags, scores, 3, "AP11") == pytest.approx(6 / 11, abs=1e-12)
        assert average_precision(flags, scores, 3, "AP40") == pytest.approx(65 / 120, abs=1e-12)
        assert average_precision(flags, scores, 3, "AP40") == pytest.approx(0.541667, abs=1e-6)

    def test_perfect(self):
        for mode in ("AP11", "AP40"):
            assert average_precision([True] * 4, [0.9, 0.8, 0.7, 0.6], 4, mode) == pytest.approx(1.0)

    def test_empty(self):
        assert average_precision([], [], 5) == 0.0
        assert average_precision([], [], 0) == 0.0

    def test_unsorted_input_is_sorted(self):
        assert average_precision([True, True, False], [0.7, 0.9, 0.8], 3, "AP11") == pytest.approx(
            average_precision([True, False, True], [0.9, 0.8, 0.7], 3, "AP11"))

    @pytest.mark.parametrize("case", range(20))
    @pytest.mark.parametrize("mode", ["AP11", "AP40"])
    def test_vs_exhaustive_oracle(self, case, mode):
        if case == 0:
            flags, n_gt = [True, False, True], 3
        else:
            rng = np.random.default_rng(case)
            n = int(rng.integers(1, 30))
            flags = (rng.uniform(size=n) < rng.uniform(0.2, 0.9)).tolist()
            n_gt = sum(flags) + int(rng.integers(0, 5))
            if n_gt == 0:
                n_gt = 1
        scores = np.linspace(1.0, 0.01, len(flags))
        expected = exhaustive_ap(flags, n_gt, recall_anchors(mode))
        assert average_precision(flags, scores, n_gt, mode) == pytest.approx(expected, abs=1e-9)

    @given(st.lists(st.booleans(), min_size=1, max_size=25), st.integers(0, 4), st.data())
    def test_monotone(self, flags, extra, data):
        n_gt = max(1, sum(flags) + extra)
        scores = np.linspace(1.0, 0.01, len(flags))
        base = average_precision(flags, scores, n_gt)
        k = data.draw(st.integers(0, len(flags) - 1))
        fewer = flags[:k] + flags[k + 1:]
        after = average_precision(fewer, np.delete(scores, k), n_gt)
        if flags[k]:
            assert after <= base + 1e-12
        else:
            assert after >= base - 1e-12

    def test_dense_curves_agree(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            n = 400
            p_tp = np.linspace(0.95, 0.2, n)
            flags = rng.uniform(size=n) < p_tp
            n_gt = int(flags.sum()) + 20
            scores = np.linspace(1, 0, n)
            assert abs(average_precision(flags, scores, n_gt, "AP11")
                       - average_precision(flags, scores, n_gt, "AP40")) < 0.05


class TestEvaluate:
    def test_counts(self):
        g1, g2 = car(0, 20), car(5, 30)
        dets = [[Detection(g1, 0.9), Detection(car(-6, 15), 0.8)]]
        r = evaluate(dets, [[g1, g2]])
        assert (r.tp, r.fp, r.fn) == (1, 1, 1)
        assert r.tp + r.fn == 2
        assert r.mATE == pytest.approx(0.0)

    def test_no_matches_gives_absent_errors(self):
        r = evaluate([[]], [[car(0, 20)]])
        assert r.ap == 0.0 and r.mATE is None
        assert set(r.to_dict()) == {"ap", "mATE", "mASE", "mAOE", "tp", "fp", "fn"}


class TestAggregateErrors:
    def test_perfect(self):
        b = car(0, 20)
        assert aggregate_errors([(b, b), (b, b)]) == pytest.approx((0.0, 0.0, 0.0))

    def test_shift(self):
        assert aggregate_errors([(car(2, 20), car(0, 20))])[0] == pytest.approx(2.0)

    def test_mixed(self):
        pairs = [(car(1, 20), car(0, 20)),
                 (Box3D(0, 0, 20, 2.0, 1.8, 1.5, 0), car(0, 20)),
                 (car(0, 20, yaw=0.5), car(0, 20))]
        # shifted 1 m; half-length box; 0.5 rad rotation
        assert aggregate_errors(pairs) == pytest.approx((1 / 3, 0.5 / 3, 0.5 / 3))
        expected = np.mean([pair_errors(p, g) for p, g in pairs], axis=0)
        assert aggregate_errors(pairs) == pytest.approx(tuple(expected))

    def test_empty(self):
        assert aggregate_errors([]) == (None, None, None)


class TestClosedGap:
    def test_endpoints(self):
        assert closed_gap(0.6, 0.2, 0.6) == pytest.approx(100.0)
        assert closed_gap(0.2, 0.2, 0.6) == pytest.approx(0.0)

    def test_reported_example(self):
        assert closed_gap(21.89, 0.0, 19.88) == pytest.approx(110.1, abs=0.05)

    def test_undefined(self):
        with pytest.raises(UndefinedGapError):
            closed_gap(0.5, 0.3, 0.3)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 100), st.floats(-50, 50))
    def test_affine_invariance(self, r, s, o, a, b):
        if abs(o - s) < 1e-3:
            return
        assert closed_gap(a * r + b, a * s + b, a * o + b) == pytest.approx(closed_gap(r, s, o), rel=1e-9, abs=1e-9)
