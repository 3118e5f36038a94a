import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from monouda.boxes3d import Box3D
from monouda.camera_geom import (DEFAULT_DEPTH_CONSTANT, MULTISCALE_RESOLUTIONS, CameraIntrinsics, GeometryError,
                                 ScaleFactors, backproject, gams_rescale, keep_ratio_scale, metric_to_pixel_depth,
                                 multiscale_set, pixel_size, pixel_to_metric_depth, project, rescale_intrinsics,
                                 sample_scale)
from monouda.synthworld import SceneSample

K1000 = CameraIntrinsics(1000.0, 1000.0, 800.0, 450.0, 1600.0, 900.0)
C = DEFAULT_DEPTH_CONSTANT


def cam(fx, fy=None):
    fy = fx if fy is None else fy
    return CameraIntrinsics(fx, fy, 800.0, 450.0, 1600.0, 900.0)


class TestIntrinsics:
    @pytest.mark.parametrize("kw", [dict(fx=0.0), dict(fy=-1.0), dict(width=0.0), dict(px=1700.0), dict(py=-1.0)])
    def test_invalid_rejected(self, kw):
        base = dict(fx=1000.0, fy=1000.0, px=800.0, py=450.0, width=1600.0, height=900.0)
        base.update(kw)
        with pytest.raises(GeometryError):
            CameraIntrinsics(**base)

    def test_matrix_layout(self):
        np.testing.assert_array_equal(K1000.matrix, [[1000, 0, 800], [0, 1000, 450], [0, 0, 1]])

    def test_dict_round_trip(self):
        assert CameraIntrinsics.from_dict(K1000.to_dict()) == K1000

    def test_scale_factors_positive(self):
        with pytest.raises(GeometryError):
            ScaleFactors(0.0, 1.0)


class TestProject:
    def test_optical_axis_hits_principal_point(self):
        assert project((0, 0, 10), K1000) == (800.0, 450.0, 10.0)

    def test_lateral_offset(self):
        # u = 1000 * 1 / 10 + 800
        assert project((1, 0, 10), K1000) == (900.0, 450.0, 10.0)

    def test_vertical_offset(self):
        # v = 1000 * -2 / 20 + 450
        assert project((0, -2, 20), K1000) == (800.0, 350.0, 20.0)

    @pytest.mark.parametrize("z", [0.0, -3.0])
    def test_non_positive_depth_rejected(self, z):
        with pytest.raises(GeometryError):
            project((1, 1, z), K1000)

    @given(st.floats(-20, 20), st.floats(-5, 5), st.floats(0.5, 100))
    def test_backproject_inverts_project(self, x, y, z):
        u, v, d = project((x, y, z), K1000)
        xb, yb, zb = backproject(u, v, d, K1000)
        assert xb == pytest.approx(x, abs=1e-9)
        assert yb == pytest.approx(y, abs=1e-9)
        assert zb == z


class TestPixelSize:
    def test_symmetric_focal(self):
        assert pixel_size(cam(1000.0)) == pytest.approx(1.41421356e-3, rel=1e-8)

    def test_asymmetric_focal(self):
        # sqrt(1/1000^2 + 1/2000^2) = sqrt(1.25e-6)
        assert pixel_size(cam(1000.0, 2000.0)) == pytest.approx(1.11803399e-3, rel=1e-8)

    @pytest.mark.parametrize("f", [300.0, 720.0, 1260.0])
    def test_closed_form(self, f):
        assert pixel_size(cam(f)) == pytest.approx(math.sqrt(2) / f, rel=1e-15)


class TestDepthConversion:
    def test_identity_when_pixel_size_equals_constant(self):
        for d in (0.5, 10.0, 73.0):
            assert metric_to_pixel_depth(d, K1000, pixel_size(K1000)) == pytest.approx(d, rel=1e-15)

    def test_reference_camera(self):
        assert metric_to_pixel_depth(10.0, K1000, C) == pytest.approx(10.0, rel=1e-12)

    def test_long_focal_halves_depth(self):
        # (sqrt2/2000) / (sqrt2/1000) * 20
        assert metric_to_pixel_depth(20.0, cam(2000.0), C) == pytest.approx(10.0, rel=1e-12)

    def test_inverse_example(self):
        assert pixel_to_metric_depth(10.0, cam(2000.0), C) == pytest.approx(20.0, rel=1e-12)

    def test_zero_maps_to_zero(self):
        assert pixel_to_metric_depth(0.0, K1000, C) == 0.0

    @pytest.mark.parametrize("d", [1.0, 7.3, 80.0])
    def test_round_trip_examples(self, d):
        assert pixel_to_metric_depth(metric_to_pixel_depth(d, K1000, C), K1000, C) == pytest.approx(d, rel=1e-12)

    @pytest.mark.parametrize("c", [0.0, -1e-3])
    def test_bad_constant(self, c):
        with pytest.raises(GeometryError):
            metric_to_pixel_depth(1.0, K1000, c)
        with pytest.raises(GeometryError):
            pixel_to_metric_depth(1.0, K1000, c)

    @given(st.floats(100, 3000), st.floats(100, 3000), st.floats(0.01, 200), st.floats(1e-4, 1e-2))
    def test_round_trip_property(self, fx, fy, d, c):
        K = cam(fx, fy)
        assert pixel_to_metric_depth(metric_to_pixel_depth(d, K, c), K, c) == pytest.approx(d, rel=1e-12)

    @pytest.mark.parametrize("H,h", [(1.5, 75.0), (1.7, 31.0), (0.9, 180.0)])
    def test_focal_invariance(self, H, h):
        # An object of height H seen h pixels tall sits at d = f H / h, yet its
        # pixel-size depth is sqrt(2) H / (c h) whatever the focal length.
        values = []
        for f in (500.0, 1000.0, 2000.0):
            d = f * H / h
            dp = metric_to_pixel_depth(d, cam(f), C)
            assert dp == pytest.approx(math.sqrt(2) * H / (C * h), rel=1e-12)
            values.append(dp)
        assert max(values) - min(values) <= 1e-12 * max(values)


def _scene():
    box = Box3D(1.0, 0.8, 20.0, 4.0, 1.8, 1.5, 0.3)
    feats = np.array([[850.0, 490.0, 210.0, 75.0, 0.1, -0.2, 0.3, 0.4],
                      [100.0, 200.0, 30.0, 20.0, 2.0, 2.0, 0.0, 0.0]])
    return SceneSample(K1000, feats, [box, None])


class TestGams:
    def test_unit_scale_is_identity(self):
        s = _scene()
        assert gams_rescale(s, ScaleFactors(1.0, 1.0)) is s

    def test_intrinsics_rows_scale(self):
        K2 = rescale_intrinsics(K1000, ScaleFactors(0.5, 2.0))
        assert (K2.fx, K2.px, K2.width) == (500.0, 400.0, 800.0)
        assert (K2.fy, K2.py, K2.height) == (2000.0, 900.0, 1800.0)

    def test_features_and_boxes(self):
        s = _scene()
        out = gams_rescale(s, ScaleFactors(0.5, 0.25))
        np.testing.assert_array_equal(out.features[:, [0, 2]], s.features[:, [0, 2]] * 0.5)
        np.testing.assert_array_equal(out.features[:, [1, 3]], s.features[:, [1, 3]] * 0.25)
        np.testing.assert_array_equal(out.features[:, 4:], s.features[:, 4:])
        assert out.gts == s.gts
        assert out.camera.fx == 500.0

    @given(st.floats(-10, 10), st.floats(-3, 3), st.floats(1, 80), st.floats(0.2, 3), st.floats(0.2, 3))
    def test_commutes_with_projection(self, x, y, z, rx, ry):
        K2 = rescale_intrinsics(K1000, ScaleFactors(rx, ry))
        u, v, d = project((x, y, z), K1000)
        u2, v2, d2 = project((x, y, z), K2)
        assert u2 == pytest.approx(rx * u, rel=1e-12, abs=1e-9)
        assert v2 == pytest.approx(ry * v, rel=1e-12, abs=1e-9)
        assert d2 == d

    @given(st.floats(0.3, 3.0), st.floats(2.0, 70.0), st.floats(1.0, 2.5))
    def test_pixel_depth_follows_apparent_size(self, r, d, H):
        # After a uniform resize the pixel-size depth of an object tracks its
        # new apparent height exactly as a native camera with that focal would.
        K2 = rescale_intrinsics(K1000, ScaleFactors(r, r))
        h2 = K2.fy * H / d
        assert metric_to_pixel_depth(d, K2, C) == pytest.approx(math.sqrt(2) * H / (C * h2), rel=1e-12)


class TestMultiscale:
    def test_sixteen_resolutions(self):
        assert len(MULTISCALE_RESOLUTIONS) == 16
        assert len(multiscale_set(K1000)) == 16

    def test_keep_ratio(self):
        # 1600x900 into (1600, 900) bounds: no resize
        assert keep_ratio_scale(K1000, (1600, 900)) == ScaleFactors(1.0, 1.0)
        # short edge binds: 840 / 900
        r = keep_ratio_scale(K1000, (1600, 840))
        assert r.rx == r.ry == pytest.approx(840 / 900)

    def test_letterbox_camera_bound_by_long_edge(self):
        K = CameraIntrinsics(720.0, 720.0, 621.0, 187.5, 1242.0, 375.0)
        r = keep_ratio_scale(K, (1600, 900))
        assert r.rx == pytest.approx(1600 / 1242)

    def test_singleton_draw(self):
        rng = np.random.default_rng(0)
        assert sample_scale(rng, [ScaleFactors(1.0, 1.0)]) == ScaleFactors(1.0, 1.0)

    def test_empty_set(self):
        with pytest.raises(GeometryError):
            sample_scale(np.random.default_rng(0), [])

    def test_reproducible(self):
        scales = multiscale_set(K1000)

        def draws():
            rng = np.random.default_rng(3)
            return [sample_scale(rng, scales) for _ in range(50)]

        assert draws() == draws()

    def test_uniform_frequencies(self):
        scales = [ScaleFactors(1.0 + i, 1.0) for i in range(4)]
        rng = np.random.default_rng(11)
        counts = np.zeros(4)
        for _ in range(100_000):
            counts[int(sample_scale(rng, scales).rx) - 1] += 1
        np.testing.assert_allclose(counts / counts.sum(), 0.25, atol=0.02)
