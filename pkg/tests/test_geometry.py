import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from dvs.geometry import (CameraView, DepthConvention, DepthMap, backproject,
                          interpolate_cameras, project, scaled_camera,
                          warp_dynamic, warp_static)

from conftest import identity_camera, make_camera


class TestCameraView:
    def test_rejects_non_orthonormal_rotation(self):
        R = np.eye(3)
        R[0, 1] = 1e-3
        with pytest.raises(ValueError, match="orthonormal"):
            identity_camera().__class__(
                view_id=0, time_index=0, intrinsics=np.eye(3), rotation=R,
                center=np.zeros(3), width=4, height=4)

    def test_rejects_reflection(self):
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError, match="determinant"):
            CameraView(view_id=0, time_index=0, intrinsics=np.eye(3),
                       rotation=R, center=np.zeros(3), width=4, height=4)

    def test_rejects_non_triangular_intrinsics(self):
        K = np.eye(3)
        K[1, 0] = 2.0
        with pytest.raises(ValueError, match="upper-triangular"):
            CameraView(view_id=0, time_index=0, intrinsics=K,
                       rotation=np.eye(3), center=np.zeros(3), width=4, height=4)

    def test_projection_is_derived(self):
        cam = make_camera(C=(1.0, 2.0, 3.0))
        expected = cam.intrinsics @ cam.rotation @ np.hstack(
            [np.eye(3), -np.asarray([[1.0], [2.0], [3.0]])])
        assert_allclose(cam.projection, expected, atol=1e-12)


class TestBackproject:
    def test_identity_camera(self):
        cam = identity_camera()
        p = backproject(np.array([0.0, 0.0]), 1.0, cam)
        assert_allclose(p, [0.0, 0.0, 1.0], atol=1e-12)

    def test_pure_translation_offset(self):
        cam = identity_camera(C=(1.0, 2.0, 3.0))
        p = backproject(np.array([0.0, 0.0]), 1.0, cam)
        assert_allclose(p, [1.0, 2.0, 4.0], atol=1e-12)

    def test_scaled_intrinsics_hand_case(self):
        # K^-1 (2, 0, 1) = (1, 0, 1), times depth 4 gives (4, 0, 4)
        cam = CameraView(view_id=0, time_index=0,
                         intrinsics=np.diag([2.0, 2.0, 1.0]),
                         rotation=np.eye(3), center=np.zeros(3),
                         width=4, height=4)
        p = backproject(np.array([2.0, 0.0]), 4.0, cam)
        assert_allclose(p, [4.0, 0.0, 4.0], atol=1e-12)

    def test_rejects_non_positive_depth(self):
        with pytest.raises(ValueError, match="positive"):
            backproject(np.array([0.0, 0.0]), 0.0, identity_camera())


class TestProject:
    def test_round_trip_of_backproject_examples(self):
        cam = identity_camera()
        uv, z = project(np.array([0.0, 0.0, 1.0]), cam)
        assert_allclose(uv, [0.0, 0.0], atol=1e-12)
        assert_allclose(z, 1.0)

        cam = identity_camera(C=(1.0, 2.0, 3.0))
        uv, z = project(np.array([1.0, 2.0, 4.0]), cam)
        assert_allclose(uv, [0.0, 0.0], atol=1e-12)
        assert_allclose(z, 1.0)

    def test_hand_case(self):
        cam = CameraView(view_id=0, time_index=0,
                         intrinsics=np.diag([2.0, 2.0, 1.0]),
                         rotation=np.eye(3), center=np.zeros(3),
                         width=4, height=4)
        uv, z = project(np.array([4.0, 0.0, 4.0]), cam)
        assert_allclose(uv, [2.0, 0.0], atol=1e-12)
        assert_allclose(z, 4.0)

    def test_behind_camera_signals_via_depth_sign(self):
        uv, z = project(np.array([0.0, 0.0, -2.0]), identity_camera())
        assert z < 0  # data, not an exception

    @settings(max_examples=200, deadline=None)
    @given(st.floats(10.0, 1000.0), st.floats(-50.0, 50.0),
           st.floats(-50.0, 50.0), st.floats(-200.0, 200.0),
           st.floats(-200.0, 200.0), st.floats(1e-3, 1e5),
           st.integers(0, 10_000))
    def test_project_backproject_round_trip(self, f, cx, cy, u, v, depth, seed):
        rot_rng = np.random.default_rng(seed)
        A = rot_rng.standard_normal((3, 3))
        q, _ = np.linalg.qr(A)
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        cam = CameraView(view_id=0, time_index=0,
                         intrinsics=np.array([[f, 0, cx], [0, f, cy], [0, 0, 1]]),
                         rotation=q, center=rot_rng.uniform(-5, 5, 3),
                         width=8, height=8)
        uv0 = np.array([u, v])
        p = backproject(uv0, depth, cam)
        uv1, z1 = project(p, cam)
        assert_allclose(uv1, uv0, rtol=1e-9, atol=1e-9 * max(1.0, abs(u), abs(v)))
        assert_allclose(z1, depth, rtol=1e-9)


class TestWarps:
    def test_identity_warp(self):
        cam = make_camera()
        uv = np.array([[10.0, 20.0], [63.5, 63.5]])
        out, z = warp_static(uv, np.array([2.0, 5.0]), cam, cam)
        assert_allclose(out, uv, atol=1e-12)
        assert_allclose(z, [2.0, 5.0])

    def test_stereo_disparity_oracle(self):
        # fronto-parallel plane at z=2, baseline 0.2 along x, f=100:
        # disparity magnitude f*b/z = 10 px
        f, b, z = 100.0, 0.2, 2.0
        cam_a = make_camera(view_id=0)
        cam_b = make_camera(view_id=1, C=(b, 0.0, 0.0))
        uv = np.array([40.0, 70.0])
        out, zd = warp_static(uv, z, cam_a, cam_b)
        assert_allclose(out[0] - uv[0], -f * b / z, atol=1e-9)
        assert_allclose(out[1], uv[1], atol=1e-9)
        assert_allclose(zd, z)

    def test_disparity_vanishes_at_infinity(self):
        cam_a = make_camera(view_id=0)
        cam_b = make_camera(view_id=1, C=(0.2, 0.0, 0.0))
        uv = np.array([40.0, 70.0])
        out, _ = warp_static(uv, 1e6, cam_a, cam_b)
        assert np.linalg.norm(out - uv) < 1e-3

    def test_pure_rotation_warp_independent_of_depth(self):
        ang = np.deg2rad(5.0)
        R = np.array([[np.cos(ang), 0, np.sin(ang)],
                      [0, 1, 0],
                      [-np.sin(ang), 0, np.cos(ang)]])
        cam_a = make_camera(view_id=0)
        cam_b = CameraView(view_id=1, time_index=0, intrinsics=cam_a.intrinsics,
                           rotation=R, center=np.zeros(3), width=128, height=128)
        uv = np.array([30.0, 90.0])
        out1, _ = warp_static(uv, 1.0, cam_a, cam_b)
        out2, _ = warp_static(uv, 2.0, cam_a, cam_b)
        assert_allclose(out1, out2, atol=1e-9)

    def test_warp_composition_round_trip(self, rng):
        cam_a = make_camera(view_id=0)
        cam_b = make_camera(view_id=1, C=(0.1, -0.05, 0.02))
        uv = rng.uniform(20, 100, (50, 2))
        depth = rng.uniform(1.0, 5.0, 50)
        uv_b, z_b = warp_static(uv, depth, cam_a, cam_b)
        uv_back, z_back = warp_static(uv_b, z_b, cam_b, cam_a)
        assert np.abs(uv_back - uv).max() < 1e-6
        assert_allclose(z_back, depth, rtol=1e-9)

    def test_depth_positivity_in_front_of_both(self, rng):
        cam_a = make_camera(view_id=0)
        cam_b = make_camera(view_id=1, C=(0.1, 0.0, 0.0))
        uv = rng.uniform(0, 127, (100, 2))
        depth = rng.uniform(0.5, 10.0, 100)
        _, z = warp_static(uv, depth, cam_a, cam_b)
        assert (z > 0).all()

    def test_warp_dynamic_rejects_time_mismatch(self):
        cam_t0 = make_camera(view_id=0, time_index=0, width=4, height=4)
        depth_t1 = DepthMap(np.full((4, 4), 2.0), np.ones((4, 4), bool),
                            DepthConvention.METRIC, time_index=1)
        with pytest.raises(ValueError, match="time"):
            warp_dynamic(np.array([1.0, 1.0]), depth_t1, cam_t0, cam_t0)

    def test_warp_dynamic_requires_time_tag(self):
        cam = make_camera(width=4, height=4)
        depth = DepthMap(np.full((4, 4), 2.0), np.ones((4, 4), bool),
                         DepthConvention.METRIC)
        with pytest.raises(ValueError, match="time-indexed"):
            warp_dynamic(np.array([1.0, 1.0]), depth, cam, cam)

    def test_warp_dynamic_matches_static_math(self):
        cam_a = make_camera(view_id=0, time_index=3, width=8, height=8)
        cam_b = make_camera(view_id=1, time_index=3, C=(0.05, 0, 0),
                            width=8, height=8)
        depth = DepthMap(np.full((8, 8), 2.0), np.ones((8, 8), bool),
                         DepthConvention.METRIC, time_index=3)
        uv = np.array([[2.0, 3.0]])
        out_d, zd = warp_dynamic(uv, depth, cam_a, cam_b)
        out_s, zs = warp_static(uv, depth, cam_a, cam_b)
        assert_allclose(out_d, out_s)
        assert_allclose(zd, zs)


class TestDepthMap:
    def test_metric_must_be_positive(self):
        with pytest.raises(ValueError, match="positive"):
            DepthMap(np.zeros((2, 2)), np.ones((2, 2), bool),
                     DepthConvention.METRIC)

    def test_normalized_range(self):
        with pytest.raises(ValueError, match="0, 1"):
            DepthMap(np.full((2, 2), 1.5), np.ones((2, 2), bool),
                     DepthConvention.NORMALIZED_INVERSE)

    def test_invalid_pixels_unconstrained(self):
        d = DepthMap(np.array([[0.0, 2.0]]), np.array([[False, True]]),
                     DepthConvention.METRIC)
        assert d.valid.sum() == 1


class TestScaledCamera:
    def test_center_convention(self):
        cam = make_camera(width=128, height=128)
        cam2 = scaled_camera(cam, 2)
        # coarse pixel u' maps to full-res 2u' + 0.5; projections must agree
        p = backproject(np.array([10.0, 20.0]), 2.0, cam2)
        uv_full, _ = project(p, cam)
        assert_allclose(uv_full, [2 * 10 + 0.5, 2 * 20 + 0.5], atol=1e-9)

    def test_rejects_indivisible(self):
        with pytest.raises(ValueError, match="divisible"):
            scaled_camera(make_camera(width=126, height=126), 4)


def test_interpolate_cameras_midpoint():
    cam_a = make_camera(view_id=0, C=(0.0, 0.0, 0.0))
    cam_b = make_camera(view_id=1, C=(0.2, 0.0, 0.0))
    mid = interpolate_cameras(cam_a, cam_b, 0.5, view_id=7)
    assert_allclose(mid.center, [0.1, 0.0, 0.0])
    assert_allclose(mid.rotation, np.eye(3), atol=1e-12)
    assert mid.view_id == 7
