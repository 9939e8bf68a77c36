import numpy as np
import pytest

from roger.core import (CameraPose, Frame, Intrinsics, apply_pose_tangent,
                        compose_pose, inverse_pose, quat_from_rotvec,
                        quat_normalize)
from roger.rasterizer import render
from roger.tracking import (TrackerConfig, TrackingLossReport, adaptive_weights,
                            init_pose, track, tracking_loss)
from conftest import random_map, random_pose


class TestInitPose:
    def test_first_frame_identity(self):
        p = init_pose(None, None)
        np.testing.assert_allclose(p.matrix(), np.eye(4))

    def test_second_frame_copies_first(self, rng):
        a = random_pose(rng)
        p = init_pose(a, None)
        np.testing.assert_allclose(p.matrix(), a.matrix())

    def test_stationary_camera(self, rng):
        a = random_pose(rng)
        p = init_pose(a, a)
        np.testing.assert_allclose(p.matrix(), a.matrix(), atol=1e-12)

    def test_constant_translation_advances_exactly(self):
        v = np.array([0.02, -0.01, 0.03])
        p0 = CameraPose(t=np.zeros(3))
        p1 = CameraPose(t=v)
        p2 = init_pose(p1, p0)
        np.testing.assert_allclose(p2.t, 2 * v, atol=1e-12)

    def test_pure_rotation_doubles_angle(self):
        # oracle: quaternion power composition about a fixed axis
        axis = np.array([0.0, 1.0, 0.0])
        theta = np.deg2rad(5.0)
        p0 = CameraPose(quat_from_rotvec(1 * theta * axis))
        p1 = CameraPose(quat_from_rotvec(2 * theta * axis))
        p2 = init_pose(p1, p0)
        expected = CameraPose(quat_from_rotvec(3 * theta * axis))
        np.testing.assert_allclose(p2.matrix(), expected.matrix(), atol=1e-12)

    def test_literal_additive_mode(self):
        cfg = TrackerConfig(literal_additive_init=True)
        p0 = CameraPose(t=np.array([0.0, 0.0, 0.0]))
        p1 = CameraPose(t=np.array([0.1, 0.0, 0.0]))
        p2 = init_pose(p1, p0, cfg)
        np.testing.assert_allclose(p2.t, [0.2, 0.0, 0.0])
        assert abs(np.linalg.norm(p2.q) - 1) < 1e-12


class TestAdaptiveWeights:
    def test_zero_residual_saturates(self):
        w_im, w_depth = adaptive_weights(0.0, 0.0)
        assert w_im == 1.0 and w_depth == 1.0

    def test_half_saturation_at_gamma(self):
        cfg = TrackerConfig(gamma_im=0.5, gamma_depth=0.25)
        w_im, w_depth = adaptive_weights(0.5, 0.25, cfg)
        assert w_im == pytest.approx(0.5)
        assert w_depth == pytest.approx(0.5)

    def test_strictly_decreasing_in_residual(self):
        grid = np.linspace(0, 3, 40)
        ws = [adaptive_weights(l, 0.0)[0] for l in grid]
        assert all(a > b for a, b in zip(ws, ws[1:]))
        assert all(0 < w <= 1 for w in ws)


def rendered_frame_setup(rng, n=40, size=16):
    K = Intrinsics(30.0, 30.0, (size - 1) / 2, (size - 1) / 2, size, size)
    gmap = random_map(rng, n=n, depth=2.0)
    gmap.opacity_logits += 3.0  # opaque enough to pass the strict gate
    pose = CameraPose.identity()
    out = render(gmap, pose, K)
    frame = Frame(out.color.copy(), np.where(out.opacity > 0.5, out.depth, 0.0))
    return K, gmap, pose, out, frame


class TestTrackingLoss:
    def test_zero_residuals_leave_only_regularizer(self, rng):
        cfg = TrackerConfig()
        _, _, _, out, frame = rendered_frame_setup(rng)
        rep = tracking_loss(out, frame, cfg)
        expected = cfg.lambda_R * np.log(cfg.rho) ** 2
        assert rep.loss == pytest.approx(expected, abs=1e-12)
        assert rep.w_im == 1.0 and rep.w_depth == 1.0

    def test_regularizer_zero_iff_ratio_is_rho(self):
        cfg = TrackerConfig(rho=2.0)
        # residuals chosen so w_depth / w_im = rho exactly:
        # w_im = g/(l+g); pick l_color so w_im = 0.4, l_depth so w_depth = 0.8
        l_color = cfg.gamma_im * (1 / 0.4 - 1)
        l_depth = cfg.gamma_depth * (1 / 0.8 - 1)
        w_im, w_depth = adaptive_weights(l_color, l_depth, cfg)
        assert w_depth / w_im == pytest.approx(2.0)
        reg = cfg.lambda_R * (np.log(w_depth / w_im) - np.log(cfg.rho)) ** 2
        assert reg == pytest.approx(0.0, abs=1e-15)

    def test_matches_scalar_oracle(self, rng):
        cfg = TrackerConfig()
        _, _, _, out, frame = rendered_frame_setup(rng)
        frame.rgb = rng.uniform(0, 1, frame.rgb.shape)
        frame.depth = np.where(frame.depth > 0,
                               frame.depth + rng.uniform(-0.3, 0.3, frame.depth.shape),
                               0.0)
        rep = tracking_loss(out, frame, cfg)
        mask = out.opacity > cfg.opacity_gate
        l1c = np.abs((out.color - frame.rgb)[mask]).mean()
        dmask = mask & (frame.depth > 0)
        l1d = np.abs((out.depth - frame.depth)[dmask]).mean()
        w_im = cfg.gamma_im / (l1c + cfg.gamma_im)
        w_d = cfg.gamma_depth / (l1d + cfg.gamma_depth)
        oracle = w_im * l1c + w_d * l1d \
            + cfg.lambda_R * (np.log(w_d / w_im) - np.log(cfg.rho)) ** 2
        assert rep.loss == pytest.approx(oracle, abs=1e-12)
        assert not rep.fallback_used

    def test_unmasked_pixels_do_not_matter(self, rng):
        cfg = TrackerConfig()
        _, _, _, out, frame = rendered_frame_setup(rng)
        rep1 = tracking_loss(out, frame, cfg)
        outside = out.opacity <= cfg.opacity_gate
        frame.rgb[outside] = rng.uniform(0, 1, (int(outside.sum()), 3))
        rep2 = tracking_loss(out, frame, cfg)
        assert rep1.loss == pytest.approx(rep2.loss, abs=1e-15)

    def test_fallback_gate_flagged(self, rng):
        cfg = TrackerConfig()
        _, gmap, pose, out, frame = rendered_frame_setup(rng, n=6)
        out.opacity = np.clip(out.opacity, 0, 0.9)  # nothing passes the strict gate
        rep = tracking_loss(out, frame, cfg)
        assert rep.fallback_used

    def test_fixed_weights_mode(self, rng):
        _, _, _, out, frame = rendered_frame_setup(rng)
        frame.rgb = rng.uniform(0, 1, frame.rgb.shape)
        rep = tracking_loss(out, frame, TrackerConfig(), adaptive=False,
                            fixed_weights=(0.5, 1.0))
        assert rep.w_im == 0.5 and rep.w_depth == 1.0


class TestTrack:
    def test_fixed_point_stays(self, rng):
        K, gmap, pose, out, frame = rendered_frame_setup(rng)
        res = track(gmap, frame, K, [pose, pose], TrackerConfig(iters=10))
        assert np.linalg.norm(res.pose.t - pose.t) < 5e-4
        assert res.best_loss <= res.losses[0] + 1e-15

    def test_recovers_small_perturbation(self, rng):
        K, gmap, pose, out, frame = rendered_frame_setup(rng, n=60)
        delta = np.concatenate([rng.normal(0, 1, 3) / np.sqrt(3) * 0.01,
                                rng.normal(0, 1, 3) / np.sqrt(3) * np.deg2rad(1)])
        init = apply_pose_tangent(pose, delta)
        res = track(gmap, frame, K, [init, init], TrackerConfig())
        err_t = np.linalg.norm(res.pose.t - pose.t)
        dq = compose_pose(inverse_pose(res.pose), pose)
        err_r = np.degrees(2 * np.arccos(np.clip(abs(dq.q[0]), -1, 1)))
        assert err_t < 1e-3
        assert err_r < 0.1

    def test_best_not_worse_than_init(self, rng):
        K, gmap, pose, out, frame = rendered_frame_setup(rng)
        frame.rgb = np.clip(frame.rgb + rng.normal(0, 0.05, frame.rgb.shape), 0, 1)
        init = apply_pose_tangent(pose, rng.normal(0, 0.005, 6))
        res = track(gmap, frame, K, [init, init], TrackerConfig(iters=8))
        assert res.best_loss <= res.losses[0] + 1e-15

    def test_empty_map_rejected(self, rng):
        from roger.core import GaussianMap
        from roger.errors import RogerError
        K = Intrinsics(30.0, 30.0, 3.5, 3.5, 8, 8)
        frame = Frame(np.zeros((8, 8, 3)), np.ones((8, 8)))
        with pytest.raises(RogerError):
            track(GaussianMap.empty(), frame, K, [], TrackerConfig())
