import numpy as np
import pytest

from roger.core import CameraPose, GaussianMap, Intrinsics, quat_normalize
from roger.rasterizer import (RasterConfig, project, render, render_backward,
                              render_pyramid, render_reference)
from conftest import random_map, random_pose

EXACT = RasterConfig.exact()


def single_gaussian_map(mean, log_scale=np.log(0.05), logit=0.0, color=(1, 0, 0)):
    return GaussianMap(means=[mean], log_scales=[[log_scale] * 3],
                       rotations=[[1, 0, 0, 0]], opacity_logits=[logit],
                       colors=[color])


class TestProjection:
    def test_on_axis_center(self, small_intrinsics):
        gmap = single_gaussian_map([0.0, 0.0, 2.0])
        pg = project(gmap, CameraPose.identity(), small_intrinsics)
        assert len(pg) == 1
        np.testing.assert_allclose(pg[0].center2d,
                                   [small_intrinsics.cx, small_intrinsics.cy],
                                   atol=1e-12)
        assert pg[0].depth_cam == pytest.approx(2.0)
        assert pg[0].source_index == 0

    def test_isotropic_cov2d_matches_pinhole_jacobian(self):
        # on-axis, fx = fy: J Sigma J^T = (fx*sigma/z)^2 * I exactly
        K = Intrinsics(100.0, 100.0, 32.0, 32.0, 64, 64)
        sigma, z = 0.05, 2.0
        gmap = single_gaussian_map([0.0, 0.0, z], log_scale=np.log(sigma))
        cfg = RasterConfig(cov_reg=0.0)
        pg = project(gmap, CameraPose.identity(), K, cfg)[0]
        expected = (100.0 * sigma / z) ** 2 * np.eye(2)
        np.testing.assert_allclose(pg.cov2d, expected, rtol=1e-12)

    def test_cov_reg_added_to_diagonal(self):
        K = Intrinsics(100.0, 100.0, 32.0, 32.0, 64, 64)
        gmap = single_gaussian_map([0.0, 0.0, 2.0])
        raw = project(gmap, CameraPose.identity(), K, RasterConfig(cov_reg=0.0))[0]
        reg = project(gmap, CameraPose.identity(), K, RasterConfig(cov_reg=0.3))[0]
        np.testing.assert_allclose(reg.cov2d, raw.cov2d + 0.3 * np.eye(2), atol=1e-12)

    def test_behind_camera_culled(self, small_intrinsics):
        gmap = single_gaussian_map([0.0, 0.0, -1.0])
        assert project(gmap, CameraPose.identity(), small_intrinsics) == []

    def test_near_plane_cull_boundary(self, small_intrinsics):
        gmap = single_gaussian_map([0.0, 0.0, 0.005])
        assert project(gmap, CameraPose.identity(), small_intrinsics) == []


class TestRenderForward:
    def test_single_gaussian_clamped_composite(self):
        # opacity logit 12 -> alpha ~ 1, clamped to 0.999 at the peak pixel,
        # which sits exactly on the integer principal point here
        K = Intrinsics(30.0, 30.0, 4.0, 4.0, 8, 8)
        gmap = single_gaussian_map([0.0, 0.0, 2.0], log_scale=np.log(0.5),
                                   logit=12.0, color=(1, 0, 0))
        out = render(gmap, CameraPose.identity(), K, EXACT)
        assert out.color[4, 4][0] == pytest.approx(0.999, abs=1e-6)
        assert out.color[4, 4][1] == 0.0
        assert out.depth[4, 4] == pytest.approx(1.998, abs=1e-5)
        assert out.opacity[4, 4] == pytest.approx(0.999, abs=1e-6)

    def test_two_coincident_gaussians(self, small_intrinsics):
        # alpha 0.5 each at z=1 and z=2: O = 0.75, D = 1*0.5 + 2*0.25 = 1.0
        big = np.log(50.0)  # flat splat: per-pixel alpha ~ opacity everywhere
        gmap = GaussianMap(means=[[0, 0, 1.0], [0, 0, 2.0]],
                           log_scales=[[big] * 3] * 2,
                           rotations=[[1, 0, 0, 0]] * 2,
                           opacity_logits=[0.0, 0.0],
                           colors=[[1, 0, 0], [0, 1, 0]])
        out = render(gmap, CameraPose.identity(), small_intrinsics, EXACT)
        px = (int(small_intrinsics.cy), int(small_intrinsics.cx))
        assert out.opacity[px] == pytest.approx(0.75, abs=1e-3)
        assert out.depth[px] == pytest.approx(1.0, abs=5e-3)

    def test_matches_reference_compositor(self, small_intrinsics, rng):
        for seed in range(5):
            r = np.random.default_rng(seed)
            gmap = random_map(r, n=20)
            pose = random_pose(r)
            pose.t[2] = -0.2  # keep the cloud in front
            out = render(gmap, pose, small_intrinsics, EXACT)
            c, d, o = render_reference(gmap, pose, small_intrinsics, EXACT)
            assert np.abs(out.color - c).max() < 1e-6
            assert np.abs(out.depth - d).max() < 1e-6
            assert np.abs(out.opacity - o).max() < 1e-6

    def test_default_config_close_to_reference(self, small_intrinsics, rng):
        gmap = random_map(rng, n=20)
        out = render(gmap, CameraPose.identity(), small_intrinsics)
        c, d, o = render_reference(gmap, CameraPose.identity(), small_intrinsics, EXACT)
        assert np.abs(out.opacity - o).max() < 5e-3

    def test_empty_map(self, small_intrinsics):
        out = render(GaussianMap.empty(), CameraPose.identity(), small_intrinsics)
        assert out.color.sum() == 0 and out.opacity.sum() == 0

    def test_opacity_in_unit_interval(self, small_intrinsics):
        for seed in range(5):
            r = np.random.default_rng(100 + seed)
            gmap = random_map(r, n=30)
            gmap.opacity_logits += 3.0
            out = render(gmap, CameraPose.identity(), small_intrinsics, EXACT)
            assert out.opacity.min() >= 0.0
            assert out.opacity.max() <= 1.0 + 1e-12
            assert out.depth.min() >= 0.0

    def test_permutation_invariance(self, small_intrinsics, rng):
        gmap = random_map(rng, n=15)
        out1 = render(gmap, CameraPose.identity(), small_intrinsics, EXACT)
        perm = rng.permutation(15)
        shuffled = gmap.select(perm)
        out2 = render(shuffled, CameraPose.identity(), small_intrinsics, EXACT)
        np.testing.assert_allclose(out1.color, out2.color, atol=1e-12)
        np.testing.assert_allclose(out1.depth, out2.depth, atol=1e-12)

    def test_adding_gaussian_never_decreases_opacity(self, small_intrinsics, rng):
        gmap = random_map(rng, n=10)
        before = render(gmap, CameraPose.identity(), small_intrinsics, EXACT).opacity
        extra = random_map(rng, n=1)
        after = render(gmap.extend(extra), CameraPose.identity(),
                       small_intrinsics, EXACT).opacity
        assert (after - before).min() >= -1e-12

    def test_contrib_transmittances_non_increasing(self, small_intrinsics, rng):
        gmap = random_map(rng, n=12)
        out = render(gmap, CameraPose.identity(), small_intrinsics, EXACT)
        checked = 0
        for y in range(0, 8, 3):
            for x in range(0, 8, 3):
                recs = out.pixel_contributions(x, y)
                ts = [t for _, _, t in recs]
                assert all(a >= b - 1e-12 for a, b in zip(ts, ts[1:]))
                checked += len(recs)
        assert checked > 0


class TestRenderBackward:
    def test_color_grad_is_blend_weight(self, small_intrinsics):
        gmap = single_gaussian_map([0.0, 0.0, 2.0], log_scale=np.log(0.3),
                                   logit=0.5, color=(0.2, 0.4, 0.6))
        out = render(gmap, CameraPose.identity(), small_intrinsics, EXACT)
        gc = np.zeros((8, 8, 3))
        gc[4, 4, :] = 1.0
        grads = render_backward(out, gc, np.zeros((8, 8)), np.zeros((8, 8)))
        recs = out.pixel_contributions(4, 4)
        weight = sum(a * t for _, a, t in recs)
        np.testing.assert_allclose(grads.colors[0], [weight] * 3, atol=1e-12)

    def test_constant_image_gives_zero_pose_gradient(self, small_intrinsics, rng):
        # a loss independent of the image has zero gradient everywhere
        gmap = random_map(rng, n=6)
        out = render(gmap, CameraPose.identity(), small_intrinsics, EXACT)
        z = np.zeros((8, 8))
        grads = render_backward(out, np.zeros((8, 8, 3)), z, z)
        np.testing.assert_allclose(grads.pose, np.zeros(6), atol=1e-15)
        np.testing.assert_allclose(grads.means, 0.0, atol=1e-15)

    def test_untouched_gaussian_gets_zero_grad(self, small_intrinsics):
        gmap = GaussianMap(means=[[0, 0, 2.0], [50.0, 0, 2.0]],
                           log_scales=[[np.log(0.05)] * 3] * 2,
                           rotations=[[1, 0, 0, 0]] * 2,
                           opacity_logits=[0.0, 0.0],
                           colors=[[1, 0, 0]] * 2)
        out = render(gmap, CameraPose.identity(), small_intrinsics)
        gc = np.ones((8, 8, 3))
        grads = render_backward(out, gc, np.zeros((8, 8)), np.zeros((8, 8)))
        assert np.abs(grads.colors[1]).max() == 0.0


class TestPyramid:
    def test_empty_map_all_zero(self, small_intrinsics):
        pyr = render_pyramid(GaussianMap.empty(), CameraPose.identity(),
                             small_intrinsics)
        assert pyr.scales() == (1.0, 0.5, 0.25)
        for _, img in pyr.levels:
            assert img.sum() == 0.0

    def test_single_scale_equals_render(self, small_intrinsics, rng):
        gmap = random_map(rng, n=8)
        pyr = render_pyramid(gmap, CameraPose.identity(), small_intrinsics,
                             scales=(1.0,))
        full = render(gmap, CameraPose.identity(), small_intrinsics)
        np.testing.assert_allclose(pyr.level(1.0), full.opacity, atol=1e-12)

    def test_opaque_wall_high_at_every_scale(self):
        K = Intrinsics(60.0, 60.0, 15.5, 11.5, 32, 24)
        xs, ys = np.meshgrid(np.linspace(-1.2, 1.2, 40), np.linspace(-1.0, 1.0, 40))
        means = np.stack([xs.ravel(), ys.ravel(), np.full(xs.size, 2.0)], axis=1)
        n = len(means)
        gmap = GaussianMap(means=means,
                           log_scales=np.full((n, 3), np.log(0.06)),
                           rotations=np.tile([1.0, 0, 0, 0], (n, 1)),
                           opacity_logits=np.full(n, 6.0),
                           colors=np.full((n, 3), 0.5))
        pyr = render_pyramid(gmap, CameraPose.identity(), K)
        full_res_mean = render(gmap, CameraPose.identity(), K).opacity.mean()
        assert full_res_mean >= 0.99
        for _, img in pyr.levels:
            assert img.mean() >= 0.99

    def test_level_dims_follow_scale(self, small_intrinsics, rng):
        gmap = random_map(rng, n=4)
        pyr = render_pyramid(gmap, CameraPose.identity(), small_intrinsics)
        assert pyr.level(0.5).shape == (4, 4)
        assert pyr.level(0.25).shape == (2, 2)
