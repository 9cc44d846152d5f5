import numpy as np
import pytest
from numpy.testing import assert_allclose

from dvs.geometry import DepthConvention, DepthMap, warp_static
from dvs.gridops import pixel_grid
from dvs.image import Image
from dvs.metrics import psnr
from dvs.scenes import default_scene, render_gt, static_scene
from dvs.synthesis import (SplatBuffer, SynthParams, bidir_check,
                           blend_and_inpaint, bwm_filter,
                           composite_background, pull_push_fill,
                           splat_forward, synthesize)

from conftest import make_camera
from test_fusion import metric_map


def textured(shape, seed=0):
    rng = np.random.default_rng(seed)
    return Image(rng.random(shape + (3,)), np.ones(shape, bool))


class TestSplatForward:
    def test_identity_reproduces_source(self):
        img = textured((24, 24), seed=1)
        depth = metric_map(np.full((24, 24), 2.0))
        cam = make_camera(width=24, height=24)
        buf = splat_forward(img, depth, np.ones((24, 24), bool), cam, cam)
        out = buf.resolve_image()
        assert out.valid.all()
        assert np.abs(out.rgb - img.rgb).max() < 1e-6
        assert_allclose(buf.resolve_depth(), 2.0, atol=1e-9)

    def test_two_splats_nearer_wins(self):
        # source pixels (0,0) depth 1 and (1,0) depth 2 project along one
        # destination ray: dst center (-2,0,0) lies on the line through
        # world points (0,0,1) and (2,0,2)
        cam_src = make_camera(f=1.0, c=(0.0, 0.0), width=2, height=3)
        cam_dst = make_camera(f=1.0, c=(0.0, 0.0), width=6, height=3,
                              C=(-2.0, 0.0, 0.0))
        img = Image(np.zeros((3, 2, 3)), np.ones((3, 2), bool))
        img.rgb[0, 0] = [1.0, 0.0, 0.0]
        img.rgb[0, 1] = [0.0, 1.0, 0.0]
        depth = metric_map(np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]))
        select = np.zeros((3, 2), bool)
        select[0] = True
        buf = splat_forward(img, depth, select, cam_src, cam_dst)
        # both land exactly on u=2: depth gap 1 > band, red (depth 1) wins
        assert buf.valid[0, 2]
        assert_allclose(buf.resolve_rgb()[0, 2], [1.0, 0.0, 0.0])
        assert_allclose(buf.resolve_depth()[0, 2], 1.0)
        # shuffled deposit order cannot change the winner: reversed select
        sel2 = select.copy()
        buf2 = splat_forward(img, depth, sel2[:, ::-1][:, ::-1], cam_src,
                             cam_dst)
        assert_allclose(buf2.resolve_rgb()[0, 2], [1.0, 0.0, 0.0])

    def test_zbuffer_against_enumeration_oracle(self, rng):
        # many random splats collapsed onto a single destination column;
        # a brute-force enumeration gives the accepted set and blend
        cam_src = make_camera(f=1.0, c=(0.0, 0.0), width=8, height=3)
        cam_dst = make_camera(f=1e-9, c=(0.0, 0.0), width=3, height=3)
        n = 8
        depths = rng.uniform(1.0, 3.0, (3, n))
        colors = rng.random((3, n, 3))
        img = Image(colors, np.ones((3, n), bool))
        select = np.zeros((3, n), bool)
        select[0] = True  # row 0 only; f ~ 0 sends every pixel to (0, 0)
        dz = 0.05
        buf = splat_forward(img, metric_map(depths), select, cam_src,
                            cam_dst, dz_rel=dz)
        zmin = depths[0].min()
        accept = depths[0] <= zmin * (1 + dz)
        expected = colors[0][accept].mean(axis=0)
        assert_allclose(buf.resolve_rgb()[0, 0], expected, atol=1e-9)
        assert_allclose(buf.resolve_depth()[0, 0], depths[0][accept].mean(),
                        atol=1e-9)
        # order independence of the winner set: shuffled traversal via a
        # permuted copy of the source row
        perm = rng.permutation(n)
        img2 = Image(colors[:, perm], np.ones((3, n), bool))
        buf2 = splat_forward(img2, metric_map(depths[:, perm]), select,
                             cam_src, cam_dst, dz_rel=dz)
        assert_allclose(buf2.resolve_rgb()[0, 0], expected, atol=1e-9)

    def test_rejects_invalid_selected_depth(self):
        img = textured((4, 4))
        valid = np.ones((4, 4), bool)
        valid[1, 1] = False
        depth = DepthMap(np.full((4, 4), 2.0), valid, DepthConvention.METRIC)
        cam = make_camera(width=4, height=4)
        with pytest.raises(ValueError, match="valid"):
            splat_forward(img, depth, np.ones((4, 4), bool), cam, cam)

    def test_dynamic_requires_matching_time(self):
        img = textured((4, 4))
        depth = metric_map(np.full((4, 4), 2.0), t=1)
        cam_t0 = make_camera(width=4, height=4, time_index=0)
        with pytest.raises(ValueError, match="time"):
            splat_forward(img, depth, np.ones((4, 4), bool), cam_t0, cam_t0,
                          dynamic=True)

    def test_unreachable_targets_stay_invalid(self):
        img = textured((8, 8))
        depth = metric_map(np.full((8, 8), 2.0))
        cam_a = make_camera(width=8, height=8)
        cam_b = make_camera(width=8, height=8, C=(5.0, 0.0, 0.0))
        buf = splat_forward(img, depth, np.ones((8, 8), bool), cam_a, cam_b)
        assert not buf.valid.all()


class TestBidirCheck:
    def test_identity_keeps_everything(self):
        img = textured((12, 12))
        depth = metric_map(np.full((12, 12), 2.0))
        cam = make_camera(width=12, height=12)
        buf = splat_forward(img, depth, np.ones((12, 12), bool), cam, cam)
        out = bidir_check(buf, depth, cam, cam, tau_px=1.0)
        assert (out.valid == buf.valid).all()

    def test_depth_conflict_invalidated(self):
        # buffer claims depth 2 but the source surface sits at depth 1:
        # round trip misses by f*b/2 - f*b/1 = 10 px > tau
        f, b = 100.0, 0.2
        cam_src = make_camera(f=f, width=32, height=32)
        cam_dst = make_camera(f=f, width=32, height=32, C=(b, 0.0, 0.0))
        src_depth = metric_map(np.full((32, 32), 1.0))
        h = w = 32
        buf = SplatBuffer(rgb=np.ones((h, w, 3)) * 0.5,
                          depth=np.full((h, w), 2.0),
                          weight=np.ones((h, w)),
                          valid=np.ones((h, w), bool),
                          cam_src=cam_src, cam_dst=cam_dst)
        out = bidir_check(buf, src_depth, cam_src, cam_dst, tau_px=1.0)
        interior = np.zeros((h, w), bool)
        interior[8:-8, 8:-8] = True
        assert not out.valid[interior].any()

    def test_consistent_depth_kept(self):
        f, b = 100.0, 0.2
        cam_src = make_camera(f=f, width=32, height=32)
        cam_dst = make_camera(f=f, width=32, height=32, C=(b, 0.0, 0.0))
        src_depth = metric_map(np.full((32, 32), 2.0))
        img = textured((32, 32))
        buf = splat_forward(img, src_depth, np.ones((32, 32), bool),
                            cam_src, cam_dst)
        out = bidir_check(buf, src_depth, cam_src, cam_dst, tau_px=1.0)
        assert out.valid[buf.valid].all()

    def test_infinite_tau_is_identity(self):
        cam = make_camera(width=8, height=8)
        buf = SplatBuffer(rgb=np.zeros((8, 8, 3)), depth=np.full((8, 8), 5.0),
                          weight=np.ones((8, 8)), valid=np.ones((8, 8), bool),
                          cam_src=cam, cam_dst=cam)
        out = bidir_check(buf, metric_map(np.full((8, 8), 1.0)), cam, cam,
                          tau_px=np.inf)
        assert (out.valid == buf.valid).all()


def weighted_median_oracle(values, weights):
    """Exhaustive enumeration: smallest value whose cumulative weight
    reaches half the total."""
    order = np.argsort(values, kind="stable")
    v = np.asarray(values)[order]
    w = np.asarray(weights)[order]
    half = 0.5 * w.sum()
    c = 0.0
    for vi, wi in zip(v, w):
        c += wi
        if c >= half - 1e-15:
            return vi
    return v[-1]


class TestBWMFilter:
    def test_constant_region_unchanged(self):
        depth = metric_map(np.full((10, 10), 1.5))
        guide = Image(np.full((10, 10, 3), 0.5), np.ones((10, 10), bool))
        out = bwm_filter(depth, guide)
        assert_allclose(out.values, 1.5)

    def test_single_outlier_replaced(self):
        vals = np.full((9, 9), 1.0)
        vals[4, 4] = 10.0
        depth = metric_map(vals)
        guide = Image(np.full((9, 9, 3), 0.5), np.ones((9, 9), bool))
        out = bwm_filter(depth, guide, radius=2)
        assert_allclose(out.values[4, 4], 1.0)

    def test_matches_enumeration_oracle(self, rng):
        h = w = 7
        vals = rng.uniform(1.0, 3.0, (h, w))
        valid = rng.random((h, w)) < 0.8
        valid[3, 3] = True
        depth = DepthMap(vals, valid, DepthConvention.METRIC)
        guide = Image(rng.random((h, w, 3)), np.ones((h, w), bool))
        r, ss, sr = 2, 2.0, 0.1
        out = bwm_filter(depth, guide, radius=r, sigma_s=ss, sigma_r=sr)
        # oracle at the center pixel
        cands, wts = [], []
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                y, x = 3 + dy, 3 + dx
                if not valid[y, x]:
                    continue
                cdiff = guide.rgb[y, x] - guide.rgb[3, 3]
                wt = np.exp(-(dx * dx + dy * dy) / (2 * ss * ss)) * \
                    np.exp(-np.dot(cdiff, cdiff) / (2 * sr * sr))
                cands.append(vals[y, x])
                wts.append(wt)
        assert_allclose(out.values[3, 3], weighted_median_oracle(cands, wts))

    def test_idempotent_after_cleaning(self):
        vals = np.full((9, 9), 1.0)
        vals[4, 4] = 10.0
        depth = metric_map(vals)
        guide = Image(np.full((9, 9, 3), 0.5), np.ones((9, 9), bool))
        once = bwm_filter(depth, guide, radius=2)
        twice = bwm_filter(once, guide, radius=2)
        assert_allclose(twice.values, once.values)

    def test_validity_unchanged_and_bounds(self, rng):
        h = w = 11
        vals = rng.uniform(1.0, 5.0, (h, w))
        valid = rng.random((h, w)) < 0.7
        depth = DepthMap(vals, valid, DepthConvention.METRIC)
        guide = Image(rng.random((h, w, 3)), np.ones((h, w), bool))
        out = bwm_filter(depth, guide, radius=3)
        assert (out.valid == valid).all()
        assert (out.values[~valid] == vals[~valid]).all()
        # median never leaves the window's [min, max] of valid values
        pad = 3
        for y in range(h):
            for x in range(w):
                if not valid[y, x]:
                    continue
                win_v = vals[max(0, y - pad):y + pad + 1,
                             max(0, x - pad):x + pad + 1]
                win_ok = valid[max(0, y - pad):y + pad + 1,
                               max(0, x - pad):x + pad + 1]
                assert win_v[win_ok].min() - 1e-12 <= out.values[y, x] \
                    <= win_v[win_ok].max() + 1e-12

    def test_parameter_validation(self):
        depth = metric_map(np.full((4, 4), 1.0))
        guide = Image(np.zeros((4, 4, 3)), np.ones((4, 4), bool))
        with pytest.raises(ValueError):
            bwm_filter(depth, guide, radius=0)
        with pytest.raises(ValueError):
            bwm_filter(depth, guide, sigma_s=0.0)


def manual_buffer(color, valid, cam_src, cam_dst, depth=2.0):
    h, w = valid.shape
    rgb = np.zeros((h, w, 3))
    rgb[valid] = color
    return SplatBuffer(rgb=rgb, depth=np.full((h, w), depth) * valid,
                       weight=valid.astype(float), valid=valid.copy(),
                       cam_src=cam_src, cam_dst=cam_dst)


class TestCompositeBackground:
    def test_single_source_passthrough(self):
        cam_v = make_camera(width=4, height=4)
        cam_s = make_camera(view_id=1, C=(0.1, 0, 0), width=4, height=4)
        valid = np.zeros((4, 4), bool)
        valid[1, 1] = True
        buf = manual_buffer([0.2, 0.4, 0.6], valid, cam_s, cam_v)
        out = composite_background([buf], cam_v)
        assert (out.valid == valid).all()
        assert_allclose(out.rgb[1, 1], [0.2, 0.4, 0.6])

    def test_shortest_baseline_wins(self):
        cam_v = make_camera(width=2, height=2)
        near = make_camera(view_id=5, C=(0.2, 0, 0), width=2, height=2)
        far = make_camera(view_id=1, C=(0.4, 0, 0), width=2, height=2)
        valid = np.ones((2, 2), bool)
        out = composite_background(
            [manual_buffer([1.0, 0, 0], valid, far, cam_v),
             manual_buffer([0, 1.0, 0], valid, near, cam_v)], cam_v)
        assert_allclose(out.rgb[0, 0], [0, 1.0, 0])

    def test_tie_breaks_to_lower_view_id(self):
        cam_v = make_camera(width=2, height=2)
        a = make_camera(view_id=3, C=(0.2, 0, 0), width=2, height=2)
        b = make_camera(view_id=2, C=(-0.2, 0, 0), width=2, height=2)
        valid = np.ones((2, 2), bool)
        out = composite_background(
            [manual_buffer([1.0, 0, 0], valid, a, cam_v),
             manual_buffer([0, 1.0, 0], valid, b, cam_v)], cam_v)
        assert_allclose(out.rgb[0, 0], [0, 1.0, 0])  # view 2 wins the tie

    def test_fallback_to_next_nearest_when_invalid(self):
        cam_v = make_camera(width=2, height=2)
        near = make_camera(view_id=0, C=(0.1, 0, 0), width=2, height=2)
        far = make_camera(view_id=1, C=(0.5, 0, 0), width=2, height=2)
        v_near = np.zeros((2, 2), bool)
        v_near[0, 0] = True
        v_far = np.ones((2, 2), bool)
        out = composite_background(
            [manual_buffer([1.0, 0, 0], v_near, near, cam_v),
             manual_buffer([0, 1.0, 0], v_far, far, cam_v)], cam_v)
        assert_allclose(out.rgb[0, 0], [1.0, 0, 0])
        assert_allclose(out.rgb[1, 1], [0, 1.0, 0])


class TestPullPush:
    def test_hole_free_identity(self, rng):
        img = Image(rng.random((16, 16, 3)), np.ones((16, 16), bool))
        out = pull_push_fill(img)
        assert (out.rgb == img.rgb).all()

    def test_single_hole_constant_fill(self):
        rgb = np.full((16, 16, 3), 0.6)
        valid = np.ones((16, 16), bool)
        valid[8, 8] = False
        rgb[8, 8] = 0
        out = pull_push_fill(Image(rgb, valid))
        assert_allclose(out.rgb[8, 8], 0.6, atol=1e-12)
        assert out.valid.all()

    def test_border_strip_on_gentle_gradient(self):
        # 30-pixel missing border strip on a gentle gradient fills within
        # 10 intensity levels
        h = w = 128
        ramp = np.linspace(0.22, 0.28, w)[None, :].repeat(h, axis=0)
        rgb = np.stack([ramp] * 3, axis=-1)
        valid = np.ones((h, w), bool)
        valid[:, -30:] = False
        out = pull_push_fill(Image(rgb * valid[..., None], valid))
        err = np.abs(out.rgb - rgb)[~valid]
        assert err.max() <= 10.0 / 255.0

    def test_entirely_invalid_raises(self):
        with pytest.raises(ValueError, match="invalid"):
            pull_push_fill(Image(np.zeros((4, 4, 3)), np.zeros((4, 4), bool)))


class TestBlendAndInpaint:
    def test_no_holes_empty_mask_is_background(self, rng):
        bg = Image(rng.random((8, 8, 3)), np.ones((8, 8), bool))
        fg = Image(np.zeros((8, 8, 3)), np.zeros((8, 8), bool))
        out = blend_and_inpaint(bg, fg, np.zeros((8, 8), bool))
        assert (out.rgb == bg.rgb).all()

    def test_output_complete(self, rng):
        valid = rng.random((16, 16)) < 0.7
        bg = Image(rng.random((16, 16, 3)) * valid[..., None], valid)
        fgm = np.zeros((16, 16), bool)
        fgm[4:8, 4:8] = True
        fg = Image(rng.random((16, 16, 3)) * fgm[..., None], fgm)
        out = blend_and_inpaint(bg, fg, fgm)
        assert out.valid.all()

    def test_foreground_wins_where_valid(self, rng):
        bg = Image(rng.random((8, 8, 3)), np.ones((8, 8), bool))
        fgm = np.zeros((8, 8), bool)
        fgm[2:5, 2:5] = True
        fg_rgb = np.zeros((8, 8, 3))
        fg_rgb[fgm] = [0.9, 0.1, 0.2]
        fg = Image(fg_rgb, fgm)
        coverage = fgm.astype(float)
        out = blend_and_inpaint(bg, fg, fgm, coverage)
        assert_allclose(out.rgb[3, 3], [0.9, 0.1, 0.2])
        assert_allclose(out.rgb[0, 0], bg.rgb[0, 0])

    def test_both_invalid_raises(self):
        empty = Image(np.zeros((4, 4, 3)), np.zeros((4, 4), bool))
        with pytest.raises(ValueError, match="invalid"):
            blend_and_inpaint(empty, empty.copy(), np.zeros((4, 4), bool))


@pytest.fixture(scope="module")
def scene_setup():
    spec = default_scene(seed=4, size=64, frames=3)
    insts = [render_gt(spec, t) for t in range(3)]
    depths = [inst.gt_depth for inst in insts]

    class Frame:
        def __init__(self, inst):
            self.image = inst.gt_image
            self.fg_mask = inst.gt_mask
            self.cam = inst.cam

    return spec, insts, [Frame(i) for i in insts], depths


class TestSynthesize:
    def test_source_pose_round_trip(self, scene_setup):
        spec, insts, frames, depths = scene_setup
        out = synthesize(frames, depths, frames[1].cam, 1)
        assert psnr(out.image.rgb, insts[1].gt_image.rgb) >= 40.0
        assert out.image.valid.all()

    def test_all_background_independent_of_t(self, scene_setup):
        spec, insts, frames, depths = scene_setup

        class BgFrame:
            def __init__(self, f):
                self.image = f.image
                self.fg_mask = np.zeros_like(f.fg_mask)
                self.cam = f.cam

        bg_frames = [BgFrame(f) for f in frames]
        cam_v = frames[1].cam
        out0 = synthesize(bg_frames, depths, cam_v, 0)
        out2 = synthesize(bg_frames, depths, cam_v, 2)
        assert (out0.image.rgb == out2.image.rgb).all()

    def test_bullet_time_background_bit_identical(self, scene_setup):
        spec, insts, frames, depths = scene_setup
        cam_v = frames[1].cam
        outs = [synthesize(frames, depths, cam_v, t) for t in range(3)]
        outside = ~(outs[0].fg_mask_virtual | outs[1].fg_mask_virtual
                    | outs[2].fg_mask_virtual)
        for o in outs[1:]:
            assert (o.image.rgb[outside] == outs[0].image.rgb[outside]).all()

    def test_t_select_bounds(self, scene_setup):
        spec, insts, frames, depths = scene_setup
        with pytest.raises(ValueError, match="t_select"):
            synthesize(frames, depths, frames[0].cam, 5)

    def test_requires_complete_depths(self, scene_setup):
        spec, insts, frames, depths = scene_setup
        bad = depths[0].copy()
        bad.valid[0, 0] = False
        with pytest.raises(ValueError, match="complete"):
            synthesize(frames, [bad] + depths[1:], frames[0].cam, 0)
