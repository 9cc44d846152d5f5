"""Novel-view rendering for dynamic scenes.

Pipeline: forward-splat the static background of every source view with
z-buffering, verify each splat bidirectionally, composite by shortest
baseline, splat the foreground of the selected time instant, and compose
with deterministic pull-push hole filling. Foreground and background are
handled separately to avoid mixing pixels across the object boundary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import (CameraView, DepthConvention, DepthMap, backproject,
                       project, warp_static)
from .gridops import bilinear_sample, bilinear_weights, dilate_mask, pixel_grid
from .image import Image

logger = logging.getLogger(__name__)

_W_EPS = 1e-9


@dataclass(frozen=True)
class SynthParams:
    dz_rel: float = 0.005  # relative z band inside which splats blend
    bidir_tau_px: float = 1.0
    bwm_radius: int = 3
    bwm_sigma_s: float = 2.0
    bwm_sigma_r: float = 0.1
    fg_dilate_px: float = 1.0


@dataclass
class SplatBuffer:
    """Accumulation target of a forward splat into one destination view."""

    rgb: np.ndarray  # (H, W, 3) weighted color sums
    depth: np.ndarray  # (H, W) weighted z sums
    weight: np.ndarray  # (H, W)
    valid: np.ndarray  # (H, W) bool
    cam_src: CameraView
    cam_dst: CameraView

    def resolve_rgb(self) -> np.ndarray:
        w = np.maximum(self.weight, _W_EPS)
        rgb = self.rgb / w[..., None]
        rgb[~self.valid] = 0.0
        return np.clip(rgb, 0.0, 1.0)

    def resolve_depth(self) -> np.ndarray:
        d = self.depth / np.maximum(self.weight, _W_EPS)
        d[~self.valid] = 0.0
        return d

    def resolve_image(self) -> Image:
        return Image(self.resolve_rgb(), self.valid.copy())


def splat_forward(src_img: Image, src_depth: DepthMap, select: np.ndarray,
                  cam_src: CameraView, cam_dst: CameraView,
                  dz_rel: float = 0.005, dynamic: bool = False) -> SplatBuffer:
    """Forward-splat selected source pixels into the destination view.

    Each pixel lands bilinearly on its four nearest destination pixels.
    Depth conflicts resolve nearest-wins: a first pass takes the minimum z
    per destination pixel, a second accumulates every splat within the
    relative band dz_rel of that minimum, so the result does not depend on
    traversal order.
    """
    select = np.asarray(select, dtype=bool)
    if src_depth.convention is not DepthConvention.METRIC:
        raise ValueError("splatting requires metric depth")
    if np.any(select & ~src_depth.valid):
        raise ValueError("selected pixels must have valid depth")
    if dynamic and (src_depth.time_index is None
                    or src_depth.time_index != cam_src.time_index):
        raise ValueError(
            f"dynamic splat needs depth of time {cam_src.time_index}, "
            f"got {src_depth.time_index}")
    h, w = src_img.shape
    uv = pixel_grid(w, h)[select]
    uv_dst, z = warp_static(uv, src_depth.values[select], cam_src, cam_dst)
    colors = src_img.rgb[select]

    hd, wd = cam_dst.height, cam_dst.width
    front = z > _W_EPS
    idx4, w4, inb = bilinear_weights(uv_dst[..., 0], uv_dst[..., 1], wd, hd)
    keep = front & inb
    idx4, w4, z, colors = idx4[keep], w4[keep], z[keep], colors[keep]

    zmin = np.full(hd * wd, np.inf)
    if z.size:
        zz = np.where(w4 > 0, z[:, None], np.inf)
        np.minimum.at(zmin, idx4, zz)

    rgb = np.zeros((hd * wd, 3))
    depth = np.zeros(hd * wd)
    weight = np.zeros(hd * wd)
    if z.size:
        accept = (w4 > 0) & (z[:, None] <= zmin[idx4] * (1.0 + dz_rel))
        wa = np.where(accept, w4, 0.0)
        np.add.at(rgb, idx4, wa[..., None] * colors[:, None, :])
        np.add.at(depth, idx4, wa * z[:, None])
        np.add.at(weight, idx4, wa)

    valid = weight > _W_EPS
    return SplatBuffer(rgb=rgb.reshape(hd, wd, 3), depth=depth.reshape(hd, wd),
                       weight=weight.reshape(hd, wd), valid=valid.reshape(hd, wd),
                       cam_src=cam_src, cam_dst=cam_dst)


def bidir_check(buffer: SplatBuffer, src_depth: DepthMap,
                cam_src: CameraView, cam_dst: CameraView,
                tau_px: float = 1.0) -> SplatBuffer:
    """Invalidate splats whose round trip misses the source location.

    Each valid destination pixel is back-warped with its z-buffer depth to
    the source view, the source depth there is warped forward again, and
    the pixel is kept only when the round trip lands within tau_px.
    """
    if not np.isfinite(tau_px):
        return buffer
    hd, wd = buffer.valid.shape
    uv = pixel_grid(wd, hd)
    sel = buffer.valid
    z = buffer.resolve_depth()[sel]
    p = backproject(uv[sel], np.maximum(z, _W_EPS), cam_dst)
    uv_src, z_src = project(p, cam_src)

    d_src, inb = bilinear_sample(src_depth.values, uv_src[..., 0], uv_src[..., 1])
    v_src, _ = bilinear_sample(src_depth.valid.astype(np.float64),
                               uv_src[..., 0], uv_src[..., 1])
    usable = inb & (v_src >= 0.999) & (z_src > _W_EPS) & (d_src > _W_EPS)
    uv_back = np.full_like(uv_src, np.nan)
    if usable.any():
        fwd_uv, fwd_z = warp_static(uv_src[usable], d_src[usable],
                                    cam_src, cam_dst)
        uv_back[usable] = fwd_uv
    err = np.linalg.norm(uv_back - uv[sel], axis=-1)
    ok = usable & (err <= tau_px)

    out = SplatBuffer(buffer.rgb.copy(), buffer.depth.copy(),
                      buffer.weight.copy(), buffer.valid.copy(),
                      buffer.cam_src, buffer.cam_dst)
    bad = np.zeros((hd, wd), dtype=bool)
    bad[sel] = ~ok
    out.valid[bad] = False
    out.weight[bad] = 0.0
    out.rgb[bad] = 0.0
    out.depth[bad] = 0.0
    return out


def bwm_filter(depth: DepthMap, guide: Image, radius: int = 3,
               sigma_s: float = 2.0, sigma_r: float = 0.1) -> DepthMap:
    """Bilateral weighted median refinement of a depth map.

    Each valid pixel becomes the weighted median of the valid depths in a
    (2r+1)^2 window, weighted by a spatial Gaussian times a guide-color
    Gaussian. Validity is never changed; windows with zero total weight
    leave the pixel untouched.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if sigma_s <= 0 or sigma_r <= 0:
        raise ValueError("sigmas must be positive")
    h, w = depth.shape
    k = 2 * radius + 1
    pad_v = np.pad(depth.values, radius)
    pad_ok = np.pad(depth.valid, radius)
    pad_g = np.pad(guide.rgb, ((radius, radius), (radius, radius), (0, 0)))

    vals = np.empty((k * k, h, w))
    wts = np.empty((k * k, h, w))
    i = 0
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            sl = (slice(radius + dy, radius + dy + h),
                  slice(radius + dx, radius + dx + w))
            vals[i] = pad_v[sl]
            cdiff = pad_g[sl] - guide.rgb
            wspat = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma_s ** 2))
            wcol = np.exp(-(cdiff * cdiff).sum(axis=-1) / (2.0 * sigma_r ** 2))
            wts[i] = wspat * wcol * pad_ok[sl]
            i += 1

    order = np.argsort(vals, axis=0, kind="stable")
    sv = np.take_along_axis(vals, order, axis=0)
    sw = np.take_along_axis(wts, order, axis=0)
    cum = np.cumsum(sw, axis=0)
    total = cum[-1]
    target = 0.5 * total
    pick = (cum >= target[None] - 1e-15).argmax(axis=0)
    median = np.take_along_axis(sv, pick[None], axis=0)[0]

    out = depth.values.copy()
    use = depth.valid & (total > _W_EPS)
    out[use] = median[use]
    return DepthMap(out, depth.valid.copy(), depth.convention,
                    time_index=depth.time_index)


def composite_background(buffers: list[SplatBuffer],
                         cam_virtual: CameraView) -> Image:
    """Per pixel, take the valid candidate with the shortest baseline.

    Ties on baseline go to the lower source view id. Pixels no buffer
    covers remain holes.
    """
    if not buffers:
        raise ValueError("no background buffers to composite")
    ranked = sorted(
        buffers,
        key=lambda b: (float(np.linalg.norm(b.cam_src.center - cam_virtual.center)),
                       b.cam_src.view_id))
    h, w = ranked[0].valid.shape
    rgb = np.zeros((h, w, 3))
    valid = np.zeros((h, w), dtype=bool)
    for buf in ranked:
        take = buf.valid & ~valid
        rgb[take] = buf.resolve_rgb()[take]
        valid |= take
    return Image(rgb, valid)


def pull_push_fill(img: Image) -> Image:
    """Fill holes with a pull-push pyramid; valid pixels pass through.

    Raises:
        ValueError: the image has no valid pixel to fill from.
    """
    if not img.valid.any():
        raise ValueError("cannot fill an entirely invalid image")
    if img.valid.all():
        return img.copy()
    c = img.rgb * img.valid[..., None]
    w = img.valid.astype(np.float64)
    levels = [(c, w)]
    while max(levels[-1][1].shape) > 1:
        levels.append(_half_weighted(*levels[-1]))

    ct, wt = levels[-1]
    v = ct / np.maximum(wt, _W_EPS)[..., None]
    for c_l, w_l in reversed(levels[:-1]):
        up = _upsample2_to(v, c_l.shape[:2])
        wc = np.clip(w_l, 0.0, 1.0)[..., None]
        filled = c_l / np.maximum(w_l, _W_EPS)[..., None]
        v = wc * filled + (1.0 - wc) * up
    return Image(np.clip(v, 0.0, 1.0), np.ones(img.valid.shape, dtype=bool))


def _half_weighted(c, w):
    h, wd = w.shape
    ph, pw = (h + 1) // 2 * 2, (wd + 1) // 2 * 2
    cp = np.zeros((ph, pw, 3))
    wp = np.zeros((ph, pw))
    cp[:h, :wd] = c
    wp[:h, :wd] = w
    c2 = cp.reshape(ph // 2, 2, pw // 2, 2, 3).sum(axis=(1, 3)) / 4.0
    w2 = wp.reshape(ph // 2, 2, pw // 2, 2).sum(axis=(1, 3)) / 4.0
    return c2, w2


def _upsample2_to(v, shape):
    from .gridops import bilinear_upsample

    out = np.stack([bilinear_upsample(v[..., ch], 2) for ch in range(3)],
                   axis=-1)
    return out[: shape[0], : shape[1]]


def blend_and_inpaint(bg: Image, fg: Image, fg_mask_virtual: np.ndarray,
                      fg_coverage: np.ndarray | None = None) -> Image:
    """Compose foreground over background and fill what remains.

    Foreground wins where it is valid, background shows outside the
    virtual foreground mask, and holes are completed per layer with the
    pull-push pyramid. Background holes are filled from background data
    only, so the composite outside the foreground footprint does not
    depend on the chosen time instant. The seam band blends by the
    foreground splat coverage, which tapers within one pixel.
    """
    fg_mask_virtual = np.asarray(fg_mask_virtual, dtype=bool)
    if not bg.valid.any() and not fg.valid.any():
        raise ValueError("both layers are entirely invalid")
    bg_complete = pull_push_fill(bg) if bg.valid.any() else None

    if fg_coverage is None:
        alpha = fg.valid.astype(np.float64)
    else:
        alpha = np.clip(fg_coverage, 0.0, 1.0)
    alpha = np.where(fg_mask_virtual, alpha, 0.0)

    if not fg_mask_virtual.any() or not fg.valid.any():
        if bg_complete is None:
            raise ValueError("no foreground to composite over an invalid "
                             "background")
        return bg_complete.copy()
    fg_complete = pull_push_fill(fg)
    if bg_complete is None:
        return Image(fg_complete.rgb, np.ones_like(fg.valid))

    out = alpha[..., None] * fg_complete.rgb + (1.0 - alpha[..., None]) * bg_complete.rgb
    return Image(out, np.ones_like(bg.valid))


@dataclass
class SynthesisResult:
    image: Image
    pre_inpaint_valid: np.ndarray  # bool, pixels covered before hole filling
    fg_mask_virtual: np.ndarray  # bool
    background: Image  # composited background before compositing fg


def synthesize(frames, fused_depths: list[DepthMap], cam_virtual: CameraView,
               t_select: int, params: SynthParams | None = None,
               refined_depths: list[DepthMap] | None = None) -> SynthesisResult:
    """Render the scene from a virtual camera with the foreground of one
    time instant.

    Args:
        frames: sequence with .image, .fg_mask and .cam per capture
            (FusionFrame or SceneInstant-like records).
        fused_depths: complete metric depth per frame.
        cam_virtual: camera to render.
        t_select: frame index whose foreground is composited.
        params: splat/filter settings.
        refined_depths: optional cached bwm-refined depths.
    """
    params = params or SynthParams()
    if not 0 <= t_select < len(frames):
        raise ValueError(f"t_select {t_select} outside 0..{len(frames) - 1}")
    if any(not d.valid.all() for d in fused_depths):
        raise ValueError("synthesize requires complete fused depths")

    if refined_depths is None:
        refined_depths = [
            bwm_filter(d, f.image, params.bwm_radius, params.bwm_sigma_s,
                       params.bwm_sigma_r)
            for d, f in zip(fused_depths, frames)
        ]

    buffers = []
    for frame, depth in zip(frames, refined_depths):
        buf = splat_forward(frame.image, depth, ~frame.fg_mask, frame.cam,
                            cam_virtual, params.dz_rel)
        buffers.append(bidir_check(buf, depth, frame.cam, cam_virtual,
                                   params.bidir_tau_px))
    background = composite_background(buffers, cam_virtual)

    frame_t = frames[t_select]
    fg_buf = splat_forward(frame_t.image, refined_depths[t_select],
                           frame_t.fg_mask, frame_t.cam, cam_virtual,
                           params.dz_rel, dynamic=True)
    fg_img = fg_buf.resolve_image()
    footprint = fg_buf.weight > _W_EPS
    fg_mask_virtual = dilate_mask(footprint, params.fg_dilate_px)
    coverage = np.clip(fg_buf.weight, 0.0, 1.0)

    image = blend_and_inpaint(background, fg_img, fg_mask_virtual, coverage)
    pre_valid = background.valid | fg_img.valid
    return SynthesisResult(image=image, pre_inpaint_valid=pre_valid,
                           fg_mask_virtual=fg_mask_virtual,
                           background=background)
