"""Optical flow: containers, forward-backward filtering, analytic ground
truth from scene geometry, and a small pyramidal block matcher used by the
view-synthesis error metric."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import CameraView, backproject, project
from .gridops import bilinear_sample, pixel_grid
from .image import Image, luminance
from .scenes import SceneSpec, render_gt, surface_motion


@dataclass
class FlowField:
    """Dense 2D displacement between two views, with validity."""

    du: np.ndarray  # (H, W)
    dv: np.ndarray  # (H, W)
    valid: np.ndarray  # (H, W) bool
    src_view: int
    dst_view: int

    def __post_init__(self):
        self.du = np.asarray(self.du, dtype=np.float64)
        self.dv = np.asarray(self.dv, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (self.du.shape == self.dv.shape == self.valid.shape):
            raise ValueError("flow component grids must share one shape")

    @property
    def shape(self):
        return self.du.shape

    def copy(self) -> "FlowField":
        return FlowField(self.du.copy(), self.dv.copy(), self.valid.copy(),
                         self.src_view, self.dst_view)


def fb_consistency_filter(fwd: FlowField, bwd: FlowField,
                          tau_px: float = 1.0) -> FlowField:
    """Invalidate forward vectors that the backward flow does not undo.

    A pixel stays valid when || fwd(x) + bwd(x + fwd(x)) || <= tau_px, with
    bwd sampled bilinearly at the forward target. Targets outside the image
    are invalid. Vectors are never modified, only the mask.
    """
    if fwd.src_view != bwd.dst_view or fwd.dst_view != bwd.src_view:
        raise ValueError(
            f"flow pair mismatch: fwd {fwd.src_view}->{fwd.dst_view}, "
            f"bwd {bwd.src_view}->{bwd.dst_view}")
    if tau_px <= 0:
        raise ValueError("tau_px must be positive")
    h, w = fwd.shape
    uv = pixel_grid(w, h)
    tu = uv[..., 0] + fwd.du
    tv = uv[..., 1] + fwd.dv
    bwd_uv = np.stack([bwd.du, bwd.dv], axis=-1)
    back, inbounds = bilinear_sample(bwd_uv, tu, tv)
    residual = np.hypot(fwd.du + back[..., 0], fwd.dv + back[..., 1])
    ok = fwd.valid & inbounds & (residual <= tau_px)
    return FlowField(fwd.du.copy(), fwd.dv.copy(), ok, fwd.src_view, fwd.dst_view)


def gt_flow_from_geometry(spec: SceneSpec, t_src: int, t_dst: int,
                          cam_src: CameraView | None = None,
                          cam_dst: CameraView | None = None) -> FlowField:
    """Exact flow between two instants of a synthetic scene.

    Each pixel's 3D surface point is moved by the known rigid motion of the
    surface it sees and reprojected into the destination view. Pixels whose
    moved point is occluded or falls outside the destination image are
    marked invalid.
    """
    src = render_gt(spec, t_src, cam_src)
    dst = render_gt(spec, t_dst, cam_dst)
    cam_src = src.cam
    cam_dst = dst.cam
    h, w = src.gt_depth.shape
    uv = pixel_grid(w, h)
    points = backproject(uv, src.gt_depth.values, cam_src)

    moved = points.copy()
    nb = len(spec.background)
    for s in range(nb, nb + len(spec.foreground)):
        sel = src.surface_index == s
        if sel.any():
            moved[sel] += surface_motion(spec, s, t_src, t_dst)

    uv_dst, z_dst = project(moved, cam_dst)
    du = uv_dst[..., 0] - uv[..., 0]
    dv = uv_dst[..., 1] - uv[..., 1]

    sampled, inbounds = bilinear_sample(dst.gt_depth.values,
                                        uv_dst[..., 0], uv_dst[..., 1])
    # occluded when something sits clearly in front of the moved point;
    # the relative band absorbs bilinear interpolation of sloped depth
    visible = z_dst <= sampled * 1.01 + 1e-6
    ok = inbounds & visible & (z_dst > 0)
    return FlowField(du, dv, ok, src_view=cam_src.view_id,
                     dst_view=cam_dst.view_id)


def estimate_flow(img_a: Image, img_b: Image, levels: int = 3,
                  radius: int = 4, patch: int = 7) -> FlowField:
    """Coarse-to-fine block-matching flow from img_a to img_b.

    Sum of absolute differences over patch x patch windows, +-radius search
    per level, with a parabolic sub-pixel refinement at the finest level.
    Deterministic; ties prefer the smaller displacement, so constant images
    yield zero flow.
    """
    if img_a.shape != img_b.shape:
        raise ValueError("images must have the same size")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    ga = luminance(img_a)
    gb = luminance(img_b)
    h, w = ga.shape
    if ga.std() < 1e-12 and gb.std() < 1e-12:
        # degenerate rule: constant images carry no signal
        return FlowField(np.zeros((h, w)), np.zeros((h, w)),
                         np.ones((h, w), dtype=bool), src_view=-1, dst_view=-1)

    pyr_a = [ga]
    pyr_b = [gb]
    for _ in range(levels - 1):
        if min(pyr_a[-1].shape) < 2 * patch:
            break
        pyr_a.append(_half(pyr_a[-1]))
        pyr_b.append(_half(pyr_b[-1]))

    du = np.zeros_like(pyr_a[-1])
    dv = np.zeros_like(pyr_a[-1])
    for lvl in range(len(pyr_a) - 1, -1, -1):
        a, b = pyr_a[lvl], pyr_b[lvl]
        if du.shape != a.shape:
            du = _resize_to(du, a.shape) * 2.0
            dv = _resize_to(dv, a.shape) * 2.0
        du, dv = _match_level(a, b, du, dv, radius, patch,
                              subpixel=(lvl == 0))
    return FlowField(du, dv, np.ones((h, w), dtype=bool),
                     src_view=-1, dst_view=-1)


def _half(g):
    h, w = g.shape
    return g[: h // 2 * 2, : w // 2 * 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _resize_to(g, shape):
    zoom = (shape[0] / g.shape[0], shape[1] / g.shape[1])
    return ndimage.zoom(g, zoom, order=1, mode="nearest")


def _match_level(a, b, du, dv, radius, patch, subpixel):
    h, w = a.shape
    n = 2 * radius + 1
    uv = pixel_grid(w, h)
    # cost volume over the residual displacement grid, current flow applied
    costs = np.empty((n, n, h, w))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted, inb = bilinear_sample(b, uv[..., 0] + du + dx,
                                           uv[..., 1] + dv + dy)
            diff = np.abs(a - shifted)
            diff[~inb] = np.abs(a[~inb])  # compare against black outside
            costs[dy + radius, dx + radius] = ndimage.uniform_filter(
                diff, size=patch, mode="nearest")

    # smaller displacements first so a flat cost surface keeps zero flow
    order = sorted(((dy, dx) for dy in range(-radius, radius + 1)
                    for dx in range(-radius, radius + 1)),
                   key=lambda o: (o[0] * o[0] + o[1] * o[1], o[0], o[1]))
    best_y = np.full((h, w), radius, dtype=np.intp)
    best_x = np.full((h, w), radius, dtype=np.intp)
    best_cost = costs[radius, radius].copy()
    for dy, dx in order:
        c = costs[dy + radius, dx + radius]
        better = c < best_cost - 1e-12
        best_y = np.where(better, dy + radius, best_y)
        best_x = np.where(better, dx + radius, best_x)
        best_cost = np.where(better, c, best_cost)

    step_v = best_y.astype(np.float64) - radius
    step_u = best_x.astype(np.float64) - radius
    if subpixel:
        rows, cols = np.indices((h, w))
        # an exact match needs no refinement; the parabola vertex would
        # otherwise drift toward whichever neighbor cost is lower
        refine = best_cost > 1e-12
        step_u += _parabola(costs[best_y, np.maximum(best_x - 1, 0), rows, cols],
                            best_cost,
                            costs[best_y, np.minimum(best_x + 1, n - 1), rows, cols],
                            interior=refine & (best_x > 0) & (best_x < n - 1))
        step_v += _parabola(costs[np.maximum(best_y - 1, 0), best_x, rows, cols],
                            best_cost,
                            costs[np.minimum(best_y + 1, n - 1), best_x, rows, cols],
                            interior=refine & (best_y > 0) & (best_y < n - 1))
    return du + step_u, dv + step_v


def _parabola(lo, center, hi, interior):
    """Three-point parabolic min refinement along one displacement axis."""
    denom = lo - 2 * center + hi
    delta = np.where(denom > 1e-12, 0.5 * (lo - hi) / np.maximum(denom, 1e-12), 0.0)
    return np.where(interior, np.clip(delta, -0.5, 0.5), 0.0)
