"""Scale-correction fusion.

Upgrades view-variant single-view depth (DSV) to globally coherent metric
depth by fitting a per-pixel log-scale field that minimizes

    L = L_g + lambda_l L_l + lambda_s L_s + lambda_e L_e

with analytic gradients, coarse to fine. The upgraded depth of a frame is
exp(s) * B where B is the metricized DSV and s the log-scale field.

Loss terms, all means over their pixel domains:

* L_g: L1 gap to multi-view depth over static, DMV-valid pixels.
* L_l: L1 gap of scale-invariant relative depth gradients to DSV over
  foreground pixels, across multi-scale neighbor offsets.
* L_s: Euclidean norm of the 3D scene-flow gap between a frame and its
  temporal neighbors, through precomputed optical flow.
* L_e: squared 5-point Laplacian, foreground weighted by lambda_f.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .flow import FlowField
from .geometry import CameraView, DepthConvention, DepthMap, scaled_camera
from .gridops import (bilinear_upsample, bilinear_weights, box_downsample,
                      masked_box_downsample, pixel_grid)
from .image import Image

logger = logging.getLogger(__name__)

LOG_SCALE_LIMIT = np.log(1e3)  # exp(s) clamped to [1e-3, 1e3]
_DENOM_EPS = 1e-12


class FusionError(RuntimeError):
    """Raised on non-finite losses or a diverging optimizer.

    Carries the loss trajectory recorded so far in ``trajectory``.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory or []


@dataclass(frozen=True)
class FusionWeights:
    """Loss weights and neighborhood structure of the fusion objective."""

    lambda_l: float = 1.0
    lambda_s: float = 0.05
    lambda_e: float = 0.05
    lambda_f: float = 2.0
    neighbor_offsets: tuple[int, ...] = (1, 2, 4, 8, 16)
    neighbor_views: int = 2
    use_global: bool = True  # ablation hook for the DMV term

    def __post_init__(self):
        if min(self.lambda_l, self.lambda_s, self.lambda_e, self.lambda_f) < 0:
            raise ValueError("loss weights must be non-negative")
        offs = tuple(int(o) for o in self.neighbor_offsets)
        if not offs or any(o < 1 for o in offs) or list(offs) != sorted(set(offs)):
            raise ValueError("neighbor_offsets must be non-empty, strictly "
                             "increasing and >= 1")
        object.__setattr__(self, "neighbor_offsets", offs)
        if self.neighbor_views < 1:
            raise ValueError("neighbor_views must be >= 1")


@dataclass(frozen=True)
class OptimizerOptions:
    pyramid_levels: int = 3
    iterations: int = 200
    initial_step: float = 0.25  # first trial moves max |delta s| this far
    step_growth: float = 2.0
    max_backtracks: int = 30


@dataclass
class FusionFrame:
    """One capture instant of a ViewSet."""

    image: Image
    dsv: DepthMap
    dmv: DepthMap
    fg_mask: np.ndarray
    cam: CameraView

    def __post_init__(self):
        self.fg_mask = np.asarray(self.fg_mask, dtype=bool)
        if self.dsv.convention is not DepthConvention.NORMALIZED_INVERSE:
            raise ValueError("DSV must use the normalized inverse convention")
        if self.dmv.convention is not DepthConvention.METRIC:
            raise ValueError("DMV must be metric")


@dataclass
class ViewSet:
    """Ordered frames plus the directed flow fields between temporal
    neighbors; the unit of fusion."""

    frames: list[FusionFrame]
    flows: dict[tuple[int, int], FlowField] = field(default_factory=dict)

    def __post_init__(self):
        times = [f.cam.time_index for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("frame time indices must be strictly increasing")

    def __len__(self):
        return len(self.frames)


def neighbor_pairs(n_frames: int, offset: int) -> list[tuple[int, int]]:
    """Directed (frame, frame +- offset) pairs that stay in range."""
    pairs = []
    for r in range(n_frames):
        for n in (r - offset, r + offset):
            if 0 <= n < n_frames:
                pairs.append((r, n))
    return pairs


# --- metricization ----------------------------------------------------------

def metricize_dsv(dsv: DepthMap, dmv: DepthMap, mask: np.ndarray) -> DepthMap:
    """Affine-fit DSV to DMV in inverse-depth space over static pixels.

    Solves min_{a,b} sum (a dsv + b - 1/dmv)^2 over static, DMV-valid
    pixels and returns 1 / (a dsv + b) as a complete metric depth map.

    Raises:
        ValueError: fewer than 100 static DMV-valid pixels overlap.
    """
    if dsv.convention is not DepthConvention.NORMALIZED_INVERSE:
        raise ValueError("metricize_dsv expects normalized inverse DSV")
    domain = ~np.asarray(mask, dtype=bool) & dmv.valid & dsv.valid
    if domain.sum() < 100:
        raise ValueError("insufficient static overlap between DSV and DMV "
                         f"({int(domain.sum())} pixels, need >= 100)")
    x = dsv.values[domain]
    y = 1.0 / dmv.values[domain]
    A = np.stack([x, np.ones_like(x)], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    inv = a * dsv.values + b
    floor = max(1e-12, 1e-6 * float(inv.max()))
    clamped = int((inv < floor).sum())
    if clamped:
        logger.warning("metricize_dsv clamped %d non-positive inverse depths",
                       clamped)
    values = 1.0 / np.maximum(inv, floor)
    return DepthMap(values, np.ones_like(values, dtype=bool),
                    DepthConvention.METRIC, time_index=dsv.time_index)


# --- loss terms -------------------------------------------------------------

def relative_gradient(values: np.ndarray, du: int = 0, dv: int = 0):
    """Scale-invariant relative depth gradient for offset (du, dv).

    g(x) = (d(x + o) - d(x)) / (|d(x + o)| + |d(x)|), anchored at x.

    Returns:
        (g, ok): full grids; ok is false where the pair leaves the image
        or the denominator underflows, and g is zero there.
    """
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    g = np.zeros((h, w))
    ok = np.zeros((h, w), dtype=bool)
    if abs(du) >= w or abs(dv) >= h:
        return g, ok
    anchor = (slice(max(0, -dv), h - max(0, dv)),
              slice(max(0, -du), w - max(0, du)))
    neigh = (slice(max(0, dv), h - max(0, -dv)),
             slice(max(0, du), w - max(0, -du)))
    a = values[anchor]
    b = values[neigh]
    denom = np.abs(a) + np.abs(b)
    good = denom > _DENOM_EPS
    g[anchor] = np.where(good, (b - a) / np.maximum(denom, _DENOM_EPS), 0.0)
    ok[anchor] = good
    return g, ok


def loss_global(dhat: np.ndarray, dmv_values: np.ndarray, domain: np.ndarray,
                grad: np.ndarray | None = None, scale: float = 1.0) -> float:
    """Mean L1 gap to DMV over the static DMV-valid domain."""
    n = int(domain.sum())
    if n == 0:
        logger.warning("loss_global: empty static domain")
        return 0.0
    diff = dhat[domain] - dmv_values[domain]
    if grad is not None:
        g = np.zeros_like(dhat)
        g[domain] = np.sign(diff) * (scale / n)
        grad += g
    return float(np.abs(diff).mean())


def offset_directions(offsets) -> list[tuple[int, int]]:
    """Multi-scale neighbor offsets along both axes and both directions."""
    dirs = []
    for o in offsets:
        dirs.extend(((int(o), 0), (0, int(o)), (-int(o), 0), (0, -int(o))))
    return dirs


def _offset_slices(du: int, dv: int, shape):
    h, w = shape
    anchor = (slice(max(0, -dv), h - max(0, dv)),
              slice(max(0, -du), w - max(0, du)))
    neigh = (slice(max(0, dv), h - max(0, -dv)),
             slice(max(0, du), w - max(0, -du)))
    return anchor, neigh


def loss_local(dhat: np.ndarray, base: np.ndarray, fg_mask: np.ndarray,
               offsets, grad: np.ndarray | None = None, scale: float = 1.0,
               base_gradients: dict | None = None) -> float:
    """Mean L1 gap of relative gradients to the DSV base over foreground.

    Counts a pair when its anchor pixel is foreground and the neighbor at
    x + offset is inside the image, for every offset along both axes and
    directions.

    Args:
        base_gradients: optional cache of relative_gradient(base, du, dv)
            keyed by (du, dv); the base never changes during optimization.
    """
    fg_mask = np.asarray(fg_mask, dtype=bool)
    if not fg_mask.any():
        logger.warning("loss_local: empty foreground")
        return 0.0
    total = 0.0
    count = 0
    acc = np.zeros_like(dhat) if grad is not None else None
    h, w = dhat.shape
    for du, dv in offset_directions(offsets):
        if abs(du) >= w or abs(dv) >= h:
            continue  # offset exceeds the image, skipped not clamped
        anchor, neigh = _offset_slices(du, dv, dhat.shape)
        sel = fg_mask[anchor]
        a = dhat[anchor]
        b = dhat[neigh]
        denom = np.abs(a) + np.abs(b)
        if base_gradients is not None:
            g0, ok0 = base_gradients[(du, dv)]
        else:
            g0, ok0 = relative_gradient(base, du, dv)
        good = sel & (denom > _DENOM_EPS) & ok0[anchor]
        if not good.any():
            continue
        gg = (b - a) / np.maximum(denom, _DENOM_EPS)
        err = gg - g0[anchor]
        total += float(np.abs(err[good]).sum())
        count += int(good.sum())
        if acc is not None:
            s = np.where(good, np.sign(err), 0.0)
            dd = np.maximum(denom, _DENOM_EPS) ** 2
            acc[anchor] += s * ((-denom - (b - a) * np.sign(a)) / dd)
            acc[neigh] += s * ((denom - (b - a) * np.sign(b)) / dd)
    if count == 0:
        logger.warning("loss_local: no contributing pairs")
        return 0.0
    if grad is not None:
        grad += acc * (scale / count)
    return total / count


@dataclass
class ScenePair:
    """Precomputed geometry of one directed scene-flow pair r -> n."""

    src: int
    dst: int
    src_idx: np.ndarray  # (M,) flat pixel indices in the source frame
    v_src: np.ndarray  # (M, 3) source ray directions
    c_src: np.ndarray  # (3,)
    idx4: np.ndarray  # (M, 4) flat indices of the bilinear footprint
    w4: np.ndarray  # (M, 4)
    v_dst: np.ndarray  # (M, 3) rays through the flow targets
    c_dst: np.ndarray  # (3,)


def build_scene_pair(src: int, dst: int, flow: FlowField,
                     cam_src: CameraView, cam_dst: CameraView) -> ScenePair:
    """Freeze flow targets and ray directions of a pair for fast loss evals."""
    h, w = flow.shape
    uv = pixel_grid(w, h)
    tu = uv[..., 0] + flow.du
    tv = uv[..., 1] + flow.dv
    idx4, w4, inb = bilinear_weights(tu, tv, cam_dst.width, cam_dst.height)
    sel = flow.valid & inb
    flat = np.flatnonzero(sel.ravel())
    rays_src = cam_src.rays(uv).reshape(-1, 3)
    target_uv = np.stack([tu[sel], tv[sel]], axis=-1)
    return ScenePair(
        src=src, dst=dst, src_idx=flat,
        v_src=rays_src[flat], c_src=cam_src.center,
        idx4=idx4.reshape(-1, 4)[flat], w4=w4.reshape(-1, 4)[flat],
        v_dst=cam_dst.rays(target_uv), c_dst=cam_dst.center)


def loss_scene_flow(dhat_src: np.ndarray, dhat_dst: np.ndarray,
                    pair: ScenePair, grad_src: np.ndarray | None = None,
                    grad_dst: np.ndarray | None = None,
                    scale: float = 1.0) -> float:
    """Mean 3D gap between backprojections linked by the pair's flow.

    Destination depth is sampled bilinearly at the flow targets and
    backprojected along the ray through the continuous coordinates.
    """
    m = pair.src_idx.size
    if m == 0:
        logger.warning("loss_scene_flow: pair %d->%d has no valid pixels",
                       pair.src, pair.dst)
        return 0.0
    d_src = dhat_src.ravel()[pair.src_idx]
    d4 = dhat_dst.ravel()[pair.idx4]
    d_smp = (d4 * pair.w4).sum(axis=1)
    gap = (d_src[:, None] * pair.v_src + pair.c_src) \
        - (d_smp[:, None] * pair.v_dst + pair.c_dst)
    dist = np.linalg.norm(gap, axis=1)
    if grad_src is not None or grad_dst is not None:
        safe = np.maximum(dist, _DENOM_EPS)
        direction = np.where(dist[:, None] > _DENOM_EPS, gap / safe[:, None], 0.0)
        if grad_src is not None:
            contrib = (direction * pair.v_src).sum(axis=1) * (scale / m)
            np.add.at(grad_src.ravel(), pair.src_idx, contrib)
        if grad_dst is not None:
            contrib = -(direction * pair.v_dst).sum(axis=1) * (scale / m)
            np.add.at(grad_dst.ravel(), pair.idx4, contrib[:, None] * pair.w4)
    return float(dist.mean())


def _stencil_masks(fg_mask: np.ndarray | None, shape):
    """Per-axis masks of pixels whose 3-tap stencil stays inside the image
    and inside one mask domain. The foreground boundary is treated like the
    image border, so the regularizer never smooths across the silhouette."""
    h, w = shape
    if fg_mask is None:
        mv = np.ones((max(h - 2, 0), w), dtype=bool)
        mh = np.ones((h, max(w - 2, 0)), dtype=bool)
        return mv, mh
    fg_mask = np.asarray(fg_mask, dtype=bool)
    mv = (fg_mask[2:, :] == fg_mask[1:-1, :]) & (fg_mask[:-2, :] == fg_mask[1:-1, :])
    mh = (fg_mask[:, 2:] == fg_mask[:, 1:-1]) & (fg_mask[:, :-2] == fg_mask[:, 1:-1])
    return mv, mh


def laplacian(values: np.ndarray, fg_mask: np.ndarray | None = None) -> np.ndarray:
    """5-point Laplacian; an axis whose neighbor leaves the image or
    crosses the foreground boundary contributes nothing, so planar ramps
    are exactly smooth and depth discontinuities at the silhouette are not
    penalized."""
    mv, mh = _stencil_masks(fg_mask, values.shape)
    lap = np.zeros_like(values)
    lap[1:-1, :] += np.where(mv, values[2:, :] + values[:-2, :]
                             - 2.0 * values[1:-1, :], 0.0)
    lap[:, 1:-1] += np.where(mh, values[:, 2:] + values[:, :-2]
                             - 2.0 * values[:, 1:-1], 0.0)
    return lap


def laplacian_adjoint(w: np.ndarray, fg_mask: np.ndarray | None = None) -> np.ndarray:
    mv, mh = _stencil_masks(fg_mask, w.shape)
    out = np.zeros_like(w)
    wi = np.where(mv, w[1:-1, :], 0.0)
    out[2:, :] += wi
    out[:-2, :] += wi
    out[1:-1, :] -= 2.0 * wi
    wj = np.where(mh, w[:, 1:-1], 0.0)
    out[:, 2:] += wj
    out[:, :-2] += wj
    out[:, 1:-1] -= 2.0 * wj
    return out


def loss_smooth(dhat: np.ndarray, fg_mask: np.ndarray, lambda_f: float,
                grad: np.ndarray | None = None, scale: float = 1.0) -> float:
    """Squared-Laplacian smoothness, foreground re-weighted by lambda_f."""
    fg_mask = np.asarray(fg_mask, dtype=bool)
    n_fg = int(fg_mask.sum())
    n_st = fg_mask.size - n_fg
    weight = np.zeros_like(dhat)
    if n_st:
        weight[~fg_mask] = 1.0 / n_st
    if n_fg:
        weight[fg_mask] = lambda_f / n_fg
    lap = laplacian(dhat, fg_mask)
    if grad is not None:
        grad += laplacian_adjoint(weight * lap, fg_mask) * (2.0 * scale)
    return float((weight * lap * lap).sum())


# --- assembled objective ----------------------------------------------------

@dataclass
class _FrameData:
    base: np.ndarray  # metricized DSV values
    dmv_values: np.ndarray
    static_eval: np.ndarray  # ~fg & dmv valid
    fg: np.ndarray
    cam: CameraView
    base_gradients: dict | None = None  # (du, dv) -> relative_gradient(base)

    def cache_base_gradients(self, offsets):
        self.base_gradients = {
            (du, dv): relative_gradient(self.base, du, dv)
            for du, dv in offset_directions(offsets)
        }


@dataclass
class _Problem:
    frames: list[_FrameData]
    pairs: list[ScenePair]
    weights: FusionWeights

    @property
    def pairs_per_frame(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for p in self.pairs:
            counts[p.src] = counts.get(p.src, 0) + 1
        return counts


def total_loss_and_gradient(log_scales: list[np.ndarray], problem: _Problem,
                            with_grad: bool = True):
    """Evaluate L and optionally dL/ds for every frame.

    Returns:
        (L, components, grads): weighted total, dict with unweighted sums
        of L_g/L_l/L_s/L_e over frames, and per-frame gradient grids
        (None when with_grad is false).

    Raises:
        FusionError: a term went non-finite; the message names it.
    """
    w = problem.weights
    comps = {"L_g": 0.0, "L_l": 0.0, "L_s": 0.0, "L_e": 0.0}
    dhats = [np.exp(s) * fd.base for s, fd in zip(log_scales, problem.frames)]
    grads_dhat = [np.zeros_like(d) for d in dhats] if with_grad else None

    for i, fd in enumerate(problem.frames):
        g = grads_dhat[i] if with_grad else None
        lg = loss_global(dhats[i], fd.dmv_values, fd.static_eval, g, 1.0) \
            if w.use_global else 0.0
        ll = loss_local(dhats[i], fd.base, fd.fg, w.neighbor_offsets,
                        g, w.lambda_l, base_gradients=fd.base_gradients)
        le = loss_smooth(dhats[i], fd.fg, w.lambda_f, g, w.lambda_e)
        for name, val in (("L_g", lg), ("L_l", ll), ("L_e", le)):
            if not np.isfinite(val):
                raise FusionError(f"non-finite {name} at frame {i}")
        comps["L_g"] += lg
        comps["L_l"] += ll
        comps["L_e"] += le

    counts = problem.pairs_per_frame
    for pair in problem.pairs:
        share = 1.0 / counts[pair.src]
        gs = grads_dhat[pair.src] if with_grad else None
        gd = grads_dhat[pair.dst] if with_grad else None
        ls = loss_scene_flow(dhats[pair.src], dhats[pair.dst], pair,
                             gs, gd, w.lambda_s * share)
        if not np.isfinite(ls):
            raise FusionError(
                f"non-finite L_s on pair {pair.src}->{pair.dst}")
        comps["L_s"] += ls * share

    total = (comps["L_g"] if w.use_global else 0.0) \
        + w.lambda_l * comps["L_l"] + w.lambda_s * comps["L_s"] \
        + w.lambda_e * comps["L_e"]
    grads = None
    if with_grad:
        grads = [gd * dh for gd, dh in zip(grads_dhat, dhats)]
    return total, comps, grads


def _total_loss(log_scales, problem):
    total, comps, _ = total_loss_and_gradient(log_scales, problem,
                                              with_grad=False)
    return total, comps


# --- pyramid and optimizer --------------------------------------------------

def _required_pairs(n_frames: int, weights: FusionWeights):
    return neighbor_pairs(n_frames, weights.neighbor_views)


def _build_problem(frames, flows, weights, factor):
    """Downsample the fusion inputs by an integer factor and freeze the
    per-pair scene-flow geometry."""
    data = []
    cams = []
    for base, dmv, fg, cam in frames:
        if factor > 1:
            base_l = box_downsample(base, factor)
            dmv_vals, dmv_valid = masked_box_downsample(
                dmv.values, dmv.valid, factor)
            fg_l = box_downsample(fg.astype(np.float64), factor) > 0.0
            cam_l = scaled_camera(cam, factor)
        else:
            base_l = base
            dmv_vals, dmv_valid = dmv.values, dmv.valid
            fg_l = fg
            cam_l = cam
        cams.append(cam_l)
        fd = _FrameData(base=base_l, dmv_values=dmv_vals,
                        static_eval=~fg_l & dmv_valid, fg=fg_l, cam=cam_l)
        fd.cache_base_gradients(weights.neighbor_offsets)
        data.append(fd)

    pairs = []
    if weights.lambda_s > 0:
        for (r, n) in _required_pairs(len(data), weights):
            flow = flows[(r, n)]
            if factor > 1:
                du, den_ok = masked_box_downsample(flow.du, flow.valid, factor)
                dv, _ = masked_box_downsample(flow.dv, flow.valid, factor)
                frac = box_downsample(flow.valid.astype(np.float64), factor)
                flow = FlowField(du / factor, dv / factor, frac >= 0.999,
                                 flow.src_view, flow.dst_view)
            pairs.append(build_scene_pair(r, n, flow, cams[r], cams[n]))
    return _Problem(frames=data, pairs=pairs, weights=weights)


@dataclass
class FusionResult:
    depths: list[DepthMap]
    log_scales: list[np.ndarray]
    trajectory: list[tuple]  # (level_factor, iteration, L, L_g, L_l, L_s, L_e)


def fuse(viewset: ViewSet, weights: FusionWeights | None = None,
         opts: OptimizerOptions | None = None) -> FusionResult:
    """Fit the log-scale fields of a ViewSet coarse to fine.

    Starts from s = 0 after metricizing each frame's DSV, runs projected
    gradient descent with backtracking line search per pyramid level, and
    returns complete metric depth per frame plus the loss trajectory.

    Raises:
        ValueError: a required flow pair is missing.
        FusionError: non-finite loss, or an accepted step increased the
            loss (divergence), with the trajectory attached.
    """
    weights = weights or FusionWeights()
    opts = opts or OptimizerOptions()
    if weights.lambda_s > 0:
        for key in _required_pairs(len(viewset), weights):
            if key not in viewset.flows:
                raise ValueError(f"missing flow pair {key[0]}->{key[1]}")

    frames = []
    for fr in viewset.frames:
        base = metricize_dsv(fr.dsv, fr.dmv, fr.fg_mask)
        frames.append((base.values, fr.dmv, fr.fg_mask, fr.cam))

    factors = [2 ** k for k in reversed(range(opts.pyramid_levels))]
    h, w = frames[0][0].shape
    for f in factors:
        if h % f or w % f:
            raise ValueError(f"image size {w}x{h} is not divisible by the "
                             f"pyramid factor {f}")

    trajectory: list[tuple] = []
    log_scales = None
    for factor in factors:
        problem = _build_problem(frames, viewset.flows, weights, factor)
        if log_scales is None:
            log_scales = [np.zeros_like(fd.base) for fd in problem.frames]
        else:
            log_scales = [bilinear_upsample(s, prev_factor // factor)
                          for s in log_scales]
        log_scales = _descend(log_scales, problem, opts, factor, trajectory)
        prev_factor = factor

    depths = []
    for s, (base, dmv, fg, cam) in zip(log_scales, frames):
        values = np.exp(s) * base
        depths.append(DepthMap(values, np.ones_like(values, dtype=bool),
                               DepthConvention.METRIC,
                               time_index=cam.time_index))
    return FusionResult(depths=depths, log_scales=log_scales,
                        trajectory=trajectory)


def _descend(log_scales, problem, opts, level_factor, trajectory):
    """Projected gradient descent with backtracking line search."""

    def clamp(arrs):
        return [np.clip(a, -LOG_SCALE_LIMIT, LOG_SCALE_LIMIT) for a in arrs]

    log_scales = clamp(log_scales)
    loss, comps, grads = total_loss_and_gradient(log_scales, problem)
    trajectory.append((level_factor, 0, loss, comps["L_g"], comps["L_l"],
                       comps["L_s"], comps["L_e"]))
    gmax = max((float(np.abs(g).max()) for g in grads), default=0.0)
    if gmax == 0.0:
        return log_scales
    step = opts.initial_step / gmax

    for it in range(1, opts.iterations + 1):
        accepted = False
        for _ in range(opts.max_backtracks):
            trial = clamp([s - step * g for s, g in zip(log_scales, grads)])
            trial_loss, trial_comps = _total_loss(trial, problem)
            if trial_loss <= loss:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break  # no improving step left at this level
        if trial_loss > loss:
            raise FusionError(
                f"diverging at level {level_factor}, iteration {it}",
                trajectory)
        log_scales = trial
        loss = trial_loss
        trajectory.append((level_factor, it, loss, trial_comps["L_g"],
                           trial_comps["L_l"], trial_comps["L_s"],
                           trial_comps["L_e"]))
        _, _, grads = total_loss_and_gradient(log_scales, problem)
        gmax = max((float(np.abs(g).max()) for g in grads), default=0.0)
        if gmax == 0.0:
            break
        step *= opts.step_growth
    return log_scales
