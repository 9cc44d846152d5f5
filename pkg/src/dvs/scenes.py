"""Procedural dynamic scenes with exact ground truth.

Scenes are built from textured infinite planes (background) and moving
textured billboards (foreground). Every quantity the pipeline consumes
(image, depth, mask, flow, camera) has a closed form, so these scenes act
as the oracle for the quantitative tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraView, DepthConvention, DepthMap
from .gridops import dilate_mask, pixel_grid
from .image import Image

_EPS = 1e-12


@dataclass(frozen=True)
class TextureParams:
    """Band-limited analytic value noise: a sum of random cosine gratings.

    Frequencies are in cycles per texture unit. The total amplitude is
    bounded by ``contrast`` so channel values stay inside [0, 1].
    """

    seed: int
    components: int = 10
    freq_min: float = 0.3
    freq_max: float = 2.0
    contrast: float = 0.4

    def sample_rgb(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """RGB texture at continuous coordinates; shape a + (3,)."""
        out = np.empty(a.shape + (3,))
        for c in range(3):
            out[..., c] = 0.5 + self._field(a, b, salt=c)
        return out

    def sample_scalar(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Scalar noise in [-contrast, contrast]."""
        return self._field(a, b, salt=7)

    def _field(self, a, b, salt):
        rng = np.random.default_rng([self.seed, salt])
        n = self.components
        mag = rng.uniform(self.freq_min, self.freq_max, n)
        ang = rng.uniform(0.0, 2 * np.pi, n)
        phase = rng.uniform(0.0, 2 * np.pi, n)
        amp = rng.uniform(0.5, 1.0, n)
        amp *= self.contrast / amp.sum()
        fx = mag * np.cos(ang)
        fy = mag * np.sin(ang)
        acc = np.zeros_like(np.asarray(a, dtype=np.float64))
        for i in range(n):
            acc += amp[i] * np.cos(2 * np.pi * (fx[i] * a + fy[i] * b) + phase[i])
        return acc


@dataclass(frozen=True)
class Plane:
    """Infinite (or bounded) textured background plane."""

    point: np.ndarray  # (3,) a point on the plane
    normal: np.ndarray  # (3,) unit normal
    texture: TextureParams
    extent: tuple[float, float] | None = None  # half sizes along e1/e2

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))
        n = np.asarray(self.normal, dtype=np.float64)
        object.__setattr__(self, "normal", n / np.linalg.norm(n))

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.normal
        ref = np.array([0.0, 1.0, 0.0])
        if abs(n @ ref) > 0.9:
            ref = np.array([1.0, 0.0, 0.0])
        e1 = np.cross(ref, n)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        return e1, e2


@dataclass(frozen=True)
class Billboard:
    """Textured rectangle with rigid per-frame world translation."""

    center: np.ndarray  # (3,) position at t = 0
    u_axis: np.ndarray  # (3,) unit in-plane axis
    v_axis: np.ndarray  # (3,) unit in-plane axis, orthogonal to u_axis
    half_extent: tuple[float, float]
    velocity: np.ndarray  # (3,) world translation per frame
    texture: TextureParams

    def __post_init__(self):
        for name in ("center", "u_axis", "v_axis", "velocity"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=np.float64))
        if abs(self.u_axis @ self.v_axis) > 1e-9:
            raise ValueError("billboard axes must be orthogonal")

    def center_at(self, t: int) -> np.ndarray:
        return self.center + float(t) * self.velocity

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.u_axis, self.v_axis)


@dataclass
class SceneSpec:
    """Full description of a synthetic capture."""

    background: list[Plane]
    foreground: list[Billboard]
    camera_path: list[CameraView]
    image_size: tuple[int, int]  # (width, height)
    frame_count: int
    rng_seed: int

    def __post_init__(self):
        if self.frame_count != len(self.camera_path):
            raise ValueError("frame_count must equal the camera path length")
        if self.frame_count < 1:
            raise ValueError("frame_count must be positive")


@dataclass
class SceneInstant:
    """Exact render of one instant: image, complete depth, mask, camera.

    ``surface_index`` records which surface each pixel sees (background
    planes first, then billboards) and drives analytic flow synthesis.
    """

    gt_image: Image
    gt_depth: DepthMap
    gt_mask: np.ndarray
    cam: CameraView
    surface_index: np.ndarray
    time_index: int


def surface_motion(spec: SceneSpec, surface: int, t_src: int, t_dst: int) -> np.ndarray:
    """World displacement of a surface between two instants."""
    nb = len(spec.background)
    if surface < nb:
        return np.zeros(3)
    board = spec.foreground[surface - nb]
    return board.center_at(t_dst) - board.center_at(t_src)


def render_gt(spec: SceneSpec, t: int, cam: CameraView | None = None) -> SceneInstant:
    """Ray-cast the scene at instant t, nearest surface wins.

    Args:
        spec: scene description.
        t: time index, < spec.frame_count.
        cam: camera to render from; defaults to the capture path at t.

    Raises:
        ValueError: if t is out of range or some ray hits no surface
            (camera inside or facing away from the geometry).
    """
    if not 0 <= t < spec.frame_count:
        raise ValueError(f"time index {t} outside 0..{spec.frame_count - 1}")
    if cam is None:
        cam = spec.camera_path[t]
    w, h = cam.width, cam.height
    uv = pixel_grid(w, h)
    dirs = cam.rays(uv)  # (H, W, 3); z component is 1, so ray t equals depth

    depth = np.full((h, w), np.inf)
    surf = np.full((h, w), -1, dtype=np.int32)
    colors: list[np.ndarray] = []

    surfaces: list[tuple[np.ndarray, np.ndarray]] = []
    for plane in spec.background:
        e1, e2 = plane.axes()
        hit = _ray_plane(cam.center, dirs, plane.point, plane.normal)
        safe = np.where(np.isfinite(hit), hit, 0.0)
        rel = cam.center + safe[..., None] * dirs - plane.point
        a, b = rel @ e1, rel @ e2
        if plane.extent is not None:
            inside = (np.abs(a) <= plane.extent[0]) & (np.abs(b) <= plane.extent[1])
            hit = np.where(inside, hit, np.inf)
        surfaces.append((hit, plane.texture.sample_rgb(a, b)))
    for board in spec.foreground:
        c_t = board.center_at(t)
        hit = _ray_plane(cam.center, dirs, c_t, board.normal)
        safe = np.where(np.isfinite(hit), hit, 0.0)
        rel = cam.center + safe[..., None] * dirs - c_t
        a, b = rel @ board.u_axis, rel @ board.v_axis
        inside = (np.abs(a) <= board.half_extent[0]) & (np.abs(b) <= board.half_extent[1])
        hit = np.where(inside, hit, np.inf)
        surfaces.append((hit, board.texture.sample_rgb(a, b)))

    for idx, (hit, rgb) in enumerate(surfaces):
        nearer = hit < depth
        depth = np.where(nearer, hit, depth)
        surf = np.where(nearer, idx, surf)
        colors.append(rgb)

    if not np.isfinite(depth).all():
        raise ValueError("scene does not cover the full view (camera inside "
                         "or facing away from the geometry)")

    rgb = np.zeros((h, w, 3))
    for idx, c in enumerate(colors):
        rgb = np.where((surf == idx)[..., None], c, rgb)
    mask = surf >= len(spec.background)

    return SceneInstant(
        gt_image=Image(np.clip(rgb, 0.0, 1.0), np.ones((h, w), dtype=bool)),
        gt_depth=DepthMap(depth, np.ones((h, w), dtype=bool),
                          DepthConvention.METRIC, time_index=t),
        gt_mask=mask,
        cam=cam,
        surface_index=surf,
        time_index=t,
    )


def _ray_plane(origin, dirs, point, normal):
    denom = dirs @ normal
    num = (point - origin) @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(denom) > _EPS, num / denom, np.inf)
    return np.where(t > _EPS, t, np.inf)


def degrade_to_dmv(gt: SceneInstant, hole_dilation_px: int, noise_frac: float,
                   seed: int) -> DepthMap:
    """Multi-view-stereo-like degradation of ground-truth depth.

    Invalidates everything within hole_dilation_px of the foreground mask
    and adds zero-mean Gaussian noise with sigma = noise_frac * std of the
    ground-truth depth.
    """
    if hole_dilation_px < 0 or noise_frac < 0:
        raise ValueError("degradation parameters must be non-negative")
    values = gt.gt_depth.values.copy()
    valid = ~dilate_mask(gt.gt_mask, hole_dilation_px)
    if noise_frac > 0:
        sigma = noise_frac * values.std()
        rng = np.random.default_rng(seed)
        values = values + rng.normal(0.0, sigma, values.shape)
    values = np.maximum(values, 1e-9)
    return DepthMap(values, valid, DepthConvention.METRIC,
                    time_index=gt.time_index)


def degrade_to_dsv(gt: SceneInstant, affine: tuple[float, float],
                   warp_amp: float, seed: int,
                   warp_freq: tuple[float, float] = (0.3, 0.8)) -> DepthMap:
    """Single-view-prediction-like degradation: complete but view-variant.

    In inverse-depth space applies q' = a q + b, multiplies by a smooth
    low-frequency field exp(warp_amp * eta(u, v)) and min-max normalizes.
    warp_freq bounds the field's spatial frequency in cycles per image.
    """
    a, b = affine
    if a <= 0:
        raise ValueError("affine scale must be positive")
    q = a / gt.gt_depth.values + b
    if warp_amp != 0.0:
        h, w = q.shape
        uv = pixel_grid(w, h)
        noise = TextureParams(seed=seed, components=6, freq_min=warp_freq[0],
                              freq_max=warp_freq[1], contrast=1.0)
        eta = noise.sample_scalar(uv[..., 0] / w, uv[..., 1] / h)
        q = q * np.exp(warp_amp * eta)
    lo, hi = q.min(), q.max()
    norm = (q - lo) / (hi - lo) if hi - lo > 1e-12 else np.full_like(q, 0.5)
    return DepthMap(norm, np.ones_like(norm, dtype=bool),
                    DepthConvention.NORMALIZED_INVERSE, time_index=gt.time_index)


def default_scene(seed: int = 0, frames: int = 5, size: int = 128,
                  cam_step: float = 0.05, board_step: float = 0.02) -> SceneSpec:
    """The desk-scale acceptance scene.

    A slanted background plane spanning roughly 2.2 to 3.0 depth units, one
    slightly slanted billboard near depth 1, camera translating along x.
    """
    f = 100.0 * size / 128.0
    c = (size - 1) / 2.0
    K = np.array([[f, 0.0, c], [0.0, f, c], [0.0, 0.0, 1.0]])
    cams = [
        CameraView(view_id=t, time_index=t, intrinsics=K, rotation=np.eye(3),
                   center=np.array([cam_step * t, 0.0, 0.0]),
                   width=size, height=size)
        for t in range(frames)
    ]
    # the background's depth range brackets the billboard's, so fitting
    # DSV to DMV interpolates at foreground inverse depths instead of
    # extrapolating beyond the static support
    slant = np.deg2rad(30.0)
    board = Billboard(
        center=np.array([0.0, 0.0, 1.9]),
        u_axis=np.array([np.cos(slant), 0.0, np.sin(slant)]),
        v_axis=np.array([0.0, 1.0, 0.0]),
        half_extent=(0.26, 0.32),
        velocity=np.array([board_step, 0.0, 0.0]),
        texture=TextureParams(seed=seed * 1000 + 2, contrast=0.45),
    )
    plane = Plane(
        point=np.array([0.0, 0.0, 2.3]),
        normal=np.array([0.0, 0.55, -1.0]),
        texture=TextureParams(seed=seed * 1000 + 1),
    )
    return SceneSpec(background=[plane], foreground=[board], camera_path=cams,
                     image_size=(size, size), frame_count=frames, rng_seed=seed)


def static_scene(seed: int = 0, frames: int = 3, size: int = 64,
                 cam_step: float = 0.05, plane_depth: float = 2.0,
                 slanted: bool = False) -> SceneSpec:
    """Billboard-free scene used by the static-consistency oracles."""
    f = 100.0 * size / 128.0
    c = (size - 1) / 2.0
    K = np.array([[f, 0.0, c], [0.0, f, c], [0.0, 0.0, 1.0]])
    cams = [
        CameraView(view_id=t, time_index=t, intrinsics=K, rotation=np.eye(3),
                   center=np.array([cam_step * t, 0.0, 0.0]),
                   width=size, height=size)
        for t in range(frames)
    ]
    normal = np.array([0.0, 0.25, -1.0]) if slanted else np.array([0.0, 0.0, -1.0])
    plane = Plane(point=np.array([0.0, 0.0, plane_depth]), normal=normal,
                  texture=TextureParams(seed=seed * 1000 + 1))
    return SceneSpec(background=[plane], foreground=[], camera_path=cams,
                     image_size=(size, size), frame_count=frames, rng_seed=seed)


# --- JSON round trip -------------------------------------------------------

def scene_to_dict(spec: SceneSpec) -> dict:
    def tex(t: TextureParams) -> dict:
        return {"seed": t.seed, "components": t.components,
                "freq_min": t.freq_min, "freq_max": t.freq_max,
                "contrast": t.contrast}

    return {
        "image_size": list(spec.image_size),
        "frame_count": spec.frame_count,
        "rng_seed": spec.rng_seed,
        "background": [
            {"point": p.point.tolist(), "normal": p.normal.tolist(),
             "texture": tex(p.texture),
             "extent": list(p.extent) if p.extent else None}
            for p in spec.background
        ],
        "foreground": [
            {"center": b.center.tolist(), "u_axis": b.u_axis.tolist(),
             "v_axis": b.v_axis.tolist(), "half_extent": list(b.half_extent),
             "velocity": b.velocity.tolist(), "texture": tex(b.texture)}
            for b in spec.foreground
        ],
        "cameras": [
            {"view_id": c.view_id, "time_index": c.time_index,
             "K": c.intrinsics.reshape(9).tolist(),
             "R": c.rotation.reshape(9).tolist(), "C": c.center.tolist(),
             "width": c.width, "height": c.height}
            for c in spec.camera_path
        ],
    }


def scene_from_dict(data: dict) -> SceneSpec:
    def tex(d: dict) -> TextureParams:
        return TextureParams(**d)

    background = [
        Plane(point=np.array(p["point"]), normal=np.array(p["normal"]),
              texture=tex(p["texture"]),
              extent=tuple(p["extent"]) if p.get("extent") else None)
        for p in data["background"]
    ]
    foreground = [
        Billboard(center=np.array(b["center"]), u_axis=np.array(b["u_axis"]),
                  v_axis=np.array(b["v_axis"]),
                  half_extent=tuple(b["half_extent"]),
                  velocity=np.array(b["velocity"]), texture=tex(b["texture"]))
        for b in data["foreground"]
    ]
    cameras = [
        CameraView(view_id=c["view_id"], time_index=c["time_index"],
                   intrinsics=np.array(c["K"]).reshape(3, 3),
                   rotation=np.array(c["R"]).reshape(3, 3),
                   center=np.array(c["C"]), width=c["width"], height=c["height"])
        for c in data["cameras"]
    ]
    return SceneSpec(background=background, foreground=foreground,
                     camera_path=cameras,
                     image_size=tuple(data["image_size"]),
                     frame_count=data["frame_count"], rng_seed=data["rng_seed"])
