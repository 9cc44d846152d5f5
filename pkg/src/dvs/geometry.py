"""Pinhole camera algebra: projection, backprojection, and depth-based warps.

Conventions used throughout the package:

* Pixel coordinates are continuous, with integer coordinates on pixel
  centers. The homogeneous lift of (u, v) is (u, v, 1).
* Depth is the z coordinate in the camera frame, positive in front.
* Grids are numpy arrays indexed [row, col] = [v, u] with shape (H, W).
* All internal computation is float64; file I/O narrows to float32.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

ORTHONORMAL_TOL = 1e-9


class DepthConvention(enum.Enum):
    """How the values of a depth grid are to be interpreted."""

    METRIC = "metric"
    NORMALIZED_INVERSE = "normalized_inverse"


@dataclass(frozen=True)
class CameraView:
    """A calibrated pinhole camera at a capture instant.

    The projection matrix is always derived as K R [I | -C], never stored,
    so intrinsics and pose cannot fall out of sync.
    """

    view_id: int
    time_index: int
    intrinsics: np.ndarray  # (3, 3) K, pixels
    rotation: np.ndarray  # (3, 3) world -> camera
    center: np.ndarray  # (3,) optical center, world units
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        R = np.asarray(self.rotation, dtype=np.float64)
        C = np.asarray(self.center, dtype=np.float64).reshape(3)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "center", C)
        if K.shape != (3, 3) or R.shape != (3, 3):
            raise ValueError("intrinsics and rotation must be 3x3")
        validate_rotation(R, tol=ORTHONORMAL_TOL)
        if not np.allclose(K, np.triu(K)):
            raise ValueError("intrinsics must be upper-triangular")
        if K[0, 0] <= 0 or K[1, 1] <= 0 or K[2, 2] <= 0:
            raise ValueError("intrinsics must have positive diagonal")

    @property
    def projection(self) -> np.ndarray:
        """3x4 projection matrix K R [I | -C]."""
        Rt = np.hstack([self.rotation, -self.rotation @ self.center[:, None]])
        return self.intrinsics @ Rt

    def rays(self, uv: np.ndarray) -> np.ndarray:
        """World-space ray directions R^T K^-1 (u, v, 1) for pixels uv (..., 2)."""
        uv = np.asarray(uv, dtype=np.float64)
        ones = np.ones(uv.shape[:-1] + (1,))
        xh = np.concatenate([uv, ones], axis=-1)
        Kinv = np.linalg.inv(self.intrinsics)
        return xh @ (self.rotation.T @ Kinv).T


def validate_rotation(R: np.ndarray, tol: float = 1e-6) -> None:
    """Raise if R is not a proper rotation within tol."""
    if not np.allclose(R @ R.T, np.eye(3), atol=tol):
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("rotation must have determinant +1")


@dataclass
class DepthMap:
    """Dense per-pixel depth with a validity mask and a convention tag.

    ``time_index`` marks depth that only describes the scene at one capture
    instant; warps of dynamic content refuse depth from the wrong instant.
    """

    values: np.ndarray  # (H, W) float64
    valid: np.ndarray  # (H, W) bool
    convention: DepthConvention
    time_index: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.valid is None:
            self.valid = np.ones(self.values.shape, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.valid.shape:
            raise ValueError("values and valid must be matching 2D grids")
        vals = self.values[self.valid]
        if self.convention is DepthConvention.METRIC:
            if vals.size and vals.min() <= 0:
                raise ValueError("metric depth must be strictly positive where valid")
        else:
            if vals.size and (vals.min() < 0 or vals.max() > 1):
                raise ValueError("normalized inverse depth must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def copy(self) -> "DepthMap":
        return DepthMap(self.values.copy(), self.valid.copy(), self.convention,
                        self.time_index)


def backproject(uv: np.ndarray, depth: np.ndarray, cam: CameraView) -> np.ndarray:
    """Lift pixels to world points: depth * R^T K^-1 (u, v, 1) + C.

    Args:
        uv: pixel coordinates, shape (..., 2).
        depth: metric depth per pixel, shape (...). Must be positive.
        cam: camera the pixels live in.

    Returns:
        World points, shape (..., 3).
    """
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("backproject requires strictly positive depth")
    return depth[..., None] * cam.rays(uv) + cam.center


def project(p: np.ndarray, cam: CameraView) -> tuple[np.ndarray, np.ndarray]:
    """Project world points into a camera.

    Behind-camera points are reported through the sign of the returned
    depth rather than an exception, so dense warps stay branch-light.

    Args:
        p: world points, shape (..., 3).
        cam: target camera.

    Returns:
        (uv, depth): pixel coordinates (..., 2) and camera-frame z (...).
    """
    p = np.asarray(p, dtype=np.float64)
    pc = (p - cam.center) @ cam.rotation.T
    z = pc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xh = pc @ cam.intrinsics.T
        uv = xh[..., :2] / xh[..., 2:3]
    return uv, z


def warp_static(uv: np.ndarray, depth: np.ndarray | DepthMap,
                cam_src: CameraView, cam_dst: CameraView,
                ) -> tuple[np.ndarray, np.ndarray]:
    """Warp pixels of a static surface from cam_src into cam_dst.

    Args:
        uv: source pixel coordinates (..., 2).
        depth: metric source depth, either a grid sampled by the caller
            (array broadcastable to uv[..., 0]) or a DepthMap whose values
            are indexed at integer uv.
        cam_src: source camera.
        cam_dst: destination camera.

    Returns:
        (uv_dst, depth_dst): warped coordinates and destination-frame z.
        Non-positive depth_dst flags behind-camera results.
    """
    depth_values = _depth_at(uv, depth, require_metric=True)
    p = backproject(uv, depth_values, cam_src)
    return project(p, cam_dst)


def warp_dynamic(uv: np.ndarray, depth_t: DepthMap,
                 cam_src: CameraView, cam_dst: CameraView,
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Warp pixels of time-varying content; math identical to warp_static.

    The depth must carry the time index of cam_src: mixing a depth of one
    instant with the camera of another is an API error, not a number.
    """
    if depth_t.time_index is None:
        raise ValueError("warp_dynamic requires a time-indexed depth map")
    if depth_t.time_index != cam_src.time_index:
        raise ValueError(
            f"depth is for time {depth_t.time_index} but source camera "
            f"captures time {cam_src.time_index}")
    return warp_static(uv, depth_t, cam_src, cam_dst)


def _depth_at(uv, depth, require_metric=False):
    if isinstance(depth, DepthMap):
        if require_metric and depth.convention is not DepthConvention.METRIC:
            raise ValueError("warp requires metric depth")
        uv = np.asarray(uv)
        ui = np.rint(uv[..., 0]).astype(int)
        vi = np.rint(uv[..., 1]).astype(int)
        if np.any(~depth.valid[vi, ui]):
            raise ValueError("warp requested at invalid depth pixels")
        return depth.values[vi, ui]
    return np.asarray(depth, dtype=np.float64)


def scaled_camera(cam: CameraView, factor: int) -> CameraView:
    """Camera for a grid downsampled by an integer factor.

    Follows the pixel-center convention: full-resolution coordinate
    u = factor * u' + (factor - 1) / 2 for coarse coordinate u'.
    """
    if cam.width % factor or cam.height % factor:
        raise ValueError("image size must be divisible by the pyramid factor")
    shift = (factor - 1) / 2.0
    A = np.array([[1.0 / factor, 0.0, -shift / factor],
                  [0.0, 1.0 / factor, -shift / factor],
                  [0.0, 0.0, 1.0]])
    return replace(cam, intrinsics=A @ cam.intrinsics,
                   width=cam.width // factor, height=cam.height // factor)


def interpolate_cameras(cam_a: CameraView, cam_b: CameraView, alpha: float,
                        view_id: int, time_index: int = -1) -> CameraView:
    """Camera on the segment between two views: lerp center, slerp rotation."""
    from scipy.spatial.transform import Rotation, Slerp

    times = [0.0, 1.0]
    rots = Rotation.from_matrix(np.stack([cam_a.rotation, cam_b.rotation]))
    R = Slerp(times, rots)(float(alpha)).as_matrix()
    # slerp of nearly identical rotations can drift at the 1e-12 level;
    # re-orthonormalize so CameraView's strict invariant holds
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    C = (1 - alpha) * cam_a.center + alpha * cam_b.center
    return CameraView(view_id=view_id, time_index=time_index,
                      intrinsics=cam_a.intrinsics.copy(), rotation=R,
                      center=C, width=cam_a.width, height=cam_a.height)
