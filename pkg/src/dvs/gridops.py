"""Small grid utilities shared by the warping, flow, and fusion code."""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def pixel_grid(width: int, height: int) -> np.ndarray:
    """(H, W, 2) array of pixel-center coordinates, uv[v, u] = (u, v)."""
    u, v = np.meshgrid(np.arange(width, dtype=np.float64),
                       np.arange(height, dtype=np.float64))
    return np.stack([u, v], axis=-1)


def bilinear_weights(u: np.ndarray, v: np.ndarray, width: int, height: int):
    """Footprint of continuous coordinates on the four surrounding pixels.

    Returns (idx4, w4, inbounds): flat indices (..., 4) into an (H, W) grid,
    matching weights, and a mask of coordinates whose full footprint lies
    inside the grid. Out-of-bounds entries get index 0 and weight 0.
    """
    if width < 2 or height < 2:
        raise ValueError("bilinear footprints need at least a 2x2 grid")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    # snap float-noise-level offsets so exact landings keep full footprints
    u = np.where(np.abs(u - np.rint(u)) < 1e-9, np.rint(u), u)
    v = np.where(np.abs(v - np.rint(v)) < 1e-9, np.rint(v), v)
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = u - u0
    fv = v - v0
    inbounds = (u0 >= 0) & (v0 >= 0) & (u0 + 1 <= width - 1) & (v0 + 1 <= height - 1)
    # exact hit on the last row/col has an empty fractional part; keep it
    edge_u = (u0 == width - 1) & (fu == 0) & (v0 >= 0) & (v0 <= height - 1)
    edge_v = (v0 == height - 1) & (fv == 0) & (u0 >= 0) & (u0 <= width - 1)
    u0 = np.where(edge_u, u0 - 1, u0)
    fu = np.where(edge_u, 1.0, fu)
    v0 = np.where(edge_v, v0 - 1, v0)
    fv = np.where(edge_v, 1.0, fv)
    inbounds = inbounds | (edge_u & (v0 >= 0) & (v0 + 1 <= height - 1)) \
        | (edge_v & (u0 >= 0) & (u0 + 1 <= width - 1)) | (edge_u & edge_v)
    u0c = np.clip(u0, 0, width - 2).astype(np.intp)
    v0c = np.clip(v0, 0, height - 2).astype(np.intp)
    base = v0c * width + u0c
    idx4 = np.stack([base, base + 1, base + width, base + width + 1], axis=-1)
    w4 = np.stack([(1 - fu) * (1 - fv), fu * (1 - fv),
                   (1 - fu) * fv, fu * fv], axis=-1)
    w4 = np.where(inbounds[..., None], w4, 0.0)
    return idx4, w4, inbounds


def bilinear_sample(grid: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Sample a (H, W) or (H, W, C) grid at continuous coordinates.

    Returns (values, inbounds). Out-of-bounds samples are zero.
    """
    h, w = grid.shape[:2]
    idx4, w4, inbounds = bilinear_weights(u, v, w, h)
    flat = grid.reshape(h * w, -1)
    vals = np.einsum("...k,...kc->...c", w4, flat[idx4])
    if grid.ndim == 2:
        vals = vals[..., 0]
    return vals, inbounds


def box_downsample(grid: np.ndarray, factor: int) -> np.ndarray:
    """Average over factor x factor blocks; trailing channel axes allowed."""
    h, w = grid.shape[:2]
    if h % factor or w % factor:
        raise ValueError("grid size must be divisible by the downsample factor")
    shaped = grid.reshape((h // factor, factor, w // factor, factor) + grid.shape[2:])
    return shaped.mean(axis=(1, 3))


def masked_box_downsample(grid: np.ndarray, valid: np.ndarray, factor: int):
    """Block average over valid samples only; blocks with none stay invalid."""
    num = box_downsample(np.where(valid, grid, 0.0), factor)
    den = box_downsample(valid.astype(np.float64), factor)
    out_valid = den > 0
    out = np.where(out_valid, num / np.where(out_valid, den, 1.0), 0.0)
    return out, out_valid


def bilinear_upsample(grid: np.ndarray, factor: int) -> np.ndarray:
    """Upsample by an integer factor under the pixel-center convention."""
    h, w = grid.shape
    shift = (factor - 1) / 2.0
    vv, uu = np.meshgrid(np.arange(h * factor), np.arange(w * factor),
                         indexing="ij")
    coords = np.stack([(vv - shift) / factor, (uu - shift) / factor])
    return ndimage.map_coordinates(grid, coords, order=1, mode="nearest")


def dilate_mask(mask: np.ndarray, radius_px: float) -> np.ndarray:
    """Euclidean dilation: true within radius_px of any true pixel."""
    if radius_px <= 0 or not mask.any():
        return mask.copy()
    dist = ndimage.distance_transform_edt(~mask)
    return dist <= radius_px
