"""Quantitative evaluation: metric depth RMSE, flow-magnitude view
synthesis error, and PSNR/SSIM."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .flow import estimate_flow
from .geometry import DepthMap
from .image import Image

PSNR_CAP_DB = 99.0


@dataclass
class DepthEvalReport:
    rmse_full: float
    rmse_fg: float
    n_full: int
    n_fg: int
    excluded: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthEvalReport:
    mean_flow_mag: float
    psnr: float
    ssim: float

    def to_dict(self) -> dict:
        return asdict(self)


def depth_rmse(est: DepthMap, gt: DepthMap, mask: np.ndarray,
               baseline_scale: float = 1.0) -> DepthEvalReport:
    """RMSE of estimated depth against ground truth, in metric scale.

    The estimate is multiplied by baseline_scale first. Ground-truth
    validity defines the evaluated set; regions multiview stereo cannot
    reconstruct are excluded that way. Reported over the full frame and
    over the foreground mask.

    Raises:
        ValueError: an evaluated set is empty.
    """
    if baseline_scale <= 0:
        raise ValueError("baseline_scale must be positive")
    if not est.valid.all():
        raise ValueError("estimated depth must be complete")
    mask = np.asarray(mask, dtype=bool)
    err = est.values * baseline_scale - gt.values
    full = gt.valid
    fg = gt.valid & mask
    if not full.any():
        raise ValueError("no ground-truth-valid pixels to evaluate")
    if not fg.any():
        raise ValueError("no ground-truth-valid foreground pixels to evaluate")
    return DepthEvalReport(
        rmse_full=float(np.sqrt(np.mean(err[full] ** 2))),
        rmse_fg=float(np.sqrt(np.mean(err[fg] ** 2))),
        n_full=int(full.sum()),
        n_fg=int(fg.sum()),
        excluded=int((~gt.valid).sum()),
    )


def psnr(a: np.ndarray, b: np.ndarray, cap_db: float = PSNR_CAP_DB) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images."""
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    if mse <= 0.0:
        return cap_db
    return min(cap_db, 10.0 * np.log10(1.0 / mse))


def ssim(a: np.ndarray, b: np.ndarray, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Structural similarity with a Gaussian 11x11 window, unit data range.

    Per-channel SSIM maps are averaged. Matches the standard formulation
    with population (uncorrected) local statistics.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    truncate = 5.0 / sigma  # 11-tap kernel for sigma 1.5
    vals = []
    for ch in range(a.shape[2]):
        x = a[..., ch]
        y = b[..., ch]
        mu_x = gaussian_filter(x, sigma, truncate=truncate)
        mu_y = gaussian_filter(y, sigma, truncate=truncate)
        xx = gaussian_filter(x * x, sigma, truncate=truncate) - mu_x ** 2
        yy = gaussian_filter(y * y, sigma, truncate=truncate) - mu_y ** 2
        xy = gaussian_filter(x * y, sigma, truncate=truncate) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def synth_eval(synth: Image, gt: Image, flow_levels: int = 3) -> SynthEvalReport:
    """Flow-magnitude, PSNR, and SSIM of a synthesized view against GT.

    The flow magnitude is the mean displacement the block matcher finds
    from the ground-truth image to the synthesized one; with a perfect
    depth map it is near zero.
    """
    if synth.shape != gt.shape:
        raise ValueError("images must have matching sizes")
    flow = estimate_flow(gt, synth, levels=flow_levels)
    mag = np.hypot(flow.du, flow.dv)
    mean_mag = float(mag[flow.valid].mean()) if flow.valid.any() else 0.0
    return SynthEvalReport(
        mean_flow_mag=mean_mag,
        psnr=psnr(synth.rgb, gt.rgb),
        ssim=ssim(synth.rgb, gt.rgb),
    )
