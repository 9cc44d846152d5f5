"""RGB image container with a validity mask (false = hole)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Image:
    """Float RGB in [0, 1] plus per-pixel validity. Hole pixels carry rgb 0."""

    rgb: np.ndarray  # (H, W, 3) float64 in [0, 1]
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if self.valid is None:
            self.valid = np.ones(self.rgb.shape[:2], dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError("rgb must have shape (H, W, 3)")
        if self.valid.shape != self.rgb.shape[:2]:
            raise ValueError("valid mask must match image size")
        np.clip(self.rgb, 0.0, 1.0, out=self.rgb)
        self.rgb[~self.valid] = 0.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.rgb.shape[:2]

    def copy(self) -> "Image":
        return Image(self.rgb.copy(), self.valid.copy())


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def luminance(img: Image) -> np.ndarray:
    """Plain channel mean; adequate for matching and metrics on our data."""
    return img.rgb.mean(axis=2)
