"""File formats: PFM depth grids, Middlebury .flo flow, PNG images, camera JSON.

Grids are float32 on disk and float64 in memory. Every writer is
deterministic byte for byte so output trees can be checksummed.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .geometry import CameraView, validate_rotation
from .image import Image, from_uint8, to_uint8

FLO_MAGIC = 202021.25


def write_pfm(path, grid: np.ndarray) -> None:
    """Write a (H, W) grid as grayscale PFM (little-endian, scale -1.0).

    PFM stores rows bottom to top.
    """
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim != 2:
        raise ValueError("PFM writer expects a 2D grid")
    h, w = grid.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(grid[::-1].tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM into a float64 (H, W) grid."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM file")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        count = w * h
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(count * 4), dtype=dtype, count=count)
    return data.reshape(h, w)[::-1].astype(np.float64)


def write_flo(path, du: np.ndarray, dv: np.ndarray) -> None:
    """Write a flow field in Middlebury .flo layout."""
    du = np.asarray(du, dtype=np.float32)
    dv = np.asarray(dv, dtype=np.float32)
    if du.shape != dv.shape or du.ndim != 2:
        raise ValueError("flow components must be matching 2D grids")
    h, w = du.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        interleaved = np.stack([du, dv], axis=-1)
        f.write(interleaved.astype("<f4").tobytes())


def read_flo(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a .flo file; returns (du, dv) float64 grids."""
    with open(path, "rb") as f:
        magic = struct.unpack("<f", f.read(4))[0]
        if abs(magic - FLO_MAGIC) > 1e-3:
            raise ValueError(f"{path}: bad .flo magic {magic!r}")
        w, h = struct.unpack("<ii", f.read(8))
        data = np.frombuffer(f.read(w * h * 2 * 4), dtype="<f4")
    data = data.reshape(h, w, 2).astype(np.float64)
    return data[..., 0], data[..., 1]


def write_image_png(path, img: Image) -> None:
    """8-bit sRGB PNG, no alpha. Holes are written as black."""
    PILImage.fromarray(to_uint8(img.rgb), mode="RGB").save(path, format="PNG")


def read_image_png(path, valid: np.ndarray | None = None) -> Image:
    raw = np.asarray(PILImage.open(path).convert("RGB"))
    img_valid = np.ones(raw.shape[:2], dtype=bool) if valid is None else valid
    return Image(from_uint8(raw), img_valid)


def write_mask_png(path, mask: np.ndarray) -> None:
    """Boolean mask as 8-bit PNG, 255 = true/valid."""
    PILImage.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(
        path, format="PNG")


def read_mask_png(path) -> np.ndarray:
    raw = np.asarray(PILImage.open(path).convert("L"))
    return raw >= 128


def save_cameras_json(path, cams: list[CameraView]) -> None:
    records = [
        {
            "view_id": int(c.view_id),
            "time_index": int(c.time_index),
            "K": [float(x) for x in c.intrinsics.reshape(9)],
            "R": [float(x) for x in c.rotation.reshape(9)],
            "C": [float(x) for x in c.center],
            "width": int(c.width),
            "height": int(c.height),
        }
        for c in cams
    ]
    Path(path).write_text(json.dumps(records, indent=2) + "\n")


def load_cameras_json(path) -> list[CameraView]:
    """Load a camera set; rejects rotations off-orthonormal beyond 1e-6."""
    records = json.loads(Path(path).read_text())
    cams = []
    for rec in records:
        R = np.array(rec["R"], dtype=np.float64).reshape(3, 3)
        validate_rotation(R, tol=1e-6)
        # snap to the nearest rotation so the stricter CameraView
        # invariant holds for input that only just passed the gate
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
        cams.append(CameraView(
            view_id=int(rec["view_id"]),
            time_index=int(rec["time_index"]),
            intrinsics=np.array(rec["K"], dtype=np.float64).reshape(3, 3),
            rotation=R,
            center=np.array(rec["C"], dtype=np.float64),
            width=int(rec["width"]),
            height=int(rec["height"]),
        ))
    return cams


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def tree_checksums(root) -> dict[str, str]:
    """Relative path -> sha256 for every file under root, sorted."""
    root = Path(root)
    return {
        str(p.relative_to(root)): sha256_file(p)
        for p in sorted(root.rglob("*")) if p.is_file()
    }
