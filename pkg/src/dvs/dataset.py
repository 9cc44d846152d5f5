"""Dataset directory trees: write a synthetic capture with its degraded
inputs and ground truth, and load it back as a ViewSet for fusion.

Layout:

    cameras.json
    scene_spec.json           (synthetic scenes only; enables GT evaluation)
    manifest.json             checksums and generation parameters
    frame_%04d/image.png
    frame_%04d/gt_depth.pfm
    frame_%04d/dsv.pfm
    frame_%04d/dmv.pfm
    frame_%04d/dmv_valid.png
    frame_%04d/mask.png
    flows/{fwd,bwd}_%d_%d.flo with *_valid.png sidecars
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import fileio
from .config import DegradationParams
from .flow import FlowField, fb_consistency_filter, gt_flow_from_geometry
from .fusion import FusionFrame, FusionWeights, ViewSet, neighbor_pairs
from .geometry import DepthConvention, DepthMap
from .scenes import (SceneSpec, degrade_to_dmv, degrade_to_dsv, render_gt,
                     scene_from_dict, scene_to_dict)

logger = logging.getLogger(__name__)

FRAME_FILES = ("image.png", "gt_depth.pfm", "dsv.pfm", "dmv.pfm",
               "dmv_valid.png", "mask.png")


def frame_dir(root, t: int) -> Path:
    return Path(root) / f"frame_{t:04d}"


def write_dataset(spec: SceneSpec, out_dir, degradation: DegradationParams,
                  neighbor_views: int = 2, seed: int = 0) -> dict:
    """Render, degrade, and write a full dataset tree; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "flows").mkdir(exist_ok=True)

    cams = []
    for t in range(spec.frame_count):
        inst = render_gt(spec, t)
        cams.append(inst.cam)
        dmv = degrade_to_dmv(inst, degradation.hole_dilation_px,
                             degradation.dmv_noise_frac, seed=seed * 1000 + t)
        dsv = degrade_to_dsv(inst, degradation.dsv_affine,
                             degradation.dsv_warp_amp,
                             seed=seed * 1000 + 500 + t,
                             warp_freq=degradation.dsv_warp_freq)
        d = frame_dir(out, t)
        d.mkdir(exist_ok=True)
        fileio.write_image_png(d / "image.png", inst.gt_image)
        fileio.write_pfm(d / "gt_depth.pfm", inst.gt_depth.values)
        fileio.write_pfm(d / "dsv.pfm", dsv.values)
        fileio.write_pfm(d / "dmv.pfm", dmv.values)
        fileio.write_mask_png(d / "dmv_valid.png", dmv.valid)
        fileio.write_mask_png(d / "mask.png", inst.gt_mask)

    for (r, n) in neighbor_pairs(spec.frame_count, neighbor_views):
        fwd = gt_flow_from_geometry(spec, r, n)
        bwd = gt_flow_from_geometry(spec, n, r)
        for tag, flow in (("fwd", fwd), ("bwd", bwd)):
            fileio.write_flo(out / "flows" / f"{tag}_{r}_{n}.flo",
                             flow.du, flow.dv)
            fileio.write_mask_png(out / "flows" / f"{tag}_{r}_{n}_valid.png",
                                  flow.valid)

    fileio.save_cameras_json(out / "cameras.json", cams)
    (out / "scene_spec.json").write_text(
        json.dumps(scene_to_dict(spec), indent=2) + "\n")

    manifest = {
        "frame_count": spec.frame_count,
        "neighbor_views": neighbor_views,
        "seed": seed,
        "degradation": {
            "hole_dilation_px": degradation.hole_dilation_px,
            "dmv_noise_frac": degradation.dmv_noise_frac,
            "dsv_affine": list(degradation.dsv_affine),
            "dsv_warp_amp": degradation.dsv_warp_amp,
            "dsv_warp_freq": list(degradation.dsv_warp_freq),
        },
        "files": fileio.tree_checksums(out),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def missing_files(dataset_dir, neighbor_views: int | None = None) -> list[str]:
    """Everything a complete dataset must contain but this one lacks."""
    root = Path(dataset_dir)
    missing = []
    for name in ("cameras.json", "manifest.json"):
        if not (root / name).exists():
            missing.append(name)
    if missing:
        return missing
    manifest = json.loads((root / "manifest.json").read_text())
    n = manifest["frame_count"]
    nv = neighbor_views if neighbor_views is not None \
        else manifest.get("neighbor_views", 2)
    for t in range(n):
        for name in FRAME_FILES:
            p = frame_dir(root, t) / name
            if not p.exists():
                missing.append(str(p.relative_to(root)))
    for (r, m) in neighbor_pairs(n, nv):
        for tag in ("fwd", "bwd"):
            for suffix in (f"{tag}_{r}_{m}.flo", f"{tag}_{r}_{m}_valid.png"):
                if not (root / "flows" / suffix).exists():
                    missing.append(f"flows/{suffix}")
    return missing


def load_scene(dataset_dir) -> SceneSpec | None:
    p = Path(dataset_dir) / "scene_spec.json"
    if not p.exists():
        return None
    return scene_from_dict(json.loads(p.read_text()))


def load_viewset(dataset_dir, weights: FusionWeights | None = None,
                 flow_tau_px: float = 1.0) -> ViewSet:
    """Read a dataset tree into a ViewSet, forward-backward filtering the
    flow pairs the fusion weights require."""
    weights = weights or FusionWeights()
    root = Path(dataset_dir)
    missing = missing_files(root, weights.neighbor_views)
    if missing:
        raise FileNotFoundError(
            f"dataset {root} is incomplete; missing: " + ", ".join(missing))
    cams = fileio.load_cameras_json(root / "cameras.json")

    frames = []
    for t, cam in enumerate(cams):
        d = frame_dir(root, t)
        image = fileio.read_image_png(d / "image.png")
        dsv = DepthMap(fileio.read_pfm(d / "dsv.pfm"),
                       np.ones((cam.height, cam.width), bool),
                       DepthConvention.NORMALIZED_INVERSE, time_index=t)
        dmv_valid = fileio.read_mask_png(d / "dmv_valid.png")
        dmv = DepthMap(np.maximum(fileio.read_pfm(d / "dmv.pfm"), 1e-9),
                       dmv_valid, DepthConvention.METRIC, time_index=t)
        mask = fileio.read_mask_png(d / "mask.png")
        frames.append(FusionFrame(image=image, dsv=dsv, dmv=dmv,
                                  fg_mask=mask, cam=cam))

    flows = {}
    for (r, n) in neighbor_pairs(len(cams), weights.neighbor_views):
        fwd = _read_flow(root, "fwd", r, n, src=r, dst=n)
        bwd = _read_flow(root, "bwd", r, n, src=n, dst=r)
        flows[(r, n)] = fb_consistency_filter(fwd, bwd, flow_tau_px)
    return ViewSet(frames=frames, flows=flows)


def _read_flow(root, tag, r, n, src, dst) -> FlowField:
    du, dv = fileio.read_flo(root / "flows" / f"{tag}_{r}_{n}.flo")
    valid = fileio.read_mask_png(root / "flows" / f"{tag}_{r}_{n}_valid.png")
    return FlowField(du, dv, valid, src_view=src, dst_view=dst)


def load_gt_depths(dataset_dir) -> list[DepthMap]:
    root = Path(dataset_dir)
    cams = fileio.load_cameras_json(root / "cameras.json")
    return [
        DepthMap(fileio.read_pfm(frame_dir(root, t) / "gt_depth.pfm"),
                 np.ones((c.height, c.width), bool), DepthConvention.METRIC,
                 time_index=t)
        for t, c in enumerate(cams)
    ]


def load_fused_depths(fused_dir, frame_count: int) -> list[DepthMap]:
    root = Path(fused_dir)
    missing = [f"depth_{t:04d}.pfm" for t in range(frame_count)
               if not (root / f"depth_{t:04d}.pfm").exists()]
    if missing:
        raise FileNotFoundError(
            f"fused depths incomplete in {root}; missing: " + ", ".join(missing))
    out = []
    for t in range(frame_count):
        values = np.maximum(fileio.read_pfm(root / f"depth_{t:04d}.pfm"), 1e-9)
        out.append(DepthMap(values, np.ones(values.shape, bool),
                            DepthConvention.METRIC, time_index=t))
    return out
