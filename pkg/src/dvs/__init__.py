"""Depth fusion and novel view synthesis for dynamic scenes captured by a
moving monocular camera."""

from .geometry import (CameraView, DepthConvention, DepthMap, backproject,
                       project, warp_dynamic, warp_static)
from .flow import FlowField, estimate_flow, fb_consistency_filter, gt_flow_from_geometry
from .fusion import (FusionFrame, FusionResult, FusionWeights,
                     OptimizerOptions, ViewSet, fuse, metricize_dsv,
                     relative_gradient)
from .image import Image
from .metrics import depth_rmse, synth_eval
from .scenes import (Billboard, Plane, SceneSpec, default_scene,
                     degrade_to_dmv, degrade_to_dsv, render_gt)
from .synthesis import (SynthParams, SynthesisResult, bidir_check, bwm_filter,
                        blend_and_inpaint, composite_background,
                        splat_forward, synthesize)

__version__ = "0.1.0"

__all__ = [
    "CameraView", "DepthConvention", "DepthMap", "backproject", "project",
    "warp_dynamic", "warp_static",
    "FlowField", "estimate_flow", "fb_consistency_filter",
    "gt_flow_from_geometry",
    "FusionFrame", "FusionResult", "FusionWeights", "OptimizerOptions",
    "ViewSet", "fuse", "metricize_dsv", "relative_gradient",
    "Image",
    "depth_rmse", "synth_eval",
    "Billboard", "Plane", "SceneSpec", "default_scene", "degrade_to_dmv",
    "degrade_to_dsv", "render_gt",
    "SynthParams", "SynthesisResult", "bidir_check", "bwm_filter",
    "blend_and_inpaint", "composite_background", "splat_forward",
    "synthesize",
]
