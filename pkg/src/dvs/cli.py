"""Command-line pipeline: generate | fuse | render | eval | pipeline.

Each subcommand validates its whole input manifest before doing any work,
writes deterministic outputs under the configured output directory, and
renders report figures next to the delimited files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fileio
from .config import PipelineConfig, VirtualCamera
from .dataset import (load_fused_depths, load_gt_depths, load_scene,
                      load_viewset, missing_files, write_dataset)
from .fusion import OptimizerOptions, fuse, metricize_dsv
from .geometry import CameraView, interpolate_cameras
from .metrics import depth_rmse, synth_eval
from .scenes import default_scene, render_gt, scene_from_dict
from .synthesis import bwm_filter, synthesize

logger = logging.getLogger("dvs")

EVAL_COLUMNS = ("scene", "method", "frame", "rmse_full", "rmse_fg",
                "flow_mag", "psnr", "ssim")


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DVS_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    config = load_config(args)
    try:
        return args.func(config, args)
    except (ValueError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvs",
        description="Depth fusion and dynamic novel view synthesis")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="pipeline config JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, help="override the output dir")
        p.add_argument("--workers", type=int, default=1,
                       help="worker processes for per-file outputs")

    p = sub.add_parser("generate", help="write the synthetic dataset tree")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fuse", help="fit scale fields and write fused depth")
    common(p)
    p.add_argument("--drop-loss", action="append", default=[],
                   choices=["g", "l", "s", "e"],
                   help="ablation: zero out one loss term (repeatable)")
    p.add_argument("--iterations", type=int,
                   help="override optimizer iterations per level")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("render", help="synthesize the configured novel views")
    common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="evaluate renders and fused depth")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="generate + fuse + render + eval")
    common(p)
    p.add_argument("--drop-loss", action="append", default=[],
                   choices=["g", "l", "s", "e"])
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_pipeline)
    return parser


def load_config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config \
        else PipelineConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.output_dir = str(args.out)
    problems = config.validate()
    if problems:
        raise ValueError("invalid config: " + "; ".join(problems))
    return config


def apply_overrides(config: PipelineConfig, args) -> PipelineConfig:
    weights = config.weights
    for term in getattr(args, "drop_loss", []) or []:
        if term == "g":
            weights = replace(weights, use_global=False)
        else:
            weights = replace(weights, **{f"lambda_{term}": 0.0})
    config.weights = weights
    if getattr(args, "iterations", None) is not None:
        config.optimizer = replace(config.optimizer,
                                   iterations=args.iterations)
    return config


def dataset_dir(config: PipelineConfig) -> Path:
    if config.input_dir:
        return Path(config.input_dir)
    return Path(config.output_dir) / "dataset"


def scene_of(config: PipelineConfig):
    if config.scene is not None:
        return scene_from_dict(config.scene)
    return default_scene(seed=config.seed)


# --- subcommands ------------------------------------------------------------

def cmd_generate(config: PipelineConfig, args) -> int:
    if config.input_dir:
        raise ValueError("generate needs an inline scene, not input_dir")
    spec = scene_of(config)
    out = dataset_dir(config)
    manifest = write_dataset(spec, out, config.degradation,
                             neighbor_views=config.weights.neighbor_views,
                             seed=config.seed)
    print(f"wrote dataset with {manifest['frame_count']} frames to {out}")
    return 0


def cmd_fuse(config: PipelineConfig, args) -> int:
    config = apply_overrides(config, args)
    ds = dataset_dir(config)
    missing = missing_files(ds, config.weights.neighbor_views)
    if missing:
        raise FileNotFoundError(
            f"dataset {ds} incomplete; missing: " + ", ".join(missing))
    viewset = load_viewset(ds, config.weights, config.flow_tau_px)
    result = fuse(viewset, config.weights, config.optimizer)

    fused_dir = Path(config.output_dir) / "fused"
    fused_dir.mkdir(parents=True, exist_ok=True)
    for t, depth in enumerate(result.depths):
        fileio.write_pfm(fused_dir / f"depth_{t:04d}.pfm", depth.values)
    with open(fused_dir / "trajectory.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["level", "iteration", "L", "L_g", "L_l", "L_s", "L_e"])
        for row in result.trajectory:
            writer.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])

    from .plots import save_depth_overview_figure, save_loss_trajectory_figure
    save_loss_trajectory_figure(result.trajectory,
                                fused_dir / "loss_trajectory.png")
    save_depth_overview_figure(viewset.frames[0].dsv.values,
                               viewset.frames[0].dmv,
                               result.depths[0].values,
                               fused_dir / "depth_overview.png")
    final = result.trajectory[-1]
    print(f"fused {len(result.depths)} frames; final loss {final[2]:.6g} "
          f"-> {fused_dir}")
    return 0


def build_virtual_camera(cams: list[CameraView], vc: VirtualCamera,
                         index: int) -> CameraView:
    if not (0 <= vc.view_a < len(cams) and 0 <= vc.view_b < len(cams)):
        raise ValueError(f"virtual camera references missing views "
                         f"{vc.view_a}/{vc.view_b}")
    cam = interpolate_cameras(cams[vc.view_a], cams[vc.view_b], vc.alpha,
                              view_id=1000 + index)
    if any(vc.offset):
        cam = replace(cam, center=cam.center + np.asarray(vc.offset))
    return cam


def render_name(vc: VirtualCamera, t: int) -> str:
    return f"{vc.name()}_t{t:02d}"


_WORKER_CACHE: dict = {}


def _render_state(ds: str, depth_source: str, output_dir: str, synth_kw: dict):
    key = (ds, depth_source, output_dir)
    if key not in _WORKER_CACHE:
        from .synthesis import SynthParams

        viewset = load_viewset(Path(ds))
        params = SynthParams(**synth_kw)
        if depth_source == "fused":
            depths = load_fused_depths(Path(output_dir) / "fused",
                                       len(viewset))
        else:
            depths = [metricize_dsv(f.dsv, f.dmv, f.fg_mask)
                      for f in viewset.frames]
        refined = [bwm_filter(d, f.image, params.bwm_radius,
                              params.bwm_sigma_s, params.bwm_sigma_r)
                   for d, f in zip(depths, viewset.frames)]
        _WORKER_CACHE[key] = (viewset, depths, refined, params)
    return _WORKER_CACHE[key]


def _render_task(task) -> str:
    (ds, depth_source, output_dir, synth_kw, cam_record, t, out_png,
     out_valid) = task
    viewset, depths, refined, params = _render_state(
        ds, depth_source, output_dir, synth_kw)
    cam = _camera_from_record(cam_record)
    try:
        result = synthesize(viewset.frames, depths, cam, t, params,
                            refined_depths=refined)
        image = result.image
        valid = result.pre_inpaint_valid
    except ValueError as exc:
        logger.warning("render %s failed (%s); writing empty frame",
                       out_png, exc)
        h, w = cam.height, cam.width
        from .image import Image
        image = Image(np.zeros((h, w, 3)), np.ones((h, w), bool))
        valid = np.zeros((h, w), bool)
    fileio.write_image_png(out_png, image)
    fileio.write_mask_png(out_valid, valid)
    return str(out_png)


def _camera_from_record(rec: dict) -> CameraView:
    return CameraView(view_id=rec["view_id"], time_index=rec["time_index"],
                      intrinsics=np.array(rec["K"]).reshape(3, 3),
                      rotation=np.array(rec["R"]).reshape(3, 3),
                      center=np.array(rec["C"]), width=rec["width"],
                      height=rec["height"])


def _camera_record(cam: CameraView) -> dict:
    return {"view_id": cam.view_id, "time_index": cam.time_index,
            "K": cam.intrinsics.reshape(9).tolist(),
            "R": cam.rotation.reshape(9).tolist(),
            "C": cam.center.tolist(), "width": cam.width,
            "height": cam.height}


def _render_tasks(config: PipelineConfig, depth_source: str):
    ds = dataset_dir(config)
    cams = fileio.load_cameras_json(ds / "cameras.json")
    sub = "renders" if depth_source == "fused" else "renders_dsv"
    out = Path(config.output_dir) / sub
    out.mkdir(parents=True, exist_ok=True)
    synth_kw = {k: getattr(config.synth, k) for k in
                ("dz_rel", "bidir_tau_px", "bwm_radius", "bwm_sigma_s",
                 "bwm_sigma_r", "fg_dilate_px")}
    tasks = []
    for i, vc in enumerate(config.virtual_cameras):
        cam = build_virtual_camera(cams, vc, i)
        for t in config.t_select:
            if not 0 <= t < len(cams):
                raise ValueError(f"t_select {t} outside the dataset range")
            name = render_name(vc, t)
            tasks.append((str(ds), depth_source, config.output_dir, synth_kw,
                          _camera_record(cam), t, out / f"{name}.png",
                          out / f"{name}_valid.png"))
    return tasks


def run_tasks(tasks, workers: int):
    if workers <= 1:
        for task in tasks:
            _render_task(task)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        list(pool.map(_render_task, tasks))


def cmd_render(config: PipelineConfig, args) -> int:
    ds = dataset_dir(config)
    missing = missing_files(ds)
    if missing:
        raise FileNotFoundError(
            f"dataset {ds} incomplete; missing: " + ", ".join(missing))
    # fused depths must exist before any rendering starts
    manifest = json.loads((ds / "manifest.json").read_text())
    load_fused_depths(Path(config.output_dir) / "fused",
                      manifest["frame_count"])
    tasks = _render_tasks(config, "fused")
    if config.eval_baseline:
        tasks += _render_tasks(config, "dsv")
    run_tasks(tasks, args.workers)
    print(f"rendered {len(tasks)} views -> {Path(config.output_dir) / 'renders'}")
    return 0


def cmd_eval(config: PipelineConfig, args) -> int:
    ds = dataset_dir(config)
    spec = load_scene(ds)
    if spec is None:
        raise FileNotFoundError(f"{ds} has no scene_spec.json; ground-truth "
                                "evaluation needs a synthetic scene")
    cams = fileio.load_cameras_json(ds / "cameras.json")
    manifest = json.loads((ds / "manifest.json").read_text())
    n_frames = manifest["frame_count"]

    gt_depths = load_gt_depths(ds)
    masks = [fileio.read_mask_png(Path(ds) / f"frame_{t:04d}" / "mask.png")
             for t in range(n_frames)]
    fused = load_fused_depths(Path(config.output_dir) / "fused", n_frames)
    methods = {"fused": fused}
    if config.eval_baseline:
        viewset = load_viewset(ds)
        methods["dsv"] = [metricize_dsv(f.dsv, f.dmv, f.fg_mask)
                          for f in viewset.frames]

    renders_root = {"fused": Path(config.output_dir) / "renders",
                    "dsv": Path(config.output_dir) / "renders_dsv"}
    missing = []
    for method in methods:
        for i, vc in enumerate(config.virtual_cameras):
            for t in config.t_select:
                p = renders_root[method] / f"{render_name(vc, t)}.png"
                if not p.exists():
                    missing.append(str(p))
    if missing:
        raise FileNotFoundError("renders missing; run `dvs render` first: "
                                + ", ".join(missing))

    rows = []
    scene_name = Path(ds).name
    for method, depths in methods.items():
        for t in config.t_select:
            rep = depth_rmse(depths[t], gt_depths[t], masks[t])
            synth_rows = []
            for i, vc in enumerate(config.virtual_cameras):
                cam = build_virtual_camera(cams, vc, i)
                gt = render_gt(spec, t, cam)
                img = fileio.read_image_png(
                    renders_root[method] / f"{render_name(vc, t)}.png")
                synth_rows.append(synth_eval(img, gt.gt_image))
            rows.append({
                "scene": scene_name, "method": method, "frame": t,
                "rmse_full": rep.rmse_full, "rmse_fg": rep.rmse_fg,
                "flow_mag": float(np.mean([s.mean_flow_mag for s in synth_rows])),
                "psnr": float(np.mean([s.psnr for s in synth_rows])),
                "ssim": float(np.mean([s.ssim for s in synth_rows])),
            })

    eval_dir = Path(config.output_dir) / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    with open(eval_dir / "report.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=EVAL_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for k in ("rmse_full", "rmse_fg", "flow_mag", "psnr", "ssim"):
                out[k] = repr(float(out[k]))
            writer.writerow(out)
    from .plots import save_eval_figure
    save_eval_figure(rows, eval_dir / "metrics.png")

    failures = check_thresholds(config, rows)
    for row in rows:
        print(f"{row['method']:>6} frame {row['frame']}: "
              f"rmse {row['rmse_full']:.4f}/{row['rmse_fg']:.4f} "
              f"flow {row['flow_mag']:.3f} psnr {row['psnr']:.1f} "
              f"ssim {row['ssim']:.3f}")
    if failures:
        for f in failures:
            print(f"THRESHOLD VIOLATED: {f}", file=sys.stderr)
        return 1
    print(f"report -> {eval_dir / 'report.csv'}")
    return 0


def check_thresholds(config: PipelineConfig, rows) -> list[str]:
    th = config.thresholds
    fused_rows = [r for r in rows if r["method"] == "fused"]
    failures = []
    if th.max_flow_mag is not None:
        worst = max(r["flow_mag"] for r in fused_rows)
        if worst > th.max_flow_mag:
            failures.append(f"flow_mag {worst:.3f} > {th.max_flow_mag}")
    if th.min_psnr is not None:
        worst = min(r["psnr"] for r in fused_rows)
        if worst < th.min_psnr:
            failures.append(f"psnr {worst:.2f} < {th.min_psnr}")
    if th.require_fused_below_baseline:
        dsv_rows = [r for r in rows if r["method"] == "dsv"]
        if not dsv_rows:
            failures.append("baseline comparison requested but no dsv rows")
        else:
            fused_mean = float(np.mean([r["flow_mag"] for r in fused_rows]))
            dsv_mean = float(np.mean([r["flow_mag"] for r in dsv_rows]))
            if not fused_mean < dsv_mean:
                failures.append(
                    f"fused flow_mag {fused_mean:.3f} not below baseline "
                    f"{dsv_mean:.3f}")
    return failures


def cmd_pipeline(config: PipelineConfig, args) -> int:
    for step in (cmd_generate, cmd_fuse, cmd_render, cmd_eval):
        code = step(config, args)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
