"""Pipeline configuration: one JSON document drives every subcommand."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .fusion import FusionWeights, OptimizerOptions
from .synthesis import SynthParams


@dataclass
class DegradationParams:
    """How ground truth is degraded into the DSV/DMV inputs."""

    hole_dilation_px: int = 5
    dmv_noise_frac: float = 0.05
    dsv_affine: tuple[float, float] = (0.9, 0.05)
    dsv_warp_amp: float = 0.22
    dsv_warp_freq: tuple[float, float] = (0.3, 0.8)


@dataclass
class VirtualCamera:
    """A render viewpoint: interpolation between two source views plus an
    optional world-space offset."""

    view_a: int
    view_b: int
    alpha: float = 0.5
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    label: str | None = None

    def name(self) -> str:
        if self.label:
            return self.label
        return f"v{self.view_a}-{self.view_b}a{self.alpha:g}"


@dataclass
class EvalThresholds:
    max_flow_mag: float | None = None
    min_psnr: float | None = None
    require_fused_below_baseline: bool = False


@dataclass
class PipelineConfig:
    seed: int = 0
    output_dir: str = "out"
    scene: dict | None = None  # inline SceneSpec; None = packaged default
    input_dir: str | None = None  # pre-existing dataset instead of a scene
    degradation: DegradationParams = field(default_factory=DegradationParams)
    weights: FusionWeights = field(default_factory=FusionWeights)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    flow_tau_px: float = 1.0
    synth: SynthParams = field(default_factory=SynthParams)
    virtual_cameras: list[VirtualCamera] = field(default_factory=lambda: [
        VirtualCamera(view_a=1, view_b=2, alpha=0.5, label="midpoint"),
        VirtualCamera(view_a=1, view_b=2, alpha=0.5, offset=(0.0, 0.1, 0.0),
                      label="offpath"),
    ])
    t_select: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    eval_baseline: bool = True
    thresholds: EvalThresholds = field(default_factory=EvalThresholds)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = {k: (list(v) if isinstance(v, tuple) else v)
                        for k, v in asdict(self.weights).items()}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        if "degradation" in data:
            deg = dict(data["degradation"])
            for key in ("dsv_affine", "dsv_warp_freq"):
                if key in deg:
                    deg[key] = tuple(deg[key])
            data["degradation"] = DegradationParams(**deg)
        if "weights" in data:
            w = dict(data["weights"])
            if "neighbor_offsets" in w:
                w["neighbor_offsets"] = tuple(w["neighbor_offsets"])
            data["weights"] = FusionWeights(**w)
        if "optimizer" in data:
            data["optimizer"] = OptimizerOptions(**data["optimizer"])
        if "synth" in data:
            data["synth"] = SynthParams(**data["synth"])
        if "virtual_cameras" in data:
            cams = []
            for c in data["virtual_cameras"]:
                c = dict(c)
                if "offset" in c:
                    c["offset"] = tuple(c["offset"])
                cams.append(VirtualCamera(**c))
            data["virtual_cameras"] = cams
        if "thresholds" in data:
            data["thresholds"] = EvalThresholds(**data["thresholds"])
        return cls(**data)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2,
                                         default=_jsonable) + "\n")

    def validate(self) -> list[str]:
        """Collect configuration problems without raising."""
        problems = []
        if self.scene is not None and self.input_dir is not None:
            problems.append("scene and input_dir are mutually exclusive")
        if self.input_dir is not None and not Path(self.input_dir).exists():
            problems.append(f"input_dir does not exist: {self.input_dir}")
        if not self.t_select:
            problems.append("t_select must name at least one frame")
        if not self.virtual_cameras:
            problems.append("at least one virtual camera is required")
        return problems


def _jsonable(obj):
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {obj!r}")
