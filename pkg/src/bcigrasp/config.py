"""Dataclass configuration for experiments, scenes and the closed loop.

Everything a run needs is captured here and echoed verbatim next to the
outputs, so a (config, seed) pair reproduces a run byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .ar import ArCondition
from .arm import GraspOffsets
from .bridge import LinkConfig
from .eeg import SubjectProfile
from .vision import CameraModel

CONDITION_NAMES = {c.value: c for c in ArCondition}


@dataclass(frozen=True)
class SceneConfig:
    """Tabletop region in front of the arm base, millimeters."""

    n_targets: int = 3
    region_x: tuple[float, float] = (100.0, 500.0)
    region_y: tuple[float, float] = (-200.0, 200.0)
    # placement inset keeps markers clear of the region edge and the far
    # corners outside the arm's dexterous envelope
    placement_inset_mm: float = 40.0
    min_separation_mm: float = 60.0
    marker_side_mm: float = 40.0
    first_marker_id: int = 10

    def __post_init__(self):
        object.__setattr__(self, "region_x", tuple(self.region_x))
        object.__setattr__(self, "region_y", tuple(self.region_y))
        if not 3 <= self.n_targets <= 5:
            raise ValueError("n_targets must be 3-5")


@dataclass(frozen=True)
class VisionRunConfig:
    """Camera and filtering for the pick pipeline; the wide default lens
    lets one overhead observation pose cover the whole region."""

    fx: float = 300.0
    fy: float = 300.0
    width: int = 640
    height: int = 480
    noise_sigma_px: float = 0.5
    n_frames: int = 10
    camera_fps: float = 20.0
    ema_alpha: float = 0.4
    median_window: int = 5
    filter_order: str = "median_then_ema"
    reproj_threshold_px: float = 2.0
    max_retries: int = 3

    def camera(self) -> CameraModel:
        return CameraModel(self.fx, self.fy, self.width / 2, self.height / 2,
                           self.width, self.height)


@dataclass(frozen=True)
class DecoderConfig:
    theta: float = 0.5
    tau_s: float = 0.4
    tau_lift_s: float = 3.0
    refractory_s: float = 0.5
    reps_per_command: int = 12
    rounds: int = 3
    ridge: float = 1e-3


@dataclass(frozen=True)
class CalibrationConfig:
    n_samples: int = 6
    rot_noise_deg: float = 0.05
    trans_noise_mm: float = 0.1


@dataclass(frozen=True)
class TimingModel:
    """Simulated wall-time charges for the planning phase."""

    plan_base_s: float = 1.0
    ik_iteration_cost_s: float = 0.002
    gripper_action_s: float = 1.0
    search_scan_s: float = 4.0
    grasp_tolerance_mm: float = 10.0
    max_regrasps: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: int = 3
    n_subjects: int = 3
    trials_per_subject: int = 12
    seed: int = 0
    conditions: tuple[str, ...] = tuple(c.value for c in ArCondition)
    subject: SubjectProfile = field(default_factory=SubjectProfile)
    scene: SceneConfig = field(default_factory=SceneConfig)
    vision: VisionRunConfig = field(default_factory=VisionRunConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    offsets: GraspOffsets = field(default_factory=GraspOffsets)
    network: LinkConfig = field(default_factory=LinkConfig)
    timing: TimingModel = field(default_factory=TimingModel)
    ablation_no_filter: bool = False
    rest_every_trials: int = 3
    rest_minutes: float = 10.0
    inject_mapping_error: bool = False
    inject_vision_bias_mm: float = 0.0

    def __post_init__(self):
        if self.experiment not in (1, 2, 3):
            raise ValueError("experiment must be 1, 2 or 3")
        if self.trials_per_subject < 1 or self.n_subjects < 1:
            raise ValueError("need at least one subject and one trial")
        for name in self.conditions:
            if name not in CONDITION_NAMES:
                raise ValueError(f"unknown condition {name!r}")

    def condition_list(self) -> list[ArCondition]:
        return [CONDITION_NAMES[n] for n in self.conditions]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        kwargs = dict(data)
        for key, cls in (
            ("subject", SubjectProfile),
            ("scene", SceneConfig),
            ("vision", VisionRunConfig),
            ("decoder", DecoderConfig),
            ("calibration", CalibrationConfig),
            ("offsets", GraspOffsets),
            ("network", LinkConfig),
            ("timing", TimingModel),
        ):
            if key in kwargs and isinstance(kwargs[key], dict):
                kwargs[key] = cls(**kwargs[key])
        if isinstance(kwargs.get("conditions"), list):
            kwargs["conditions"] = tuple(kwargs["conditions"])
        return ExperimentConfig(**kwargs)

    def echo_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        return ExperimentConfig.from_dict(json.load(f))
