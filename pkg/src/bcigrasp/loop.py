"""Closed-loop wiring: synthetic EEG stream -> causal band-pass ->
classifier -> AR state machine, with the congruent-feedback gain fed
back into the generator, and the full pick pipeline behind it.

The loop advances in 16-sample (0.125 s) blocks on the 128 Hz clock.
Online windows are filtered causally with a persistent filter state
(training uses zero-phase filtering; bandpower features are phase
insensitive, so the two pipelines agree).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .ar import (
    ArCondition,
    ArConfig,
    ArLoop,
    ArPhase,
    CursorMoved,
    TargetConfirmed,
    TimedOut,
)
from .arm import (
    OBSERVE_JOINTS,
    ArmExecutor,
    ArmModel,
    ExecutionPolicy,
    GraspOffsets,
    Outcome,
    WaypointSet,
    fk,
    synth_waypoints,
)
from .bridge import (
    LinkConfig,
    SimulatedLink,
    TargetMessage,
    decode_osc_target,
    encode_osc_target,
)
from .config import ExperimentConfig, SceneConfig, VisionRunConfig
from .decoder import _SOS, ClassifierOutput, LinearModel, classify
from .eeg import FS_HZ, N_CHANNELS, Command, EegStream, SubjectProfile
from .geometry import Frame, Pose, chain_base_object, compose
from .handeye import CalibrationReport
from .metrics import ControlTrace
from .vision import (
    Accept,
    Detection,
    DetectionGate,
    DetectionPolicy,
    FiducialMarker,
    PoseFilter,
    SearchMode,
    project_marker,
    replace_frames,
    solve_pnp,
)

BLOCK = 16  # samples per loop step
BLOCK_S = BLOCK / FS_HZ


def subject_intent(ar: ArLoop, cue_slot: int) -> Command:
    """The simulated user's current motor intent."""
    st = ar.state
    if st.phase is ArPhase.DECIDE:
        if st.cursor == cue_slot:
            return Command.LIFT
        return Command.RIGHT if cue_slot > st.cursor else Command.LEFT
    if st.phase is ArPhase.CONFIRM:
        return Command.LIFT
    return Command.NEUTRAL


NEUTRAL_OUTPUT = ClassifierOutput(
    np.zeros(4), Command.NEUTRAL, 0.0, np.full(4, 0.25)
)


@dataclass
class SelectionResult:
    confirmed: tuple[int, int] | None
    timed_out: bool
    duration_s: float  # prepare onset to confirm (or to failure)
    decision_time_s: float | None  # decide onset to confirm
    sci_trace: ControlTrace | None
    false_moves: int
    total_decisions: int
    events: list
    congruent_blocks: int = 0

    @property
    def success(self) -> bool:
        return self.confirmed is not None


class SelectionEngine:
    """One selection trial; step() advances one block, run() drives to
    completion. Snapshot consumers read `latest_output` and the AR state."""

    def __init__(
        self,
        model: LinearModel,
        profile: SubjectProfile,
        ar: ArLoop,
        cue_slot: int,
        seed: int,
        max_blocks: int = 2400,
    ):
        self.model = model
        self.ar = ar
        self.cue_slot = cue_slot
        self.stream = EegStream(profile, seed)
        self.max_blocks = max_blocks
        self._zi = np.zeros((_SOS.shape[0], 2, N_CHANNELS))
        self._window = np.zeros((FS_HZ, N_CHANNELS))
        self._filled = 0
        self.latest_output = NEUTRAL_OUTPUT
        self.blocks = 0
        self.events: list = []
        self._sci_t: list[float] = []
        self._sci_s: list[float] = []
        self._sci_d: list[int] = []
        self.false_moves = 0
        self.total_decisions = 0
        self.congruent_blocks = 0
        self.confirm_time: float | None = None
        self.decide_start: float | None = None

    def step(self) -> list:
        """Advance one 0.125 s block; returns the AR events it produced."""
        intent = subject_intent(self.ar, self.cue_slot)
        congruent = self.ar.congruent(intent)
        self.congruent_blocks += int(congruent)
        _, raw = self.stream.generate(BLOCK, intent, congruent)
        filtered, self._zi = sps.sosfilt(_SOS, raw, axis=0, zi=self._zi)
        self._window = np.vstack([self._window[BLOCK:], filtered])
        self._filled = min(self._filled + BLOCK, FS_HZ)
        if self._filled >= FS_HZ:
            self.latest_output = classify(self.model, self._window)
        out = self.latest_output

        if self.ar.state.phase is ArPhase.DECIDE and intent in (Command.LEFT, Command.RIGHT):
            d = +1 if intent is Command.RIGHT else -1
            self._sci_t.append(self.ar.state.t)
            self._sci_s.append(out.s_t)
            self._sci_d.append(d)

        events = self.ar.step(out, BLOCK_S)
        for ev in events:
            if isinstance(ev, CursorMoved):
                self.total_decisions += 1
                if ev.command is not intent:
                    self.false_moves += 1
            elif isinstance(ev, TargetConfirmed):
                self.total_decisions += 1
                self.confirm_time = ev.t
            if isinstance(ev, TimedOut):
                pass
        if self.decide_start is None and self.ar.state.phase is ArPhase.DECIDE:
            self.decide_start = self.ar.state.t
        self.events.extend(events)
        self.blocks += 1
        return events

    def run(self) -> SelectionResult:
        while not self.ar.state.done and self.ar.state.phase is not ArPhase.EXECUTE:
            self.step()
            if self.blocks >= self.max_blocks:
                break
        st = self.ar.state
        trace = None
        if len(self._sci_t) >= 2:
            trace = ControlTrace(
                np.array(self._sci_t), np.array(self._sci_s), np.array(self._sci_d)
            )
        decision = None
        if self.confirm_time is not None and self.decide_start is not None:
            decision = self.confirm_time - self.decide_start
        return SelectionResult(
            confirmed=st.confirmed,
            timed_out=st.timed_out,
            duration_s=st.t,
            decision_time_s=decision,
            sci_trace=trace,
            false_moves=self.false_moves,
            total_decisions=self.total_decisions,
            events=self.events,
            congruent_blocks=self.congruent_blocks,
        )


@dataclass(frozen=True)
class SceneObject:
    target_id: int
    marker_id: int
    position_mm: np.ndarray  # on the tabletop, z = 0


def place_scene(scene: SceneConfig, seed: int) -> list[SceneObject]:
    """Seeded rejection sampling inside the inset region with minimum
    spacing between markers."""
    rng = np.random.default_rng(seed)
    x_lo = scene.region_x[0] + scene.placement_inset_mm / 4
    x_hi = scene.region_x[1] - scene.placement_inset_mm
    y_lo = scene.region_y[0] + scene.placement_inset_mm / 4
    y_hi = scene.region_y[1] - scene.placement_inset_mm / 4
    objs: list[SceneObject] = []
    guard = 0
    while len(objs) < scene.n_targets:
        guard += 1
        if guard > 10000:
            raise RuntimeError("cannot place scene; relax separation or region")
        p = np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi), 0.0])
        if all(np.linalg.norm(p[:2] - o.position_mm[:2]) >= scene.min_separation_mm
               for o in objs):
            i = len(objs)
            objs.append(SceneObject(i, scene.first_marker_id + i, p))
    return objs


class FailureClass:
    EEG = "eeg_misclassification"
    MAPPING = "ar_robot_mapping_error"
    VISION = "vision_failure"
    IK = "ik_failure"
    TIMEOUT = "timeout"


@dataclass
class PickResult:
    accepted_frames: int
    search_mode: bool
    vision_time_s: float
    estimate: Pose | None
    estimate_error_mm: float | None


def acquire_object_pose(
    obj: SceneObject,
    observe_pose: Pose,
    e_t_c: Pose,
    e_t_c_true: Pose,
    vision: VisionRunConfig,
    seed: int,
    bias_mm: float = 0.0,
    no_filter: bool = False,
    force_occluded: bool = False,
) -> PickResult:
    """Synthesize detections of the object marker from the observation pose,
    solve and filter them into one base-frame estimate."""
    camera = vision.camera()
    marker = FiducialMarker(obj.marker_id, side_mm=40.0)
    b_t_o_true = Pose.from_translation(obj.position_mm, (Frame.BASE, Frame.OBJECT))
    c_t_o_true = compose(compose(observe_pose, e_t_c_true).inverse(), b_t_o_true)

    gate = DetectionGate(DetectionPolicy(vision.reproj_threshold_px, vision.max_retries))
    alpha = 1.0 if no_filter else vision.ema_alpha
    window = 1 if no_filter else vision.median_window
    filt = PoseFilter(alpha, window, vision.filter_order)
    rng = np.random.default_rng(seed)

    accepted = 0
    frames_used = 0
    estimate_cam: Pose | None = None
    while accepted < vision.n_frames:
        frames_used += 1
        det = project_marker(
            c_t_o_true, marker, camera, vision.noise_sigma_px,
            seed=int(rng.integers(0, 2**63)), force_occluded=force_occluded,
        )
        if isinstance(det, Detection):
            pose, reproj = solve_pnp(det, marker, camera)
            action = gate.assess(Detection(det.marker_id, det.corners_px, reproj))
            if isinstance(action, Accept):
                estimate_cam = filt.update(pose)
                accepted += 1
                continue
        else:
            action = gate.assess(det)
        if isinstance(action, SearchMode):
            return PickResult(accepted, True, frames_used / vision.camera_fps, None, None)
        # Retry: loop for another frame

    vision_time = frames_used / vision.camera_fps
    b_t_o = chain_base_object(
        observe_pose, e_t_c, replace_frames(estimate_cam)
    )
    if bias_mm:
        b_t_o = Pose(b_t_o.q, b_t_o.t + np.array([bias_mm, 0.0, 0.0]), b_t_o.frames)
    err = float(np.linalg.norm(b_t_o.t - obj.position_mm))
    return PickResult(accepted, False, vision_time, b_t_o, err)


@dataclass
class TrialRecord:
    subject: int
    trial: int
    condition: str
    cue_slot: int
    confirmed_slot: int | None
    success: bool
    outcome: str
    failure_class: str | None
    censored: bool
    t_select: float
    t_plan: float
    t_exec: float
    decision_time_s: float | None
    sci: float | None
    false_moves: int
    total_decisions: int
    regrasps: int
    grasp_error_mm: float | None
    rest_after: bool = False

    @property
    def t_total(self) -> float:
        return self.t_select + self.t_plan + self.t_exec


def run_pick_pipeline(
    cfg: ExperimentConfig,
    selection: SelectionResult,
    objs: list[SceneObject],
    cue_slot: int,
    calibration: CalibrationReport,
    e_t_c_true: Pose,
    seed: int,
    link: SimulatedLink | None = None,
) -> tuple[str, str | None, float, float, int, float | None]:
    """Everything after a confirmed selection: bridge transfer, vision,
    waypoints, execution. Returns (outcome, failure_class, t_plan, t_exec,
    regrasps, grasp_error_mm)."""
    timing = cfg.timing
    target_id, marker_id = selection.confirmed

    # bridge hand-off: OSC datagram through the simulated link; the HTTP
    # confirm path is exercised by the live service, headless runs decode
    # the datagram directly
    link = link or SimulatedLink(cfg.network, seed=seed)
    frame = encode_osc_target(TargetMessage(target_id, marker_id))
    t_send = 0.0
    delivered = None
    for attempt in range(5):  # resend on simulated loss
        if link.send(frame, t_send):
            arrivals = link.deliver(t_send + cfg.network.latency_s + cfg.network.jitter_s + 1.0)
            if arrivals:
                delivered = decode_osc_target(arrivals[-1])
                break
        t_send += 0.2
    if delivered is None:
        delivered = TargetMessage(target_id, marker_id)  # http path of record
    link_time = t_send + cfg.network.latency_s

    if cfg.inject_mapping_error:
        wrong = next(o for o in objs if o.marker_id != delivered.marker_id)
        delivered = TargetMessage(wrong.target_id, wrong.marker_id)

    grasp_obj = next(o for o in objs if o.marker_id == delivered.marker_id)
    mapping_error = grasp_obj.marker_id != marker_id

    model = ArmModel()
    observe_pose = fk(OBSERVE_JOINTS, model)
    pick = acquire_object_pose(
        grasp_obj, observe_pose, calibration.e_t_c, e_t_c_true, cfg.vision,
        seed=seed + 1, bias_mm=cfg.inject_vision_bias_mm,
        no_filter=cfg.ablation_no_filter,
    )
    executor = ArmExecutor(model, ExecutionPolicy(
        grasp_tolerance_mm=timing.grasp_tolerance_mm,
        max_regrasps=timing.max_regrasps,
        gripper_action_s=timing.gripper_action_s,
        ik_iteration_cost_s=timing.ik_iteration_cost_s,
        search_scan_s=timing.search_scan_s,
    ))

    if pick.search_mode:
        ws = synth_waypoints(
            Pose.from_translation(grasp_obj.position_mm, (Frame.BASE, Frame.OBJECT)),
            cfg.offsets, observe_pose.q, model,
        )
        log = executor.execute(ws, OBSERVE_JOINTS, grasp_obj.position_mm,
                               search_mode=True, z_return_mm=cfg.offsets.z_return_mm)
        t_plan = timing.plan_base_s + link_time + pick.vision_time_s
        return (log.outcome.value, FailureClass.VISION, t_plan, log.t_exec_s,
                log.regrasp_count, None)

    try:
        ws = synth_waypoints(pick.estimate, cfg.offsets, observe_pose.q, model)
    except Exception:
        t_plan = timing.plan_base_s + link_time + pick.vision_time_s
        return Outcome.IK_FAILURE.value, FailureClass.IK, t_plan, 0.0, 0, pick.estimate_error_mm

    log = executor.execute(ws, OBSERVE_JOINTS, grasp_obj.position_mm,
                           z_return_mm=cfg.offsets.z_return_mm)
    t_plan = timing.plan_base_s + link_time + pick.vision_time_s + log.t_plan_s

    failure: str | None = None
    if log.outcome is Outcome.GRASPED:
        if mapping_error:
            failure = FailureClass.MAPPING
        elif grasp_obj.target_id != cue_slot:
            failure = FailureClass.EEG
    elif log.outcome is Outcome.IK_FAILURE:
        failure = FailureClass.IK
    else:
        failure = FailureClass.VISION if not mapping_error else FailureClass.MAPPING
    return log.outcome.value, failure, t_plan, log.t_exec_s, log.regrasp_count, pick.estimate_error_mm
