"""Kinematic 6-DOF arm: DH forward kinematics, damped-least-squares IK,
grasp waypoint synthesis and a velocity-adaptive execution simulator.

The default link table approximates a small tabletop collaborative arm,
scaled so the whole 400x400 mm workspace around the base stays reachable
with the gripper pointing down; it is configuration, not a datasheet.
Execution is purely kinematic: grasp success is a geometric predicate on
the gripper-tip position at closure.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Frame, Pose, compose, quat_to_matrix


class JointLimit(Exception):
    pass


class IkFailure(Exception):
    pass


class OutOfWorkspace(Exception):
    pass


@dataclass(frozen=True)
class DhRow:
    a_mm: float
    alpha_rad: float
    d_mm: float
    theta_offset_rad: float


DEFAULT_DH = (
    DhRow(0.0, math.pi / 2, 130.0, 0.0),
    DhRow(320.0, 0.0, 0.0, -math.pi / 2),
    DhRow(300.0, 0.0, 0.0, 0.0),
    DhRow(0.0, math.pi / 2, 65.0, math.pi / 2),
    DhRow(0.0, -math.pi / 2, 75.0, 0.0),
    DhRow(0.0, 0.0, 60.0, 0.0),
)
DEFAULT_LIMITS = tuple((-math.radians(165), math.radians(165)) for _ in range(5)) + (
    (-math.radians(175), math.radians(175)),
)

# Interior flange-down configuration over the workspace center (300, 0, 420);
# solved once against DEFAULT_DH and pinned so sessions start well-conditioned.
OBSERVE_JOINTS = np.array([0.2183, 1.7426, 1.2228, 1.7473, -1.5710, 1.7894])


@dataclass(frozen=True)
class ArmModel:
    dh_rows: tuple[DhRow, ...] = DEFAULT_DH
    joint_limits: tuple[tuple[float, float], ...] = DEFAULT_LIMITS
    tool_offset: Pose = field(default_factory=lambda: Pose.from_translation([0.0, 0.0, 110.0]))
    workspace_radius_mm: float = 640.0

    def __post_init__(self):
        if len(self.dh_rows) != 6 or len(self.joint_limits) != 6:
            raise ValueError("need 6 DH rows and 6 joint limit pairs")
        for lo, hi in self.joint_limits:
            if not lo < hi:
                raise ValueError("joint limits must be well-ordered")

    def check_limits(self, joints: np.ndarray):
        for i, (q, (lo, hi)) in enumerate(zip(joints, self.joint_limits)):
            if not lo - 1e-9 <= q <= hi + 1e-9:
                raise JointLimit(f"joint {i + 1} at {q:.3f} rad outside [{lo:.3f},{hi:.3f}]")

    def clamp(self, joints: np.ndarray) -> np.ndarray:
        lo = np.array([l for l, _ in self.joint_limits])
        hi = np.array([h for _, h in self.joint_limits])
        return np.clip(joints, lo, hi)


def _dh_matrix(theta: float, row: DhRow) -> np.ndarray:
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(row.alpha_rad), math.sin(row.alpha_rad)
    return np.array(
        [
            [ct, -st * ca, st * sa, row.a_mm * ct],
            [st, ct * ca, -ct * sa, row.a_mm * st],
            [0.0, sa, ca, row.d_mm],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def fk(joints, model: ArmModel = ArmModel()) -> Pose:
    """Flange pose in the base frame; raises JointLimit outside the limits."""
    q = np.asarray(joints, dtype=float)
    if q.shape != (6,):
        raise ValueError("need 6 joint angles")
    model.check_limits(q)
    m = np.eye(4)
    for qi, row in zip(q, model.dh_rows):
        m = m @ _dh_matrix(qi + row.theta_offset_rad, row)
    return Pose.from_matrix(m, (Frame.BASE, Frame.END_EFFECTOR))


def _fk_all(q: np.ndarray, model: ArmModel) -> list[np.ndarray]:
    ms = [np.eye(4)]
    m = np.eye(4)
    for qi, row in zip(q, model.dh_rows):
        m = m @ _dh_matrix(qi + row.theta_offset_rad, row)
        ms.append(m)
    return ms


def link_positions(joints, model: ArmModel = ArmModel()) -> np.ndarray:
    """(7,3) positions of the base and each link frame origin, for display."""
    q = np.asarray(joints, dtype=float)
    return np.array([m[:3, 3] for m in _fk_all(q, model)])


def _jacobian(q: np.ndarray, model: ArmModel) -> np.ndarray:
    ms = _fk_all(q, model)
    p_e = ms[-1][:3, 3]
    jac = np.zeros((6, 6))
    for i in range(6):
        z = ms[i][:3, 2]
        p = ms[i][:3, 3]
        jac[:3, i] = np.cross(z, p_e - p)
        jac[3:, i] = z
    return jac


def _pose_error(target: Pose, current: np.ndarray) -> np.ndarray:
    """6-vector [position mm, rotation-vector rad] from current 4x4 to target."""
    dp = target.t - current[:3, 3]
    r_err = target.rotation_matrix() @ current[:3, :3].T
    angle = math.acos(min(1.0, max(-1.0, (np.trace(r_err) - 1.0) / 2.0)))
    if angle < 1e-12:
        w = np.zeros(3)
    else:
        w = (
            angle
            / (2.0 * math.sin(angle))
            * np.array(
                [
                    r_err[2, 1] - r_err[1, 2],
                    r_err[0, 2] - r_err[2, 0],
                    r_err[1, 0] - r_err[0, 1],
                ]
            )
        )
    return np.concatenate([dp, w])


POS_TOL_MM = 0.5
ORI_TOL_RAD = math.radians(0.1)


def ik(
    target: Pose,
    seed_joints,
    model: ArmModel = ArmModel(),
    max_iterations: int = 200,
    rot_scale_mm: float = 100.0,
) -> tuple[np.ndarray, int]:
    """Damped-least-squares IK to 0.5 mm / 0.1 degree.

    Damping is proportional to the current squared error plus a floor, so
    steps stay conservative far from the target and near singularities but
    sharpen as the error vanishes. Joint limits are enforced by clamping
    each update with extra damping while clamping is active. Returns
    (joints, iterations); raises IkFailure on the iteration cap or a stall.
    """
    if not np.all(np.isfinite(target.t)):
        raise ValueError("target must be finite")
    q = model.clamp(np.asarray(seed_joints, dtype=float).copy())
    best_err = math.inf
    stall = 0
    clamp_boost = 0.0
    for it in range(max_iterations):
        current = _fk_all(q, model)[-1]
        err = _pose_error(target, current)
        pos_err = float(np.linalg.norm(err[:3]))
        ori_err = float(np.linalg.norm(err[3:]))
        if pos_err <= POS_TOL_MM and ori_err <= ORI_TOL_RAD:
            return q, it
        jac = _jacobian(q, model)
        e = np.concatenate([err[:3], rot_scale_mm * err[3:]])
        jw = np.vstack([jac[:3], rot_scale_mm * jac[3:]])
        lam2 = 0.05 * float(e @ e) + 1.0 + clamp_boost
        dq = jw.T @ np.linalg.solve(jw @ jw.T + lam2 * np.eye(6), e)
        step = float(np.max(np.abs(dq)))
        if step > 0.3:
            dq *= 0.3 / step
        q_new = model.clamp(q + dq)
        clamp_boost = 100.0 if not np.allclose(q_new, q + dq) else 0.0
        q = q_new

        metric = pos_err + rot_scale_mm * ori_err
        if metric < best_err * (1 - 1e-6):
            best_err = metric
            stall = 0
        else:
            stall += 1
            if stall >= 40:
                raise IkFailure(f"stalled at {pos_err:.2f} mm / {math.degrees(ori_err):.2f} deg")
    raise IkFailure(f"no convergence in {max_iterations} iterations")


class SpeedClass(enum.Enum):
    FAST = "fast"
    MODERATE = "moderate"
    SLOW = "slow"


# joint-space speed of the fastest-moving joint, rad/s
SPEED_RAD_S = {SpeedClass.FAST: 1.0, SpeedClass.MODERATE: 0.5, SpeedClass.SLOW: 0.2}


@dataclass(frozen=True)
class GraspOffsets:
    z_offset_mm: float = 80.0
    z_approach_mm: float = 30.0
    z_gripper_mm: float = 110.0
    z_lift_mm: float = 80.0
    z_return_mm: float = 40.0

    def __post_init__(self):
        if not self.z_offset_mm > self.z_approach_mm > 0:
            raise ValueError("need z_offset > z_approach > 0")
        if self.z_lift_mm <= 0:
            raise ValueError("z_lift must be positive")


@dataclass(frozen=True)
class WaypointSet:
    t_above: Pose
    t_app: Pose
    t_grasp: Pose
    t_lift: Pose
    speeds: tuple[SpeedClass, SpeedClass, SpeedClass, SpeedClass] = (
        SpeedClass.FAST,
        SpeedClass.MODERATE,
        SpeedClass.SLOW,
        SpeedClass.MODERATE,
    )

    def __post_init__(self):
        for wp in (self.t_app, self.t_grasp, self.t_lift):
            if not np.allclose(wp.q, self.t_above.q, atol=1e-12):
                raise ValueError("waypoints must share one orientation")
        if not self.t_above.t[2] > self.t_app.t[2] > self.t_grasp.t[2]:
            raise ValueError("descent must be monotonic above -> approach -> grasp")


def synth_waypoints(
    b_t_o: Pose, offsets: GraspOffsets, current_orientation: np.ndarray,
    model: ArmModel = ArmModel(),
) -> WaypointSet:
    """Four grasp waypoints above the object, keeping the current flange
    orientation; z offsets are stacked on the object position."""
    p = np.asarray(b_t_o.t, dtype=float)
    if np.linalg.norm(p) > model.workspace_radius_mm:
        raise OutOfWorkspace(
            f"object at {np.linalg.norm(p):.0f} mm exceeds {model.workspace_radius_mm:.0f} mm reach"
        )
    q = np.asarray(current_orientation, dtype=float)

    def at_height(dz: float) -> Pose:
        return Pose(q, p + np.array([0.0, 0.0, offsets.z_gripper_mm + dz]),
                    (Frame.BASE, Frame.END_EFFECTOR))

    return WaypointSet(
        t_above=at_height(offsets.z_offset_mm),
        t_app=at_height(offsets.z_approach_mm),
        t_grasp=at_height(0.0),
        t_lift=at_height(offsets.z_lift_mm),
    )


class Gripper(enum.Enum):
    OPEN = "open"
    CLOSED = "closed"


class Outcome(enum.Enum):
    GRASPED = "grasped"
    IK_FAILURE = "ik_failure"
    SEARCH_ABORTED = "search_aborted"
    SAFE_RETURNED = "safe_returned"


@dataclass
class TrajectorySegment:
    t_start: float
    duration: float
    q_from: np.ndarray
    q_to: np.ndarray
    speed: SpeedClass


@dataclass
class ExecutionLog:
    t_plan_s: float
    t_exec_s: float
    outcome: Outcome
    regrasp_count: int
    segments: list[TrajectorySegment] = field(default_factory=list)
    final_joints: np.ndarray | None = None
    detail: str = ""

    def csv_line(self, trial: int) -> str:
        return (
            f"{trial},{self.t_plan_s!r},{self.t_exec_s!r},"
            f"{self.outcome.value},{self.regrasp_count}"
        )


@dataclass(frozen=True)
class ExecutionPolicy:
    grasp_tolerance_mm: float = 10.0
    max_regrasps: int = 1
    gripper_action_s: float = 1.0
    ik_iteration_cost_s: float = 0.002
    search_scan_s: float = 4.0


class ArmExecutor:
    """Owns one arm instance through a grasp cycle; single-threaded, with a
    cancel flag honored between segments."""

    def __init__(self, model: ArmModel | None = None,
                 policy: ExecutionPolicy | None = None):
        self.model = model or ArmModel()
        self.policy = policy or ExecutionPolicy()
        self.cancelled = False

    def cancel(self):
        self.cancelled = True

    def execute(
        self,
        waypoints: WaypointSet,
        observe_joints: np.ndarray,
        object_position_mm: np.ndarray,
        search_mode: bool = False,
        z_return_mm: float = 40.0,
    ) -> ExecutionLog:
        """Run the grasp cycle from the observation configuration.

        `object_position_mm` is the true object location used by the grasp
        predicate; the waypoints carry the estimated one. In search mode
        the arm runs its scripted scan and aborts without descending.
        """
        pol = self.policy
        t = 0.0
        ik_iters = 0
        segments: list[TrajectorySegment] = []
        q = np.asarray(observe_joints, dtype=float).copy()

        def dwell(duration: float):
            nonlocal t
            segments.append(TrajectorySegment(t, duration, q.copy(), q.copy(),
                                              SpeedClass.SLOW))
            t += duration

        if search_mode:
            dwell(pol.search_scan_s)  # scripted neighborhood scan, returns empty
            return ExecutionLog(
                t_plan_s=0.0, t_exec_s=t, outcome=Outcome.SEARCH_ABORTED,
                regrasp_count=0, segments=segments, final_joints=q,
                detail="search scan found no target",
            )

        plan: list[np.ndarray] = []
        try:
            for wp in (waypoints.t_above, waypoints.t_app, waypoints.t_grasp, waypoints.t_lift):
                seed = plan[-1] if plan else q
                joints, iters = ik(wp, seed, self.model)
                ik_iters += iters
                plan.append(joints)
        except IkFailure as exc:
            return ExecutionLog(
                t_plan_s=ik_iters * pol.ik_iteration_cost_s, t_exec_s=0.0,
                outcome=Outcome.IK_FAILURE, regrasp_count=0, segments=segments,
                final_joints=q, detail=str(exc),
            )
        t_plan = ik_iters * pol.ik_iteration_cost_s

        q_above, q_app, q_grasp, q_lift = plan
        regrasps = 0
        grasped = False

        def move(q_from, q_to, speed):
            nonlocal t, q
            dur = float(np.max(np.abs(q_to - q_from))) / SPEED_RAD_S[speed]
            segments.append(TrajectorySegment(t, dur, q_from.copy(), q_to.copy(), speed))
            t += dur
            q = q_to.copy()

        move(q, q_above, waypoints.speeds[0])
        attempt = 0
        while True:
            if self.cancelled:
                return self._safe_return(q, observe_joints, waypoints, segments, t_plan, t,
                                         regrasps, "cancelled", z_return_mm)
            move(q, q_app, waypoints.speeds[1])
            move(q, q_grasp, waypoints.speeds[2])
            dwell(pol.gripper_action_s)  # close
            tip = compose(fk(q, self.model), self.model.tool_offset).t
            if np.linalg.norm(tip - object_position_mm) <= pol.grasp_tolerance_mm:
                grasped = True
                break
            dwell(pol.gripper_action_s)  # re-open
            attempt += 1
            if attempt > pol.max_regrasps:
                break
            regrasps += 1
            move(q, q_app, SpeedClass.MODERATE)

        if not grasped:
            return self._safe_return(q, observe_joints, waypoints, segments, t_plan, t,
                                     regrasps, "grasp predicate failed", z_return_mm)

        move(q, q_lift, waypoints.speeds[3])
        log = self._safe_return(q, observe_joints, waypoints, segments, t_plan, t,
                                regrasps, "", z_return_mm)
        log.outcome = Outcome.GRASPED
        log.detail = "object lifted and returned"
        return log

    def _safe_return(self, q, observe_joints, waypoints, segments, t_plan, t,
                     regrasps, detail, z_return_mm=40.0) -> ExecutionLog:
        # rise clear of the scene, then rejoin the observation pose
        pol = self.policy
        try:
            clear = Pose(
                waypoints.t_above.q,
                fk(q, self.model).t + np.array([0.0, 0.0, z_return_mm]),
                (Frame.BASE, Frame.END_EFFECTOR),
            )
            q_clear, _ = ik(clear, q, self.model)
        except (IkFailure, JointLimit):
            q_clear = q

        def move(q_from, q_to, speed):
            nonlocal t
            dur = float(np.max(np.abs(q_to - q_from))) / SPEED_RAD_S[speed]
            segments.append(TrajectorySegment(t, dur, q_from.copy(), q_to.copy(), speed))
            t += dur
            return q_to

        q2 = move(q, q_clear, SpeedClass.MODERATE)
        q2 = move(q2, np.asarray(observe_joints, dtype=float), SpeedClass.FAST)
        return ExecutionLog(
            t_plan_s=t_plan, t_exec_s=t,
            outcome=Outcome.SAFE_RETURNED, regrasp_count=regrasps,
            segments=segments, final_joints=q2, detail=detail,
        )


def joints_at(segments: list[TrajectorySegment], t: float,
              default: np.ndarray) -> np.ndarray:
    """Linear joint-space interpolation along an executed trajectory."""
    if not segments:
        return default
    for seg in segments:
        if t < seg.t_start:
            return seg.q_from
        if t <= seg.t_start + seg.duration:
            if seg.duration == 0:
                return seg.q_to
            frac = (t - seg.t_start) / seg.duration
            return seg.q_from + frac * (seg.q_to - seg.q_from)
    return segments[-1].q_to
