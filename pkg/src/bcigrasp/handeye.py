"""Eye-in-hand calibration from paired robot/camera observations of a
fixed target.

Consecutive capture pairs give effector motions A and camera-side
motions B that satisfy A X = X B for the unknown flange-to-camera
transform X. Rotation is solved first by quaternion least squares over
all motion pairs, then translation by a linear least-squares stack.
Quality metrics: pixel reprojection of the target through the full
chain, and the spread of the implied fixed-target position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Frame, Pose, compose, quat_to_matrix
from .vision import CameraModel, FiducialMarker


class TooFewSamples(Exception):
    pass


class DegenerateMotions(Exception):
    pass


@dataclass(frozen=True)
class CalibrationSample:
    b_t_e: Pose  # robot forward kinematics at capture
    c_t_t: Pose  # camera-to-target from the pose solver


@dataclass(frozen=True)
class CalibrationReport:
    e_t_c: Pose
    mean_reproj_px: float
    repeatability_mm: float
    n_motions: int

    def __post_init__(self):
        if self.repeatability_mm < 0:
            raise ValueError("repeatability must be >= 0")
        if self.n_motions < 2:
            raise ValueError("need at least 2 motions")


def _qmul_left_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [[w, -x, -y, -z], [x, w, -z, y], [y, z, w, -x], [z, -y, x, w]]
    )


def _qmul_right_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [[w, -x, -y, -z], [x, w, z, -y], [y, -z, w, x], [z, y, -x, w]]
    )


def _rotation_axis_angle(pose: Pose) -> tuple[np.ndarray, float]:
    w = min(1.0, abs(float(pose.q[0])))
    angle = 2.0 * math.acos(w)
    v = pose.q[1:]
    n = np.linalg.norm(v)
    axis = v / n if n > 1e-12 else np.zeros(3)
    return axis, angle


def motion_pairs(samples: list[CalibrationSample]) -> list[tuple[Pose, Pose]]:
    """Consecutive-capture motions (A_i, B_i) with A_i X = X B_i."""
    pairs = []
    for s0, s1 in zip(samples, samples[1:]):
        a = compose(s1.b_t_e.inverse(), s0.b_t_e)
        b = compose(s1.c_t_t, s0.c_t_t.inverse())
        pairs.append((a, b))
    return pairs


def calibrate(
    samples: list[CalibrationSample],
    camera: CameraModel | None = None,
    marker: FiducialMarker | None = None,
    min_axis_separation_deg: float = 5.0,
    min_motion_angle_deg: float = 0.5,
) -> CalibrationReport:
    """Solve the flange-to-camera transform and report quality metrics.

    The pixel metric reprojects the calibration target through the full
    chain at every sample against its observed camera-frame pose; the
    millimeter metric is the RMS spread of the implied fixed-target
    position across samples.
    """
    if len(samples) < 3:
        raise TooFewSamples("need at least 3 samples (2 motions)")
    pairs = motion_pairs(samples)

    axes = []
    for a, _ in pairs:
        axis, angle = _rotation_axis_angle(a)
        if angle >= math.radians(min_motion_angle_deg):
            axes.append(axis)
    separated = False
    for i in range(len(axes)):
        for j in range(i + 1, len(axes)):
            cosang = abs(float(np.clip(np.dot(axes[i], axes[j]), -1, 1)))
            if math.acos(cosang) >= math.radians(min_axis_separation_deg):
                separated = True
    if not separated:
        raise DegenerateMotions(
            "motion rotation axes are (near-)parallel; rotate about two distinct axes"
        )

    # rotation: stack [L(qa) - R(qb)] and take the least-squares null vector.
    # Conjugate rotations share their angle, but for motions near 180
    # degrees the canonical lifts of A and B can land on opposite sheets of
    # the double cover, flipping the sign of the R(qb) block. Build a few
    # candidate solutions with different sign seedings and keep the one
    # with the smallest best-sign residual.
    blocks = [(_qmul_left_matrix(a.q), _qmul_right_matrix(b.q)) for a, b in pairs]

    def solve_stack(rows):
        _, _, vt = np.linalg.svd(np.vstack(rows))
        q = vt[-1]
        return q / np.linalg.norm(q)

    def best_sign_rows(q):
        rows = []
        for la, rb in blocks:
            plus, minus = la - rb, la + rb
            rows.append(plus if np.linalg.norm(plus @ q) <= np.linalg.norm(minus @ q)
                        else minus)
        return rows

    def residual(q):
        return sum(
            min(np.linalg.norm((la - rb) @ q), np.linalg.norm((la + rb) @ q))
            for la, rb in blocks
        )

    candidates = [solve_stack([la - rb for la, rb in blocks])]
    q = candidates[0]
    for _ in range(4):  # sign-consensus refinement to a fixpoint
        q = solve_stack(best_sign_rows(q))
        candidates.append(q)
    q_x = min(candidates, key=residual)
    r_x = quat_to_matrix(q_x if q_x[0] >= 0 else -q_x)

    # translation: (R_A - I) t = R_X t_B - t_A
    lhs = np.vstack([a.rotation_matrix() - np.eye(3) for a, _ in pairs])
    rhs = np.concatenate([r_x @ b.t - a.t for a, b in pairs])
    t_x, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)

    mat = np.eye(4)
    mat[:3, :3] = r_x
    mat[:3, 3] = t_x
    e_t_c = Pose.from_matrix(mat, (Frame.END_EFFECTOR, Frame.CAMERA))

    implied = [compose(compose(s.b_t_e, e_t_c), s.c_t_t) for s in samples]
    rep = repeatability([p for p in implied])
    reproj = _mean_reprojection_px(
        samples, e_t_c, implied, camera or CameraModel(), marker or FiducialMarker(0, 60.0)
    )
    return CalibrationReport(e_t_c, reproj, rep, len(pairs))


def _mean_target_pose(implied: list[Pose]) -> Pose:
    ts = np.mean([p.t for p in implied], axis=0)
    ref = implied[0].q
    qs = np.array([p.q if float(np.dot(p.q, ref)) >= 0 else -p.q for p in implied])
    q = qs.mean(axis=0)
    q /= np.linalg.norm(q)
    return Pose(q, ts)


def _mean_reprojection_px(
    samples: list[CalibrationSample],
    e_t_c: Pose,
    implied: list[Pose],
    camera: CameraModel,
    marker: FiducialMarker,
) -> float:
    target = _mean_target_pose(implied)
    dists = []
    for s in samples:
        predicted = compose(compose(s.b_t_e, e_t_c).inverse(), target)
        obs_pts = s.c_t_t.apply(marker.corners_object)
        pred_pts = predicted.apply(marker.corners_object)
        if np.any(obs_pts[:, 2] <= 0) or np.any(pred_pts[:, 2] <= 0):
            continue
        dists.append(
            np.linalg.norm(camera.project(pred_pts) - camera.project(obs_pts), axis=1).mean()
        )
    return float(np.mean(dists)) if dists else float("nan")


def repeatability(poses: list[Pose]) -> float:
    """RMS distance (mm) of re-measured translations to their centroid."""
    if len(poses) < 2:
        raise TooFewSamples("need at least 2 poses")
    ts = np.array([p.t for p in poses])
    centered = ts - ts.mean(axis=0)
    return float(np.sqrt(np.mean(np.sum(centered**2, axis=1))))


def save_calibration(report: CalibrationReport, path) -> None:
    with open(path, "w") as f:
        f.write("format bcigrasp-handeye v1\n")
        f.write("e_t_c " + " ".join(repr(v) for v in report.e_t_c.to_record()) + "\n")
        f.write(f"mean_reproj_px {report.mean_reproj_px!r}\n")
        f.write(f"repeatability_mm {report.repeatability_mm!r}\n")
        f.write(f"n_motions {report.n_motions}\n")


def load_calibration(path) -> CalibrationReport:
    fields: dict[str, str] = {}
    with open(path) as f:
        for line in f:
            key, _, rest = line.strip().partition(" ")
            fields[key] = rest
    pose = Pose.from_record(
        [float(v) for v in fields["e_t_c"].split()], (Frame.END_EFFECTOR, Frame.CAMERA)
    )
    return CalibrationReport(
        pose,
        float(fields["mean_reproj_px"]),
        float(fields["repeatability_mm"]),
        int(fields["n_motions"]),
    )
