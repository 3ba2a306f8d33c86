"""Rigid-body poses as unit quaternion + translation, with frame tagging.

Translations are millimeters at every public interface. Quaternions are
scalar-first (w, x, y, z) and kept normalized; rotation matrices appear
only at API edges. Serialized form is the 7-number record
[qw, qx, qy, qz, tx, ty, tz].
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-9


class Frame(enum.Enum):
    BASE = "B"
    END_EFFECTOR = "E"
    CAMERA = "C"
    OBJECT = "O"


class FrameMismatch(Exception):
    """Raised when pose frame tags do not form a legal chain."""


def _qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def _qrotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    # q * (0, v) * conj(q), expanded to avoid building intermediates
    w, x, y, z = q
    u = np.array([x, y, z])
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping source-frame points into the target frame.

    `frames`, when set, is (target, source); composition a*b requires
    a.source == b.target and yields (a.target, b.source).
    """

    q: np.ndarray
    t: np.ndarray
    frames: tuple[Frame, Frame] | None = field(default=None)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).copy()
        t = np.asarray(self.t, dtype=float).copy()
        if q.shape != (4,):
            raise ValueError(f"quaternion must have 4 components, got {q.shape}")
        if t.shape != (3,):
            raise ValueError(f"translation must have 3 components, got {t.shape}")
        n = math.sqrt(float(q @ q))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} too far from 1")
        q /= n
        if q[0] < 0.0:  # canonical sign: w >= 0
            q = -q
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity(frames: tuple[Frame, Frame] | None = None) -> "Pose":
        return Pose(np.array([1.0, 0, 0, 0]), np.zeros(3), frames)

    @staticmethod
    def from_parts(
        q: np.ndarray, t: np.ndarray, frames: tuple[Frame, Frame] | None = None
    ) -> "Pose":
        return Pose(np.asarray(q, float), np.asarray(t, float), frames)

    @staticmethod
    def from_axis_angle(
        axis: np.ndarray, angle_rad: float, t=(0.0, 0.0, 0.0), frames=None
    ) -> "Pose":
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0:
            raise ValueError("rotation axis must be nonzero")
        axis = axis / n
        h = 0.5 * angle_rad
        q = np.concatenate(([math.cos(h)], math.sin(h) * axis))
        return Pose(q, np.asarray(t, float), frames)

    @staticmethod
    def from_matrix(m: np.ndarray, frames=None) -> "Pose":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("expected 4x4 homogeneous matrix")
        return Pose(_mat_to_quat(m[:3, :3]), m[:3, 3], frames)

    @staticmethod
    def from_translation(t, frames=None) -> "Pose":
        return Pose(np.array([1.0, 0, 0, 0]), np.asarray(t, float), frames)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.q)
        m[:3, 3] = self.t
        return m

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (..., 3) from the source frame into the target frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ quat_to_matrix(self.q).T + self.t

    def inverse(self) -> "Pose":
        qi = np.array([self.q[0], -self.q[1], -self.q[2], -self.q[3]])
        ti = -_qrotate(qi, self.t)
        frames = (self.frames[1], self.frames[0]) if self.frames else None
        return Pose(qi, ti, frames)

    def to_record(self) -> list[float]:
        return [float(x) for x in (*self.q, *self.t)]

    @staticmethod
    def from_record(rec, frames=None) -> "Pose":
        vals = [float(x) for x in rec]
        if len(vals) != 7:
            raise ValueError("pose record must have 7 numbers [qw,qx,qy,qz,tx,ty,tz]")
        return Pose(np.array(vals[:4]), np.array(vals[4:]), frames)

    def rotation_angle_to(self, other: "Pose") -> float:
        """Geodesic rotation distance in radians."""
        d = abs(float(np.dot(self.q, other.q)))
        return 2.0 * math.acos(min(1.0, d))

    def translation_distance_to(self, other: "Pose") -> float:
        return float(np.linalg.norm(self.t - other.t))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _mat_to_quat(m: np.ndarray) -> np.ndarray:
    # Shepperd's method: pick the largest diagonal combination for stability.
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return q / np.linalg.norm(q)


def compose(a: Pose, b: Pose) -> Pose:
    """a applied after b (matrix product semantics T_a @ T_b)."""
    q = _qmul(a.q, b.q)
    t = _qrotate(a.q, b.t) + a.t
    frames = None
    if a.frames and b.frames and a.frames[1] == b.frames[0]:
        frames = (a.frames[0], b.frames[1])
    return Pose(q, t, frames)


def chain_base_object(b_t_e: Pose, e_t_c: Pose, c_t_o: Pose) -> Pose:
    """Object pose in the robot base frame via base<-effector<-camera<-object."""
    expected = [
        (Frame.BASE, Frame.END_EFFECTOR),
        (Frame.END_EFFECTOR, Frame.CAMERA),
        (Frame.CAMERA, Frame.OBJECT),
    ]
    for pose, want in zip((b_t_e, e_t_c, c_t_o), expected):
        if pose.frames != want:
            raise FrameMismatch(f"expected frames {want}, got {pose.frames}")
    return compose(compose(b_t_e, e_t_c), c_t_o)


def random_pose(rng: np.random.Generator, trans_scale_mm: float = 100.0, frames=None) -> Pose:
    """Uniform random rotation (quaternion on S^3) with gaussian translation."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    t = rng.normal(scale=trans_scale_mm, size=3)
    return Pose(q, t, frames)
