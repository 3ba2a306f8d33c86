"""Synthetic fiducial vision: marker projection, planar PnP, pose filtering.

Corner observations are synthesized from ground truth through a pinhole
model with radial/tangential distortion plus Gaussian pixel noise; the
solver inverts them back to a camera-frame pose. Pose recovery starts
from a homography decomposition (the four marker corners are coplanar)
and refines with Levenberg-damped Gauss-Newton on the pixel residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Frame, Pose, quat_to_matrix


class DegenerateCorners(Exception):
    pass


class NoConvergence(Exception):
    pass


@dataclass(frozen=True)
class CameraModel:
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    # distortion: radial k1,k2,k3 then tangential p1,p2
    dist: tuple[float, float, float, float, float] = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def distort(self, xn: np.ndarray) -> np.ndarray:
        """Apply distortion to normalized coords (n,2)."""
        k1, k2, k3, p1, p2 = self.dist
        x, y = xn[:, 0], xn[:, 1]
        r2 = x * x + y * y
        radial = 1 + k1 * r2 + k2 * r2**2 + k3 * r2**3
        xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
        yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
        return np.stack([xd, yd], axis=1)

    def undistort(self, xd: np.ndarray, iterations: int = 20) -> np.ndarray:
        """Invert the distortion by fixed-point iteration."""
        k1, k2, k3, p1, p2 = self.dist
        if not any(self.dist):
            return np.asarray(xd, dtype=float)
        x = np.asarray(xd, dtype=float).copy()
        for _ in range(iterations):
            xx, yy = x[:, 0], x[:, 1]
            r2 = xx * xx + yy * yy
            radial = 1 + k1 * r2 + k2 * r2**2 + k3 * r2**3
            dx = 2 * p1 * xx * yy + p2 * (r2 + 2 * xx * xx)
            dy = p1 * (r2 + 2 * yy * yy) + 2 * p2 * xx * yy
            x = (xd - np.stack([dx, dy], axis=1)) / radial[:, None]
        return x

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Project camera-frame points (n,3) to pixels (n,2), with distortion."""
        p = np.asarray(points_cam, dtype=float)
        xn = p[:, :2] / p[:, 2:3]
        xd = self.distort(xn)
        return np.stack(
            [self.fx * xd[:, 0] + self.cx, self.fy * xd[:, 1] + self.cy], axis=1
        )

    def pixels_to_normalized(self, px: np.ndarray) -> np.ndarray:
        xn = np.stack(
            [(px[:, 0] - self.cx) / self.fx, (px[:, 1] - self.cy) / self.fy], axis=1
        )
        return self.undistort(xn)


@dataclass(frozen=True)
class FiducialMarker:
    marker_id: int
    side_mm: float = 40.0

    @property
    def corners_object(self) -> np.ndarray:
        """Corners in the marker frame, counter-clockwise from top-left
        (x right, y up, z out of the marker plane)."""
        h = self.side_mm / 2.0
        return np.array(
            [[-h, h, 0.0], [-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0]]
        )


@dataclass(frozen=True)
class Detection:
    marker_id: int
    corners_px: np.ndarray  # (4,2)
    reproj_err_px: float = float("nan")


@dataclass(frozen=True)
class Occluded:
    marker_id: int
    reason: str


def project_marker(
    c_t_o: Pose,
    marker: FiducialMarker,
    camera: CameraModel,
    noise_sigma_px: float = 0.0,
    seed: int | None = None,
    force_occluded: bool = False,
) -> Detection | Occluded:
    """Synthesize a corner observation, or Occluded when any corner leaves
    the image, has non-positive depth, or occlusion is injected."""
    if force_occluded:
        return Occluded(marker.marker_id, "injected")
    pts_cam = c_t_o.apply(marker.corners_object)
    if np.any(pts_cam[:, 2] <= 0):
        return Occluded(marker.marker_id, "behind_camera")
    px = camera.project(pts_cam)
    if noise_sigma_px > 0:
        rng = np.random.default_rng(seed)
        px = px + rng.normal(scale=noise_sigma_px, size=px.shape)
    inside = (
        (px[:, 0] >= 0) & (px[:, 0] < camera.width)
        & (px[:, 1] >= 0) & (px[:, 1] < camera.height)
    )
    if not np.all(inside):
        return Occluded(marker.marker_id, "out_of_frame")
    return Detection(marker.marker_id, px)


def _homography_init(obj_xy: np.ndarray, xn: np.ndarray) -> Pose:
    """Planar pose from the DLT homography between marker-plane coords and
    normalized image coords."""
    n = obj_xy.shape[0]
    a = []
    for (X, Y), (u, v) in zip(obj_xy, xn):
        a.append([X, Y, 1, 0, 0, 0, -u * X, -u * Y, -u])
        a.append([0, 0, 0, X, Y, 1, -v * X, -v * Y, -v])
    a = np.asarray(a)
    _, s, vt = np.linalg.svd(a)
    if s[-2] < 1e-12 * s[0]:
        raise DegenerateCorners("corner configuration is rank deficient")
    h = vt[-1].reshape(3, 3)
    h1, h2, h3 = h[:, 0], h[:, 1], h[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    r1, r2, t = lam * h1, lam * h2, lam * h3
    if t[2] < 0:  # marker must sit in front of the camera
        r1, r2, t = -r1, -r2, -t
    r3 = np.cross(r1, r2)
    rot = np.stack([r1, r2, r3], axis=1)
    u, _, vt2 = np.linalg.svd(rot)
    rot = u @ np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt2))]) @ vt2
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = t
    return Pose.from_matrix(m)


def _residuals(pose: Pose, obj: np.ndarray, xn_target: np.ndarray) -> np.ndarray:
    pts = pose.apply(obj)
    proj = pts[:, :2] / pts[:, 2:3]
    return (proj - xn_target).ravel()


def solve_pnp(
    det: Detection,
    marker: FiducialMarker,
    camera: CameraModel,
    max_iterations: int = 100,
) -> tuple[Pose, float]:
    """Recover the camera-frame marker pose from one detection.

    Returns (pose tagged camera<-object, mean per-corner reprojection error
    in pixels, measured through the full distortion model against the raw
    observed corners).
    """
    obj = marker.corners_object
    corners = np.asarray(det.corners_px, dtype=float)
    if corners.shape != (4, 2):
        raise DegenerateCorners("need exactly 4 corners")
    # collinearity check via triangle areas
    def cross2(a, b):
        return a[0] * b[1] - a[1] * b[0]

    areas = [
        abs(cross2(corners[j] - corners[i], corners[k] - corners[i]))
        for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))
    ]
    if max(areas) < 1e-9:
        raise DegenerateCorners("corners are collinear")

    xn = camera.pixels_to_normalized(corners)
    pose = _homography_init(obj[:, :2], xn)

    # Levenberg-damped Gauss-Newton on undistorted normalized residuals.
    # Converged means: no damped step improves the cost any more, or the
    # accepted step is negligible. Exhausting the iteration cap while still
    # making real progress is reported as NoConvergence.
    lam = 1e-6
    r = _residuals(pose, obj, xn)
    cost = float(r @ r)
    converged = False
    for _ in range(max_iterations):
        pts = pose.apply(obj)
        jac = np.zeros((8, 6))
        rot = pose.rotation_matrix()
        for i in range(4):
            X, Y, Z = pts[i]
            d_proj = np.array([[1 / Z, 0, -X / Z**2], [0, 1 / Z, -Y / Z**2]])
            rp = rot @ obj[i]
            d_rot = -np.array(
                [[0, -rp[2], rp[1]], [rp[2], 0, -rp[0]], [-rp[1], rp[0], 0]]
            )
            jac[2 * i : 2 * i + 2, :3] = d_proj @ d_rot
            jac[2 * i : 2 * i + 2, 3:] = d_proj
        g = jac.T @ r
        h = jac.T @ jac
        improved = False
        step = None
        for _ in range(12):
            try:
                step = np.linalg.solve(h + lam * np.diag(np.diag(h) + 1e-12), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            cand = _apply_increment(pose, step)
            rc = _residuals(cand, obj, xn)
            cc = float(rc @ rc)
            if cc < cost:
                gain = cost - cc
                pose, r, cost = cand, rc, cc
                lam = max(lam / 10, 1e-12)
                improved = gain > 1e-9 * max(cost, 1e-30)
                break
            lam *= 10
        if not improved or (step is not None and np.linalg.norm(step) < 1e-10):
            converged = True
            break
    if not converged:
        raise NoConvergence(f"still improving after {max_iterations} iterations")

    reproj = reprojection_error(pose, det, marker, camera)
    return replace_frames(pose), reproj


def _apply_increment(pose: Pose, step: np.ndarray) -> Pose:
    dq = _small_rotation(step[:3])
    m = np.eye(4)
    m[:3, :3] = quat_to_matrix(dq) @ pose.rotation_matrix()
    m[:3, 3] = pose.t + step[3:]
    return Pose.from_matrix(m)


def _small_rotation(w: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(w))
    if angle < 1e-18:
        return np.array([1.0, 0, 0, 0])
    axis = w / angle
    return np.concatenate(([math.cos(angle / 2)], math.sin(angle / 2) * axis))


def replace_frames(pose: Pose) -> Pose:
    return Pose(pose.q, pose.t, (Frame.CAMERA, Frame.OBJECT))


def reprojection_error(
    pose: Pose, det: Detection, marker: FiducialMarker, camera: CameraModel
) -> float:
    """Mean per-corner pixel distance between the observed corners and the
    solved pose projected through the full camera model."""
    proj = camera.project(pose.apply(marker.corners_object))
    return float(np.linalg.norm(proj - det.corners_px, axis=1).mean())


class PoseFilter:
    """Per-marker stream stabilizer: windowed median on each translation
    axis, then EMA; quaternion EMA with sign alignment and renormalization.
    alpha=1 and window=1 reduce to the identity (the no-filtering ablation)."""

    def __init__(self, ema_alpha: float = 0.4, median_window: int = 5,
                 order: str = "median_then_ema"):
        if not 0.0 < ema_alpha <= 1.0:
            raise ValueError("ema_alpha must be in (0,1]")
        if median_window < 1 or median_window % 2 == 0:
            raise ValueError("median_window must be odd and >= 1")
        if order not in ("median_then_ema", "ema_then_median"):
            raise ValueError(f"unknown filter order {order!r}")
        self.alpha = ema_alpha
        self.window = median_window
        self.order = order
        self._trans_hist: list[np.ndarray] = []
        self._ema_t: np.ndarray | None = None
        self._ema_q: np.ndarray | None = None

    def update(self, pose: Pose) -> Pose:
        if self.order == "median_then_ema":
            t = self._ema_translation(self._median_translation(pose.t))
        else:
            t = self._median_translation(self._ema_translation(pose.t))
        q = pose.q
        if self._ema_q is None:
            self._ema_q = q.copy()
        else:
            if float(np.dot(q, self._ema_q)) < 0:
                q = -q
            self._ema_q = self.alpha * q + (1 - self.alpha) * self._ema_q
            self._ema_q /= np.linalg.norm(self._ema_q)
        return Pose(self._ema_q.copy(), t, pose.frames)

    def _median_translation(self, t: np.ndarray) -> np.ndarray:
        self._trans_hist.append(np.asarray(t, dtype=float))
        if len(self._trans_hist) > self.window:
            self._trans_hist.pop(0)
        return np.median(np.asarray(self._trans_hist), axis=0)

    def _ema_translation(self, t: np.ndarray) -> np.ndarray:
        if self._ema_t is None:
            self._ema_t = np.asarray(t, dtype=float).copy()
        else:
            self._ema_t = self.alpha * np.asarray(t, float) + (1 - self.alpha) * self._ema_t
        return self._ema_t.copy()


def filter_pose(stream, ema_alpha: float = 0.4, median_window: int = 5,
                order: str = "median_then_ema"):
    """Filter an iterable of poses; yields the stabilized stream."""
    filt = PoseFilter(ema_alpha, median_window, order)
    for pose in stream:
        yield filt.update(pose)


@dataclass(frozen=True)
class DetectionPolicy:
    reproj_threshold_px: float = 2.0
    max_retries: int = 3


@dataclass(frozen=True)
class Accept:
    detection: Detection


@dataclass(frozen=True)
class Retry:
    attempt: int


@dataclass(frozen=True)
class SearchMode:
    attempts: int


class DetectionGate:
    """Retry bookkeeping around the detector: accept clean detections,
    retry bounded times on bad reprojection or occlusion, then hand the
    arm a search action."""

    def __init__(self, policy: DetectionPolicy | None = None):
        self.policy = policy or DetectionPolicy()
        self._failures = 0

    def assess(self, result: Detection | Occluded) -> Accept | Retry | SearchMode:
        ok = isinstance(result, Detection) and (
            math.isnan(result.reproj_err_px)  # not solved yet: corners are valid
            or result.reproj_err_px <= self.policy.reproj_threshold_px
        )
        if ok:
            self._failures = 0
            return Accept(result)  # type: ignore[arg-type]
        self._failures += 1
        if self._failures <= self.policy.max_retries:
            return Retry(self._failures)
        attempts = self._failures
        self._failures = 0
        return SearchMode(attempts)


def detection_csv_line(t: float, result: Detection | Occluded) -> str:
    """`t,marker_id,u1,v1,...,u4,v4,reproj_err,status` log line."""
    if isinstance(result, Detection):
        flat = ",".join(repr(float(v)) for v in result.corners_px.ravel())
        return f"{t!r},{result.marker_id},{flat},{result.reproj_err_px!r},detected"
    return f"{t!r},{result.marker_id}," + ",".join(["nan"] * 8) + f",nan,occluded:{result.reason}"
