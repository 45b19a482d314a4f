"""Planar marker pose with both ambiguity candidates, and ways to pick one.

A planar marker seen from a single view generally admits two poses that
reproject almost equally well: the second is the first's normal mirrored
about the viewing ray. ``estimate_planar_pose`` returns both (infinitesimal
plane-based decomposition of the marker homography); the ``disambiguate_*``
functions choose between them and ``evaluate_ambiguity`` counts how often a
strategy chooses the flipped one.

Marker model: a square of side ``s`` (or circle of diameter ``s``) centred
at its frame origin in the z = 0 plane, +z normal. Square corners are, in
order, (-s/2, s/2), (s/2, s/2), (s/2, -s/2), (-s/2, -s/2); viewed head-on
with the marker's +y up in the image that is clockwise starting top-left.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .geom import (
    OPTICAL_TO_BODY,
    CameraIntrinsics,
    EnuVector,
    RigidTransform,
    attitude_from_angles,
    camera_rotation,
    matrix_to_quat,
    quat_angle,
    quat_canonical,
    quat_to_matrix,
    rot_z,
    rotation_angle,
)

logger = logging.getLogger(__name__)

WRONG_CHOICE_THRESHOLD = np.radians(45.0)
SINGLE_CANDIDATE_RATIO = 10.0
STRATEGIES = ("reprojection", "gravity", "bundle")


class DegenerateObservation(ValueError):
    pass


class BehindCamera(ValueError):
    pass


class NoUpwardCandidate(ValueError):
    pass


class CollinearInput(ValueError):
    pass


class TooFewMarkers(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


# -- observations ------------------------------------------------------------

def marker_model_corners(side_length: float) -> np.ndarray:
    h = 0.5 * side_length
    return np.array([[-h, h, 0.0], [h, h, 0.0], [h, -h, 0.0], [-h, -h, 0.0]])


@dataclass(frozen=True, eq=False)
class MarkerObservation:
    """Image footprint of one marker.

    Square markers give ``corners`` (4x2 pixels, model winding order).
    Circular markers give ``ellipse`` = (cx, cy, a, b, theta): centre, semi-axes
    and rotation of the a-axis from image +u. ``side_length`` is the square side
    or the circle diameter, in metres.
    """

    marker_id: int
    side_length: float
    corners: np.ndarray | None = None
    ellipse: tuple | None = None
    timestamp: float = 0.0

    def __post_init__(self):
        if not self.side_length > 0:
            raise ValueError("side_length must be positive")
        if (self.corners is None) == (self.ellipse is None):
            raise ValueError("give exactly one of corners or ellipse")
        if self.corners is not None:
            c = np.array(self.corners, dtype=float).reshape(4, 2)
            c.setflags(write=False)
            object.__setattr__(self, "corners", c)

    @property
    def image_points(self) -> np.ndarray:
        if self.corners is not None:
            return self.corners
        return ellipse_to_corners(self.ellipse)


def ellipse_to_corners(ellipse) -> np.ndarray:
    """Four points on the ellipse standing in for a square's corners.

    The marker-plane points (0, r), (r, 0), (0, -r), (-r, 0) of a circle of
    radius r lie on the imaged ellipse; under a fronto-parallel view they land
    at the ends of the axes. This is the affine approximation of the circle's
    image, so pose from these points carries a small perspective bias for
    oblique views.
    """
    cx, cy, a, b, theta = (float(x) for x in ellipse)
    if not (a > 0 and b > 0):
        raise DegenerateObservation("ellipse semi-axes must be positive")
    ca, sa = np.cos(theta), np.sin(theta)
    ua = np.array([ca, sa]) * a
    ub = np.array([-sa, ca]) * b
    c = np.array([cx, cy])
    return np.array([c - ub, c + ua, c + ub, c - ua])


def circle_model_points(diameter: float) -> np.ndarray:
    r = 0.5 * diameter
    return np.array([[0.0, r, 0.0], [r, 0.0, 0.0], [0.0, -r, 0.0], [-r, 0.0, 0.0]])


def _check_convex(points: np.ndarray) -> None:
    crosses = []
    for i in range(4):
        a, b, c = points[i], points[(i + 1) % 4], points[(i + 2) % 4]
        crosses.append((b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]))
    crosses = np.array(crosses)
    scale = np.ptp(points, axis=0).max() ** 2
    if not np.all(np.isfinite(crosses)) or scale <= 0:
        raise DegenerateObservation("non-finite or coincident corners")
    if np.any(np.abs(crosses) <= 1e-9 * scale):
        raise DegenerateObservation("collinear corners")
    if not (np.all(crosses > 0) or np.all(crosses < 0)):
        raise DegenerateObservation("corners are not convex in winding order")


# -- homography and the two-candidate decomposition ---------------------------

def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """DLT homography src(Nx2) -> dst(Nx2), Hartley-normalised."""
    def norm(p):
        m = p.mean(axis=0)
        s = np.sqrt(2.0) / np.mean(np.linalg.norm(p - m, axis=1))
        return np.array([[s, 0, -s * m[0]], [0, s, -s * m[1]], [0, 0, 1.0]])

    ts, td = norm(src), norm(dst)
    x, y = (src @ ts[:2, :2].T + ts[:2, 2]).T
    u, v = (dst @ td[:2, :2].T + td[:2, 2]).T
    n = len(src)
    one, zero = np.ones(n), np.zeros(n)
    rows = np.empty((2 * n, 9))
    rows[0::2] = np.column_stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v])
    rows[1::2] = np.column_stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u])
    _, _, vt = np.linalg.svd(rows)
    h = vt[-1].reshape(3, 3)
    h = np.linalg.solve(td, h @ ts)
    return h / h[2, 2]


def _rotation_z_to(s: np.ndarray) -> np.ndarray:
    """Rotation taking +z onto the unit vector s (s_z > 0)."""
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(z, s)
    sn = np.linalg.norm(axis)
    if sn < 1e-15:
        return np.eye(3)
    k = axis / sn
    angle = np.arctan2(sn, s[2])
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx


def _ippe_rotations(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Both rotations consistent with the homography's first-order behaviour at the origin."""
    v = h[:2, 2] / h[2, 2]
    jac = (h[:2, :2] - np.outer(v, h[2, :2])) / h[2, 2]
    s = np.array([v[0], v[1], 1.0])
    rv = _rotation_z_to(s / np.linalg.norm(s))
    b = (np.array([[1.0, 0.0, -v[0]], [0.0, 1.0, -v[1]]]) @ rv)[:, :2]
    a = np.linalg.solve(b, jac)
    gamma = np.linalg.svd(a, compute_uv=False)[0]
    m = a / gamma
    hh = np.eye(2) - m.T @ m
    bb = np.sqrt(np.clip([hh[0, 0], hh[1, 1]], 0.0, None))
    if hh[0, 1] < 0:
        bb[1] = -bb[1]
    c1 = np.array([m[0, 0], m[1, 0], bb[0]])
    c2 = np.array([m[0, 1], m[1, 1], bb[1]])
    c3 = np.cross(c1, c2)
    q1 = np.column_stack([c1, c2, c3])
    q2 = np.column_stack([[m[0, 0], m[1, 0], -bb[0]], [m[0, 1], m[1, 1], -bb[1]],
                          [-c3[0], -c3[1], c3[2]]])
    return _orthonormalise(rv @ q1), _orthonormalise(rv @ q2)


def _orthonormalise(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        out = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return out


def _translation_for(r: np.ndarray, model: np.ndarray, norm_pts: np.ndarray) -> np.ndarray:
    """Least-squares translation minimising algebraic reprojection error for fixed R."""
    rp = model @ r.T
    x, y = norm_pts[:, 0], norm_pts[:, 1]
    n = len(model)
    a = np.zeros((2 * n, 3))
    a[0::2, 0] = 1.0
    a[0::2, 2] = -x
    a[1::2, 1] = 1.0
    a[1::2, 2] = -y
    rhs = np.empty(2 * n)
    rhs[0::2] = x * rp[:, 2] - rp[:, 0]
    rhs[1::2] = y * rp[:, 2] - rp[:, 1]
    t, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    return t


def reprojection_rms(pose: RigidTransform, model: np.ndarray, pixels: np.ndarray,
                     intr: CameraIntrinsics) -> float:
    p = pose.apply(model)
    if np.any(p[:, 2] <= 0):
        return float("inf")
    uv = np.column_stack([intr.fx * p[:, 0] / p[:, 2] + intr.cx, intr.fy * p[:, 1] / p[:, 2] + intr.cy])
    return float(np.sqrt(np.mean(np.sum((uv - pixels) ** 2, axis=1))))


@dataclass(frozen=True, eq=False)
class PoseCandidateSet:
    """One or two marker->camera poses, best (lowest reprojection RMS) first."""

    candidates: tuple
    reprojection_rms: tuple

    def __post_init__(self):
        if not 1 <= len(self.candidates) <= 2 or len(self.candidates) != len(self.reprojection_rms):
            raise ValueError("a candidate set holds one or two poses with one RMS each")
        if list(self.reprojection_rms) != sorted(self.reprojection_rms):
            raise ValueError("candidates must be sorted by reprojection RMS")

    def __len__(self):
        return len(self.candidates)

    @property
    def best(self) -> RigidTransform:
        return self.candidates[0]

    @staticmethod
    def normal_of(pose: RigidTransform) -> np.ndarray:
        """Marker +z in the camera frame."""
        return pose.matrix[:, 2].copy()


def estimate_planar_pose(obs: MarkerObservation, intr: CameraIntrinsics,
                         single_ratio: float | None = SINGLE_CANDIDATE_RATIO) -> PoseCandidateSet:
    """Both planar-pose solutions for one marker observation.

    The second candidate is dropped when its reprojection RMS exceeds
    ``single_ratio`` times the first's, or when both solutions coincide.
    ``single_ratio=None`` always keeps both.
    """
    pixels = np.asarray(obs.image_points, dtype=float)
    _check_convex(pixels)
    if obs.corners is not None:
        model = marker_model_corners(obs.side_length)
    else:
        model = circle_model_points(obs.side_length)

    kinv = np.linalg.inv(intr.K)
    norm_pts = (np.column_stack([pixels, np.ones(4)]) @ kinv.T)[:, :2]
    h = _homography(model[:, :2], norm_pts)
    if not np.all(np.isfinite(h)):
        raise DegenerateObservation("homography estimation failed")

    found = []
    for r in _ippe_rotations(h):
        t = _translation_for(r, model, norm_pts)
        if t[2] <= 0:
            continue
        pose = RigidTransform.from_matrix(r, t)
        found.append((reprojection_rms(pose, model, pixels, intr), pose))
    if not found:
        raise BehindCamera("no candidate pose places the marker in front of the camera")

    found.sort(key=lambda item: item[0])
    if len(found) == 2:
        (e1, p1), (e2, p2) = found
        same = quat_angle(p1.rotation, p2.rotation) < 1e-6
        if same or (single_ratio is not None and e2 > single_ratio * e1):
            found = found[:1]
    return PoseCandidateSet(tuple(p for _, p in found), tuple(e for e, _ in found))


# -- choosing a candidate -------------------------------------------------------

def _facing_score(pose: RigidTransform) -> float:
    # cosine between the marker normal and the direction back to the camera
    t = pose.translation
    return float(-np.dot(pose.matrix[:, 2], t) / np.linalg.norm(t))


def disambiguate_reprojection(cands: PoseCandidateSet) -> RigidTransform:
    if len(cands) == 1:
        return cands.best
    e1, e2 = cands.reprojection_rms
    if abs(e2 - e1) <= 1e-12:
        return max(cands.candidates, key=_facing_score)
    return cands.best


def gravity_residuals(cands: PoseCandidateSet, camera_attitude) -> np.ndarray:
    """Angle (radians) between each candidate's world-frame pad normal and world up."""
    r_wc = camera_rotation(camera_attitude)
    ups = [float((r_wc @ c.matrix[:, 2])[2]) for c in cands.candidates]
    return np.arccos(np.clip(ups, -1.0, 1.0))


def disambiguate_gravity(cands: PoseCandidateSet, camera_attitude) -> RigidTransform:
    """Pick the candidate whose pad normal is closest to world up (horizontal pad prior)."""
    res = gravity_residuals(cands, camera_attitude)
    i = int(np.argmin(res))
    if res[i] > np.pi / 2:
        raise NoUpwardCandidate(f"closest candidate normal is {np.degrees(res[i]):.1f} deg from up")
    logger.debug("gravity residuals (deg): %s", np.degrees(res))
    return cands.candidates[i]


@dataclass(frozen=True)
class BundlePlane:
    normal: np.ndarray
    offset: float
    residual_rms: float

    def distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal + self.offset


def regress_bundle_plane(marker_positions) -> BundlePlane:
    """Total-least-squares plane n.x + d = 0 through marker centres, n facing the camera."""
    p = np.asarray(marker_positions, dtype=float)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError("marker positions must be an (N, 3) array")
    if len(p) < 3:
        raise TooFewMarkers(f"need at least 3 markers, got {len(p)}")
    centroid = p.mean(axis=0)
    _, s, vt = np.linalg.svd(p - centroid)
    spread = np.linalg.norm(p - centroid, axis=1).max()
    if spread == 0 or s[1] <= 1e-9 * max(1.0, s[0]):
        raise CollinearInput("marker positions are collinear")
    n = vt[2]
    if np.dot(n, centroid) > 0:
        n = -n
    d = -float(np.dot(n, centroid))
    rms = float(s[2] / np.sqrt(len(p)))
    return BundlePlane(n, d, rms)


def align_normal(pose: RigidTransform, normal) -> RigidTransform:
    """Replace a pose's normal with ``normal`` by the smallest rotation."""
    r = pose.matrix
    a = r[:, 2]
    b = np.asarray(normal, dtype=float) / np.linalg.norm(normal)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-15:
        return pose
    k = axis / s
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    angle = np.arctan2(s, c)
    rot = np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx
    return RigidTransform.from_matrix(rot @ r, pose.translation)


def disambiguate_bundle(cands: PoseCandidateSet, plane: BundlePlane) -> RigidTransform:
    """Orientation from the bundle plane; in-plane heading from the closest candidate."""
    best = max(cands.candidates, key=lambda c: float(np.dot(c.matrix[:, 2], plane.normal)))
    return align_normal(best, plane.normal)


# -- ENU chain ---------------------------------------------------------------------

def pad_relative_enu(pad_pose_cam: RigidTransform, camera_attitude=None, *,
                     gimbal_pitch: float = -np.pi / 2, gimbal_yaw: float = 0.0,
                     drone_yaw: float = 0.0, use_marker_orientation: bool = False,
                     pad_yaw: float = 0.0) -> EnuVector:
    """Pad position relative to the drone, ENU metres.

    The camera attitude is either given directly (camera IMU) or chained from
    a level airframe heading ``drone_yaw`` carrying a gimbal at
    ``gimbal_pitch``/``gimbal_yaw``; the marker translation is then rotated
    into ENU and the marker's orientation is never used.

    With ``use_marker_orientation`` the drone instead localises itself in the
    marker's frame (whose heading in ENU is ``pad_yaw``), trusting the marker
    rotation. A mirrored candidate then reflects the horizontal offset
    through the pad.
    """
    t = pad_pose_cam.translation
    if use_marker_orientation:
        return EnuVector.from_array(rot_z(pad_yaw) @ (pad_pose_cam.matrix.T @ t))
    if camera_attitude is None:
        camera_attitude = attitude_from_angles(gimbal_pitch, drone_yaw + gimbal_yaw)
    return EnuVector.from_array(camera_rotation(camera_attitude) @ t)


# -- ambiguity evaluation --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AmbiguityFrame:
    """One labelled frame: true marker->camera pose plus what the camera saw."""

    truth: RigidTransform
    observation: MarkerObservation | None
    camera_attitude: np.ndarray
    intrinsics: CameraIntrinsics | None = None
    candidates: PoseCandidateSet | None = None
    bundle_positions: np.ndarray | None = None


@dataclass
class StrategyCounts:
    total_frames: int = 0
    wrong_choice_frames: int = 0
    rejected_frames: int = 0

    @property
    def wrong_choice_rate(self) -> float:
        return self.wrong_choice_frames / self.total_frames if self.total_frames else 0.0


@dataclass
class AmbiguityReport:
    total_frames: int
    per_strategy: dict = field(default_factory=dict)

    def rate(self, strategy: str) -> float:
        return self.per_strategy[strategy].wrong_choice_rate

    @property
    def wrong_choice_frames(self) -> dict:
        return {k: v.wrong_choice_frames for k, v in self.per_strategy.items()}

    def rows(self) -> list[dict]:
        return [{"strategy": k, "total_frames": v.total_frames,
                 "wrong_choice_frames": v.wrong_choice_frames,
                 "rejected_frames": v.rejected_frames,
                 "wrong_choice_rate": v.wrong_choice_rate}
                for k, v in self.per_strategy.items()]


def choose(strategy: str, frame: AmbiguityFrame, intr: CameraIntrinsics | None = None,
           cands: PoseCandidateSet | None = None) -> RigidTransform:
    if cands is None:
        cands = frame.candidates
    if cands is None:
        cands = estimate_planar_pose(frame.observation, frame.intrinsics or intr)
    if strategy == "reprojection":
        return disambiguate_reprojection(cands)
    if strategy == "gravity":
        return disambiguate_gravity(cands, frame.camera_attitude)
    if strategy == "bundle":
        if frame.bundle_positions is None:
            raise ValueError("bundle strategy needs bundle_positions on every frame")
        return disambiguate_bundle(cands, regress_bundle_plane(frame.bundle_positions))
    raise ValueError(f"unknown strategy {strategy!r}")


def _frame_outcomes(frame: AmbiguityFrame, strategies: tuple, intr) -> tuple:
    """Per strategy: 1 wrong, 0 right, -1 refused (no upward candidate)."""
    cands = frame.candidates
    if cands is None:
        cands = estimate_planar_pose(frame.observation, frame.intrinsics or intr)
    out = []
    for strategy in strategies:
        try:
            pose = choose(strategy, frame, intr, cands)
        except NoUpwardCandidate:
            out.append(-1)
            continue
        err = rotation_angle(pose.matrix, frame.truth.matrix)
        out.append(int(err > WRONG_CHOICE_THRESHOLD))
    return tuple(out)


def evaluate_ambiguity(dataset: Sequence[AmbiguityFrame], strategies: Iterable[str] = ("reprojection", "gravity"),
                       intr: CameraIntrinsics | None = None, map_fn: Callable = map) -> AmbiguityReport:
    """Wrong-choice counts per strategy.

    A frame is wrong when the chosen rotation is more than 45 degrees from the
    truth. Frames a strategy refuses (gravity finding no upward normal) are
    counted separately and not as wrong. ``map_fn`` may be a parallel map;
    only sums are taken, so completion order cannot change the report.
    """
    dataset = list(dataset)
    strategies = tuple(strategies)
    if not dataset:
        raise EmptyDataset("no frames to evaluate")
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    outcomes = np.array(list(map_fn(lambda f: _frame_outcomes(f, strategies, intr), dataset)), dtype=int)
    report = AmbiguityReport(total_frames=len(dataset))
    for j, strategy in enumerate(strategies):
        col = outcomes[:, j]
        report.per_strategy[strategy] = StrategyCounts(
            total_frames=len(col),
            wrong_choice_frames=int(np.sum(col == 1)),
            rejected_frames=int(np.sum(col == -1)),
        )
    return report


# -- synthetic datasets and CSV fixtures ------------------------------------------

INTRINSICS_REGISTRY = {
    "default": CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480),
    "d455_rgb": CameraIntrinsics(640.0, 640.0, 640.0, 360.0, 1280, 720),
}

CSV_COLUMNS = (
    ["qw", "qx", "qy", "qz", "tx", "ty", "tz"]
    + [f"{a}{i}" for i in range(4) for a in ("u", "v")]
    + ["intrinsics_id", "side_length", "att_qw", "att_qx", "att_qy", "att_qz"]
)


def synthesize_dataset(n_frames: int, seed: int, *, noise_px: float = 0.5, max_tilt_deg: float = 15.0,
                       range_m: tuple = (1.0, 8.0), side_length: float = 0.5,
                       attitude_error_deg: float = 2.0, intrinsics_id: str = "default",
                       bundle: bool = False, max_obliquity_deg: float = 60.0) -> list[AmbiguityFrame]:
    """Horizontal pads seen by a camera whose attitude is known up to a small error.

    The camera sits at a random range and viewing obliquity (angle between the
    viewing ray and the pad normal) and is pointed near the pad with a random
    pointing offset; its roll/pitch relative to the line of sight is within
    ``max_tilt_deg``. The reported attitude carries up to
    ``attitude_error_deg`` of error. Frames where the pad leaves the image are
    resampled.
    """
    intr = INTRINSICS_REGISTRY[intrinsics_id]
    rng = np.random.default_rng(seed)
    model = marker_model_corners(side_length)
    frames = []
    while len(frames) < n_frames:
        rng_ = rng.uniform(*range_m)
        obliq = np.radians(rng.uniform(0.0, max_obliquity_deg))
        az = rng.uniform(-np.pi, np.pi)
        cam_pos = rng_ * np.array([np.sin(obliq) * np.cos(az), np.sin(obliq) * np.sin(az), np.cos(obliq)])
        # look-at the pad centre, then perturb the pointing
        fwd = -cam_pos / np.linalg.norm(cam_pos)
        heading = rng.uniform(-np.pi, np.pi)
        ref = np.array([np.cos(heading), np.sin(heading), 0.0])
        right = np.cross(fwd, ref)
        if np.linalg.norm(right) < 1e-6:
            right = np.array([1.0, 0.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        r_wc = np.column_stack([right, down, fwd])
        tilt = np.radians(rng.uniform(0.0, max_tilt_deg))
        tilt_axis = rng.normal(size=3)
        tilt_axis -= np.dot(tilt_axis, fwd) * fwd
        tilt_axis /= np.linalg.norm(tilt_axis)
        r_wc = _axis_angle_matrix(tilt_axis, tilt) @ r_wc
        pad_yaw = rng.uniform(-np.pi, np.pi)
        r_wm = rot_z(pad_yaw)
        r_cm = r_wc.T @ r_wm
        t_cm = r_wc.T @ (-cam_pos)
        truth = RigidTransform.from_matrix(r_cm, t_cm)
        pts = truth.apply(model)
        if np.any(pts[:, 2] <= 0.05):
            continue
        uv = np.column_stack([intr.fx * pts[:, 0] / pts[:, 2] + intr.cx, intr.fy * pts[:, 1] / pts[:, 2] + intr.cy])
        uv = uv + rng.normal(scale=noise_px, size=uv.shape)
        if np.any(uv < 0) or np.any(uv[:, 0] >= intr.width) or np.any(uv[:, 1] >= intr.height):
            continue
        att_true = matrix_to_quat(r_wc @ OPTICAL_TO_BODY.T)
        err_axis = rng.normal(size=3)
        err_axis /= np.linalg.norm(err_axis)
        err = _axis_angle_matrix(err_axis, np.radians(rng.uniform(0.0, attitude_error_deg)))
        att_meas = matrix_to_quat(err @ quat_to_matrix(att_true))
        obs = MarkerObservation(marker_id=0, side_length=side_length, corners=uv)
        bundle_positions = None
        if bundle:
            bundle_positions = _bundle_positions(truth, side_length, rng, intr, noise_px)
        frames.append(AmbiguityFrame(truth, obs, att_meas, intr, bundle_positions=bundle_positions))
    return frames


def _axis_angle_matrix(axis, angle) -> np.ndarray:
    k = np.asarray(axis, dtype=float)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx


def _bundle_positions(truth: RigidTransform, side_length: float, rng, intr, noise_px) -> np.ndarray:
    """Estimated centres of four satellite markers laid out around the main one."""
    offsets = 1.5 * side_length * np.array([[1, 1, 0], [-1, 1, 0], [-1, -1, 0], [1, -1, 0]], dtype=float)
    model = marker_model_corners(side_length)
    out = []
    for off in offsets:
        pts = truth.apply(model + off)
        uv = np.column_stack([intr.fx * pts[:, 0] / pts[:, 2] + intr.cx, intr.fy * pts[:, 1] / pts[:, 2] + intr.cy])
        uv = uv + rng.normal(scale=noise_px, size=uv.shape)
        try:
            cands = estimate_planar_pose(MarkerObservation(0, side_length, corners=uv), intr)
            out.append(cands.best.translation)
        except (DegenerateObservation, BehindCamera):
            out.append(truth.apply(off))
    return np.asarray(out)


def write_dataset_csv(path, frames: Sequence[AmbiguityFrame], intrinsics_id: str = "default") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for f in frames:
            corners = np.asarray(f.observation.corners).reshape(-1)
            w.writerow([repr(float(x)) for x in f.truth.to_array()]
                       + [repr(float(x)) for x in corners]
                       + [intrinsics_id, repr(float(f.observation.side_length))]
                       + [repr(float(x)) for x in f.camera_attitude])


class DatasetFormatError(ValueError):
    pass


def read_dataset_csv(path) -> list[AmbiguityFrame]:
    """Parse a fixture written by ``write_dataset_csv``; columns are ``CSV_COLUMNS`` in order."""
    frames = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDataset(f"{path}: empty file")
        if [h.strip() for h in header] != CSV_COLUMNS:
            raise DatasetFormatError(f"{path}: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise DatasetFormatError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            try:
                pose = [float(x) for x in row[0:7]]
                corners = np.array([float(x) for x in row[7:15]]).reshape(4, 2)
                intr_id = row[15].strip()
                side = float(row[16])
                att = quat_canonical([float(x) for x in row[17:21]])
                intr = INTRINSICS_REGISTRY[intr_id]
                truth = RigidTransform.from_array(pose)
                obs = MarkerObservation(marker_id=0, side_length=side, corners=corners)
            except (ValueError, KeyError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
            frames.append(AmbiguityFrame(truth, obs, att, intr))
    if not frames:
        raise EmptyDataset(f"{path}: no frames")
    return frames
