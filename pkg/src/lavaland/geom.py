"""Frames, rigid transforms, pinhole projection and gravity alignment.

Conventions used throughout the package:

* World frame is ENU: +x east, +y north, +z up.
* Camera optical frame: +z along the optical axis, +x image right, +y image down.
* Camera body frame: +x right, +y forward (optical axis), +z up. A camera
  attitude quaternion maps body-frame vectors into the world frame, so the
  identity attitude is a level camera looking north. Pitching it by -90 deg
  about +x points it straight down with the image top facing north.
* Quaternions are (w, x, y, z), unit norm, canonical sign w >= 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NonPositiveDepth",
    "CameraIntrinsics",
    "RigidTransform",
    "EnuVector",
    "quat_canonical",
    "quat_multiply",
    "quat_conjugate",
    "quat_to_matrix",
    "matrix_to_quat",
    "quat_from_axis_angle",
    "quat_angle",
    "rotation_angle",
    "rot_x",
    "rot_z",
    "OPTICAL_TO_BODY",
    "camera_rotation",
    "attitude_from_camera_rotation",
    "attitude_from_angles",
    "project",
    "project_points",
    "deproject",
    "deproject_range",
    "pixel_rays",
    "gravity_align",
]


class NonPositiveDepth(ValueError):
    """A point or depth at or behind the camera centre."""


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


# -- quaternions -----------------------------------------------------------

def quat_canonical(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalise quaternion {q!r}")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m) -> np.ndarray:
    """Shepperd's method; the result is canonical."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_canonical(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return quat_canonical(np.concatenate([[np.cos(h)], np.sin(h) * axis]))


def quat_angle(a, b) -> float:
    """Rotation angle (radians) between two unit quaternions."""
    d = abs(float(np.dot(a, b)))
    return 2.0 * float(np.arccos(min(1.0, d)))


def rotation_angle(ra, rb) -> float:
    """Angle of the relative rotation between two rotation matrices."""
    c = (np.trace(np.asarray(ra).T @ np.asarray(rb)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# -- value types ------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        f = float(0.5 * width / np.tan(np.radians(hfov_deg) / 2.0))
        return cls(f, f, width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Maps points from a source frame into a target frame: p' = R p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float)
        if q.shape != (4,):
            raise ValueError("rotation must be a (w, x, y, z) quaternion")
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError("rotation quaternion must have unit norm")
        t = np.asarray(self.translation, dtype=float)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 3-vector")
        object.__setattr__(self, "rotation", _readonly(quat_canonical(q)))
        object.__setattr__(self, "translation", _readonly(t))
        object.__setattr__(self, "_matrix", _readonly(quat_to_matrix(self.rotation)))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.array([1.0, 0, 0, 0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, rotation_matrix, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(matrix_to_quat(rotation_matrix), np.asarray(translation, dtype=float))

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self._matrix.T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self._matrix.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: x -> self(other(x))."""
        q = quat_multiply(self.rotation, other.rotation)
        t = self._matrix @ other.translation + self.translation
        return RigidTransform(q / np.linalg.norm(q), t)

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        rt = self._matrix.T
        return RigidTransform(quat_conjugate(self.rotation), -(rt @ self.translation))

    def almost_equal(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return (quat_angle(self.rotation, other.rotation) <= tol
                and float(np.max(np.abs(self.translation - other.translation))) <= tol)

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    @classmethod
    def from_array(cls, values) -> "RigidTransform":
        v = np.asarray(values, dtype=float)
        return cls(v[:4] / np.linalg.norm(v[:4]), v[4:7])

    def __repr__(self):
        q = ", ".join(f"{x:.6g}" for x in self.rotation)
        t = ", ".join(f"{x:.6g}" for x in self.translation)
        return f"RigidTransform(q=({q}), t=({t}))"


@dataclass(frozen=True)
class EnuVector:
    east: float
    north: float
    up: float

    def __post_init__(self):
        if not all(np.isfinite([self.east, self.north, self.up])):
            raise ValueError("ENU components must be finite")

    @classmethod
    def from_array(cls, v) -> "EnuVector":
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def to_array(self) -> np.ndarray:
        return np.array([self.east, self.north, self.up])

    @property
    def horizontal_norm(self) -> float:
        return float(np.hypot(self.east, self.north))


# -- camera attitude ---------------------------------------------------------

# columns: optical x, y, z expressed in the camera body frame
OPTICAL_TO_BODY = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, -1.0, 0.0],
])


def camera_rotation(attitude) -> np.ndarray:
    """Rotation matrix taking optical-frame vectors to ENU."""
    return quat_to_matrix(quat_canonical(attitude)) @ OPTICAL_TO_BODY


def attitude_from_camera_rotation(r_world_optical) -> np.ndarray:
    return matrix_to_quat(np.asarray(r_world_optical) @ OPTICAL_TO_BODY.T)


def attitude_from_angles(pitch: float, yaw: float = 0.0) -> np.ndarray:
    """Attitude of a camera with heading ``yaw`` (CCW from north) and ``pitch`` (negative = down)."""
    return matrix_to_quat(rot_z(yaw) @ rot_x(pitch))


# -- projection --------------------------------------------------------------

def project(intr: CameraIntrinsics, p) -> np.ndarray:
    x, y, z = (float(c) for c in p)
    if not z > 0.0:
        raise NonPositiveDepth(f"point has z={z}")
    return np.array([intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy])


def project_points(intr: CameraIntrinsics, points) -> np.ndarray:
    """Vectorised ``project`` for an (N, 3) array."""
    p = np.asarray(points, dtype=float)
    z = p[:, 2]
    if np.any(z <= 0.0):
        raise NonPositiveDepth("one or more points have z <= 0")
    return np.column_stack([intr.fx * p[:, 0] / z + intr.cx, intr.fy * p[:, 1] / z + intr.cy])


def deproject(intr: CameraIntrinsics, px, depth: float) -> np.ndarray:
    """Back-project a pixel at optical-axis depth ``depth`` (the z coordinate)."""
    if not depth > 0.0:
        raise NonPositiveDepth(f"depth={depth}")
    u, v = float(px[0]), float(px[1])
    return np.array([(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, float(depth)])


def pixel_rays(intr: CameraIntrinsics) -> np.ndarray:
    """Unit ray directions through every pixel centre, shape (H, W, 3), row-major."""
    u = np.arange(intr.width, dtype=float)
    v = np.arange(intr.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    d = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def deproject_range(intr: CameraIntrinsics, px, distance: float) -> np.ndarray:
    """Back-project a pixel whose value is the Euclidean distance along its ray."""
    if not distance > 0.0:
        raise NonPositiveDepth(f"distance={distance}")
    d = np.array([(px[0] - intr.cx) / intr.fx, (px[1] - intr.cy) / intr.fy, 1.0])
    return d * (distance / np.linalg.norm(d))


# -- gravity alignment -------------------------------------------------------

def gravity_align(attitude) -> RigidTransform:
    """Minimal rotation that levels the camera body frame.

    The returned rotation maps the gravity direction measured in the body
    frame onto (0, 0, -1) while leaving heading untouched: it is the swing
    part of the attitude's swing-twist split about world up.
    """
    r = quat_to_matrix(quat_canonical(attitude))
    g = r.T @ np.array([0.0, 0.0, -1.0])
    target = np.array([0.0, 0.0, -1.0])
    c = float(np.dot(g, target))
    axis = np.cross(g, target)
    s = float(np.linalg.norm(axis))
    if s < 1e-15:
        if c > 0:
            return RigidTransform.identity()
        # upside down: any horizontal axis is minimal, pick the body x axis
        return RigidTransform(quat_from_axis_angle([1.0, 0.0, 0.0], np.pi), np.zeros(3))
    angle = float(np.arctan2(s, c))
    return RigidTransform(quat_from_axis_angle(axis / s, angle), np.zeros(3))
