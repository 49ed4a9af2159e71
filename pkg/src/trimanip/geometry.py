"""Rigid-body poses, quaternion utilities and rotational projections.

Quaternions are stored as (w, x, y, z) Hamilton quaternions acting as
active rotations; poses map body-frame coordinates into the world frame.
Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_ATOL = 1e-9


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite quaternion")
    return q / n


def quat_mul(a, b) -> np.ndarray:
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


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> np.ndarray:
    """Rotation matrix to unit quaternion (Shepperd's branch selection)."""
    m = np.asarray(m, dtype=float)
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-15:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis / n])


def quat_from_yaw(yaw: float) -> np.ndarray:
    return np.array([math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector v by quaternion q (active)."""
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def quat_angle(q) -> float:
    """Rotation angle of q in [0, pi]."""
    return 2.0 * math.acos(min(1.0, abs(float(q[0]))))


def quat_slerp(qa, qb, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between unit quaternions."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(qa + t * (qb - qa))
    theta = math.acos(min(1.0, dot))
    sa = math.sin((1.0 - t) * theta) / math.sin(theta)
    sb = math.sin(t * theta) / math.sin(theta)
    return quat_normalize(sa * qa + sb * qb)


def rotation_to_vector(q) -> np.ndarray:
    """Axis-angle (rotation vector) of a unit quaternion, angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    w = min(1.0, q[0])
    angle = 2.0 * math.acos(w)
    s = math.sqrt(max(0.0, 1.0 - w * w))
    if s < 1e-12:
        return np.zeros(3)
    return angle * q[1:] / s


@dataclass
class Pose:
    """Rigid-body configuration: position in meters, unit quaternion (w,x,y,z).

    The quaternion is renormalized on construction so downstream
    composition never drifts away from the unit sphere.
    """

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3).copy()
        if not np.all(np.isfinite(self.position)):
            raise ValueError("pose position must be finite")
        self.orientation = quat_normalize(np.asarray(self.orientation, dtype=float).reshape(4))

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def transform_point(self, p) -> np.ndarray:
        return self.position + self.rotation_matrix() @ np.asarray(p, dtype=float)

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.rotation_matrix().T + self.position

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.orientation.copy())

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        pe, ae = pose_error(self, other)
        return pe <= tol and ae <= tol


@dataclass
class Wrench:
    """Force-torque pair acting on a rigid body (N, N*m)."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float).reshape(3).copy()
        self.torque = np.asarray(self.torque, dtype=float).reshape(3).copy()
        if not (np.all(np.isfinite(self.force)) and np.all(np.isfinite(self.torque))):
            raise ValueError("wrench components must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])

    @staticmethod
    def from_vector(v) -> "Wrench":
        v = np.asarray(v, dtype=float).reshape(6)
        return Wrench(v[:3], v[3:])


@dataclass
class CuboidShape:
    """Axis-aligned cuboid in its own frame, described by half-extents."""

    half_extents: np.ndarray

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3).copy()
        if not np.all(self.half_extents > 0):
            raise ValueError("cuboid half-extents must be positive")

    def resting_height(self, orientation=None) -> float:
        """Height of the center when resting on the ground.

        With an orientation, the half-extent of the object axis closest to
        the world vertical is used; otherwise the z half-extent.
        """
        if orientation is None:
            return float(self.half_extents[2])
        return float(self.half_extents[self.down_axis(orientation)])

    def down_axis(self, orientation) -> int:
        r = quat_to_matrix(orientation)
        return int(np.argmax(np.abs(r[2, :])))

    def yaw_symmetry_order(self) -> int:
        """Order of the yaw rotation group mapping the shape to itself."""
        return 4 if abs(self.half_extents[0] - self.half_extents[1]) < 1e-12 else 2

    def corners(self) -> np.ndarray:
        h = self.half_extents
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float
        )
        return signs * h


def compose(a: Pose, b: Pose) -> Pose:
    """Rigid-body composition a then b (b expressed in a's frame)."""
    return Pose(a.position + a.rotation_matrix() @ b.position, quat_mul(a.orientation, b.orientation))


def inverse(p: Pose) -> Pose:
    qc = quat_conj(p.orientation)
    return Pose(-(quat_to_matrix(qc) @ p.position), qc)


def yaw_of(q) -> float:
    """Yaw angle of the closest rotation about the world vertical axis.

    Maximizes trace(Rz(theta)^T R(q)); degenerate orientations (flat
    objective) return 0 deterministically.
    """
    r = quat_to_matrix(q)
    a = r[0, 0] + r[1, 1]
    b = r[1, 0] - r[0, 1]
    if abs(a) < 1e-12 and abs(b) < 1e-12:
        return 0.0
    return math.atan2(b, a)


def yaw_project(q) -> np.ndarray:
    """Project an orientation onto the subspace of yaw-only rotations."""
    return quat_from_yaw(yaw_of(q))


def _euler_zyx(q) -> tuple[float, float, float]:
    """Intrinsic Z-Y-X decomposition (yaw about world vertical applied last)."""
    r = quat_to_matrix(q)
    s = -r[2, 0]
    if abs(s) >= 1.0 - 1e-12:
        # gimbal lock: pitch at +/-90 deg, fold roll into yaw
        pitch = math.copysign(math.pi / 2, s)
        yaw = math.atan2(-r[0, 1], r[1, 1])
        roll = 0.0
    else:
        pitch = math.asin(max(-1.0, min(1.0, s)))
        yaw = math.atan2(r[1, 0], r[0, 0])
        roll = math.atan2(r[2, 1], r[2, 2])
    return yaw, pitch, roll


def _from_euler_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    qz = quat_from_yaw(yaw)
    qy = quat_from_axis_angle([0.0, 1.0, 0.0], pitch)
    qx = quat_from_axis_angle([1.0, 0.0, 0.0], roll)
    return quat_mul(quat_mul(qz, qy), qx)


def pitch_round(q) -> np.ndarray:
    """Round the pitch of an orientation to the nearest multiple of 90 deg.

    Uses the intrinsic Z-Y-X convention; a tie at exactly 45 deg rounds
    toward zero. Yaw and roll are preserved.
    """
    yaw, pitch, roll = _euler_zyx(q)
    half = math.pi / 2
    if abs(pitch) <= math.pi / 4:
        rounded = 0.0
    else:
        rounded = math.copysign(half, pitch)
    return quat_normalize(_from_euler_zyx(yaw, rounded, roll))


def pose_error(current: Pose, goal: Pose) -> tuple[float, float]:
    """Positional (Euclidean) and angular (geodesic) distance between poses.

    The angular term is 2*acos(|<q1,q2>|), in [0, pi]; the absolute value
    handles the quaternion double cover.
    """
    pos_err = float(np.linalg.norm(current.position - goal.position))
    dot = abs(float(np.dot(current.orientation, goal.orientation)))
    ang_err = 2.0 * math.acos(min(1.0, dot))
    return pos_err, ang_err
