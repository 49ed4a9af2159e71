"""Kinematics, Jacobians, inverse kinematics and gravity torques for the
three-finger platform.

The robot is described declaratively (JSON): three identical fingers, each
a serial chain of three revolute joints. A joint is a rotation about a
fixed axis in the parent frame, preceded by a fixed translation; the
fingertip is a final fixed translation. All quantities are SI.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FilePath

import numpy as np

from .geometry import quat_from_yaw, quat_to_matrix

N_FINGERS = 3
N_JOINTS_PER_FINGER = 3
N_DOF = N_FINGERS * N_JOINTS_PER_FINGER

_DATA_DIR = FilePath(__file__).parent / "data"
NOMINAL_ROBOT_PATH = _DATA_DIR / "robot_nominal.json"


@dataclass
class JointDef:
    axis: np.ndarray          # unit rotation axis in the parent frame
    offset: np.ndarray        # translation from previous joint frame, meters
    lower: float
    upper: float

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(self.axis)
        if n < 1e-12:
            raise ValueError("joint axis must be nonzero")
        self.axis = self.axis / n
        self.offset = np.asarray(self.offset, dtype=float).reshape(3)
        if not self.lower < self.upper:
            raise ValueError("joint limits must satisfy lower < upper")


@dataclass
class FingerDef:
    base_position: np.ndarray
    base_orientation: np.ndarray      # (w,x,y,z)
    joints: list[JointDef]
    tip_offset: np.ndarray
    link_radii: list[float]           # collision capsule radius per link
    link_masses: list[float]          # kg, center of mass at mid-link

    def __post_init__(self):
        self.base_position = np.asarray(self.base_position, dtype=float).reshape(3)
        self.base_orientation = np.asarray(self.base_orientation, dtype=float).reshape(4)
        self.tip_offset = np.asarray(self.tip_offset, dtype=float).reshape(3)
        if len(self.joints) != N_JOINTS_PER_FINGER:
            raise ValueError("each finger needs exactly 3 joints")
        if len(self.link_radii) != N_JOINTS_PER_FINGER or any(r <= 0 for r in self.link_radii):
            raise ValueError("need 3 positive capsule radii per finger")
        if len(self.link_masses) != N_JOINTS_PER_FINGER:
            raise ValueError("need 3 link masses per finger")


@dataclass
class RobotModel:
    """Immutable description of the platform; all operations are pure."""

    fingers: list[FingerDef]
    fingertip_radius: float
    workspace_radius: float
    home_angles: np.ndarray
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        if len(self.fingers) != N_FINGERS:
            raise ValueError("model must have exactly 3 fingers")
        self.home_angles = np.asarray(self.home_angles, dtype=float).reshape(N_DOF)
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        if self.fingertip_radius <= 0 or self.workspace_radius <= 0:
            raise ValueError("radii must be positive")

    @property
    def joint_limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([j.lower for f in self.fingers for j in f.joints])
        hi = np.array([j.upper for f in self.fingers for j in f.joints])
        return lo, hi

    def clamp_to_limits(self, angles: np.ndarray) -> np.ndarray:
        lo, hi = self.joint_limits
        return np.clip(angles, lo, hi)

    def within_limits(self, angles: np.ndarray, tol: float = 1e-9) -> bool:
        lo, hi = self.joint_limits
        return bool(np.all(angles >= lo - tol) and np.all(angles <= hi + tol))

    def total_link_length(self, finger: int = 0) -> float:
        f = self.fingers[finger]
        return float(
            sum(np.linalg.norm(j.offset) for j in f.joints[1:]) + np.linalg.norm(f.tip_offset)
        )

    @staticmethod
    def from_dict(cfg: dict) -> "RobotModel":
        fingers = []
        for fc in cfg["fingers"]:
            joints = [
                JointDef(j["axis"], j["offset"], j["lower"], j["upper"]) for j in fc["joints"]
            ]
            fingers.append(
                FingerDef(
                    fc["base_position"],
                    fc["base_orientation"],
                    joints,
                    fc["tip_offset"],
                    fc["link_radii"],
                    fc["link_masses"],
                )
            )
        return RobotModel(
            fingers=fingers,
            fingertip_radius=cfg["fingertip_radius"],
            workspace_radius=cfg["workspace_radius"],
            home_angles=cfg["home_angles"],
            gravity=cfg.get("gravity", [0.0, 0.0, -9.81]),
        )

    @staticmethod
    def from_json(path) -> "RobotModel":
        with open(path) as fh:
            return RobotModel.from_dict(json.load(fh))


def nominal_robot_dict() -> dict:
    """Nominal platform: fingers on a 0.08 m circle at 0.33 m height,
    120 degrees apart, each with a 0.08 m base drop and two 0.16 m links.

    At all-zero angles every finger points straight down, so the home tip
    positions are base_position + (0, 0, -0.40). The dimensions were chosen
    so the whole task volume (workspace cylinder up to 0.25 m) stays
    reachable with margin; they live in the shipped JSON, never in code
    that consumes a model.
    """
    fingers = []
    for i in range(N_FINGERS):
        alpha = 2.0 * math.pi * i / 3.0
        base = [0.08 * math.cos(alpha), 0.08 * math.sin(alpha), 0.33]
        # local +x points from the base toward the workspace center
        q = quat_from_yaw(alpha + math.pi)
        fingers.append(
            {
                "base_position": base,
                "base_orientation": [float(v) for v in q],
                "joints": [
                    {"axis": [1, 0, 0], "offset": [0, 0, 0], "lower": -1.6, "upper": 1.6},
                    {"axis": [0, 1, 0], "offset": [0, 0, -0.08], "lower": -2.2, "upper": 2.2},
                    {"axis": [0, 1, 0], "offset": [0, 0, -0.16], "lower": -2.9, "upper": 2.9},
                ],
                "tip_offset": [0, 0, -0.16],
                "link_radii": [0.014, 0.014, 0.0175],
                "link_masses": [0.1, 0.1, 0.1],
            }
        )
    return {
        "fingertip_radius": 0.0175,
        "workspace_radius": 0.195,
        "fingers": fingers,
        "home_angles": [0.0, 1.7, -2.1] * N_FINGERS,
        "gravity": [0.0, 0.0, -9.81],
    }


def nominal_robot_model() -> RobotModel:
    return RobotModel.from_dict(nominal_robot_dict())


@dataclass
class JointState:
    angles: np.ndarray
    velocities: np.ndarray = None

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float).reshape(N_DOF).copy()
        if self.velocities is None:
            self.velocities = np.zeros(N_DOF)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(N_DOF).copy()


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    c, s = math.cos(angle), math.sin(angle)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return c * np.eye(3) + s * k + (1 - c) * np.outer(axis, axis)


@dataclass
class FingerFrames:
    """World-frame kinematic quantities for one finger at given angles."""

    joint_positions: np.ndarray   # 3x3, row j = world position of joint j
    joint_axes: np.ndarray        # 3x3, row j = world rotation axis of joint j
    tip: np.ndarray               # fingertip center


def finger_frames(model: RobotModel, angles3: np.ndarray, finger: int) -> FingerFrames:
    f = model.fingers[finger]
    r = quat_to_matrix(f.base_orientation)
    p = f.base_position.copy()
    jp = np.zeros((3, 3))
    ja = np.zeros((3, 3))
    for j, jd in enumerate(f.joints):
        p = p + r @ jd.offset
        a = r @ jd.axis
        jp[j] = p
        ja[j] = a
        r = r @ _axis_rotation(jd.axis, float(angles3[j]))
    tip = p + r @ f.tip_offset
    return FingerFrames(jp, ja, tip)


def forward_kinematics(model: RobotModel, angles: np.ndarray) -> np.ndarray:
    """Fingertip center positions in the world frame, one row per finger."""
    angles = np.asarray(angles, dtype=float).reshape(N_DOF)
    tips = np.zeros((N_FINGERS, 3))
    for i in range(N_FINGERS):
        tips[i] = finger_frames(model, angles[3 * i : 3 * i + 3], i).tip
    return tips


def jacobian(model: RobotModel, angles: np.ndarray, finger: int) -> np.ndarray:
    """3x3 positional Jacobian of one fingertip w.r.t. its three joints."""
    angles = np.asarray(angles, dtype=float).reshape(N_DOF)
    fr = finger_frames(model, angles[3 * finger : 3 * finger + 3], finger)
    jac = np.zeros((3, 3))
    for j in range(3):
        jac[:, j] = np.cross(fr.joint_axes[j], fr.tip - fr.joint_positions[j])
    return jac


@dataclass
class IKFailure:
    finger: int
    residual: float


@dataclass
class IKResult:
    """Per-finger IK outcome; partial failure never aborts the query."""

    angles: np.ndarray                 # full 9-vector; failed fingers keep the seed
    success: np.ndarray                # bool per finger
    failures: list[IKFailure]

    @property
    def all_ok(self) -> bool:
        return bool(np.all(self.success))


def _wrap_pi(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _roll_planar_pattern(model: RobotModel, finger: int):
    """Detect the nominal chain shape: a roll joint at the base followed by
    a planar 2R pair with equal-axis pitch joints and straight -z links.

    Returns (drop, l1, l2) segment lengths or None if the finger does not
    match, in which case IK falls back to iterative solving only.
    """
    f = model.fingers[finger]
    j0, j1, j2 = f.joints
    ez = np.array([0.0, 0.0, -1.0])
    if np.linalg.norm(j0.offset) > 1e-12 or abs(j0.axis @ np.array([1.0, 0, 0]) - 1) > 1e-12:
        return None
    for jd in (j1, j2):
        if abs(jd.axis @ np.array([0.0, 1.0, 0]) - 1) > 1e-12:
            return None
    for off in (j1.offset, j2.offset, f.tip_offset):
        n = np.linalg.norm(off)
        if n < 1e-9 or abs(off @ ez - n) > 1e-12:
            return None
    return (
        float(np.linalg.norm(j1.offset)),
        float(np.linalg.norm(j2.offset)),
        float(np.linalg.norm(f.tip_offset)),
    )


def _analytic_branches(model: RobotModel, finger: int, target: np.ndarray):
    """All closed-form joint solutions for the roll + planar-2R chain.

    Up to four branches (two base rolls x two elbow bends); callers filter
    by joint limits and polish with a damped least-squares step.
    """
    pattern = _roll_planar_pattern(model, finger)
    if pattern is None:
        return None
    drop, l1, l2 = pattern
    f = model.fingers[finger]
    rb = quat_to_matrix(f.base_orientation)
    t = rb.T @ (np.asarray(target, dtype=float) - f.base_position)
    sols = []
    if abs(t[1]) < 1e-15 and abs(t[2]) < 1e-15:
        rolls = [0.0]  # target on the roll axis: roll is free, pick zero
    else:
        phi = math.atan2(-t[1], t[2])
        rolls = [_wrap_pi(phi), _wrap_pi(phi + math.pi)]
    for phi in rolls:
        c, s = math.cos(phi), math.sin(phi)
        # coordinates in the rolled frame; y-component is zero by construction
        vx = t[0]
        vz = -s * t[1] + c * t[2]
        x_t = -vx / 1.0
        z_t = -(vz + drop)
        r2 = x_t * x_t + z_t * z_t
        cos_elbow = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
        if cos_elbow > 1.0 + 1e-9 or cos_elbow < -1.0 - 1e-9:
            continue
        cos_elbow = max(-1.0, min(1.0, cos_elbow))
        base_angle = math.atan2(x_t, z_t)
        for elbow in (math.acos(cos_elbow), -math.acos(cos_elbow)):
            # interior offset of the first link from the chord direction
            k1 = l1 + l2 * math.cos(elbow)
            k2 = l2 * math.sin(elbow)
            theta2 = _wrap_pi(base_angle - math.atan2(k2, k1))
            sols.append(np.array([phi, theta2, _wrap_pi(elbow)]))
    return sols


_GENERIC_RESTARTS = (
    np.array([0.0, 0.9, -1.8]),
    np.array([0.0, -0.9, 1.8]),
    np.array([0.0, 0.0, 0.0]),
    np.array([1.2, 0.6, -1.2]),
    np.array([-1.2, 0.6, -1.2]),
    np.array([1.2, -0.6, 1.2]),
    np.array([-1.2, -0.6, 1.2]),
)


def _dls_finger(
    model: RobotModel,
    finger: int,
    target: np.ndarray,
    q0: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    damping: float,
    max_iters: int,
    tol: float,
):
    """Damped least-squares refinement of one finger toward a tip target."""
    lam2 = damping * damping
    q = np.clip(q0, lo, hi)
    best_q, best_res = q, math.inf
    for _ in range(max_iters):
        fr = finger_frames(model, q, finger)
        err = target - fr.tip
        res = float(np.linalg.norm(err))
        if res < best_res:
            best_q, best_res = q, res
        if res < 0.2 * tol:
            break
        if res > 0.06:
            err = err * (0.06 / res)  # clamp error to stabilize large steps
        jac = np.zeros((3, 3))
        for j in range(3):
            jac[:, j] = np.cross(fr.joint_axes[j], fr.tip - fr.joint_positions[j])
        dq = jac.T @ np.linalg.solve(jac @ jac.T + lam2 * np.eye(3), err)
        step = float(np.linalg.norm(dq))
        if step > 0.5:
            dq *= 0.5 / step
        q = np.clip(q + dq, lo, hi)
    return best_q, best_res


def inverse_kinematics(
    model: RobotModel,
    tip_targets: np.ndarray,
    seed: np.ndarray,
    damping: float = 1e-3,
    max_iters: int = 100,
    tol: float = 1e-4,
) -> IKResult:
    """Damped least-squares IK, solved independently per finger.

    For the nominal roll + planar-2R finger shape the iteration is seeded
    from the exact closed-form branches (nearest to the caller's seed
    first), which makes every within-limits target solvable; other chain
    shapes fall back to a deterministic set of restart postures. Success
    for a finger means the final tip error is below ``tol`` and the angles
    respect the joint limits. Failures are reported per finger with the
    residual distance and never abort the whole query.
    """
    tip_targets = np.asarray(tip_targets, dtype=float).reshape(N_FINGERS, 3)
    seed = np.asarray(seed, dtype=float).reshape(N_DOF)
    out = seed.copy()
    success = np.zeros(N_FINGERS, dtype=bool)
    failures: list[IKFailure] = []
    lo, hi = model.joint_limits
    for i in range(N_FINGERS):
        sl = slice(3 * i, 3 * i + 3)
        flo, fhi = lo[sl], hi[sl]
        fseed = np.clip(seed[sl], flo, fhi)
        target = tip_targets[i]
        branches = _analytic_branches(model, i, target)
        if branches is not None:
            # branch enumeration is complete for this chain shape: no
            # within-limits branch means the target is truly unreachable,
            # so the only work left is a cheap residual estimate
            in_limits = [b for b in branches if np.all(b >= flo - 1e-9) and np.all(b <= fhi + 1e-9)]
            in_limits.sort(key=lambda b: float(np.linalg.norm(b - fseed)))
            seeds = in_limits
            budgets = [8] * len(seeds)
            if not seeds:
                cands = [np.clip(b, flo, fhi) for b in branches] or [fseed]
                best_q, best_res = fseed, math.inf
                for q in cands:
                    res = float(np.linalg.norm(target - finger_frames(model, q, i).tip))
                    if res < best_res:
                        best_q, best_res = q, res
                out[sl] = best_q
                failures.append(IKFailure(i, best_res))
                continue
        else:
            seeds = [fseed, model.home_angles[sl]] + [np.clip(r, flo, fhi) for r in _GENERIC_RESTARTS]
            budgets = [max_iters] * len(seeds)
        best_q, best_res = fseed, math.inf
        for s, iters in zip(seeds, budgets):
            q, res = _dls_finger(model, i, target, s, flo, fhi, damping, iters, tol)
            if res < best_res:
                best_q, best_res = q, res
            if res < tol:
                break
        out[sl] = best_q
        if best_res < tol:
            success[i] = True
        else:
            failures.append(IKFailure(i, best_res))
    return IKResult(out, success, failures)


def gravity_torques(model: RobotModel, angles: np.ndarray) -> np.ndarray:
    """Joint torques statically holding the link weights.

    Equals the gradient of the total gravitational potential energy, so a
    torque command of exactly this vector balances the arm.
    """
    angles = np.asarray(angles, dtype=float).reshape(N_DOF)
    tau = np.zeros(N_DOF)
    g_mag = -model.gravity  # weight force direction is -gravity on the com lift
    for i in range(N_FINGERS):
        f = model.fingers[i]
        fr = finger_frames(model, angles[3 * i : 3 * i + 3], i)
        # link j spans joint position j to the next joint position (or tip)
        ends = np.vstack([fr.joint_positions[1:], fr.tip])
        for j in range(3):
            com = 0.5 * (fr.joint_positions[j] + ends[j])
            w = f.link_masses[j] * g_mag
            for k in range(j + 1):
                col = np.cross(fr.joint_axes[k], com - fr.joint_positions[k])
                tau[3 * i + k] += float(np.dot(col, w))
    return tau


def finger_capsules(model: RobotModel, angles: np.ndarray):
    """Collision capsules at a configuration.

    Returns a list of (finger, link, p0, p1, radius); link 2 is the tip link.
    """
    angles = np.asarray(angles, dtype=float).reshape(N_DOF)
    caps = []
    for i in range(N_FINGERS):
        f = model.fingers[i]
        fr = finger_frames(model, angles[3 * i : 3 * i + 3], i)
        pts = np.vstack([f.base_position, fr.joint_positions[1:], fr.tip])
        # segment 0: base mount to joint 1; segments 1..2: links to the tip
        for j in range(3):
            caps.append((i, j, pts[j], pts[j + 1], f.link_radii[j]))
    return caps
