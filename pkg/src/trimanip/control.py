"""Execution-time controllers: PD joint tracking, wrench PD with
constrained tip-force distribution, drop detection and tip adjustments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Wrench, compose, inverse, rotation_to_vector
from .grasp import FrictionModel, Grasp, distribute_forces, grasp_matrix
from .primitives import PrimitivePlan, _check_ik_chain, _segment_waypoints
from .robot import JointState, RobotModel, forward_kinematics, gravity_torques, jacobian

DEFAULT_TAU_MAX = 0.36


class NotGrasped(Exception):
    pass


class AdjustmentInfeasible(Exception):
    pass


@dataclass
class PDGains:
    kp: np.ndarray = field(default_factory=lambda: np.full(9, 10.0))
    kd: np.ndarray = field(default_factory=lambda: np.full(9, 0.3))

    def __post_init__(self):
        self.kp = np.broadcast_to(np.asarray(self.kp, dtype=float), (9,)).copy()
        self.kd = np.broadcast_to(np.asarray(self.kd, dtype=float), (9,)).copy()
        if np.any(self.kp < 0) or np.any(self.kd < 0):
            raise ValueError("PD gains must be nonnegative")


@dataclass
class WrenchPDGains:
    kp_pos: float = 200.0
    kd_pos: float = 10.0
    kp_rot: float = 2.0
    kd_rot: float = 0.1

    def __post_init__(self):
        if min(self.kp_pos, self.kd_pos, self.kp_rot, self.kd_rot) < 0:
            raise ValueError("wrench PD gains must be nonnegative")


def pd_torques(
    gains: PDGains,
    target_angles: np.ndarray,
    state: JointState,
    tau_max: float = DEFAULT_TAU_MAX,
) -> np.ndarray:
    """tau = kp*(q_t - q) - kd*qdot, clamped per joint."""
    err = np.asarray(target_angles, dtype=float) - state.angles
    tau = gains.kp * err - gains.kd * state.velocities
    return np.clip(tau, -tau_max, tau_max)


def saturate_wrench(
    grasp: Grasp,
    object_pose: Pose,
    target: Wrench,
    friction: FrictionModel,
    f_max: float,
    bisection_iters: int = 16,
) -> tuple[np.ndarray, float]:
    """Distribute a wrench, bisecting its magnitude down until feasible.

    The zero wrench is always feasible (zero forces), so bisection on the
    scale factor terminates; returns (forces, achieved scale).
    """
    forces = distribute_forces(grasp, object_pose, target, friction, f_max)
    if forces is not None:
        return forces, 1.0
    lo, hi = 0.0, 1.0
    best = np.zeros((3, 3))
    for _ in range(bisection_iters):
        mid = 0.5 * (lo + hi)
        scaled = Wrench.from_vector(mid * target.as_vector())
        forces = distribute_forces(grasp, object_pose, scaled, friction, f_max)
        if forces is None:
            hi = mid
        else:
            best = forces
            lo = mid
    return best, lo


def force_control_torques(
    object_pose: Pose,
    object_velocity: np.ndarray,
    target_pose: Pose,
    grasp: Grasp,
    gains: WrenchPDGains,
    friction: FrictionModel,
    model: RobotModel,
    joints: np.ndarray,
    f_max: float = 10.0,
    tau_max: float = DEFAULT_TAU_MAX,
) -> np.ndarray:
    """Wrench PD -> constrained tip forces -> Jacobian-transpose torques.

    The rotational error is the axis-angle of target * current^-1; the
    requested wrench is scaled down by bisection when it leaves the
    grasp's feasible wrench set. Gravity compensation is always included,
    so the output equals the gravity terms exactly at zero error.
    """
    if grasp is None or grasp.joints is None:
        raise NotGrasped("force control requires an attached grasp")
    vel = np.asarray(object_velocity, dtype=float).reshape(6)
    pos_err = target_pose.position - object_pose.position
    rot_err = rotation_to_vector(
        compose(target_pose, inverse(object_pose)).orientation
    )
    wrench = Wrench(
        gains.kp_pos * pos_err - gains.kd_pos * vel[:3],
        gains.kp_rot * rot_err - gains.kd_rot * vel[3:],
    )
    if np.linalg.norm(wrench.as_vector()) < 1e-15:
        forces = np.zeros((3, 3))
    else:
        forces, _ = saturate_wrench(grasp, object_pose, wrench, friction, f_max)
    tau = gravity_torques(model, joints)
    for finger in range(3):
        jac = jacobian(model, joints, finger)
        tau[3 * finger : 3 * finger + 3] += jac.T @ forces[grasp.assignment[finger]]
    return np.clip(tau, -tau_max, tau_max)


@dataclass
class DropDetector:
    """Debounced drop detection from pose deviation or lost tip contacts.

    A drop is declared after ``n_consecutive`` observations deviating more
    than ``position_threshold`` from the plan's expected pose, or the same
    number of steps with every tip contact lost.
    """

    position_threshold: float = 0.05
    n_consecutive: int = 5
    deviation_count: int = 0
    contact_loss_count: int = 0

    def reset(self) -> None:
        self.deviation_count = 0
        self.contact_loss_count = 0

    def update(
        self,
        expected_pose: Pose,
        observed_pose: Pose | None,
        tip_contacts: np.ndarray | None = None,
    ) -> bool:
        if observed_pose is not None:
            deviation = float(
                np.linalg.norm(observed_pose.position - expected_pose.position)
            )
            if deviation > self.position_threshold:
                self.deviation_count += 1
            else:
                self.deviation_count = 0
        if tip_contacts is not None:
            if not np.any(tip_contacts):
                self.contact_loss_count += 1
            else:
                self.contact_loss_count = 0
        return (
            self.deviation_count >= self.n_consecutive
            or self.contact_loss_count >= self.n_consecutive
        )


def detect_drop(
    detector: DropDetector,
    expected_pose: Pose,
    observed_pose: Pose | None,
    tip_contacts: np.ndarray | None = None,
) -> bool:
    return detector.update(expected_pose, observed_pose, tip_contacts)


def clamp_residual_transform(
    observed: Pose,
    goal: Pose,
    max_translation: float = 0.03,
    max_rotation: float = 0.2,
    match_orientation: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Clamped world-frame correction taking observed toward goal.

    Returns (translation, rotation vector); the rotation acts about the
    observed object center.
    """
    translation = goal.position - observed.position
    n = float(np.linalg.norm(translation))
    if n > max_translation:
        translation = translation * (max_translation / n)
    if match_orientation:
        rotvec = rotation_to_vector(compose(goal, inverse(observed)).orientation)
        a = float(np.linalg.norm(rotvec))
        if a > max_rotation:
            rotvec = rotvec * (max_rotation / a)
    else:
        rotvec = np.zeros(3)
    return translation, rotvec


def _rotvec_matrix(rotvec: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(rotvec))
    if angle < 1e-15:
        return np.eye(3)
    axis = rotvec / angle
    c, s = math.cos(angle), math.sin(angle)
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return c * np.eye(3) + s * k + (1 - c) * np.outer(axis, axis)


def tip_adjustment_plan(
    final_observed: Pose,
    goal: Pose,
    grasp: Grasp,
    model: RobotModel,
    current_joints: np.ndarray,
    max_translation: float = 0.03,
    max_rotation: float = 0.2,
    match_orientation: bool = True,
) -> PrimitivePlan:
    """Corrective fingertip motion closing the residual to the goal pose.

    The clamped residual transform is applied rigidly to all fingertip
    positions, rotating about the observed object center, so pairwise tip
    distances are preserved. Raises AdjustmentInfeasible when the adjusted
    tips are unreachable.
    """
    if grasp is None:
        raise NotGrasped("tip adjustment requires a grasped object")
    translation, rotvec = clamp_residual_transform(
        final_observed, goal, max_translation, max_rotation, match_orientation
    )
    if np.linalg.norm(translation) < 1e-12 and np.linalg.norm(rotvec) < 1e-12:
        return PrimitivePlan(np.zeros((0, 3, 3)), np.zeros((0, 3), dtype=bool))
    rot = _rotvec_matrix(rotvec)
    center = final_observed.position
    tips = forward_kinematics(model, current_joints)
    new_tips = (tips - center) @ rot.T + center + translation
    active = np.ones(3, dtype=bool)
    waypoints = _segment_waypoints(tips, new_tips, active)
    if _check_ik_chain(model, waypoints, active, current_joints) is None:
        raise AdjustmentInfeasible("adjusted fingertip targets unreachable")
    wp = np.array(waypoints)
    return PrimitivePlan(wp, np.tile(active, (len(wp), 1)))
