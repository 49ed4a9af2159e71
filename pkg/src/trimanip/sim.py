"""Deterministic quasi-static world model.

Joints track commanded positions under a rate limit (torque commands go
through a first-order viscous model). A grasped object follows the rigid
transform of the fingertip triangle; excessive tip drift from the stored
contact geometry breaks the attachment and the object falls straight down.
Ungrasped objects rest on the ground. There is no inertia and no pushing:
motion happens only through grasp attachment, which keeps every episode
exactly reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import CuboidShape, Pose, matrix_to_quat, quat_from_yaw, quat_mul, pose_error
from .grasp import FrictionModel, Grasp, force_closure
from .robot import JointState, RobotModel, forward_kinematics

WORKSPACE_HEIGHT = 0.25


@dataclass
class NoiseModel:
    """Observation noise: jitter, yaw flips and missed detections."""

    pos_sigma: float = 0.0
    yaw_sigma: float = 0.0
    flip_prob: float = 0.0
    miss_prob: float = 0.0

    def __post_init__(self):
        if self.pos_sigma < 0 or self.yaw_sigma < 0:
            raise ValueError("noise sigmas must be nonnegative")
        for p in (self.flip_prob, self.miss_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("noise probabilities must be in [0, 1]")

    @staticmethod
    def phase3_default() -> "NoiseModel":
        return NoiseModel(pos_sigma=0.005, yaw_sigma=0.05, flip_prob=0.05, miss_prob=0.02)


@dataclass
class SimParams:
    dt: float = 0.01
    qdot_max: float = 3.0            # rad/s position-tracking rate limit
    torque_viscosity: float = 0.5    # N*m*s/rad, first-order torque model
    slip_threshold: float = 0.01     # m of tip drift before the grasp breaks
    attach_tol: float = 0.01         # m tip-to-target tolerance to attach


@dataclass
class Attachment:
    grasp: Grasp
    tip_offsets: np.ndarray          # fingertip centers in the object frame


@dataclass
class WorldState:
    object_pose: Pose
    joints: JointState
    attachment: Attachment | None = None
    step_index: int = 0


@dataclass
class SimCommand:
    """One control tick: joint position targets or torques, plus optional
    attach/detach requests."""

    position_targets: np.ndarray | None = None
    torques: np.ndarray | None = None
    attach: Grasp | None = None
    detach: bool = False


def rigid_fit(before: np.ndarray, after: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rigid transform (R, t) with after ~= R before + t.

    Orthogonal Procrustes on the point sets with the reflection branch
    removed.
    """
    b_mean = before.mean(axis=0)
    a_mean = after.mean(axis=0)
    h = (before - b_mean).T @ (after - a_mean)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return rot, a_mean - rot @ b_mean


def step(
    state: WorldState,
    command: SimCommand,
    model: RobotModel,
    shape: CuboidShape,
    friction: FrictionModel,
    params: SimParams,
) -> WorldState:
    """Advance the world by one tick; returns a new WorldState."""
    dt = params.dt
    q = state.joints.angles
    if command.torques is not None:
        qdot = np.clip(
            np.asarray(command.torques, dtype=float) / params.torque_viscosity,
            -params.qdot_max,
            params.qdot_max,
        )
        q_new = q + qdot * dt
    elif command.position_targets is not None:
        delta = np.asarray(command.position_targets, dtype=float) - q
        q_new = q + np.clip(delta, -params.qdot_max * dt, params.qdot_max * dt)
    else:
        q_new = q.copy()
    q_new = model.clamp_to_limits(q_new)
    joints = JointState(q_new, (q_new - q) / dt)

    prev_tips = forward_kinematics(model, q)
    tips = forward_kinematics(model, q_new)
    attachment = state.attachment
    pose = state.object_pose.copy()

    if command.detach:
        attachment = None

    if attachment is not None:
        rot, trans = rigid_fit(prev_tips, tips)
        pose = Pose(rot @ pose.position + trans, quat_mul(matrix_to_quat(rot), pose.orientation))
        expected = pose.transform_points(attachment.tip_offsets)
        drift = np.linalg.norm(expected - tips, axis=1)
        if drift.max() > params.slip_threshold:
            attachment = None
            pose = _rest_on_ground(pose, shape)
    else:
        pose = _rest_on_ground(pose, shape)

    if attachment is None and command.attach is not None:
        grasp = command.attach
        targets = grasp.tip_targets(pose, model.fingertip_radius)
        if float(np.linalg.norm(targets - tips, axis=1).max()) <= params.attach_tol:
            if force_closure(grasp, pose, friction):
                r = pose.rotation_matrix()
                offsets = (tips - pose.position) @ r
                attachment = Attachment(grasp, offsets)

    return WorldState(pose, joints, attachment, state.step_index + 1)


def _rest_on_ground(pose: Pose, shape: CuboidShape) -> Pose:
    rest = shape.resting_height(pose.orientation)
    if abs(pose.position[2] - rest) < 1e-12:
        return pose
    return Pose([pose.position[0], pose.position[1], rest], pose.orientation)


def observe(state: WorldState, noise: NoiseModel, rng: np.random.Generator) -> Pose | None:
    """Noisy object pose: Gaussian position/yaw jitter, occasional 180
    degree yaw flips, or None for a missed detection."""
    if noise.miss_prob > 0 and rng.uniform() < noise.miss_prob:
        return None
    pos = state.object_pose.position + rng.normal(0.0, noise.pos_sigma, 3) if noise.pos_sigma > 0 else state.object_pose.position.copy()
    quat = state.object_pose.orientation
    if noise.yaw_sigma > 0:
        quat = quat_mul(quat_from_yaw(rng.normal(0.0, noise.yaw_sigma)), quat)
    if noise.flip_prob > 0 and rng.uniform() < noise.flip_prob:
        quat = quat_mul(quat_from_yaw(math.pi), quat)
    return Pose(pos, quat)


def tip_contact_flags(state: WorldState, model: RobotModel, contact_tol: float = 0.005) -> np.ndarray:
    """Per-finger contact sensor: tip within tolerance of its attachment
    geometry. All false when nothing is attached."""
    if state.attachment is None:
        return np.zeros(3, dtype=bool)
    tips = forward_kinematics(model, state.joints.angles)
    expected = state.object_pose.transform_points(state.attachment.tip_offsets)
    return np.linalg.norm(expected - tips, axis=1) <= contact_tol


@dataclass
class SensorReading:
    """What the controller sees each tick: exact proprioception, a noisy
    (or missing) object pose, and tip contact flags."""

    joints: JointState
    object_pose: Pose | None
    tip_contacts: np.ndarray


def sample_goal(
    level: int,
    shape: CuboidShape,
    rng: np.random.Generator,
    workspace_radius: float = 0.195,
    height_max: float = WORKSPACE_HEIGHT,
    yaw_only: bool = True,
) -> Pose:
    """Goal pose sampler for the four task levels.

    Level 1: uniform ground position, orientation free. Level 2: fixed
    20 cm above the center. Level 3: uniform in the workspace cylinder.
    Level 4: level-3 position plus a goal orientation (yaw-only for
    cuboid scenarios).
    """
    if level not in (1, 2, 3, 4):
        raise ValueError("level must be 1..4")
    rest = float(shape.half_extents[2])
    if level == 2:
        return Pose([0.0, 0.0, 0.20])

    r = workspace_radius * math.sqrt(rng.uniform())
    theta = rng.uniform(0.0, 2.0 * math.pi)
    x, y = r * math.cos(theta), r * math.sin(theta)
    if level == 1:
        return Pose([x, y, rest], quat_from_yaw(rng.uniform(-math.pi, math.pi)))
    z = rng.uniform(rest, height_max)
    if level == 3:
        return Pose([x, y, z])
    if yaw_only:
        quat = quat_from_yaw(rng.uniform(-math.pi, math.pi))
    else:
        v = rng.normal(size=4)
        quat = v / np.linalg.norm(v)
    return Pose([x, y, z], quat)


@dataclass
class RewardWeights:
    w_pos: float = 1.0
    w_rot: float = 0.2

    def __post_init__(self):
        if self.w_pos < 0 or self.w_rot < 0:
            raise ValueError("reward weights must be nonnegative")


def reward(current: Pose, goal: Pose, weights: RewardWeights, level: int = 4) -> float:
    """Negative weighted pose distance; the rotation term applies only at
    level 4 where the goal specifies an orientation."""
    pos, ang = pose_error(current, goal)
    w_rot = weights.w_rot if level == 4 else 0.0
    return -(weights.w_pos * pos + w_rot * ang)


class World:
    """Convenience wrapper binding a model, shape and parameters to a
    mutable WorldState."""

    def __init__(
        self,
        model: RobotModel,
        shape: CuboidShape,
        friction: FrictionModel,
        params: SimParams,
        noise: NoiseModel,
        initial_pose: Pose,
        initial_joints: np.ndarray | None = None,
    ):
        self.model = model
        self.shape = shape
        self.friction = friction
        self.params = params
        self.noise = noise
        joints = JointState(initial_joints if initial_joints is not None else model.home_angles)
        self.state = WorldState(_rest_on_ground(initial_pose, shape), joints)

    def step(self, command: SimCommand) -> WorldState:
        self.state = step(self.state, command, self.model, self.shape, self.friction, self.params)
        return self.state

    def sense(self, rng: np.random.Generator) -> SensorReading:
        return SensorReading(
            JointState(self.state.joints.angles.copy(), self.state.joints.velocities.copy()),
            observe(self.state, self.noise, rng),
            tip_contact_flags(self.state, self.model),
        )

    @property
    def grasped(self) -> bool:
        return self.state.attachment is not None
