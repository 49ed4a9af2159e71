"""Motion primitives: robust pose estimation from repeated observations,
straight-line fingertip plans for grasp approach and centering, and
planner-backed yaw/pitch alignment.

A primitive plan is a synchronized sequence of fingertip waypoints with a
per-waypoint active-finger mask; masked fingers hold a pinned position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CuboidShape,
    Pose,
    pose_error,
    quat_to_matrix,
    yaw_of,
    yaw_project,
    pitch_round,
    _euler_zyx,
    _from_euler_zyx,
)
from .grasp import FrictionModel, Grasp
from .planner import Path, PlanningOutcome, RRTParams, grasp_planning_loop
from .robot import RobotModel, forward_kinematics, inverse_kinematics

TIP_SPACING = 0.01
PREGRASP_OFFSET = 0.04


class InsufficientObservations(Exception):
    pass


class ApproachBlocked(Exception):
    pass


class NoFingersAvailable(Exception):
    pass


@dataclass
class PrimitivePlan:
    """Tip-space waypoints (N x 3 fingers x 3) with an active-finger mask.

    Consecutive waypoints stay within TIP_SPACING per tip; rows of masked
    fingers repeat their pinned position.
    """

    waypoints: np.ndarray
    active: np.ndarray

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 3, 3)
        self.active = np.asarray(self.active, dtype=bool).reshape(-1, 3)
        if len(self.active) != len(self.waypoints):
            raise ValueError("mask and waypoints must have equal length")

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def empty(self) -> bool:
        return len(self.waypoints) == 0

    def max_step(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        deltas = np.linalg.norm(np.diff(self.waypoints, axis=0), axis=2)
        return float(deltas.max())


def empty_plan() -> PrimitivePlan:
    return PrimitivePlan(np.zeros((0, 3, 3)), np.zeros((0, 3), dtype=bool))


def _segment_waypoints(start: np.ndarray, end: np.ndarray, active: np.ndarray) -> list[np.ndarray]:
    """Straight synchronized tip motion from start to end, excluding start.

    Masked fingers keep their start row so the pinned-position invariant
    holds by construction.
    """
    start = np.asarray(start, dtype=float).reshape(3, 3)
    end = end.copy()
    end[~active] = start[~active]
    travel = np.linalg.norm(end - start, axis=1).max()
    n = max(1, int(math.ceil(travel / TIP_SPACING)))
    return [start + (end - start) * ((k + 1) / n) for k in range(n)]


def circular_mean(angles: np.ndarray) -> float:
    return math.atan2(np.sin(angles).sum(), np.cos(angles).sum())


def robust_observe(observations, shape: CuboidShape) -> Pose:
    """Fuse noisy pose observations into a single ground-plane estimate.

    Positions are averaged and snapped to the resting height of the
    majority downward face. Orientations are projected to yaw, averaged
    circularly in the quotient of the cuboid's yaw symmetry group (so 180
    degree flip noise cancels), and lifted back on the branch most
    observations voted for.
    """
    poses = [o[0] if isinstance(o, tuple) else o for o in observations]
    if not poses:
        raise InsufficientObservations("robust_observe needs at least one observation")

    mean_pos = np.mean([p.position for p in poses], axis=0)
    down_votes = np.zeros(3, dtype=int)
    for p in poses:
        down_votes[shape.down_axis(p.orientation)] += 1
    mean_pos[2] = shape.half_extents[int(np.argmax(down_votes))]

    yaws = np.array([yaw_of(p.orientation) for p in poses])
    order = shape.yaw_symmetry_order()
    delta = 2.0 * math.pi / order
    quotient_mean = circular_mean(order * yaws) / order
    votes = np.zeros(order, dtype=int)
    for psi in yaws:
        votes[int(round((psi - quotient_mean) / delta)) % order] += 1
    branch = int(np.argmax(votes))  # argmax keeps the lowest branch on ties
    yaw = quotient_mean + branch * delta
    yaw = (yaw + math.pi) % (2.0 * math.pi) - math.pi
    return Pose(mean_pos, np.array([math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)]))


def _check_ik_chain(
    model: RobotModel, waypoints: list[np.ndarray], active: np.ndarray, seed: np.ndarray
) -> np.ndarray | None:
    """Verify active fingertips stay reachable along a waypoint chain.

    Returns the final joint solution, or None when any active finger fails
    anywhere on the path.
    """
    joints = seed.copy()
    for wp in waypoints:
        targets = forward_kinematics(model, joints)
        targets[active] = wp[active]
        res = inverse_kinematics(model, targets, joints)
        if not all(res.success[f] for f in range(3) if active[f]):
            return None
        joints = res.angles
    return joints


def plan_grasp_approach(
    grasp: Grasp,
    object_pose: Pose,
    model: RobotModel,
    current_joints: np.ndarray,
    active: np.ndarray | None = None,
) -> PrimitivePlan:
    """Two straight segments per fingertip: pregrasp, then contact.

    The pregrasp point floats one PREGRASP_OFFSET outside each contact
    along its normal so the final approach is a short normal-direction
    push. Raises ApproachBlocked when any waypoint is unreachable.
    """
    if active is None:
        active = np.ones(3, dtype=bool)
    start = forward_kinematics(model, current_joints)
    contacts = grasp.world_contacts(object_pose)
    normals = grasp.world_inward_normals(object_pose)
    pregrasp = np.zeros((3, 3))
    final = grasp.tip_targets(object_pose, model.fingertip_radius)
    for finger in range(3):
        c = grasp.assignment[finger]
        pregrasp[finger] = contacts[c] - PREGRASP_OFFSET * normals[c]
    waypoints = _segment_waypoints(start, pregrasp, active)
    waypoints += _segment_waypoints(waypoints[-1], final, active)
    if _check_ik_chain(model, waypoints, active, current_joints) is None:
        raise ApproachBlocked("approach waypoint unreachable")
    wp = np.array(waypoints)
    return PrimitivePlan(wp, np.tile(active, (len(wp), 1)))


def plan_tip_translation(
    delta: np.ndarray,
    model: RobotModel,
    current_joints: np.ndarray,
    active: np.ndarray | None = None,
) -> tuple[PrimitivePlan, np.ndarray]:
    """Translate all active fingertips by a common vector.

    Fingers that fail inverse kinematics anywhere along the path are
    masked out; returns the plan and the surviving active mask. Raises
    NoFingersAvailable when nothing remains.
    """
    if active is None:
        active = np.ones(3, dtype=bool)
    active = active.copy()
    start = forward_kinematics(model, current_joints)
    while active.any():
        end = start + delta
        waypoints = _segment_waypoints(start, end, active)
        joints = _check_ik_chain(model, waypoints, active, current_joints)
        if joints is not None:
            wp = np.array(waypoints)
            return PrimitivePlan(wp, np.tile(active, (len(wp), 1))), active
        # drop the finger with the longest remaining reach problem: probe
        # each active finger alone and mask the first that fails at the end
        failed = None
        for f in range(3):
            if not active[f]:
                continue
            solo = np.zeros(3, dtype=bool)
            solo[f] = True
            if _check_ik_chain(model, _segment_waypoints(start, start + delta, solo), solo, current_joints) is None:
                failed = f
                break
        if failed is None:
            failed = int(np.flatnonzero(active)[0])
        active[failed] = False
    raise NoFingersAvailable("no finger can execute the requested translation")


def plan_move_to_center(
    object_pose: Pose,
    grasp: Grasp,
    model: RobotModel,
    current_joints: np.ndarray,
    center: np.ndarray | None = None,
) -> tuple[PrimitivePlan, np.ndarray]:
    """Straight-line tip plan dragging the grasped object to the center.

    The translation is the ground-plane projection of (center - object);
    fingers whose IK fails along the way are pinned and masked out.
    """
    if center is None:
        center = np.zeros(3)
    delta = np.asarray(center, dtype=float) - object_pose.position
    delta[2] = 0.0
    if np.linalg.norm(delta) < 1e-12:
        return empty_plan(), np.ones(3, dtype=bool)
    return plan_tip_translation(delta, model, current_joints)


def plan_retract(
    grasp: Grasp,
    object_pose: Pose,
    model: RobotModel,
    current_joints: np.ndarray,
    home_tips: np.ndarray,
    active: np.ndarray | None = None,
) -> PrimitivePlan:
    """Release motion: back away along contact normals, then go home."""
    if active is None:
        active = np.ones(3, dtype=bool)
    start = forward_kinematics(model, current_joints)
    contacts = grasp.world_contacts(object_pose)
    normals = grasp.world_inward_normals(object_pose)
    away = np.zeros((3, 3))
    for finger in range(3):
        c = grasp.assignment[finger]
        away[finger] = start[finger] - PREGRASP_OFFSET * normals[c]
    waypoints = _segment_waypoints(start, away, active)
    waypoints += _segment_waypoints(waypoints[-1], home_tips.copy(), active)
    wp = np.array(waypoints)
    return PrimitivePlan(wp, np.tile(active, (len(wp), 1)))


@dataclass
class AlignmentPlan(PrimitivePlan):
    """A planner-backed rotation primitive.

    Carries the grasp and object-pose path the loop produced; the tip
    waypoints are the fingertip trace of that path, densified to the
    primitive step size.
    """

    grasp: Grasp | None = None
    path: Path | None = None
    target: Pose | None = None
    outcome: PlanningOutcome | None = None


def _path_tip_plan(path: Path, model: RobotModel) -> tuple[np.ndarray, np.ndarray]:
    tips = [forward_kinematics(model, wp.joints) for wp in path.waypoints]
    active = np.ones(3, dtype=bool)
    waypoints = [tips[0]]
    for nxt in tips[1:]:
        waypoints += _segment_waypoints(waypoints[-1], nxt, active)
    wp = np.array(waypoints)
    return wp, np.tile(active, (len(wp), 1))


def _plan_rotation_on_ground(
    estimate: Pose,
    target: Pose,
    model: RobotModel,
    shape: CuboidShape,
    friction: FrictionModel,
    params: RRTParams,
    rng: np.random.Generator,
    budget: int,
    current_tips: np.ndarray | None,
) -> AlignmentPlan | None:
    outcome = grasp_planning_loop(
        estimate, target, params, model, shape, friction, rng, budget, current_tips
    )
    if not outcome.success:
        return None
    wp, active = _path_tip_plan(outcome.path, model)
    return AlignmentPlan(wp, active, outcome.grasp, outcome.path, target, outcome)


def align_yaw(
    object_pose: Pose,
    goal_pose: Pose,
    model: RobotModel,
    shape: CuboidShape,
    friction: FrictionModel,
    params: RRTParams,
    rng: np.random.Generator,
    budget: int = 10,
    tolerance: float = 0.15,
    current_tips: np.ndarray | None = None,
) -> AlignmentPlan | None:
    """Rotate the object on the ground to the goal's yaw projection.

    Returns an empty plan when already within tolerance and None when the
    grasp-planning loop is exhausted.
    """
    target_quat = yaw_project(goal_pose.orientation)
    target = Pose(
        [object_pose.position[0], object_pose.position[1], shape.resting_height(target_quat)],
        target_quat,
    )
    _, ang = pose_error(Pose(target.position, yaw_project(object_pose.orientation)), target)
    if ang <= tolerance:
        plan = empty_plan()
        return AlignmentPlan(plan.waypoints, plan.active, None, None, target, None)
    return _plan_rotation_on_ground(
        object_pose, target, model, shape, friction, params, rng, budget, current_tips
    )


def align_pitch(
    object_pose: Pose,
    goal_pose: Pose,
    model: RobotModel,
    shape: CuboidShape,
    friction: FrictionModel,
    params: RRTParams,
    rng: np.random.Generator,
    budget: int = 10,
    tolerance: float = 0.15,
    current_tips: np.ndarray | None = None,
) -> AlignmentPlan | None:
    """Rotate the object so its pitch matches the goal's rounded pitch.

    The target keeps the object's current yaw and roll; the rounded pitch
    is an exact multiple of 90 degrees by construction.
    """
    yaw_cur, _, roll_cur = _euler_zyx(object_pose.orientation)
    _, pitch_goal, _ = _euler_zyx(pitch_round(goal_pose.orientation))
    target_quat = _from_euler_zyx(yaw_cur, pitch_goal, roll_cur)
    target = Pose(
        [object_pose.position[0], object_pose.position[1], shape.resting_height(target_quat)],
        target_quat,
    )
    _, ang = pose_error(object_pose, target)
    if ang <= tolerance:
        plan = empty_plan()
        return AlignmentPlan(plan.waypoints, plan.active, None, None, target, None)
    return _plan_rotation_on_ground(
        object_pose, target, model, shape, friction, params, rng, budget, current_tips
    )
