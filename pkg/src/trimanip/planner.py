"""Task-space RRT over object poses under a fixed grasp, and the outer
grasp-planning loop that alternates grasp sampling with path planning.

Tree states are object poses; a candidate pose is accepted only if the
grasp remains feasible there and the object stays above the ground, so
every waypoint of a returned path is realizable by construction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CuboidShape,
    Pose,
    pose_error,
    quat_from_axis_angle,
    quat_mul,
    quat_slerp,
)
from .grasp import (
    FrictionModel,
    Grasp,
    MarginInfeasible,
    force_closure,
    grasp_feasible,
    predefined_contacts,
    sample_contacts,
)
from .robot import RobotModel

log = logging.getLogger(__name__)

ANGULAR_WEIGHT = 0.1  # meters per radian in the tree metric


@dataclass
class RRTParams:
    """Step sizes, sampling and the growing goal-region schedule."""

    pos_step: float = 0.02
    ang_step: float = 0.1
    goal_bias: float = 0.2
    max_iters: int = 3000
    goal_tol_pos_initial: float = 0.01
    goal_tol_pos_growth: float = 0.01     # added every growth_interval iters
    goal_tol_pos_max: float = 0.05
    goal_tol_ang_initial: float = 0.1
    goal_tol_ang_growth: float = 0.1
    goal_tol_ang_max: float = 0.4
    growth_interval: int = 500
    workspace_height: float = 0.25

    def __post_init__(self):
        positives = (
            self.pos_step,
            self.ang_step,
            self.max_iters,
            self.goal_tol_pos_initial,
            self.goal_tol_pos_max,
            self.goal_tol_ang_initial,
            self.goal_tol_ang_max,
            self.growth_interval,
            self.workspace_height,
        )
        if any(v <= 0 for v in positives):
            raise ValueError("RRT parameters must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must be a probability")
        if self.goal_tol_pos_initial > self.goal_tol_pos_max:
            raise ValueError("initial position tolerance exceeds max")
        if self.goal_tol_ang_initial > self.goal_tol_ang_max:
            raise ValueError("initial angular tolerance exceeds max")

    def tolerances_at(self, iteration: int) -> tuple[float, float]:
        steps = iteration // self.growth_interval
        return (
            min(self.goal_tol_pos_initial + steps * self.goal_tol_pos_growth, self.goal_tol_pos_max),
            min(self.goal_tol_ang_initial + steps * self.goal_tol_ang_growth, self.goal_tol_ang_max),
        )


@dataclass
class Waypoint:
    pose: Pose
    joints: np.ndarray


@dataclass
class Path:
    """Alternating object poses and joint configurations under one grasp."""

    waypoints: list[Waypoint]
    grasp: Grasp
    iterations: int = 0
    accept_tolerances: tuple[float, float] = (0.0, 0.0)

    def __len__(self) -> int:
        return len(self.waypoints)


@dataclass
class TreeNode:
    pose: Pose
    joints: np.ndarray
    parent: int


def tree_distance(a: Pose, b: Pose) -> float:
    pos, ang = pose_error(a, b)
    return pos + ANGULAR_WEIGHT * ang


def nearest_node(tree: list[TreeNode], sample: Pose) -> int:
    """Index of the tree node closest to the sample in the weighted metric.

    Ties are broken by insertion order.
    """
    if not tree:
        raise ValueError("tree is empty")
    positions = np.array([n.pose.position for n in tree])
    quats = np.array([n.pose.orientation for n in tree])
    d = _weighted_distances(positions, quats, sample)
    return int(np.argmin(d))


def _weighted_distances(positions: np.ndarray, quats: np.ndarray, sample: Pose) -> np.ndarray:
    pos = np.linalg.norm(positions - sample.position, axis=1)
    dots = np.clip(np.abs(quats @ sample.orientation), 0.0, 1.0)
    return pos + ANGULAR_WEIGHT * 2.0 * np.arccos(dots)


class _TreeIndex:
    """Append-only node store with vectorized nearest queries."""

    def __init__(self, capacity: int):
        self.nodes: list[TreeNode] = []
        self._pos = np.zeros((capacity + 1, 3))
        self._quat = np.zeros((capacity + 1, 4))

    def __len__(self) -> int:
        return len(self.nodes)

    def append(self, node: TreeNode) -> None:
        i = len(self.nodes)
        self._pos[i] = node.pose.position
        self._quat[i] = node.pose.orientation
        self.nodes.append(node)

    def nearest(self, sample: Pose) -> int:
        n = len(self.nodes)
        return int(np.argmin(_weighted_distances(self._pos[:n], self._quat[:n], sample)))

    def nearest_by_position(self, pos: np.ndarray) -> int:
        n = len(self.nodes)
        return int(np.argmin(np.linalg.norm(self._pos[:n] - pos, axis=1)))


def object_above_ground(shape: CuboidShape, pose: Pose, tol: float = 1e-9) -> bool:
    corners = pose.transform_points(shape.corners())
    return bool(corners[:, 2].min() >= -tol)


def _steer(from_pose: Pose, to_pose: Pose, params: RRTParams) -> Pose:
    delta = to_pose.position - from_pose.position
    dist = float(np.linalg.norm(delta))
    pos = to_pose.position if dist <= params.pos_step else from_pose.position + delta * (
        params.pos_step / dist
    )
    _, ang = pose_error(from_pose, to_pose)
    if ang <= params.ang_step or ang < 1e-12:
        quat = to_pose.orientation
    else:
        quat = quat_slerp(from_pose.orientation, to_pose.orientation, params.ang_step / ang)
    return Pose(pos, quat)


def _sample_position(params: RRTParams, workspace_radius: float, z_min: float, rng) -> np.ndarray:
    r = workspace_radius * math.sqrt(rng.uniform())
    theta = rng.uniform(0.0, 2.0 * math.pi)
    z = rng.uniform(z_min, params.workspace_height)
    return np.array([r * math.cos(theta), r * math.sin(theta), z])


def rrt_plan(
    start: Pose,
    goal: Pose,
    grasp: Grasp,
    params: RRTParams,
    model: RobotModel,
    shape: CuboidShape,
    rng: np.random.Generator,
) -> Path | None:
    """Plan a grasp-consistent object path from start to the goal region.

    Samples uniform positions in the workspace cylinder with orientations
    perturbed from the nearest node (plus the goal itself with probability
    goal_bias), steers with clipped position/orientation steps, and accepts
    a node only when the grasp stays feasible and the object stays above
    ground. The goal region grows on the configured schedule; returns None
    after max_iters.
    """
    start_check = grasp_feasible(grasp, start, model, shape)
    if not start_check:
        raise ValueError("rrt_plan requires a grasp feasible at the start pose")
    tree = _TreeIndex(params.max_iters)
    tree.append(TreeNode(start.copy(), start_check.joints, -1))

    def goal_reached(pose: Pose, iteration: int) -> bool:
        tol_pos, tol_ang = params.tolerances_at(iteration)
        pos, ang = pose_error(pose, goal)
        return pos <= tol_pos and ang <= tol_ang

    def extract(idx: int, iteration: int) -> Path:
        chain = []
        while idx >= 0:
            node = tree.nodes[idx]
            chain.append(Waypoint(node.pose.copy(), node.joints.copy()))
            idx = node.parent
        chain.reverse()
        return Path(chain, grasp, iteration, params.tolerances_at(iteration))

    if goal_reached(start, 0):
        return extract(0, 0)

    z_min = float(min(shape.half_extents))
    for iteration in range(1, params.max_iters + 1):
        if rng.uniform() < params.goal_bias:
            sample = goal
        else:
            pos = _sample_position(params, model.workspace_radius, z_min, rng)
            anchor = tree.nodes[tree.nearest_by_position(pos)]
            perturb = quat_from_axis_angle(rng.normal(size=3), rng.normal(0.0, params.ang_step))
            sample = Pose(pos, quat_mul(perturb, anchor.pose.orientation))
        near_idx = tree.nearest(sample)
        near = tree.nodes[near_idx]
        new_pose = _steer(near.pose, sample, params)
        if not object_above_ground(shape, new_pose):
            continue
        feas = grasp_feasible(grasp, new_pose, model, shape, seed=near.joints)
        if not feas:
            continue
        tree.append(TreeNode(new_pose, feas.joints, near_idx))
        if goal_reached(new_pose, iteration):
            return extract(len(tree) - 1, iteration)
    log.debug("rrt_plan exhausted %d iterations (tree size %d)", params.max_iters, len(tree))
    return None


def assignments_by_travel(
    contacts, object_pose: Pose, model: RobotModel, current_tips: np.ndarray
) -> list[tuple[int, int, int]]:
    """Finger-to-contact permutations ordered by total tip travel."""
    pts = object_pose.transform_points(np.array([c.position for c in contacts]))
    from itertools import permutations

    def travel(perm):
        return sum(
            float(np.linalg.norm(current_tips[f] - pts[perm[f]])) for f in range(3)
        )

    return sorted(permutations((0, 1, 2)), key=travel)


@dataclass
class AttemptRecord:
    attempt: int
    source: str                 # "predefined" | "random"
    feasible: bool = False
    closed: bool = False
    planned: bool = False
    iterations: int = 0
    tree_error: str = ""


@dataclass
class PlanningOutcome:
    grasp: Grasp | None
    path: Path | None
    attempts: int
    trace: list[AttemptRecord] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.path is not None

    def trace_dicts(self) -> list[dict]:
        return [vars(r).copy() for r in self.trace]


def grasp_planning_loop(
    state: Pose,
    goal: Pose,
    params: RRTParams,
    model: RobotModel,
    shape: CuboidShape,
    friction: FrictionModel,
    rng: np.random.Generator,
    budget: int = 20,
    current_tips: np.ndarray | None = None,
) -> PlanningOutcome:
    """Alternate grasp sampling and path planning until a path is found.

    Candidate contacts alternate between the predefined catalog and random
    surface samples; each trio is assigned to fingers (cheapest travel
    first), screened for feasibility and force closure, then handed to the
    RRT. Returns an exhausted outcome after ``budget`` attempts.
    """
    if budget < 1:
        raise ValueError("grasp-planning budget must be at least 1")
    catalog = predefined_contacts(shape)
    if current_tips is None:
        from .robot import forward_kinematics

        current_tips = forward_kinematics(model, model.home_angles)
    trace: list[AttemptRecord] = []
    catalog_cursor = 0
    for attempt in range(budget):
        use_catalog = attempt % 2 == 0 and catalog_cursor < len(catalog)
        if use_catalog:
            contacts = catalog[catalog_cursor]
            catalog_cursor += 1
            record = AttemptRecord(attempt, "predefined")
        else:
            try:
                contacts = sample_contacts(shape, rng, model.fingertip_radius)
            except MarginInfeasible as exc:
                log.warning("contact sampling failed: %s", exc)
                trace.append(AttemptRecord(attempt, "random", tree_error=str(exc)))
                continue
            record = AttemptRecord(attempt, "random")
        trace.append(record)

        grasp = None
        for assignment in assignments_by_travel(contacts, state, model, current_tips):
            cand = Grasp([c for c in contacts], assignment)
            if grasp_feasible(cand, state, model, shape):
                grasp = cand
                break
        if grasp is None:
            continue
        record.feasible = True
        if not force_closure(grasp, state, friction):
            continue
        record.closed = True
        path = rrt_plan(state, goal, grasp, params, model, shape, rng)
        if path is not None:
            record.planned = True
            record.iterations = path.iterations
            return PlanningOutcome(grasp, path, attempt + 1, trace)
    return PlanningOutcome(None, None, budget, trace)
