"""Primitive sequencing state machine.

The episode-level flow: observe the object with the fingers parked clear,
align its yaw (and optionally pitch) with the goal for orientation tasks,
drag it to the workspace center, then find a grasp and plan a path to the
goal, execute the plan by tracking planned joints, and finish with tip
adjustments. Dropping the object at any manipulation stage routes through
recovery back to observation; every failure increments a bounded retry
counter and degrades gracefully when exhausted.

The transition table is total: every (phase, event) pair has a defined
successor (unlisted pairs keep the current phase). It is a documented
superset of the nominal flow
OBSERVE -> [ALIGN_YAW -> ALIGN_PITCH] -> CENTER -> GRASP_PLAN -> EXECUTE
-> TIP_ADJUST -> done, with re-observation between manipulation stages
and RECOVER -> OBSERVE on drops.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .control import (
    AdjustmentInfeasible,
    DropDetector,
    PDGains,
    WrenchPDGains,
    force_control_torques,
    pd_torques,
    tip_adjustment_plan,
)
from .geometry import CuboidShape, Pose, pose_error, yaw_of, yaw_project
from .grasp import FrictionModel, Grasp, force_closure, grasp_feasible, predefined_contacts, sample_contacts, MarginInfeasible
from .planner import Path, RRTParams, Waypoint, assignments_by_travel, grasp_planning_loop
from .primitives import (
    AlignmentPlan,
    ApproachBlocked,
    NoFingersAvailable,
    PrimitivePlan,
    align_pitch,
    align_yaw,
    plan_grasp_approach,
    plan_move_to_center,
    plan_retract,
    robust_observe,
)
from .robot import RobotModel, forward_kinematics, inverse_kinematics
from .sim import SensorReading, SimCommand

OBSERVE = "OBSERVE"
ALIGN_YAW = "ALIGN_YAW"
ALIGN_PITCH = "ALIGN_PITCH"
CENTER = "CENTER"
GRASP_PLAN = "GRASP_PLAN"
EXECUTE = "EXECUTE"
TIP_ADJUST = "TIP_ADJUST"
RECOVER = "RECOVER"
PHASES = (OBSERVE, ALIGN_YAW, ALIGN_PITCH, CENTER, GRASP_PLAN, EXECUTE, TIP_ADJUST, RECOVER)

EVENTS = (
    "working",
    "goal_met",
    "need_align_yaw",
    "need_align_pitch",
    "need_center",
    "need_plan",
    "phase_done",
    "plan_ready",
    "exec_done",
    "fail_retry",
    "give_up",
    "dropped",
)


def _build_transitions() -> dict[tuple[str, str], str]:
    table = {(phase, event): phase for phase in PHASES for event in EVENTS}
    table.update(
        {
            (OBSERVE, "need_align_yaw"): ALIGN_YAW,
            (OBSERVE, "need_align_pitch"): ALIGN_PITCH,
            (OBSERVE, "need_center"): CENTER,
            (OBSERVE, "need_plan"): GRASP_PLAN,
            (ALIGN_YAW, "phase_done"): OBSERVE,
            (ALIGN_YAW, "give_up"): CENTER,
            (ALIGN_YAW, "dropped"): RECOVER,
            (ALIGN_PITCH, "phase_done"): OBSERVE,
            (ALIGN_PITCH, "give_up"): CENTER,
            (ALIGN_PITCH, "dropped"): RECOVER,
            (CENTER, "phase_done"): OBSERVE,
            (CENTER, "need_plan"): GRASP_PLAN,
            (CENTER, "give_up"): GRASP_PLAN,
            (CENTER, "dropped"): RECOVER,
            (GRASP_PLAN, "plan_ready"): EXECUTE,
            (GRASP_PLAN, "give_up"): CENTER,
            (GRASP_PLAN, "dropped"): RECOVER,
            (EXECUTE, "exec_done"): TIP_ADJUST,
            (EXECUTE, "give_up"): GRASP_PLAN,
            (EXECUTE, "dropped"): RECOVER,
            (TIP_ADJUST, "phase_done"): OBSERVE,
            (TIP_ADJUST, "give_up"): RECOVER,
            (TIP_ADJUST, "dropped"): RECOVER,
            (RECOVER, "phase_done"): OBSERVE,
        }
    )
    return table


TRANSITIONS = _build_transitions()


@dataclass
class SequencerConfig:
    observation_count: int = 10
    min_observations: int = 6
    center_threshold: float = 0.03
    yaw_tolerance: float = 0.15
    hold_pos_tol: float = 0.015
    hold_ang_tol: float = 0.1
    adjust_pos_stop: float = 0.01
    adjust_ang_stop: float = 0.05
    adjust_rounds: int = 3
    resume_pos_tol: float = 0.03
    waypoint_joint_tol: float = 0.05
    waypoint_max_steps: int = 60
    attach_wait: int = 12
    recover_steps: int = 20
    planning_budget: int = 10
    max_retries: dict = field(
        default_factory=lambda: {
            "align_yaw": 3,
            "align_pitch": 3,
            "center": 2,
            "plan": 4,
            "execute": 3,
            "recover": 10,
        }
    )
    alignment: bool = True
    align_pitch_enabled: bool = False
    centering: bool = True
    tip_adjustments: bool = True
    force_control: bool = False
    motion_planning: bool = True
    pd_gains: PDGains = field(default_factory=PDGains)
    wrench_gains: WrenchPDGains = field(default_factory=WrenchPDGains)
    tau_max: float = 0.36
    f_max: float = 10.0


# ---------------------------------------------------------------------------
# script actions: small per-step executors for the pieces of a manipulation


@dataclass
class TipAction:
    """Track a fingertip plan, one waypoint at a time, through IK."""

    plan: PrimitivePlan
    cursor: int = 0
    stall: int = 0
    command_joints: np.ndarray | None = None


@dataclass
class PathAction:
    """Track the planned joint waypoints of an object path."""

    path: Path
    cursor: int = 0
    stall: int = 0


@dataclass
class AttachAction:
    grasp: Grasp
    hold_joints: np.ndarray
    waited: int = 0


@dataclass
class DetachAction:
    issued: bool = False


@dataclass
class SequencerState:
    phase: str = OBSERVE
    sub: str = ""
    steps: int = 0
    steps_in_phase: int = 0
    estimate: Pose | None = None
    obs_buffer: list = field(default_factory=list)
    script: list | None = None
    script_index: int = 0
    active_grasp: Grasp | None = None
    active_path: Path | None = None
    adjust_round: int = 0
    holding: bool = False
    goal_met: bool = False
    counters: dict = field(default_factory=dict)
    stats: dict = field(
        default_factory=lambda: {
            "plans_attempted": 0,
            "grasps_sampled": 0,
            "drops": 0,
            "adjustments": 0,
            "planning_time": 0.0,
        }
    )
    drop_detector: DropDetector = field(default_factory=DropDetector)
    events: list = field(default_factory=list)
    last_command_joints: np.ndarray | None = None


@dataclass
class SequencerContext:
    model: RobotModel
    shape: CuboidShape
    friction: FrictionModel
    rrt: RRTParams
    config: SequencerConfig
    rng: np.random.Generator

    def __post_init__(self):
        self.home_tips = forward_kinematics(self.model, self.model.home_angles)


def _log(state: SequencerState, kind: str, **detail) -> None:
    entry = {"step": state.steps, "event": kind}
    entry.update(detail)
    state.events.append(entry)


def _hold_command(state: SequencerState, reading: SensorReading) -> SimCommand:
    if state.last_command_joints is None:
        state.last_command_joints = reading.joints.angles.copy()
    return SimCommand(position_targets=state.last_command_joints.copy())


def _relaxed_params(ctx: SequencerContext, level: int) -> RRTParams:
    if level >= 4:
        return ctx.rrt
    p = RRTParams(**vars(ctx.rrt))
    p.goal_tol_ang_initial = math.pi
    p.goal_tol_ang_max = math.pi
    return p


def _estimate(state: SequencerState, ctx: SequencerContext, min_n: int) -> Pose | None:
    if len(state.obs_buffer) < min_n:
        return None
    return robust_observe(state.obs_buffer, ctx.shape)


def _invalidate(state: SequencerState) -> None:
    state.obs_buffer = []


def _count(state: SequencerState, key: str) -> int:
    return state.counters.get(key, 0)


def _bump(state: SequencerState, key: str) -> int:
    state.counters[key] = state.counters.get(key, 0) + 1
    return state.counters[key]


def _find_grasp(
    state: SequencerState, ctx: SequencerContext, pose: Pose, tips: np.ndarray
) -> Grasp | None:
    """First feasible force-closed grasp at a pose: catalog, then samples."""
    candidates = [list(s) for s in predefined_contacts(ctx.shape)]
    for _ in range(8):
        try:
            candidates.append(sample_contacts(ctx.shape, ctx.rng, ctx.model.fingertip_radius))
        except MarginInfeasible:
            break
    for contacts in candidates:
        state.stats["grasps_sampled"] += 1
        for assignment in assignments_by_travel(contacts, pose, ctx.model, tips):
            grasp = Grasp(list(contacts), assignment)
            if grasp_feasible(grasp, pose, ctx.model, ctx.shape) and force_closure(
                grasp, pose, ctx.friction
            ):
                return grasp
    return None


def _naive_path(
    state: SequencerState, ctx: SequencerContext, est: Pose, goal: Pose, level: int
) -> tuple[Grasp, Path] | None:
    """Straight-line carry used as the no-planner baseline: interpolate the
    object pose to the goal and chain IK, without feasibility checking."""
    from .geometry import quat_slerp

    tips = forward_kinematics(ctx.model, ctx.model.home_angles)
    grasp = _find_grasp(state, ctx, est, tips)
    if grasp is None:
        return None
    pos_d, ang_d = pose_error(est, goal)
    goal_quat = goal.orientation if level >= 4 else est.orientation
    n = max(1, int(math.ceil(pos_d / ctx.rrt.pos_step)), int(math.ceil(ang_d / ctx.rrt.ang_step)))
    waypoints = [Waypoint(est.copy(), grasp.joints.copy())]
    joints = grasp.joints
    for k in range(1, n + 1):
        t = k / n
        pose = Pose(
            est.position + t * (goal.position - est.position),
            quat_slerp(est.orientation, goal_quat, t),
        )
        res = inverse_kinematics(
            ctx.model, grasp.tip_targets(pose, ctx.model.fingertip_radius), joints
        )
        if not res.all_ok:
            break
        joints = res.angles
        waypoints.append(Waypoint(pose, joints.copy()))
    return grasp, Path(waypoints, grasp)


def _start_script(state: SequencerState, actions: list, sub: str) -> None:
    state.script = actions
    state.script_index = 0
    state.sub = sub
    state.drop_detector.reset()


def _expected_pose(state: SequencerState) -> Pose | None:
    if state.script is None or state.script_index >= len(state.script):
        return None
    action = state.script[state.script_index]
    if isinstance(action, PathAction):
        return action.path.waypoints[min(action.cursor, len(action.path.waypoints) - 1)].pose
    return None


def _run_script(
    state: SequencerState, ctx: SequencerContext, reading: SensorReading
) -> tuple[str, SimCommand | None]:
    """Advance the active script one tick.

    Returns (status, command) with status in {"running", "done", "error"}.
    """
    cfg = ctx.config
    while state.script is not None and state.script_index < len(state.script):
        action = state.script[state.script_index]
        if isinstance(action, TipAction):
            if action.plan.empty or action.cursor >= len(action.plan):
                state.script_index += 1
                continue
            if action.command_joints is None:
                wp = action.plan.waypoints[action.cursor]
                active = action.plan.active[action.cursor]
                targets = forward_kinematics(ctx.model, reading.joints.angles)
                targets[active] = wp[active]
                res = inverse_kinematics(ctx.model, targets, reading.joints.angles)
                if not all(res.success[f] for f in range(3) if active[f]):
                    return "error", None
                action.command_joints = res.angles
            err = float(np.abs(action.command_joints - reading.joints.angles).max())
            if err < cfg.waypoint_joint_tol:
                action.cursor += 1
                action.stall = 0
                action.command_joints = None
                continue
            action.stall += 1
            if action.stall > cfg.waypoint_max_steps:
                return "error", None
            state.last_command_joints = action.command_joints.copy()
            return "running", SimCommand(position_targets=action.command_joints.copy())
        if isinstance(action, PathAction):
            if action.cursor >= len(action.path.waypoints):
                state.script_index += 1
                continue
            target = action.path.waypoints[action.cursor].joints
            err = float(np.abs(target - reading.joints.angles).max())
            if err < cfg.waypoint_joint_tol:
                action.cursor += 1
                action.stall = 0
                continue
            action.stall += 1
            if action.stall > cfg.waypoint_max_steps:
                return "error", None
            state.last_command_joints = target.copy()
            return "running", SimCommand(position_targets=target.copy())
        if isinstance(action, AttachAction):
            if reading.tip_contacts.all():
                state.script_index += 1
                continue
            action.waited += 1
            if action.waited > cfg.attach_wait:
                return "error", None
            state.last_command_joints = action.hold_joints.copy()
            return "running", SimCommand(
                position_targets=action.hold_joints.copy(), attach=action.grasp
            )
        if isinstance(action, DetachAction):
            if action.issued:
                state.script_index += 1
                continue
            action.issued = True
            return "running", SimCommand(
                position_targets=reading.joints.angles.copy(), detach=True
            )
        raise TypeError(f"unknown script action {action!r}")
    state.script = None
    return "done", None


def _manipulation_script(
    state: SequencerState,
    ctx: SequencerContext,
    grasp: Grasp,
    pose: Pose,
    move: PrimitivePlan | Path | None,
    reading: SensorReading,
    release: bool,
    active: np.ndarray | None = None,
) -> list:
    """approach -> attach -> move -> (detach -> retract)."""
    approach = plan_grasp_approach(grasp, pose, ctx.model, reading.joints.angles, active)
    final_targets = grasp.tip_targets(pose, ctx.model.fingertip_radius)
    if active is None:
        active = np.ones(3, dtype=bool)
    hold = forward_kinematics(ctx.model, reading.joints.angles)
    hold[active] = final_targets[active]
    res = inverse_kinematics(ctx.model, hold, reading.joints.angles)
    actions: list = [TipAction(approach)]
    if active.all():
        actions.append(AttachAction(grasp, res.angles))
    if isinstance(move, Path):
        actions.append(PathAction(move))
    elif isinstance(move, PrimitivePlan) and not move.empty:
        actions.append(TipAction(move))
    if release:
        actions.append(DetachAction())
        retract = plan_retract(
            grasp, pose, ctx.model, res.angles, ctx.home_tips, active
        )
        actions.append(TipAction(retract))
    return actions


# ---------------------------------------------------------------------------
# phase handlers: each returns (event, command or None)


def _handle_observe(state, ctx, reading, goal, level):
    cfg = ctx.config
    command = SimCommand(position_targets=ctx.model.home_angles.copy())
    state.last_command_joints = ctx.model.home_angles.copy()
    if len(state.obs_buffer) < cfg.observation_count:
        return "working", command
    est = robust_observe(state.obs_buffer, ctx.shape)
    state.estimate = est
    pos_err, ang_err = pose_error(est, goal)
    ang_ok = level < 4 or ang_err <= cfg.hold_ang_tol
    if pos_err <= cfg.hold_pos_tol and ang_ok:
        state.goal_met = True
        return "goal_met", command
    state.goal_met = False
    if (
        level >= 4
        and cfg.alignment
        and _count(state, "align_yaw") < cfg.max_retries["align_yaw"]
    ):
        dyaw = yaw_of(goal.orientation) - yaw_of(est.orientation)
        dyaw = (dyaw + math.pi) % (2 * math.pi) - math.pi
        if abs(dyaw) > cfg.yaw_tolerance:
            return "need_align_yaw", command
        if (
            cfg.align_pitch_enabled
            and _count(state, "align_pitch") < cfg.max_retries["align_pitch"]
        ):
            return "need_align_pitch", command
    if (
        cfg.centering
        and float(np.linalg.norm(est.position[:2])) > cfg.center_threshold
        and _count(state, "center") < cfg.max_retries["center"]
    ):
        return "need_center", command
    return "need_plan", command


def _handle_align(state, ctx, reading, goal, level, which: str):
    cfg = ctx.config
    if state.script is not None:
        status, command = _run_script(state, ctx, reading)
        if status == "running":
            if state.drop_detector.update(_expected_pose(state) or state.estimate, reading.object_pose, reading.tip_contacts if _grasp_active(state) else None):
                state.stats["drops"] += 1
                return "dropped", command
            return "working", command
        if status == "error":
            _bump(state, which)
            return "fail_retry", _hold_command(state, reading)
        return "phase_done", _hold_command(state, reading)
    if _count(state, which) >= cfg.max_retries[which]:
        return "give_up", _hold_command(state, reading)
    est = _estimate(state, ctx, cfg.min_observations)
    if est is None:
        return "working", _hold_command(state, reading)
    state.estimate = est
    _bump(state, which)
    tips = forward_kinematics(ctx.model, reading.joints.angles)
    planner_fn = align_yaw if which == "align_yaw" else align_pitch
    t0 = time.perf_counter()
    plan = planner_fn(
        est,
        goal,
        ctx.model,
        ctx.shape,
        ctx.friction,
        ctx.rrt,
        ctx.rng,
        budget=cfg.planning_budget,
        tolerance=cfg.yaw_tolerance,
        current_tips=tips,
    )
    state.stats["planning_time"] += time.perf_counter() - t0
    if plan is None:
        return "fail_retry", _hold_command(state, reading)
    if plan.outcome is not None:
        state.stats["grasps_sampled"] += plan.outcome.attempts
        state.stats["plans_attempted"] += 1
    if plan.path is None:
        return "phase_done", _hold_command(state, reading)
    try:
        script = _manipulation_script(
            state, ctx, plan.grasp, est, plan.path, reading, release=True
        )
    except ApproachBlocked:
        return "fail_retry", _hold_command(state, reading)
    state.active_grasp = plan.grasp
    _start_script(state, script, "rotating")
    _log(state, "primitive_start", primitive=which)
    return "working", _hold_command(state, reading)


def _grasp_active(state: SequencerState) -> bool:
    """True while the running script is past its attach and before detach."""
    if state.script is None:
        return False
    seen_attach = any(
        isinstance(a, AttachAction) for a in state.script[: state.script_index]
    )
    seen_detach = any(
        isinstance(a, DetachAction) and a.issued for a in state.script[: state.script_index + 1]
    )
    return seen_attach and not seen_detach


def _handle_center(state, ctx, reading, goal, level):
    cfg = ctx.config
    if state.script is not None:
        status, command = _run_script(state, ctx, reading)
        if status == "running":
            contacts = reading.tip_contacts if _grasp_active(state) else None
            if contacts is not None and state.drop_detector.update(
                state.estimate, None, contacts
            ):
                state.stats["drops"] += 1
                return "dropped", command
            return "working", command
        if status == "error":
            _bump(state, "center")
            return "fail_retry", _hold_command(state, reading)
        return "phase_done", _hold_command(state, reading)
    if _count(state, "center") >= cfg.max_retries["center"]:
        return "need_plan", _hold_command(state, reading)
    est = _estimate(state, ctx, cfg.min_observations)
    if est is None:
        return "working", _hold_command(state, reading)
    state.estimate = est
    if float(np.linalg.norm(est.position[:2])) <= cfg.center_threshold:
        return "need_plan", _hold_command(state, reading)
    _bump(state, "center")
    tips = forward_kinematics(ctx.model, reading.joints.angles)
    grasp = _find_grasp(state, ctx, est, tips)
    if grasp is None:
        return "fail_retry", _hold_command(state, reading)
    try:
        move, active = plan_move_to_center(est, grasp, ctx.model, grasp.joints)
        script = _manipulation_script(
            state, ctx, grasp, est, move, reading, release=True, active=active
        )
    except (ApproachBlocked, NoFingersAvailable):
        return "fail_retry", _hold_command(state, reading)
    state.active_grasp = grasp
    _start_script(state, script, "centering")
    _log(state, "primitive_start", primitive="move_to_center", active=active.tolist())
    return "working", _hold_command(state, reading)


def _handle_grasp_plan(state, ctx, reading, goal, level):
    cfg = ctx.config
    if state.script is not None:
        status, command = _run_script(state, ctx, reading)
        if status == "running":
            return "working", command
        if status == "error":
            _bump(state, "plan")
            state.active_path = None
            return "fail_retry", _hold_command(state, reading)
        return "plan_ready", _hold_command(state, reading)
    est = _estimate(state, ctx, cfg.min_observations)
    if est is None:
        return "working", _hold_command(state, reading)
    state.estimate = est
    if _count(state, "plan") >= cfg.max_retries["plan"]:
        state.counters["plan"] = 0
        return "give_up", _hold_command(state, reading)
    _bump(state, "plan")
    tips = forward_kinematics(ctx.model, reading.joints.angles)
    t0 = time.perf_counter()
    if cfg.motion_planning:
        outcome = grasp_planning_loop(
            est,
            goal,
            _relaxed_params(ctx, level),
            ctx.model,
            ctx.shape,
            ctx.friction,
            ctx.rng,
            budget=cfg.planning_budget,
            current_tips=tips,
        )
        state.stats["planning_time"] += time.perf_counter() - t0
        state.stats["grasps_sampled"] += outcome.attempts
        state.stats["plans_attempted"] += 1
        if not outcome.success:
            return "fail_retry", _hold_command(state, reading)
        grasp, path = outcome.grasp, outcome.path
    else:
        result = _naive_path(state, ctx, est, goal, level)
        state.stats["planning_time"] += time.perf_counter() - t0
        state.stats["plans_attempted"] += 1
        if result is None:
            return "fail_retry", _hold_command(state, reading)
        grasp, path = result
    try:
        script = _manipulation_script(state, ctx, grasp, est, None, reading, release=False)
    except ApproachBlocked:
        return "fail_retry", _hold_command(state, reading)
    state.active_grasp = grasp
    state.active_path = path
    _start_script(state, script, "approach")
    _log(state, "plan_found", waypoints=len(path), grasp_joints=bool(grasp.joints is not None))
    return "working", _hold_command(state, reading)


def _handle_execute(state, ctx, reading, goal, level):
    cfg = ctx.config
    if state.script is None:
        if state.active_path is None:
            return "give_up", _hold_command(state, reading)
        _start_script(state, [PathAction(state.active_path)], "tracking")
    status, command = _run_script(state, ctx, reading)
    if status == "error":
        _bump(state, "execute")
        state.active_path = None
        return "give_up", _hold_command(state, reading)
    if status == "done":
        return "exec_done", _hold_command(state, reading)
    expected = _expected_pose(state) or (
        state.active_path.waypoints[-1].pose if state.active_path else state.estimate
    )
    if state.drop_detector.update(expected, reading.object_pose, reading.tip_contacts):
        state.stats["drops"] += 1
        state.active_path = None
        return "dropped", command
    if cfg.force_control and reading.tip_contacts.all() and reading.object_pose is not None:
        command = _with_force_control(state, ctx, reading, command, expected)
    return "working", command


def _with_force_control(state, ctx, reading, command: SimCommand, target_pose: Pose) -> SimCommand:
    """Layer wrench-PD torques on top of the position command."""
    cfg = ctx.config
    tau = pd_torques(cfg.pd_gains, command.position_targets, reading.joints, cfg.tau_max)
    extra = force_control_torques(
        reading.object_pose,
        np.zeros(6),
        target_pose,
        state.active_grasp,
        cfg.wrench_gains,
        ctx.friction,
        ctx.model,
        reading.joints.angles,
        cfg.f_max,
        cfg.tau_max,
    )
    return SimCommand(
        torques=np.clip(tau + extra, -cfg.tau_max, cfg.tau_max),
        attach=command.attach,
        detach=command.detach,
    )


def _air_goal(ctx: SequencerContext, goal: Pose) -> bool:
    return goal.position[2] > ctx.shape.resting_height(goal.orientation) + 0.01


def _handle_tip_adjust(state, ctx, reading, goal, level):
    cfg = ctx.config
    if state.script is not None:
        status, command = _run_script(state, ctx, reading)
        if status == "running":
            if state.sub in ("adjusting", "releasing"):
                contacts = reading.tip_contacts if state.sub == "adjusting" else None
                if contacts is not None and state.drop_detector.update(
                    goal, reading.object_pose, contacts
                ):
                    state.stats["drops"] += 1
                    return "dropped", command
            return "working", command
        if status == "error":
            return "give_up", _hold_command(state, reading)
        if state.sub == "releasing":
            return "phase_done", _hold_command(state, reading)
        _invalidate(state)
        state.sub = "observing"
        return "working", _hold_command(state, reading)

    if not cfg.tip_adjustments or state.active_grasp is None:
        return _finish_adjust(state, ctx, reading, goal)

    if state.sub == "hold":
        if state.drop_detector.update(goal, reading.object_pose, reading.tip_contacts):
            state.stats["drops"] += 1
            return "dropped", _hold_command(state, reading)
        est = _estimate(state, ctx, cfg.min_observations)
        if est is not None:
            pos_err, _ = pose_error(est, goal)
            if pos_err > cfg.resume_pos_tol:
                state.adjust_round = 0
                state.sub = "observing"
                _invalidate(state)
        return "working", _hold_command(state, reading)

    if state.sub != "observing":
        _invalidate(state)
        state.sub = "observing"
        return "working", _hold_command(state, reading)
    est = _estimate(state, ctx, cfg.min_observations)
    if est is None:
        return "working", _hold_command(state, reading)
    state.estimate = est
    pos_err, ang_err = pose_error(est, goal)
    done = pos_err <= cfg.adjust_pos_stop and (level < 4 or ang_err <= cfg.adjust_ang_stop)
    if done or state.adjust_round >= cfg.adjust_rounds:
        return _finish_adjust(state, ctx, reading, goal)
    try:
        plan = tip_adjustment_plan(
            est,
            goal,
            state.active_grasp,
            ctx.model,
            reading.joints.angles,
            match_orientation=level >= 4,
        )
    except AdjustmentInfeasible:
        return "give_up", _hold_command(state, reading)
    state.adjust_round += 1
    state.stats["adjustments"] += 1
    _start_script(state, [TipAction(plan)], "adjusting")
    _log(state, "primitive_start", primitive="tip_adjustment", round=state.adjust_round)
    return "working", _hold_command(state, reading)


def _finish_adjust(state, ctx, reading, goal):
    if _air_goal(ctx, goal):
        state.sub = "hold"
        state.drop_detector.reset()
        return "working", _hold_command(state, reading)
    if state.active_grasp is not None:
        est = state.estimate
        if est is None and state.active_path is not None:
            est = state.active_path.waypoints[-1].pose
        if est is None:
            est = goal
        retract = plan_retract(
            state.active_grasp,
            est,
            ctx.model,
            reading.joints.angles,
            ctx.home_tips,
        )
        _start_script(state, [DetachAction(), TipAction(retract)], "releasing")
        return "working", _hold_command(state, reading)
    return "phase_done", _hold_command(state, reading)


def _handle_recover(state, ctx, reading, goal, level):
    cfg = ctx.config
    if state.sub != "recovering":
        state.sub = "recovering"
        state.counters["recover_wait"] = 0
        state.active_path = None
        state.active_grasp = None
        state.script = None
        _bump(state, "recover")
        return "working", SimCommand(
            position_targets=ctx.model.home_angles.copy(), detach=True
        )
    state.counters["recover_wait"] = state.counters.get("recover_wait", 0) + 1
    err = float(np.abs(ctx.model.home_angles - reading.joints.angles).max())
    if err < 0.1 or state.counters["recover_wait"] > cfg.recover_steps * 5:
        return "phase_done", SimCommand(position_targets=ctx.model.home_angles.copy())
    return "working", SimCommand(position_targets=ctx.model.home_angles.copy())


_HANDLERS = {
    OBSERVE: _handle_observe,
    ALIGN_YAW: lambda s, c, r, g, l: _handle_align(s, c, r, g, l, "align_yaw"),
    ALIGN_PITCH: lambda s, c, r, g, l: _handle_align(s, c, r, g, l, "align_pitch"),
    CENTER: _handle_center,
    GRASP_PLAN: _handle_grasp_plan,
    EXECUTE: _handle_execute,
    TIP_ADJUST: _handle_tip_adjust,
    RECOVER: _handle_recover,
}


def sequencer_step(
    state: SequencerState,
    reading: SensorReading,
    goal: Pose,
    level: int,
    ctx: SequencerContext,
) -> tuple[SequencerState, SimCommand]:
    """One control tick of the state machine.

    Buffers the observation, runs the current phase's handler, applies the
    transition table to its event, and returns the (mutated) state with the
    command for the simulator.
    """
    if reading.object_pose is not None:
        state.obs_buffer.append(reading.object_pose)
        if len(state.obs_buffer) > 4 * ctx.config.observation_count:
            state.obs_buffer.pop(0)
    event, command = _HANDLERS[state.phase](state, ctx, reading, goal, level)
    nxt = TRANSITIONS[(state.phase, event)]
    if nxt != state.phase:
        _log(state, "transition", source=state.phase, target=nxt, cause=event)
        state.phase = nxt
        state.sub = ""
        state.script = None
        state.steps_in_phase = 0
        _invalidate(state)
    else:
        state.steps_in_phase += 1
    if command is None:
        command = _hold_command(state, reading)
    state.steps += 1
    return state, command


class Sequencer:
    """Binds a context and a state; one instance drives one episode."""

    def __init__(self, ctx: SequencerContext):
        self.ctx = ctx
        self.state = SequencerState()

    def step(self, reading: SensorReading, goal: Pose, level: int) -> SimCommand:
        self.state, command = sequencer_step(self.state, reading, goal, level, self.ctx)
        return command
