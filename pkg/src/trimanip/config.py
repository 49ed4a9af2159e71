"""Scenario configuration: schema-validated ingestion of everything an
episode run needs. Unknown keys are rejected so typos fail loudly.

The JSON schema for scenario files ships with the package at
data/scenario.schema.json and is generated from these models.
"""

from __future__ import annotations

import json
from pathlib import Path as FilePath

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .control import PDGains, WrenchPDGains
from .geometry import CuboidShape, Pose, quat_from_yaw
from .grasp import FrictionModel
from .planner import RRTParams
from .robot import NOMINAL_ROBOT_PATH, RobotModel
from .sequencer import SequencerConfig
from .sim import NoiseModel, RewardWeights, SimParams

SCHEMA_PATH = FilePath(__file__).parent / "data" / "scenario.schema.json"


class ConfigError(Exception):
    """Invalid scenario configuration, with field-path diagnostics."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NoiseSection(_Strict):
    pos_sigma: float = Field(0.0, ge=0)
    yaw_sigma: float = Field(0.0, ge=0)
    flip_prob: float = Field(0.0, ge=0, le=1)
    miss_prob: float = Field(0.0, ge=0, le=1)


class WeightsSection(_Strict):
    w_pos: float = Field(1.0, ge=0)
    w_rot: float = Field(0.2, ge=0)


class SimSection(_Strict):
    dt: float = Field(0.01, gt=0)
    steps: int = Field(1500, ge=1)
    qdot_max: float = Field(3.0, gt=0)
    torque_viscosity: float = Field(0.5, gt=0)
    slip_threshold: float = Field(0.01, gt=0)
    attach_tol: float = Field(0.01, gt=0)


class FrictionSection(_Strict):
    mu: float = Field(0.5, ge=0)
    facets: int = Field(8, ge=3)


class PlannerSection(_Strict):
    pos_step: float = Field(0.02, gt=0)
    ang_step: float = Field(0.1, gt=0)
    goal_bias: float = Field(0.2, ge=0, le=1)
    max_iters: int = Field(3000, ge=1)
    goal_tol_pos_initial: float = Field(0.01, gt=0)
    goal_tol_pos_growth: float = Field(0.01, ge=0)
    goal_tol_pos_max: float = Field(0.05, gt=0)
    goal_tol_ang_initial: float = Field(0.1, gt=0)
    goal_tol_ang_growth: float = Field(0.1, ge=0)
    goal_tol_ang_max: float = Field(0.4, gt=0)
    growth_interval: int = Field(500, ge=1)
    workspace_height: float = Field(0.25, gt=0)
    budget: int = Field(10, ge=1)


class ControllerSection(_Strict):
    force_control: bool = False
    tip_adjustments: bool = True
    alignment: bool = True
    align_pitch: bool = False
    centering: bool = True
    motion_planning: bool = True
    kp: float = Field(10.0, ge=0)
    kd: float = Field(0.3, ge=0)
    tau_max: float = Field(0.36, gt=0)
    kp_pos: float = Field(200.0, ge=0)
    kd_pos: float = Field(10.0, ge=0)
    kp_rot: float = Field(2.0, ge=0)
    kd_rot: float = Field(0.1, ge=0)
    f_max: float = Field(10.0, gt=0)


class InitSection(_Strict):
    radius: float = Field(0.09, ge=0)
    random_yaw: bool = True


class GoalSection(_Strict):
    position: list[float] | None = None
    yaw: float | None = None


class ScenarioConfig(_Strict):
    """Everything needed to run an episode deterministically."""

    name: str = "scenario"
    robot: str | None = None
    shape_half_extents: list[float] = Field(default_factory=lambda: [0.0325, 0.0325, 0.0325])
    levels: list[int] = Field(default_factory=lambda: [1])
    seed: int = 0
    noise: NoiseSection = Field(default_factory=NoiseSection)
    weights: WeightsSection = Field(default_factory=WeightsSection)
    sim: SimSection = Field(default_factory=SimSection)
    friction: FrictionSection = Field(default_factory=FrictionSection)
    planner: PlannerSection = Field(default_factory=PlannerSection)
    controllers: ControllerSection = Field(default_factory=ControllerSection)
    init: InitSection = Field(default_factory=InitSection)
    goal: GoalSection | None = None

    def model_post_init(self, _ctx) -> None:
        if len(self.shape_half_extents) != 3 or any(h <= 0 for h in self.shape_half_extents):
            raise ValueError("shape_half_extents must be three positive numbers")
        if not self.levels or any(lv not in (1, 2, 3, 4) for lv in self.levels):
            raise ValueError("levels must be a nonempty subset of 1..4")

    # -- factories --------------------------------------------------------

    def build_model(self) -> RobotModel:
        path = self.robot if self.robot is not None else NOMINAL_ROBOT_PATH
        return RobotModel.from_json(path)

    def build_shape(self) -> CuboidShape:
        return CuboidShape(self.shape_half_extents)

    def build_noise(self) -> NoiseModel:
        n = self.noise
        return NoiseModel(n.pos_sigma, n.yaw_sigma, n.flip_prob, n.miss_prob)

    def build_sim_params(self) -> SimParams:
        s = self.sim
        return SimParams(s.dt, s.qdot_max, s.torque_viscosity, s.slip_threshold, s.attach_tol)

    def build_friction(self) -> FrictionModel:
        return FrictionModel(self.friction.mu, self.friction.facets)

    def build_weights(self) -> RewardWeights:
        return RewardWeights(self.weights.w_pos, self.weights.w_rot)

    def build_rrt_params(self) -> RRTParams:
        p = self.planner
        return RRTParams(
            pos_step=p.pos_step,
            ang_step=p.ang_step,
            goal_bias=p.goal_bias,
            max_iters=p.max_iters,
            goal_tol_pos_initial=p.goal_tol_pos_initial,
            goal_tol_pos_growth=p.goal_tol_pos_growth,
            goal_tol_pos_max=p.goal_tol_pos_max,
            goal_tol_ang_initial=p.goal_tol_ang_initial,
            goal_tol_ang_growth=p.goal_tol_ang_growth,
            goal_tol_ang_max=p.goal_tol_ang_max,
            growth_interval=p.growth_interval,
            workspace_height=p.workspace_height,
        )

    def build_sequencer_config(self) -> SequencerConfig:
        c = self.controllers
        return SequencerConfig(
            alignment=c.alignment,
            align_pitch_enabled=c.align_pitch,
            centering=c.centering,
            tip_adjustments=c.tip_adjustments,
            force_control=c.force_control,
            motion_planning=c.motion_planning,
            planning_budget=self.planner.budget,
            pd_gains=PDGains(np.full(9, c.kp), np.full(9, c.kd)),
            wrench_gains=WrenchPDGains(c.kp_pos, c.kd_pos, c.kp_rot, c.kd_rot),
            tau_max=c.tau_max,
            f_max=c.f_max,
        )

    def ablation_label(self) -> str:
        c = self.controllers
        parts = []
        if c.force_control:
            parts.append("FC")
        if c.motion_planning:
            parts.append("MP")
        if c.tip_adjustments:
            parts.append("TP")
        if c.alignment:
            parts.append("AL")
        return " + ".join(parts) if parts else "PD only"

    def explicit_goal(self, level: int) -> Pose | None:
        if self.goal is None or self.goal.position is None:
            return None
        quat = quat_from_yaw(self.goal.yaw) if self.goal.yaw is not None else None
        if quat is None:
            return Pose(self.goal.position)
        return Pose(self.goal.position, quat)


def load_config(path) -> ScenarioConfig:
    """Parse and validate a scenario JSON file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(raw)


def parse_config(raw: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"  {loc}: {err['msg']}")
        raise ConfigError("invalid scenario config:\n" + "\n".join(lines)) from exc


def scenario_schema() -> dict:
    return ScenarioConfig.model_json_schema()


def write_schema(path=SCHEMA_PATH) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_schema(), fh, indent=2, sort_keys=True)
        fh.write("\n")
