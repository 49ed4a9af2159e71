"""Episode and batch runners with machine-readable reports.

An episode wires the simulator and the sequencer together for a fixed step
budget, accumulating the per-step reward against the goal. Everything is
keyed by explicit seeds: the deterministic payload of a report reproduces
byte-for-byte for the same config and seed (wall-clock timings are kept in
a separate section that is excluded from the canonical bytes).
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .geometry import Pose, pose_error, quat_from_yaw
from .planner import RRTParams
from .sequencer import Sequencer, SequencerContext
from .sim import SimCommand, World, reward, sample_goal


@dataclass
class EpisodeReport:
    seed: int
    level: int
    label: str
    steps: int
    reward_trace: list[float]
    cumulative_reward: float
    final_pos_err: float
    final_ang_err: float
    goal: dict
    initial_pose: dict
    counts: dict
    events: list[dict]
    planning_time: float = 0.0
    wall_time: float = 0.0

    def payload(self) -> dict:
        """Deterministic content: everything except wall-clock timing."""
        return {
            "seed": self.seed,
            "level": self.level,
            "label": self.label,
            "steps": self.steps,
            "cumulative_reward": self.cumulative_reward,
            "final_pos_err": self.final_pos_err,
            "final_ang_err": self.final_ang_err,
            "goal": self.goal,
            "initial_pose": self.initial_pose,
            "counts": self.counts,
            "reward_trace": self.reward_trace,
            "events": self.events,
        }

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.payload(), sort_keys=True).encode()

    def to_dict(self) -> dict:
        out = self.payload()
        out["timing"] = {"planning_time": self.planning_time, "wall_time": self.wall_time}
        return out


def _pose_dict(pose: Pose) -> dict:
    return {
        "position": [float(v) for v in pose.position],
        "orientation": [float(v) for v in pose.orientation],
    }


def _initial_pose(config: ScenarioConfig, rng: np.random.Generator) -> Pose:
    shape = config.build_shape()
    r = config.init.radius * math.sqrt(rng.uniform())
    theta = rng.uniform(0.0, 2.0 * math.pi)
    yaw = rng.uniform(-math.pi, math.pi) if config.init.random_yaw else 0.0
    return Pose(
        [r * math.cos(theta), r * math.sin(theta), shape.half_extents[2]],
        quat_from_yaw(yaw),
    )


def run_episode(config: ScenarioConfig, seed: int, level: int | None = None) -> EpisodeReport:
    """Run one episode; fully deterministic for a given (config, seed)."""
    t_start = time.perf_counter()
    level = level if level is not None else config.levels[0]
    model = config.build_model()
    shape = config.build_shape()
    friction = config.build_friction()
    weights = config.build_weights()

    streams = np.random.SeedSequence(seed).spawn(4)
    rng_goal, rng_init, rng_noise, rng_plan = (np.random.default_rng(s) for s in streams)

    goal = config.explicit_goal(level)
    if goal is None:
        goal = sample_goal(level, shape, rng_goal, model.workspace_radius)
    initial = _initial_pose(config, rng_init)

    world = World(
        model, shape, friction, config.build_sim_params(), config.build_noise(), initial
    )
    ctx = SequencerContext(
        model, shape, friction, config.build_rrt_params(), config.build_sequencer_config(), rng_plan
    )
    sequencer = Sequencer(ctx)

    trace = []
    for _ in range(config.sim.steps):
        reading = world.sense(rng_noise)
        command = sequencer.step(reading, goal, level)
        world.step(command)
        trace.append(reward(world.state.object_pose, goal, weights, level))

    pos_err, ang_err = pose_error(world.state.object_pose, goal)
    stats = sequencer.state.stats
    planning_time = stats.pop("planning_time", 0.0)
    report = EpisodeReport(
        seed=seed,
        level=level,
        label=config.ablation_label(),
        steps=config.sim.steps,
        reward_trace=[float(r) for r in trace],
        cumulative_reward=float(np.sum(trace)),
        final_pos_err=float(pos_err),
        final_ang_err=float(ang_err),
        goal=_pose_dict(goal),
        initial_pose=_pose_dict(initial),
        counts={k: int(v) for k, v in stats.items()},
        events=sequencer.state.events,
        planning_time=float(planning_time),
        wall_time=time.perf_counter() - t_start,
    )
    return report


@dataclass
class BatchSummary:
    label: str
    levels: list[int]
    n_episodes: int
    seed0: int
    stats: dict            # level -> {mean, std, n, success_rate, ...}
    reports: list[EpisodeReport] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "levels": self.levels,
            "n_episodes": self.n_episodes,
            "seed0": self.seed0,
            "stats": self.stats,
            "errors": self.errors,
        }

    def table(self) -> str:
        """Formatted mean +/- std table: one ablation row, level columns."""
        cols = [f"Level {lv}" for lv in self.levels]
        header = f"{'':24s}" + "".join(f"{c:>22s}" for c in cols)
        cells = []
        for lv in self.levels:
            s = self.stats[str(lv)]
            cells.append(f"{s['mean_reward']:9.1f} +/- {s['std_reward']:7.1f}")
        row = f"{self.label:24s}" + "".join(f"{c:>22s}" for c in cells)
        return header + "\n" + row

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            [
                "label",
                "level",
                "seed",
                "cumulative_reward",
                "final_pos_err",
                "final_ang_err",
                "plans_attempted",
                "grasps_sampled",
                "drops",
                "adjustments",
            ]
        )
        for r in self.reports:
            writer.writerow(
                [
                    r.label,
                    r.level,
                    r.seed,
                    repr(r.cumulative_reward),
                    repr(r.final_pos_err),
                    repr(r.final_ang_err),
                    r.counts.get("plans_attempted", 0),
                    r.counts.get("grasps_sampled", 0),
                    r.counts.get("drops", 0),
                    r.counts.get("adjustments", 0),
                ]
            )
        return buf.getvalue()


def run_batch(config: ScenarioConfig, n_episodes: int, levels: list[int] | None = None) -> BatchSummary:
    """Run seeds seed0..seed0+n-1 for each level and summarize.

    Per-episode failures are recorded and skipped rather than aborting the
    batch.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    levels = levels if levels is not None else list(config.levels)
    reports: list[EpisodeReport] = []
    errors: list[dict] = []
    stats: dict[str, dict] = {}
    for level in levels:
        level_reports = []
        for k in range(n_episodes):
            seed = config.seed + k
            try:
                rep = run_episode(config, seed, level)
                level_reports.append(rep)
                reports.append(rep)
            except Exception as exc:  # propagate per row, keep the batch alive
                errors.append({"level": level, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
        rewards = np.array([r.cumulative_reward for r in level_reports])
        pos_errs = np.array([r.final_pos_err for r in level_reports])
        n = len(level_reports)
        stats[str(level)] = {
            "n": n,
            "mean_reward": float(rewards.mean()) if n else float("nan"),
            "std_reward": float(rewards.std()) if n else 0.0,
            "mean_final_pos_err": float(pos_errs.mean()) if n else float("nan"),
            "success_rate_2cm": float(np.mean(pos_errs < 0.02)) if n else 0.0,
        }
    return BatchSummary(
        config.ablation_label(), levels, n_episodes, config.seed, stats, reports, errors
    )
