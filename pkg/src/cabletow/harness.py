"""Evaluation, latency benchmarking and plot-data extraction.

Evaluation runs held-out scenarios (odd sampling seeds; training uses even)
with mean actions and reports success rate, average load speed, heading
cosine similarity and the terminal-cause histogram per team size. The latency
benchmark times only the decentralized per-agent decision path (ego encoding
plus one actor forward); the critic never runs there.
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .checkpoint import actor_from_checkpoint
from .env import TowEnv
from .marl import CAUSE_NONFINITE
from .nets import ActorNet, actor_forward
from .obs import encode_ego
from .sim import DEFAULT_SIM_PARAMS, Action, NonFiniteState, SimParams, Terminal
from .traces import EpisodeTraceWriter, read_training_log
from .world import WorldConfig, sample_scenario

EVAL_SEED_STRIDE = 2 ** 20
DEFAULT_BENCH_SIZES = (1, 2, 4, 8, 12)


@dataclass
class EvalReport:
    team_size: int
    episodes: int
    success_rate: float            # fraction in [0, 1]
    avg_speed_mean: float          # load centroid speed, m/s
    avg_speed_std: float
    cosine_mean: float             # pairwise heading cosine (1.0 for n = 1)
    cosine_std: float
    causes: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "team_size": self.team_size,
            "episodes": self.episodes,
            "success_rate": self.success_rate,
            "avg_speed_mean": self.avg_speed_mean,
            "avg_speed_std": self.avg_speed_std,
            "cosine_mean": self.cosine_mean,
            "cosine_std": self.cosine_std,
            "causes": dict(self.causes),
        }


@dataclass
class LatencyReport:
    team_size: int
    trials: int
    mean_s: float
    p99_s: float

    def as_dict(self) -> dict:
        return {"team_size": self.team_size, "trials": self.trials,
                "mean_s": self.mean_s, "p99_s": self.p99_s}


def eval_scenario_seed(seed: int, team_size: int, episode: int) -> int:
    """Odd sampling seed, disjoint from the even training-seed space."""
    return 2 * (seed * EVAL_SEED_STRIDE + team_size * 2 ** 14 + episode) + 1


def _pairwise_heading_cosine(thetas: np.ndarray) -> float:
    n = thetas.shape[0]
    if n == 1:
        return 1.0
    total, count = 0.0, 0
    for i in range(n):
        for j in range(i + 1, n):
            total += math.cos(thetas[i] - thetas[j])
            count += 1
    return total / count


def _mean_actions(actor: ActorNet, env: TowEnv,
                  hiddens: torch.Tensor) -> tuple[list[Action], torch.Tensor, np.ndarray]:
    obs = env.observe_all()
    vec = torch.from_numpy(np.stack([o.vector for o in obs]).astype(np.float32))
    grids = torch.from_numpy(np.stack([o.grids for o in obs]).astype(np.float32))
    with torch.no_grad():
        mu, _, h_new = actor(vec, grids, hiddens)
    acts = mu.numpy()
    return [Action(*acts[i]) for i in range(len(obs))], h_new, acts


def evaluate_actor(actor: ActorNet, template: WorldConfig, team_size: int,
                   episodes: int, seed: int, sim: SimParams = DEFAULT_SIM_PARAMS,
                   trace_dir: str | None = None, trace_count: int = 0) -> dict:
    """Run held-out episodes with mean actions; returns EvalReport.as_dict()."""
    actor.eval()
    template = replace(template, team_size=team_size)
    causes = {"success": 0, "collision": 0, "timeout": 0, "nonfinite": 0}
    speeds: list[float] = []
    cosines: list[float] = []
    for ep in range(episodes):
        rng = np.random.default_rng(eval_scenario_seed(seed, team_size, ep))
        scenario = sample_scenario(rng, team_size, template)
        env = TowEnv(scenario, sim)
        h = actor.initial_hidden(team_size)
        writer = None
        if trace_dir is not None and ep < trace_count:
            writer = EpisodeTraceWriter(
                os.path.join(trace_dir, f"eval_n{team_size}_ep{ep}.csv"), scenario)
        path_len = 0.0
        cos_steps: list[float] = []
        prev_xy = np.array([env.state.load.x, env.state.load.y])
        cause = "timeout"
        while env.terminal == Terminal.RUNNING:
            actions, h, _ = _mean_actions(actor, env, h)
            thetas = np.array([r.theta for r in env.state.robots])
            cos_steps.append(_pairwise_heading_cosine(thetas))
            state_before = env.state.copy() if writer is not None else None
            step_idx = env.state.decision_step
            p_local = env.p_local()
            try:
                out = env.step(actions, p_local)
            except NonFiniteState:
                cause = "nonfinite"
                break
            xy = np.array([env.state.load.x, env.state.load.y])
            path_len += float(np.linalg.norm(xy - prev_xy))
            prev_xy = xy
            if writer is not None:
                writer.row(step_idx, state_before, actions,
                           p_local, out.reward, int(out.terminal))
            if out.terminal == Terminal.SUCCESS:
                cause = "success"
            elif out.terminal == Terminal.COLLISION:
                cause = "collision"
        causes[cause] += 1
        if writer is not None:
            writer.close()
        duration = max(env.state.decision_step, 1) * sim.decision_period
        speeds.append(path_len / duration)
        cosines.append(float(np.mean(cos_steps)) if cos_steps else 1.0)
    # Non-finite aborts also count as collisions so the three-way histogram
    # still partitions the episode count; the side count stays visible.
    counted = {
        "success": causes["success"],
        "collision": causes["collision"] + causes["nonfinite"],
        "timeout": causes["timeout"],
        "nonfinite": causes["nonfinite"],
    }
    report = EvalReport(
        team_size=team_size,
        episodes=episodes,
        success_rate=causes["success"] / episodes if episodes else 0.0,
        avg_speed_mean=float(np.mean(speeds)) if speeds else 0.0,
        avg_speed_std=float(np.std(speeds)) if speeds else 0.0,
        cosine_mean=float(np.mean(cosines)) if cosines else 1.0,
        cosine_std=float(np.std(cosines)) if cosines else 0.0,
        causes=counted,
    )
    return report.as_dict()


def evaluate(checkpoint: str, team_sizes: list[int], episodes: int, seed: int,
             template: WorldConfig | None = None,
             sim: SimParams = DEFAULT_SIM_PARAMS,
             trace_dir: str | None = None, trace_count: int = 0) -> dict:
    """Evaluate a checkpointed actor across team sizes; per-size reports."""
    actor, _ = actor_from_checkpoint(checkpoint)
    if template is None:
        template = WorldConfig()
    reports = {}
    for size in team_sizes:
        reports[str(size)] = evaluate_actor(
            actor, template, size, episodes, seed, sim,
            trace_dir=trace_dir, trace_count=trace_count)
    return {"checkpoint": checkpoint, "episodes": episodes, "seed": seed,
            "reports": reports}


def _bench_template(team_size: int) -> WorldConfig:
    # Wide empty map and long fixed cables keep 12-robot spawns feasible.
    return WorldConfig(map_extent=16.0, n_obstacles=0, team_size=team_size,
                       cable_lengths=(2.0,) * team_size,
                       min_goal_distance=3.0)


def bench_latency(checkpoint: str, sizes: tuple[int, ...] = DEFAULT_BENCH_SIZES,
                  trials: int = 100, seed: int = 0, warmup: int = 10) -> dict:
    """Time the per-agent decision path (encode + actor forward) per size."""
    actor, _ = actor_from_checkpoint(checkpoint)
    actor.eval()
    reports = {}
    for size in sizes:
        if trials <= 0:
            reports[str(size)] = LatencyReport(size, 0, 0.0, 0.0).as_dict()
            continue
        rng = np.random.default_rng(eval_scenario_seed(seed, size, 0))
        scenario = sample_scenario(rng, size, _bench_template(size))
        env = TowEnv(scenario)
        h_bench = actor.initial_hidden(1)
        h_all = actor.initial_hidden(size)
        samples: list[float] = []
        warm = warmup
        ep = 0
        while len(samples) < trials:
            if env.terminal != Terminal.RUNNING:
                ep += 1
                scenario = sample_scenario(
                    np.random.default_rng(eval_scenario_seed(seed, size, ep)),
                    size, _bench_template(size))
                env = TowEnv(scenario)
                h_bench = actor.initial_hidden(1)
                h_all = actor.initial_hidden(size)
            p_local = env.p_local()
            # Timed section: what one robot computes on board each decision.
            t0 = time.perf_counter()
            obs0 = encode_ego(env.state, 0, env.scenario, p_local, env.obs_rng)
            _, _, h_bench = actor_forward(actor, obs0, h_bench)
            elapsed = time.perf_counter() - t0
            if warm > 0:
                warm -= 1
            else:
                samples.append(elapsed)
            actions, h_all, _ = _mean_actions(actor, env, h_all)
            env.step(actions, p_local)
        arr = np.array(samples)
        reports[str(size)] = LatencyReport(
            team_size=size, trials=trials, mean_s=float(arr.mean()),
            p99_s=float(np.percentile(arr, 99))).as_dict()
    return {"checkpoint": checkpoint, "trials": trials, "reports": reports}


def reward_thirds(log_path: str) -> tuple[float, float, float]:
    """Episode-weighted mean episode reward over the three thirds of a run."""
    rows = read_training_log(log_path)
    if not rows:
        raise ValueError(f"empty training log: {log_path}")
    means = []
    for part in np.array_split(np.arange(len(rows)), 3):
        weight, total = 0.0, 0.0
        for i in part:
            eps = rows[int(i)]["episodes"]
            total += rows[int(i)]["ep_reward_mean"] * eps
            weight += eps
        means.append(total / weight if weight else 0.0)
    return means[0], means[1], means[2]
