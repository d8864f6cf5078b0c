"""Multi-stage curriculum: team size grows stage by stage, the actor carries
over, the critic is rebuilt from scratch for each stage's team size, and every
completed stage's actor is frozen into the teacher set that drives the
knowledge-distillation penalty of later stages. After each stage the current
actor is evaluated on every team size trained so far (the retention matrix).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .marl import (
    CAUSE_NONFINITE,
    EpisodeStat,
    PpoHparams,
    RolloutCollector,
    ScenarioPool,
    TeacherSet,
    mappo_update,
)
from .nets import ActorNet, CriticNet
from .sim import DEFAULT_SIM_PARAMS, SimParams, Terminal
from .traces import TrainingLog
from .world import WorldConfig

STAGE_SEED_STRIDE = 2 ** 20  # scenario-seed block reserved per (run, stage)


@dataclass(frozen=True)
class StageConfig:
    team_size: int
    steps: int                       # decision steps collected in this stage
    envs: int = 64
    horizon: int = 64
    beta: float = 0.5                # KD weight (ignored while no teachers)
    pool: int = 1024                 # randomized scenario pool size
    eval_episodes: int = 64          # per team size at stage end; 0 skips
    critic_scope: str = "global"     # "global" | "local" (ablation)
    hp: PpoHparams = field(default_factory=PpoHparams)

    def __post_init__(self) -> None:
        if self.team_size < 1:
            raise ValueError("team_size must be >= 1")
        if self.steps < 1 or self.envs < 1 or self.horizon < 1:
            raise ValueError("steps, envs and horizon must be positive")
        if self.critic_scope not in ("global", "local"):
            raise ValueError(f"critic_scope {self.critic_scope!r}")
        if self.horizon % self.hp.chunk != 0:
            raise ValueError(f"horizon {self.horizon} not divisible by "
                             f"chunk {self.hp.chunk}")


@dataclass(frozen=True)
class StageSchedule:
    template: WorldConfig
    stages: tuple[StageConfig, ...]
    sim: SimParams = DEFAULT_SIM_PARAMS

    def __post_init__(self) -> None:
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        sizes = [s.team_size for s in self.stages]
        if sizes[0] != 1:
            raise ValueError("curriculum must start with team size 1")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"team sizes must strictly increase, got {sizes}")


def _episode_rates(stats: list[EpisodeStat]) -> dict[str, float]:
    n = len(stats)
    if n == 0:
        return {"episodes": 0, "ep_reward_mean": 0.0, "ep_len_mean": 0.0,
                "success_rate": 0.0, "collision_rate": 0.0,
                "timeout_rate": 0.0, "nonfinite_rate": 0.0}
    def rate(cause: int) -> float:
        return sum(1 for s in stats if s.cause == cause) / n
    return {
        "episodes": n,
        "ep_reward_mean": sum(s.reward for s in stats) / n,
        "ep_len_mean": sum(s.length for s in stats) / n,
        "success_rate": rate(int(Terminal.SUCCESS)),
        "collision_rate": rate(int(Terminal.COLLISION)),
        "timeout_rate": rate(int(Terminal.TIMEOUT)),
        "nonfinite_rate": rate(CAUSE_NONFINITE),
    }


def train_stage(actor: ActorNet, stage: StageConfig, template: WorldConfig,
                teachers: TeacherSet, seed: int, stage_idx: int,
                log: TrainingLog | None = None,
                sim: SimParams = DEFAULT_SIM_PARAMS,
                update_offset: int = 0) -> tuple[CriticNet, dict]:
    """Train one stage in place on `actor`; returns the stage critic + stats."""
    cfg = replace(template, team_size=stage.team_size)
    pool_base = (seed * 64 + stage_idx) * STAGE_SEED_STRIDE
    pool = ScenarioPool(cfg, stage.team_size, stage.pool, seed_base=pool_base)
    critic = CriticNet(stage.team_size,
                       np.random.default_rng([seed, stage_idx, 3]),
                       local_scope=stage.critic_scope == "local")
    collector = RolloutCollector(actor, critic, pool, stage.envs,
                                 np.random.default_rng([seed, stage_idx, 1]),
                                 params=sim)
    update_rng = np.random.default_rng([seed, stage_idx, 2])
    hp = replace(stage.hp, beta=stage.beta)
    actor_opt = torch.optim.Adam(actor.parameters(), lr=hp.lr)
    critic_opt = torch.optim.Adam(critic.parameters(), lr=hp.lr)

    num_updates = math.ceil(stage.steps / (stage.envs * stage.horizon))
    last_diag: dict[str, float] = {}
    reward_series: list[tuple[int, float]] = []
    for update in range(num_updates):
        batch = collector.collect(stage.horizon)
        diag = mappo_update(batch, actor, critic, teachers, hp,
                            actor_opt=actor_opt, critic_opt=critic_opt,
                            rng=update_rng)
        stats = collector.drain_stats()
        rates = _episode_rates(stats)
        if rates["episodes"]:
            reward_series.append((rates["episodes"], rates["ep_reward_mean"]))
        last_diag = diag
        if log is not None:
            log.row({
                "update": update_offset + update,
                "stage": stage_idx,
                "team_size": stage.team_size,
                "steps": collector.total_steps,
                **rates,
                "surrogate": diag["surrogate"],
                "value_loss": diag["value_loss"],
                "entropy": diag["entropy"],
                "kd": diag["kd"],
                "actor_loss": diag["actor_loss"],
                "approx_kl": diag["approx_kl"],
                "clip_frac": diag["clip_frac"],
                "grad_norm_actor": diag["grad_norm_actor"],
                "grad_norm_critic": diag["grad_norm_critic"],
            })
    stage_stats = {
        "updates": num_updates,
        "env_steps": collector.total_steps,
        "final_diag": last_diag,
        "final_value_loss": last_diag.get("value_loss", float("nan")),
    }
    return critic, stage_stats


def run_curriculum(schedule: StageSchedule, seed_or_rng: int | np.random.Generator,
                   out_dir: str | None = None,
                   log: TrainingLog | None = None,
                   sigma_max: float | None = None) -> tuple[ActorNet, dict]:
    """Train all stages; returns the final actor and the curriculum report.

    The report carries, per stage, the training stats and an evaluation
    success matrix over every stage team size trained so far. Checkpoints
    (per stage and final) are written when out_dir is given.
    """
    if isinstance(seed_or_rng, np.random.Generator):
        seed = int(seed_or_rng.integers(0, 2 ** 31 - 1))
    else:
        seed = int(seed_or_rng)
    actor = ActorNet(np.random.default_rng([seed, 999]), sigma_max=sigma_max)
    teachers = TeacherSet()
    report: dict = {"seed": seed, "stages": []}
    update_offset = 0
    critic = None
    for idx, stage in enumerate(schedule.stages):
        if idx > 0:
            teachers.snapshot(actor)
        critic, stats = train_stage(actor, stage, schedule.template, teachers,
                                    seed, idx, log=log, sim=schedule.sim,
                                    update_offset=update_offset)
        update_offset += stats["updates"]
        entry = {
            "stage": idx,
            "team_size": stage.team_size,
            "teachers": len(teachers),
            **{k: v for k, v in stats.items() if k != "final_diag"},
            "final_kd": stats["final_diag"].get("kd", 0.0),
        }
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            ckpt = os.path.join(out_dir, f"stage{stage.team_size}.ckpt")
            save_checkpoint(ckpt, actor, critic=critic,
                            manifest_extra={"stage": idx,
                                            "team_size": stage.team_size})
            entry["checkpoint"] = ckpt
        if stage.eval_episodes > 0:
            from .harness import evaluate_actor
            sizes = [s.team_size for s in schedule.stages[:idx + 1]]
            matrix = {}
            for size in sizes:
                rep = evaluate_actor(
                    actor, replace(schedule.template, team_size=size),
                    team_size=size, episodes=stage.eval_episodes,
                    seed=seed * 64 + idx, sim=schedule.sim)
                matrix[str(size)] = rep["success_rate"]
            entry["eval_success"] = matrix
        report["stages"].append(entry)
    if out_dir is not None:
        final = os.path.join(out_dir, "final.ckpt")
        save_checkpoint(final, actor, critic=critic,
                        manifest_extra={"stage": len(schedule.stages) - 1,
                                        "team_size": schedule.stages[-1].team_size})
        report["final_checkpoint"] = final
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(report, fh, sort_keys=True, indent=1)
    return actor, report
