"""YAML run configuration.

One file drives every subcommand: world template, simulation constants, PPO
hyperparameters (with per-stage overrides), the curriculum stage list, and
evaluation / latency settings. Unknown keys are rejected with their full
path so typos fail loudly instead of silently using a default.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace

import yaml

from .curriculum import StageConfig, StageSchedule
from .marl import PpoHparams
from .nets import SIGMA_MIN
from .sim import DEFAULT_SIM_PARAMS, SimParams
from .world import DrRanges, WorldConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ActorSettings:
    sigma_max: float | None = None   # bound the policy scale head when set

    def __post_init__(self) -> None:
        if self.sigma_max is not None and self.sigma_max <= SIGMA_MIN:
            raise ValueError(f"sigma_max {self.sigma_max} must exceed {SIGMA_MIN}")


@dataclass(frozen=True)
class EvalSettings:
    team_sizes: tuple[int, ...] = (1,)
    episodes: int = 64
    trace_count: int = 0


@dataclass(frozen=True)
class LatencySettings:
    sizes: tuple[int, ...] = (1, 2, 4, 8, 12)
    trials: int = 100


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/run"
    world: WorldConfig = field(default_factory=WorldConfig)
    sim: SimParams = field(default_factory=lambda: DEFAULT_SIM_PARAMS)
    actor: ActorSettings = field(default_factory=ActorSettings)
    schedule: StageSchedule | None = None
    eval: EvalSettings = field(default_factory=EvalSettings)
    latency: LatencySettings = field(default_factory=LatencySettings)


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _build(cls, data: dict, path: str, converters: dict | None = None):
    """Instantiate a dataclass from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown key {path}.{key} "
                              f"(allowed: {', '.join(sorted(names))})")
        conv = (converters or {}).get(key)
        kwargs[key] = conv(value, f"{path}.{key}") if conv else _tupled(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _build_world(data: dict, path: str) -> WorldConfig:
    return _build(WorldConfig, data, path,
                  converters={"dr": lambda v, p: _build(DrRanges, v, p)})


def _build_stage(data: dict, path: str, base_hp: PpoHparams) -> StageConfig:
    data = dict(data)
    hp_override = data.pop("ppo", None)
    stage = _build(StageConfig, data, path)
    hp = base_hp
    if hp_override is not None:
        if not isinstance(hp_override, dict):
            raise ConfigError(f"{path}.ppo: expected a mapping")
        names = {f.name for f in dataclasses.fields(PpoHparams)}
        for key in hp_override:
            if key not in names:
                raise ConfigError(f"unknown key {path}.ppo.{key}")
        hp = replace(hp, **hp_override)
    return replace(stage, hp=hp)


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}")
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    allowed = {"seed", "out_dir", "world", "sim", "actor", "ppo", "stages",
               "eval", "latency"}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key {key} "
                              f"(allowed: {', '.join(sorted(allowed))})")

    world = _build_world(data.get("world", {}), "world")
    sim = _build(SimParams, data.get("sim", {}), "sim")
    base_hp = _build(PpoHparams, data.get("ppo", {}), "ppo")
    schedule = None
    if "stages" in data:
        stages_data = data["stages"]
        if not isinstance(stages_data, list) or not stages_data:
            raise ConfigError("stages: expected a non-empty list")
        stages = tuple(_build_stage(s, f"stages[{i}]", base_hp)
                       for i, s in enumerate(stages_data))
        try:
            schedule = StageSchedule(template=world, stages=stages, sim=sim)
        except ValueError as exc:
            raise ConfigError(f"stages: {exc}") from exc
    actor = _build(ActorSettings, data.get("actor", {}), "actor")
    eval_settings = _build(EvalSettings, data.get("eval", {}), "eval")
    latency = _build(LatencySettings, data.get("latency", {}), "latency")
    return RunConfig(
        seed=int(data.get("seed", 0)),
        out_dir=str(data.get("out_dir", "runs/run")),
        world=world, sim=sim, actor=actor, schedule=schedule,
        eval=eval_settings, latency=latency)
