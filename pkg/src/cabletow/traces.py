"""CSV persistence for training logs and episode traces.

Floats are serialized with repr(), which round-trips exactly in Python 3, so
a replayed episode can be compared bit-for-bit against its trace. No
timestamps or host information are written anywhere: two identically seeded
runs produce byte-identical files.
"""
from __future__ import annotations

import csv
import json
import os
from typing import Iterable

import numpy as np

from .sim import Action, WorldState
from .world import Scenario, scenario_from_dict, scenario_to_dict

TRAIN_LOG_COLUMNS = [
    "update", "stage", "team_size", "steps", "episodes",
    "ep_reward_mean", "ep_len_mean", "success_rate", "collision_rate",
    "timeout_rate", "nonfinite_rate", "surrogate", "value_loss", "entropy",
    "kd", "actor_loss", "approx_kl", "clip_frac",
    "grad_norm_actor", "grad_norm_critic",
]


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


class TrainingLog:
    """Append-only CSV training log with a fixed column set."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        self._fh = open(path, "w", newline="")
        self._fh.write(",".join(TRAIN_LOG_COLUMNS) + "\n")
        self._fh.flush()

    def row(self, values: dict) -> None:
        missing = [c for c in TRAIN_LOG_COLUMNS if c not in values]
        if missing:
            raise KeyError(f"training log row missing columns: {missing}")
        self._fh.write(",".join(_fmt(values[c]) for c in TRAIN_LOG_COLUMNS) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TrainingLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_training_log(path: str) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: float(v) for k, v in row.items()} for row in reader]


# ---------------------------------------------------------------------------
# Episode traces: one CSV per episode plus a scenario sidecar JSON, enough to
# re-simulate the episode exactly (actions are the pre-clamp commands).

def trace_columns(team_size: int) -> list[str]:
    cols = ["step"]
    for i in range(team_size):
        cols += [f"r{i}_{f}" for f in ("x", "y", "theta", "vx", "vy", "omega")]
        cols += [f"a{i}_{f}" for f in ("vx", "vy", "w")]
    cols += [f"load_{f}" for f in ("x", "y", "theta", "vx", "vy", "omega")]
    cols += ["p_local_x", "p_local_y", "reward", "terminal"]
    return cols


def _body_fields(body) -> list[str]:
    return [repr(float(v)) for v in (body.x, body.y, body.theta,
                                     body.vx, body.vy, body.omega)]


class EpisodeTraceWriter:
    """Streams one episode: a pre-step state row per decision step."""

    def __init__(self, path: str, scenario: Scenario):
        self.path = path
        self.team_size = scenario.team_size
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(self._sidecar_path(path), "w") as fh:
            json.dump(scenario_to_dict(scenario), fh, sort_keys=True, indent=1)
        self._fh = open(path, "w", newline="")
        self._fh.write(",".join(trace_columns(self.team_size)) + "\n")

    @staticmethod
    def _sidecar_path(trace_path: str) -> str:
        base, _ = os.path.splitext(trace_path)
        return base + ".scenario.json"

    def row(self, step: int, state_before: WorldState, actions: list[Action],
            p_local: tuple[float, float], reward: float, terminal: int) -> None:
        vals: list[str] = [str(step)]
        for i, body in enumerate(state_before.robots):
            vals += _body_fields(body)
            act = actions[i]
            vals += [repr(float(act.v_sag)), repr(float(act.v_lat)),
                     repr(float(act.omega))]
        vals += _body_fields(state_before.load)
        vals += [repr(float(p_local[0])), repr(float(p_local[1])),
                 repr(float(reward)), str(int(terminal))]
        self._fh.write(",".join(vals) + "\n")

    def close(self) -> None:
        self._fh.close()


def read_episode_trace(path: str) -> tuple[Scenario, list[dict[str, float]]]:
    sidecar = EpisodeTraceWriter._sidecar_path(path)
    with open(sidecar) as fh:
        scenario = scenario_from_dict(json.load(fh))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [{k: float(v) for k, v in row.items()} for row in reader]
    expected = trace_columns(scenario.team_size)
    if rows and list(rows[0].keys()) != expected:
        raise ValueError(f"trace columns {list(rows[0].keys())} != {expected}")
    return scenario, rows


def trace_actions(row: dict[str, float], team_size: int) -> list[Action]:
    return [Action(row[f"a{i}_vx"], row[f"a{i}_vy"], row[f"a{i}_w"])
            for i in range(team_size)]


def write_plot_rows(path: str, header: Iterable[str],
                    rows: Iterable[Iterable]) -> None:
    """Tidy CSV emission shared by the plot-data subcommand."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
