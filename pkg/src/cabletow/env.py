"""Episode environment: scenario + one-shot global plan + hybrid sim + obs.

A TowEnv owns one episode. On construction it rasterizes the map, runs A*
once from the load to the goal, and initializes body states from the
scenario; every decision step re-extracts the rolling local goal from that
fixed path. Observation noise is drawn from a generator seeded by the
scenario's rng_seed, so episodes are self-contained and replayable.
"""
from __future__ import annotations

import numpy as np

from . import planner
from .obs import EgoObservation, GlobalState, build_global_state, encode_ego
from .sim import (
    DEFAULT_SIM_PARAMS, Action, SimParams, StepOutcome, Terminal,
    compute_timeout, decision_step, init_world_state,
)
from .world import Scenario


class TowEnv:
    def __init__(self, scenario: Scenario, params: SimParams = DEFAULT_SIM_PARAMS,
                 lookahead: float = planner.DEFAULT_LOOKAHEAD):
        self.scenario = scenario
        self.cfg = scenario.config
        self.params = params
        self.lookahead = lookahead
        self.grid = planner.rasterize_global(self.cfg, scenario.obstacle_poses)
        self.path = planner.astar(
            self.grid, (scenario.load_pose.x, scenario.load_pose.y), scenario.goal
        )
        self.state = init_world_state(scenario, params)
        self.t_max = compute_timeout(scenario, params)
        self.obs_rng = np.random.default_rng(scenario.rng_seed)
        self.terminal = Terminal.RUNNING
        self.episode_reward = 0.0

    @property
    def team_size(self) -> int:
        return len(self.state.robots)

    def p_local(self) -> tuple[float, float]:
        return planner.local_goal(
            self.path, (self.state.load.x, self.state.load.y),
            self.scenario.goal, self.lookahead,
        )

    def observe(self, agent: int, p_local: tuple[float, float] | None = None) -> EgoObservation:
        if p_local is None:
            p_local = self.p_local()
        return encode_ego(self.state, agent, self.scenario, p_local, self.obs_rng)

    def observe_all(self, p_local: tuple[float, float] | None = None) -> list[EgoObservation]:
        if p_local is None:
            p_local = self.p_local()
        return [self.observe(i, p_local) for i in range(self.team_size)]

    def global_state(self, obs: list[EgoObservation]) -> GlobalState:
        return build_global_state(obs, self.scenario.dr, self.state.decision_step, self.t_max)

    def step(self, actions: list[Action],
             p_local: tuple[float, float] | None = None) -> StepOutcome:
        if self.terminal != Terminal.RUNNING:
            raise RuntimeError("episode already terminated")
        if p_local is None:
            p_local = self.p_local()
        outcome = decision_step(self.state, actions, p_local, self.scenario, self.params)
        self.terminal = outcome.terminal
        self.episode_reward += outcome.reward
        return outcome

    def remove_robot(self, index: int) -> None:
        """Agent-removal event: the team shrinks mid-episode."""
        from .sim import remove_robot

        self.scenario = remove_robot(self.state, self.scenario, index)
        self.cfg = self.scenario.config
