"""2D hybrid robot-cable-load dynamics.

One decision step (0.1 s) = `substeps` semi-implicit Euler substeps of `dt`.
Per substep each robot receives a PD velocity-tracking force/torque, every
cable applies a tension-only spring-damper force between the robot center and
its attachment point on the load, and all bodies feel viscous ground drag
proportional to the friction draw. Collisions terminate the episode — there
is no contact resolution.

Stepping mutates the WorldState in place and returns it inside the
StepOutcome; use WorldState.copy() first if the previous state is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .geometry import obb_corners, obb_overlap, wrap_angle
from .world import Pose2, Scenario, WorldConfig, attachment_points, wall_boxes

WALL_NAMES = ("wall_bottom", "wall_top", "wall_left", "wall_right")


class NonFiniteState(RuntimeError):
    """Integration diverged (bad gains/dt); episode must be aborted."""


class Terminal(IntEnum):
    RUNNING = 0
    SUCCESS = 1
    COLLISION = 2
    TIMEOUT = 3


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.01
    substeps: int = 10
    cable_stiffness: float = 500.0
    cable_damping: float = 20.0
    v_max_sag: float = 0.5
    v_max_lat: float = 0.3
    omega_max: float = 0.8
    drag_rate: float = 5.0  # viscous ground drag per unit friction, 1/s
    robot_mass: float = 12.0

    @property
    def decision_period(self) -> float:
        return self.dt * self.substeps

    @property
    def alpha(self) -> float:
        """Success-reward weight: the robot's maximum velocity."""
        return self.v_max_sag


DEFAULT_SIM_PARAMS = SimParams()


@dataclass(frozen=True)
class Action:
    """Commanded body-frame velocities; clamped at sim entry."""

    v_sag: float
    v_lat: float
    omega: float

    def clamped(self, params: SimParams) -> "Action":
        # float() keeps the dynamics in double precision even when commands
        # arrive as float32 scalars (replay parity with logged actions).
        return Action(
            float(min(params.v_max_sag, max(-params.v_max_sag, self.v_sag))),
            float(min(params.v_max_lat, max(-params.v_max_lat, self.v_lat))),
            float(min(params.omega_max, max(-params.omega_max, self.omega))),
        )


@dataclass
class BodyState:
    """Box-shaped rigid body. (dvx, dvy, domega) hold the previous substep's
    velocity change — the damping surrogate used by the PD controller."""

    x: float
    y: float
    theta: float
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0
    mass: float = 1.0
    inertia: float = 1.0
    hx: float = 0.5
    hy: float = 0.5
    dvx: float = 0.0
    dvy: float = 0.0
    domega: float = 0.0

    @property
    def pose(self) -> Pose2:
        return Pose2(self.x, self.y, self.theta)

    def copy(self) -> "BodyState":
        return BodyState(**{k: getattr(self, k) for k in self.__dataclass_fields__})


@dataclass
class WorldState:
    robots: list[BodyState]
    load: BodyState
    obstacles: tuple[Pose2, ...]
    sim_time: float = 0.0
    decision_step: int = 0

    def copy(self) -> "WorldState":
        return WorldState(
            robots=[r.copy() for r in self.robots],
            load=self.load.copy(),
            obstacles=self.obstacles,
            sim_time=self.sim_time,
            decision_step=self.decision_step,
        )


@dataclass(frozen=True)
class StepOutcome:
    next_state: WorldState
    reward: float
    terminal: Terminal
    taut: tuple[bool, ...]
    r_ex: float
    r_in: float
    contacts: tuple[tuple[str, str], ...] = field(default=())


def init_world_state(scenario: Scenario, params: SimParams = DEFAULT_SIM_PARAMS) -> WorldState:
    cfg = scenario.config
    rhx, rhy = cfg.robot_half_extents
    robot_inertia = params.robot_mass * ((2 * rhx) ** 2 + (2 * rhy) ** 2) / 12.0
    robots = [
        BodyState(p.x, p.y, p.theta, mass=params.robot_mass,
                  inertia=robot_inertia, hx=rhx, hy=rhy)
        for p in scenario.robot_poses
    ]
    m_l = scenario.dr.load_mass
    lh = cfg.load_edge / 2.0
    load = BodyState(
        scenario.load_pose.x, scenario.load_pose.y, scenario.load_pose.theta,
        mass=m_l, inertia=m_l * (2 * lh) ** 2 / 6.0, hx=lh, hy=lh,
    )
    return WorldState(robots=robots, load=load, obstacles=scenario.obstacle_poses)


def cable_force(
    robot_anchor: tuple[float, float],
    load_attach: tuple[float, float],
    rest_length: float,
    params: SimParams = DEFAULT_SIM_PARAMS,
    robot_vel: tuple[float, float] = (0.0, 0.0),
    attach_vel: tuple[float, float] = (0.0, 0.0),
) -> tuple[np.ndarray, np.ndarray]:
    """Tension-only spring-damper force pair (on robot, on load attach point).

    Slack (separation <= rest_length) transmits nothing. Taut tension is
    k*stretch + c*stretch_rate, clamped at zero so the cable never pushes.
    The endpoint velocities feed the damping term and default to zero.
    """
    assert rest_length > 0.0
    dx = robot_anchor[0] - load_attach[0]
    dy = robot_anchor[1] - load_attach[1]
    dist = math.hypot(dx, dy)
    if dist <= rest_length or dist == 0.0:
        return np.zeros(2), np.zeros(2)
    ax, ay = dx / dist, dy / dist  # unit axis from attach point toward robot
    rate = (robot_vel[0] - attach_vel[0]) * ax + (robot_vel[1] - attach_vel[1]) * ay
    tension = params.cable_stiffness * (dist - rest_length) + params.cable_damping * rate
    if tension <= 0.0:
        return np.zeros(2), np.zeros(2)
    f_load = np.array([tension * ax, tension * ay])
    return -f_load, f_load


def _substep(state: WorldState, cmds, scenario: Scenario, params: SimParams) -> list[bool]:
    dr = scenario.dr
    cfg = scenario.config
    mu_drag = dr.friction * params.drag_rate
    dt = params.dt
    load = state.load

    attach = attachment_points(load.pose, cfg)
    lfx = lfy = ltau = 0.0
    taut = []
    forces = []
    for i, r in enumerate(state.robots):
        c, s = math.cos(r.theta), math.sin(r.theta)
        v_sag, v_lat, w_cmd = cmds[i]
        vcx = c * v_sag - s * v_lat
        vcy = s * v_sag + c * v_lat
        fx = r.mass * (dr.kp_lin * (vcx - r.vx) - dr.kd_lin * r.dvx) - mu_drag * r.mass * r.vx
        fy = r.mass * (dr.kp_lin * (vcy - r.vy) - dr.kd_lin * r.dvy) - mu_drag * r.mass * r.vy
        tau = r.inertia * (dr.kp_ang * (w_cmd - r.omega) - dr.kd_ang * r.domega) \
            - mu_drag * r.inertia * r.omega

        rx = attach[i, 0] - load.x
        ry = attach[i, 1] - load.y
        attach_vel = (load.vx - load.omega * ry, load.vy + load.omega * rx)
        f_robot, f_load = cable_force(
            (r.x, r.y), (attach[i, 0], attach[i, 1]), dr.cable_lengths[i],
            params, robot_vel=(r.vx, r.vy), attach_vel=attach_vel,
        )
        taut.append(bool(f_load[0] != 0.0 or f_load[1] != 0.0))
        fx += f_robot[0]
        fy += f_robot[1]
        lfx += f_load[0]
        lfy += f_load[1]
        ltau += rx * f_load[1] - ry * f_load[0]
        forces.append((fx, fy, tau))

    lfx -= mu_drag * load.mass * load.vx
    lfy -= mu_drag * load.mass * load.vy
    ltau -= mu_drag * load.inertia * load.omega

    for r, (fx, fy, tau) in zip(state.robots, forces):
        dvx = fx / r.mass * dt
        dvy = fy / r.mass * dt
        dw = tau / r.inertia * dt
        r.vx += dvx
        r.vy += dvy
        r.omega += dw
        r.dvx, r.dvy, r.domega = dvx, dvy, dw
        r.x += r.vx * dt
        r.y += r.vy * dt
        r.theta = wrap_angle(r.theta + r.omega * dt)

    dvx = lfx / load.mass * dt
    dvy = lfy / load.mass * dt
    dw = ltau / load.inertia * dt
    load.vx += dvx
    load.vy += dvy
    load.omega += dw
    load.dvx, load.dvy, load.domega = dvx, dvy, dw
    load.x += load.vx * dt
    load.y += load.vy * dt
    load.theta = wrap_angle(load.theta + load.omega * dt)
    return taut


def _body_finite(b: BodyState) -> bool:
    return all(map(math.isfinite, (b.x, b.y, b.theta, b.vx, b.vy, b.omega)))


def check_collisions(state: WorldState, cfg: WorldConfig) -> list[tuple[str, str]]:
    """Paper-named collision pairs plus walls; exact SAT, touching excluded.

    Checked: robot-robot, robot-obstacle, robot-load, robot-wall,
    load-obstacle, load-wall. Obstacle-obstacle overlap is allowed and
    cable-body intersections are not collisions.
    """
    contacts: list[tuple[str, str]] = []
    oh = cfg.obstacle_edge / 2.0
    e = cfg.map_extent
    bodies = [(f"robot{i}", r) for i, r in enumerate(state.robots)]
    bodies.append(("load", state.load))

    for idx, (name, b) in enumerate(bodies):
        circ = math.hypot(b.hx, b.hy)
        # Walls: any corner beyond the interior (strict).
        corners = obb_corners(b.x, b.y, b.hx, b.hy, b.theta)
        lo_x, lo_y = corners[:, 0].min(), corners[:, 1].min()
        hi_x, hi_y = corners[:, 0].max(), corners[:, 1].max()
        if lo_y < 0.0:
            contacts.append((name, "wall_bottom"))
        if hi_y > e:
            contacts.append((name, "wall_top"))
        if lo_x < 0.0:
            contacts.append((name, "wall_left"))
        if hi_x > e:
            contacts.append((name, "wall_right"))
        for j, p in enumerate(state.obstacles):
            lim = circ + oh * math.sqrt(2.0)
            if (b.x - p.x) ** 2 + (b.y - p.y) ** 2 > lim * lim:
                continue
            if obb_overlap(b.x, b.y, b.hx, b.hy, b.theta, p.x, p.y, oh, oh, p.theta):
                contacts.append((name, f"obstacle{j}"))
        # Robot-robot and robot-load (each unordered pair once).
        for name2, b2 in bodies[idx + 1:]:
            lim = circ + math.hypot(b2.hx, b2.hy)
            if (b.x - b2.x) ** 2 + (b.y - b2.y) ** 2 > lim * lim:
                continue
            if obb_overlap(b.x, b.y, b.hx, b.hy, b.theta,
                           b2.x, b2.y, b2.hx, b2.hy, b2.theta):
                contacts.append((name, name2))
    return contacts


def compute_timeout(scenario: Scenario, params: SimParams = DEFAULT_SIM_PARAMS) -> int:
    """ceil((8*d + 20) seconds / decision period) with d = initial load-goal
    distance; the epsilon guards float noise at exact multiples."""
    gx, gy = scenario.goal
    d = math.hypot(scenario.load_pose.x - gx, scenario.load_pose.y - gy)
    return int(math.ceil((8.0 * d + 20.0) / params.decision_period - 1e-9))


def decision_step(
    state: WorldState,
    actions: list[Action],
    local_goal: tuple[float, float],
    scenario: Scenario,
    params: SimParams = DEFAULT_SIM_PARAMS,
) -> StepOutcome:
    """Advance one decision period and score it.

    reward = alpha * r_ex + r_in, where r_ex = 1 iff the load ends within
    success_radius of the final goal and r_in is the decrease in load
    distance to `local_goal` over the step. Terminal precedence:
    collision > success > timeout.
    """
    cfg = scenario.config
    if len(actions) != len(state.robots):
        raise ValueError(f"{len(actions)} actions for {len(state.robots)} robots")
    cmds = []
    for a in actions:
        ac = a.clamped(params)
        cmds.append((ac.v_sag, ac.v_lat, ac.omega))

    lx, ly = local_goal
    d_before = math.hypot(state.load.x - lx, state.load.y - ly)

    taut: list[bool] = [False] * len(actions)
    try:
        for _ in range(params.substeps):
            taut = _substep(state, cmds, scenario, params)
    except ValueError as exc:  # non-finite pose mid-substep
        raise NonFiniteState(
            f"non-finite state at decision step {state.decision_step + 1}"
        ) from exc

    if not (_body_finite(state.load) and all(_body_finite(r) for r in state.robots)):
        raise NonFiniteState(
            f"non-finite state at decision step {state.decision_step + 1}"
        )

    state.decision_step += 1
    state.sim_time = state.decision_step * params.decision_period

    d_after = math.hypot(state.load.x - lx, state.load.y - ly)
    r_in = d_before - d_after
    gx, gy = scenario.goal
    d_goal = math.hypot(state.load.x - gx, state.load.y - gy)
    r_ex = 1.0 if d_goal < cfg.success_radius else 0.0
    reward = params.alpha * r_ex + r_in

    contacts = check_collisions(state, cfg)
    if contacts:
        terminal = Terminal.COLLISION
    elif r_ex > 0.0:
        terminal = Terminal.SUCCESS
    elif state.decision_step >= compute_timeout(scenario, params):
        terminal = Terminal.TIMEOUT
    else:
        terminal = Terminal.RUNNING
    return StepOutcome(
        next_state=state,
        reward=reward,
        terminal=terminal,
        taut=tuple(taut),
        r_ex=r_ex,
        r_in=r_in,
        contacts=tuple(contacts),
    )


def remove_robot(state: WorldState, scenario: Scenario, index: int) -> Scenario:
    """Agent-removal event: drop robot `index` and its cable mid-episode.

    Mutates `state` and returns the scenario rewritten for the smaller team.
    """
    import dataclasses

    if not 0 <= index < len(state.robots):
        raise IndexError(index)
    state.robots.pop(index)
    cfg = scenario.config
    keep = [i for i in range(cfg.team_size) if i != index]
    new_cfg = dataclasses.replace(
        cfg,
        team_size=len(keep),
        cable_lengths=tuple(cfg.cable_lengths[i] for i in keep),
        attachment_angles=tuple(cfg.attachment_angles[i] for i in keep),
        attachment_offsets=tuple((cfg.attachment_offsets or (0.0,) * cfg.team_size)[i] for i in keep),
    )
    return dataclasses.replace(
        scenario,
        config=new_cfg,
        dr=dataclasses.replace(scenario.dr, cable_lengths=new_cfg.cable_lengths),
        robot_poses=tuple(scenario.robot_poses[i] for i in keep),
    )
