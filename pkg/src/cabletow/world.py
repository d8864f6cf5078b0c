"""Domain geometry and scenario sampling.

Defines poses, world/domain-randomization configuration, and the rejection
sampler that produces feasible randomized scenarios (feasibility = an A*
path exists from the load to the goal on the inflated occupancy grid).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import obb_corners, obb_distance, point_box_distance, wrap_angle

ATTACH_ANGLES = (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi)


class FeasibilityExhausted(RuntimeError):
    """Raised when sample_scenario cannot place a feasible scenario within budget."""


@dataclass(frozen=True)
class Pose2:
    """Planar pose; theta is wrapped to (-pi, pi] on construction."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y}, {self.theta})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class DrRanges:
    """Uniform ranges for the domain-randomization draw, (lo, hi) each."""

    kp_lin: tuple[float, float] = (20.0, 60.0)
    kd_lin: tuple[float, float] = (2.0, 8.0)
    kp_ang: tuple[float, float] = (15.0, 45.0)
    kd_ang: tuple[float, float] = (1.5, 6.0)
    friction: tuple[float, float] = (0.4, 1.0)
    load_mass: tuple[float, float] = (0.5, 5.0)
    cable_length: tuple[float, float] = (0.8, 1.2)
    obs_noise_sigma: tuple[float, float] = (0.0, 0.03)

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError(f"bad range for {name}: ({lo}, {hi})")


@dataclass(frozen=True)
class DomainRandomizationDraw:
    kp_lin: float
    kd_lin: float
    kp_ang: float
    kd_ang: float
    friction: float
    load_mass: float
    cable_lengths: tuple[float, ...]
    obs_noise_sigma: float

    def __post_init__(self):
        if min(self.kp_lin, self.kd_lin, self.kp_ang, self.kd_ang) <= 0.0:
            raise ValueError("PD gains must be positive")
        if not 0.0 <= self.friction <= 2.0:
            raise ValueError(f"friction {self.friction} outside [0, 2]")
        if self.load_mass <= 0.0:
            raise ValueError("load mass must be positive")


def sample_domain_randomization(
    rng: np.random.Generator, ranges: DrRanges, team_size: int = 1
) -> DomainRandomizationDraw:
    """Draw each field uniformly from its range, in a fixed field order."""
    u = lambda pair: float(rng.uniform(pair[0], pair[1]))
    return DomainRandomizationDraw(
        kp_lin=u(ranges.kp_lin),
        kd_lin=u(ranges.kd_lin),
        kp_ang=u(ranges.kp_ang),
        kd_ang=u(ranges.kd_ang),
        friction=u(ranges.friction),
        load_mass=u(ranges.load_mass),
        cable_lengths=tuple(
            float(v) for v in rng.uniform(ranges.cable_length[0], ranges.cable_length[1], team_size)
        ),
        obs_noise_sigma=u(ranges.obs_noise_sigma),
    )


@dataclass(frozen=True)
class WorldConfig:
    """Map/template configuration.

    In a template the per-scenario fields (cable_lengths, attachment_angles,
    attachment_offsets, goal) may be None; the sampler fills them in. When
    fixed_* fields are set the sampler uses them verbatim instead of drawing.
    """

    map_extent: float = 10.0
    wall_thickness: float = 0.1
    n_obstacles: int = 10
    obstacle_edge: float = 1.0
    load_edge: float = 0.5
    team_size: int = 1
    success_radius: float = 0.5
    robot_length: float = 0.45
    robot_width: float = 0.30
    cable_lengths: tuple[float, ...] | None = None
    attachment_angles: tuple[float, ...] | None = None
    attachment_offsets: tuple[float, ...] | None = None
    goal: tuple[float, float] | None = None
    # Sampler knobs.
    placement_buffer: float = 0.1
    min_goal_distance: float = 1.5
    attempt_budget: int = 100
    spawn_frac: tuple[float, float] = (0.4, 0.9)
    # Global planning geometry (shared by the feasibility check and the env).
    plan_resolution: float = 0.1
    plan_clearance: float = 0.05
    # Fixed layout overrides (None -> sampled).
    fixed_obstacles: tuple[Pose2, ...] | None = None
    fixed_load: Pose2 | None = None
    dr: DrRanges = field(default_factory=DrRanges)

    def __post_init__(self):
        if self.team_size < 1:
            raise ValueError("team_size must be >= 1")
        if self.map_extent <= 0 or self.load_edge <= 0 or self.obstacle_edge <= 0:
            raise ValueError("map/body dimensions must be positive")
        if self.attachment_angles is not None:
            for a in self.attachment_angles:
                if min(abs(a - b) for b in ATTACH_ANGLES) > 1e-9:
                    raise ValueError(f"attachment angle {a} not in {{0, pi/2, pi, 3pi/2}}")
        if self.cable_lengths is not None:
            if any(c <= self.load_edge / 2 for c in self.cable_lengths):
                raise ValueError("cable lengths must exceed load_edge/2")
        if self.goal is not None:
            gx, gy = self.goal
            if not (0.0 < gx < self.map_extent and 0.0 < gy < self.map_extent):
                raise ValueError(f"goal {self.goal} outside map")

    @property
    def plan_inflation(self) -> float:
        """Load circumscribed radius plus clearance margin."""
        return self.load_edge * math.sqrt(2.0) / 2.0 + self.plan_clearance

    @property
    def robot_half_extents(self) -> tuple[float, float]:
        return (self.robot_length / 2.0, self.robot_width / 2.0)

    @property
    def load_half_extents(self) -> tuple[float, float]:
        return (self.load_edge / 2.0, self.load_edge / 2.0)


@dataclass(frozen=True)
class Scenario:
    config: WorldConfig
    dr: DomainRandomizationDraw
    load_pose: Pose2
    robot_poses: tuple[Pose2, ...]
    obstacle_poses: tuple[Pose2, ...]
    rng_seed: int

    @property
    def team_size(self) -> int:
        return len(self.robot_poses)

    @property
    def goal(self) -> tuple[float, float]:
        assert self.config.goal is not None
        return self.config.goal


def attachment_points(load_pose: Pose2, cfg: WorldConfig) -> np.ndarray:
    """World attachment points, shape (n, 2).

    attach_i = load_center + (l_l/2)*[cos(theta_l + theta_a_i), sin(...)]
    plus the tangential slot offset along the edge (zero for n <= 4).
    """
    assert cfg.attachment_angles is not None
    offsets = cfg.attachment_offsets or (0.0,) * len(cfg.attachment_angles)
    half = cfg.load_edge / 2.0
    out = np.empty((len(cfg.attachment_angles), 2))
    for i, (ang, off) in enumerate(zip(cfg.attachment_angles, offsets)):
        a = load_pose.theta + ang
        c, s = math.cos(a), math.sin(a)
        out[i, 0] = load_pose.x + half * c - off * s
        out[i, 1] = load_pose.y + half * s + off * c
    return out


def wall_boxes(cfg: WorldConfig) -> list[tuple[float, float, float, float, float]]:
    """The four wall boxes as (cx, cy, hx, hy, yaw)."""
    e, w = cfg.map_extent, cfg.wall_thickness
    return [
        (e / 2.0, -w / 2.0, e / 2.0 + w, w / 2.0, 0.0),   # bottom
        (e / 2.0, e + w / 2.0, e / 2.0 + w, w / 2.0, 0.0),  # top
        (-w / 2.0, e / 2.0, w / 2.0, e / 2.0 + w, 0.0),   # left
        (e + w / 2.0, e / 2.0, w / 2.0, e / 2.0 + w, 0.0),  # right
    ]


def boundary_clearance(cfg: WorldConfig, cx: float, cy: float,
                       hx: float, hy: float, yaw: float) -> float:
    """Distance from a box to the map boundary region (negative if outside)."""
    e = cfg.map_extent
    best = math.inf
    for px, py in obb_corners(cx, cy, hx, hy, yaw):
        best = min(best, px, py, e - px, e - py)
    return best


def _attachment_slots(rng: np.random.Generator, n: int, load_edge: float):
    """Assign n cables to edge slots: midpoints for n <= 4, else evenly spread."""
    if n <= 4:
        idx = rng.permutation(4)[:n]
        return tuple(ATTACH_ANGLES[i] for i in idx), (0.0,) * n
    counts = [n // 4 + (1 if e < n % 4 else 0) for e in range(4)]
    slots: list[tuple[float, float]] = []
    for e, m in enumerate(counts):
        for j in range(m):
            off = ((j + 1) / (m + 1) - 0.5) * load_edge
            slots.append((ATTACH_ANGLES[e], off))
    order = rng.permutation(len(slots))
    slots = [slots[i] for i in order]
    return tuple(s[0] for s in slots), tuple(s[1] for s in slots)


def _clear_of_all(boxes, cx, cy, hx, hy, yaw, buffer) -> bool:
    for (ox, oy, ohx, ohy, ot) in boxes:
        if obb_distance(cx, cy, hx, hy, yaw, ox, oy, ohx, ohy, ot) < buffer:
            return False
    return True


def sample_scenario(
    rng: np.random.Generator, team_size: int, cfg_template: WorldConfig
) -> Scenario:
    """Rejection-sample a feasible scenario.

    Draw order per attempt is fixed (DR draw, attachment slots, obstacles,
    load, robots, goal), so sampling is bit-deterministic given (seed,
    template). Raises FeasibilityExhausted after cfg.attempt_budget attempts.
    """
    # Imported here: the planner module consumes world types (no import cycle).
    from . import planner

    cfg0 = cfg_template
    n = team_size
    e = cfg0.map_extent
    buf = cfg0.placement_buffer
    rhx, rhy = cfg0.robot_half_extents
    lh = cfg0.load_edge / 2.0
    obst_h = cfg0.obstacle_edge / 2.0
    obst_circ = obst_h * math.sqrt(2.0)
    # Margin keeping the load/goal grid cells plannable: inflation plus the
    # conservative rasterization slack (half cell diagonal) plus half a cell
    # of quantization.
    res = cfg0.plan_resolution
    plan_margin = cfg0.plan_inflation + res * (math.sqrt(2.0) / 2.0 + 0.5) + 1e-9
    load_margin = max(lh * math.sqrt(2.0) + buf, plan_margin)

    for _ in range(cfg0.attempt_budget):
        dr = sample_domain_randomization(rng, cfg0.dr, n)
        if cfg0.cable_lengths is not None:
            if len(cfg0.cable_lengths) != n:
                raise ValueError("template cable_lengths length != team_size")
            dr = dataclasses.replace(dr, cable_lengths=tuple(cfg0.cable_lengths))
        cables = dr.cable_lengths

        if cfg0.attachment_angles is not None:
            angles = tuple(cfg0.attachment_angles)
            offsets = cfg0.attachment_offsets or (0.0,) * n
        else:
            angles, offsets = _attachment_slots(rng, n, cfg0.load_edge)

        # Obstacles: may overlap one another; kept fully inside the interior.
        if cfg0.fixed_obstacles is not None:
            obstacles = tuple(cfg0.fixed_obstacles)
        else:
            obstacles = tuple(
                Pose2(
                    float(rng.uniform(obst_circ, e - obst_circ)),
                    float(rng.uniform(obst_circ, e - obst_circ)),
                    float(rng.uniform(-math.pi, math.pi)),
                )
                for _ in range(cfg0.n_obstacles)
            )
        obst_boxes = [(p.x, p.y, obst_h, obst_h, p.theta) for p in obstacles]

        # Load.
        load_pose = None
        if cfg0.fixed_load is not None:
            cand = cfg0.fixed_load
            if _clear_of_all(obst_boxes, cand.x, cand.y, lh, lh, cand.theta, buf):
                load_pose = cand
        else:
            for _ in range(50):
                cand = Pose2(
                    float(rng.uniform(load_margin, e - load_margin)),
                    float(rng.uniform(load_margin, e - load_margin)),
                    float(rng.uniform(-math.pi, math.pi)),
                )
                if not _clear_of_all(obst_boxes, cand.x, cand.y, lh, lh, cand.theta, buf):
                    continue
                # Keep the start cell plannable (cheap pre-check; A* decides).
                if min(point_box_distance(cand.x, cand.y, *b) for b in obst_boxes) < plan_margin if obst_boxes else False:
                    continue
                load_pose = cand
                break
        if load_pose is None:
            continue

        # Robots, tethered near their attachment points with slack cable.
        cfg_attach = dataclasses.replace(
            cfg0, team_size=n, cable_lengths=cables,
            attachment_angles=angles, attachment_offsets=tuple(offsets),
            goal=cfg0.goal or (e / 2.0, e / 2.0),
        )
        attach = attachment_points(load_pose, cfg_attach)
        placed: list[Pose2] = []
        load_box = (load_pose.x, load_pose.y, lh, lh, load_pose.theta)
        ok = True
        for i in range(n):
            found = None
            for _ in range(50):
                u = float(rng.uniform(cfg0.spawn_frac[0], cfg0.spawn_frac[1])) * cables[i]
                phi = float(rng.uniform(-math.pi, math.pi))
                cx = attach[i, 0] + u * math.cos(phi)
                cy = attach[i, 1] + u * math.sin(phi)
                yaw = float(rng.uniform(-math.pi, math.pi))
                if boundary_clearance(cfg0, cx, cy, rhx, rhy, yaw) < buf:
                    continue
                others = obst_boxes + [load_box] + [
                    (p.x, p.y, rhx, rhy, p.theta) for p in placed
                ]
                if not _clear_of_all(others, cx, cy, rhx, rhy, yaw, buf):
                    continue
                found = Pose2(cx, cy, yaw)
                break
            if found is None:
                ok = False
                break
            placed.append(found)
        if not ok:
            continue

        # Goal: interior, clear of obstacles by the success disk, not trivial.
        goal = None
        if cfg0.goal is not None:
            goal = cfg0.goal
        else:
            g_margin = max(cfg0.success_radius, plan_margin)
            for _ in range(50):
                gx = float(rng.uniform(g_margin, e - g_margin))
                gy = float(rng.uniform(g_margin, e - g_margin))
                if math.hypot(gx - load_pose.x, gy - load_pose.y) < cfg0.min_goal_distance:
                    continue
                if obst_boxes and min(
                    point_box_distance(gx, gy, *b) for b in obst_boxes
                ) < max(cfg0.success_radius, plan_margin):
                    continue
                goal = (gx, gy)
                break
        if goal is None:
            continue

        cfg = dataclasses.replace(cfg_attach, goal=(float(goal[0]), float(goal[1])))
        grid = planner.rasterize_global(cfg, obstacles)
        try:
            planner.astar(grid, (load_pose.x, load_pose.y), goal)
        except planner.NoPath:
            continue

        return Scenario(
            config=cfg,
            dr=dr,
            load_pose=load_pose,
            robot_poses=tuple(placed),
            obstacle_poses=obstacles,
            rng_seed=int(rng.integers(0, 2**31 - 1)),
        )

    raise FeasibilityExhausted(
        f"no feasible scenario in {cfg0.attempt_budget} attempts (team={n})"
    )


# ---------------------------------------------------------------------------
# Serialization (scenario sidecar for episode traces / replay).

def scenario_to_dict(sc: Scenario) -> dict:
    cfg = sc.config
    return {
        "config": {
            f.name: getattr(cfg, f.name)
            for f in dataclasses.fields(cfg)
            if f.name not in ("dr", "fixed_obstacles", "fixed_load")
        },
        "dr_ranges": {f.name: list(getattr(cfg.dr, f.name)) for f in dataclasses.fields(cfg.dr)},
        "dr": dataclasses.asdict(sc.dr),
        "load_pose": [sc.load_pose.x, sc.load_pose.y, sc.load_pose.theta],
        "robot_poses": [[p.x, p.y, p.theta] for p in sc.robot_poses],
        "obstacle_poses": [[p.x, p.y, p.theta] for p in sc.obstacle_poses],
        "rng_seed": sc.rng_seed,
    }


def scenario_from_dict(d: dict) -> Scenario:
    cfg_kw = dict(d["config"])
    for key in ("cable_lengths", "attachment_angles", "attachment_offsets", "spawn_frac"):
        if cfg_kw.get(key) is not None:
            cfg_kw[key] = tuple(cfg_kw[key])
    if cfg_kw.get("goal") is not None:
        cfg_kw["goal"] = tuple(cfg_kw["goal"])
    ranges = DrRanges(**{k: tuple(v) for k, v in d["dr_ranges"].items()})
    cfg = WorldConfig(**cfg_kw, dr=ranges)
    dr_kw = dict(d["dr"])
    dr_kw["cable_lengths"] = tuple(dr_kw["cable_lengths"])
    return Scenario(
        config=cfg,
        dr=DomainRandomizationDraw(**dr_kw),
        load_pose=Pose2(*d["load_pose"]),
        robot_poses=tuple(Pose2(*p) for p in d["robot_poses"]),
        obstacle_poses=tuple(Pose2(*p) for p in d["obstacle_poses"]),
        rng_seed=int(d["rng_seed"]),
    )
