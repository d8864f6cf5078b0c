"""Ego-centric observations and the critic's global state.

Each robot observes a 12-dim vector (world-frame positions normalized by map
half-extent, yaws as sin/cos) plus three 57x57 binary grids (load, obstacle,
teammate channels) covering 3.42 m x 3.42 m in the robot's rotated frame —
robot at the center cell facing up, its own footprint excluded. Positions are
perturbed with zero-mean Gaussian noise (sigma from the DR draw) before
encoding; entities whose noisy L1 distance exceeds d_thresh contribute
nothing. Walls are painted into the obstacle channel (no noise), gated by the
L1 distance to their nearest interior-boundary point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sim import WorldState
from .world import DomainRandomizationDraw, Scenario

GRID_N = 57
CELL = 0.06
HALF_SPAN = GRID_N * CELL / 2.0  # 1.71 m
D_THRESH = 1.71
CENTER = GRID_N // 2
CH_LOAD, CH_OBSTACLE, CH_TEAMMATE = 0, 1, 2

# Ego coordinates of every cell center: x right, y forward (row 0 = far ahead).
_COLS = (np.arange(GRID_N) - CENTER) * CELL
_ROWS = (CENTER - np.arange(GRID_N)) * CELL
_XE = np.broadcast_to(_COLS[None, :], (GRID_N, GRID_N)).copy()
_YE = np.broadcast_to(_ROWS[:, None], (GRID_N, GRID_N)).copy()


class ShapeMismatch(ValueError):
    """An observation or global-state component has the wrong shape."""


@dataclass
class EgoObservation:
    vector: np.ndarray  # float32 (12,)
    grids: np.ndarray   # uint8 (3, 57, 57)


@dataclass
class GlobalState:
    grids: np.ndarray   # uint8 (3n, 57, 57)
    vector: np.ndarray  # float32 (12n + |privileged| + 1,)


def _paint(grid: np.ndarray, cx: float, cy: float, hx: float, hy: float,
           yaw: float) -> None:
    """Mark cells whose centers fall inside an oriented box in ego coords."""
    r = math.hypot(hx, hy)
    c_lo = max(0, int(math.ceil((cx - r) / CELL - 1e-12)) + CENTER)
    c_hi = min(GRID_N - 1, int(math.floor((cx + r) / CELL + 1e-12)) + CENTER)
    if c_lo > c_hi:
        return
    r_lo = max(0, CENTER - int(math.floor((cy + r) / CELL + 1e-12)))
    r_hi = min(GRID_N - 1, CENTER - int(math.ceil((cy - r) / CELL - 1e-12)))
    if r_lo > r_hi:
        return
    x = _XE[r_lo:r_hi + 1, c_lo:c_hi + 1] - cx
    y = _YE[r_lo:r_hi + 1, c_lo:c_hi + 1] - cy
    c, s = math.cos(yaw), math.sin(yaw)
    u = c * x + s * y
    v = c * y - s * x
    inside = (np.abs(u) <= hx) & (np.abs(v) <= hy)
    np.bitwise_or(grid[r_lo:r_hi + 1, c_lo:c_hi + 1], inside, out=grid[r_lo:r_hi + 1, c_lo:c_hi + 1])


def encode_ego(
    state: WorldState,
    agent: int,
    scenario: Scenario,
    p_local: tuple[float, float],
    rng: np.random.Generator | None = None,
) -> EgoObservation:
    cfg = scenario.config
    n = len(state.robots)
    if not 0 <= agent < n:
        raise IndexError(f"agent {agent} out of range for team of {n}")
    me = state.robots[agent]
    sigma = scenario.dr.obs_noise_sigma
    m = len(state.obstacles)

    if sigma > 0.0:
        if rng is None:
            raise ValueError("observation noise requires an rng")
        noise = rng.normal(0.0, sigma, size=(1 + 1 + n - 1 + m, 2))
    else:
        noise = np.zeros((1 + 1 + max(n - 1, 0) + m, 2))
    self_xy = np.array([me.x, me.y]) + noise[0]
    load_xy = np.array([state.load.x, state.load.y]) + noise[1]
    mate_xy = [
        np.array([r.x, r.y]) + noise[2 + k]
        for k, r in enumerate(r for j, r in enumerate(state.robots) if j != agent)
    ]
    obst_xy = [p.xy + noise[1 + n + k] for k, p in enumerate(state.obstacles)]

    half_map = cfg.map_extent / 2.0
    norm = lambda p: (np.asarray(p, dtype=float) - half_map) / half_map
    th_r, th_l = me.theta, state.load.theta
    angles = tuple(cfg.attachment_angles or ())
    offsets = cfg.attachment_offsets or (0.0,) * len(angles)
    a = th_l + angles[agent]
    ca, sa = math.cos(a), math.sin(a)
    lh = cfg.load_edge / 2.0
    attach = load_xy + np.array([lh * ca - offsets[agent] * sa,
                                 lh * sa + offsets[agent] * ca])
    vec = np.empty(12, dtype=np.float32)
    vec[0:2] = norm(self_xy)
    vec[2] = math.sin(th_r)
    vec[3] = math.cos(th_r)
    vec[4:6] = norm(load_xy)
    vec[6] = math.sin(th_l)
    vec[7] = math.cos(th_l)
    vec[8:10] = norm(attach)
    vec[10:12] = norm(p_local)

    grids = np.zeros((3, GRID_N, GRID_N), dtype=np.uint8)
    cos_r, sin_r = math.cos(th_r), math.sin(th_r)

    def to_ego(p: np.ndarray) -> tuple[float, float]:
        dx, dy = p[0] - self_xy[0], p[1] - self_xy[1]
        return (dx * sin_r - dy * cos_r, dx * cos_r + dy * sin_r)

    def visible(p: np.ndarray) -> bool:
        return abs(p[0] - self_xy[0]) + abs(p[1] - self_xy[1]) <= D_THRESH

    ego_yaw = lambda world_yaw: world_yaw - th_r + 0.5 * math.pi

    if visible(load_xy):
        ex, ey = to_ego(load_xy)
        _paint(grids[CH_LOAD], ex, ey, lh, lh, ego_yaw(th_l))
    oh = cfg.obstacle_edge / 2.0
    for k, p in enumerate(obst_xy):
        if visible(p):
            ex, ey = to_ego(p)
            _paint(grids[CH_OBSTACLE], ex, ey, oh, oh, ego_yaw(state.obstacles[k].theta))
    mates = [r for j, r in enumerate(state.robots) if j != agent]
    for k, r in enumerate(mates):
        if visible(mate_xy[k]):
            ex, ey = to_ego(mate_xy[k])
            _paint(grids[CH_TEAMMATE], ex, ey, r.hx, r.hy, ego_yaw(r.theta))

    # Walls: exact geometry (no noise); gated by the nearest boundary point.
    e, w = cfg.map_extent, cfg.wall_thickness
    px, py = self_xy
    walls = (
        ((min(max(px, 0.0), e), 0.0), (e / 2.0, -w / 2.0, e / 2.0 + w, w / 2.0)),
        ((min(max(px, 0.0), e), e), (e / 2.0, e + w / 2.0, e / 2.0 + w, w / 2.0)),
        ((0.0, min(max(py, 0.0), e)), (-w / 2.0, e / 2.0, w / 2.0, e / 2.0 + w)),
        ((e, min(max(py, 0.0), e)), (e + w / 2.0, e / 2.0, w / 2.0, e / 2.0 + w)),
    )
    for (nx, ny), (wx, wy, whx, why) in walls:
        if abs(nx - px) + abs(ny - py) <= D_THRESH:
            ex, ey = to_ego(np.array([wx, wy]))
            _paint(grids[CH_OBSTACLE], ex, ey, whx, why, ego_yaw(0.0))

    return EgoObservation(vector=vec, grids=grids)


def privileged_vector(dr: DomainRandomizationDraw) -> np.ndarray:
    """Documented fixed order: kp_lin, kd_lin, kp_ang, kd_ang, friction,
    load_mass, cable lengths (one per robot), obs_noise_sigma."""
    return np.array(
        [dr.kp_lin, dr.kd_lin, dr.kp_ang, dr.kd_ang, dr.friction, dr.load_mass]
        + list(dr.cable_lengths) + [dr.obs_noise_sigma],
        dtype=np.float32,
    )


def build_global_state(
    obs: list[EgoObservation],
    dr: DomainRandomizationDraw,
    t: int,
    t_max: int,
) -> GlobalState:
    """Channel-concatenated grids and concatenated vectors + privileged DR
    values + normalized decision step, in agent index order."""
    if not obs:
        raise ShapeMismatch("empty observation list")
    for o in obs:
        if o.grids.shape != (3, GRID_N, GRID_N):
            raise ShapeMismatch(f"grids shape {o.grids.shape} != (3, {GRID_N}, {GRID_N})")
        if o.vector.shape != (12,):
            raise ShapeMismatch(f"vector shape {o.vector.shape} != (12,)")
    grids = np.concatenate([o.grids for o in obs], axis=0)
    vector = np.concatenate(
        [o.vector for o in obs] + [privileged_vector(dr), np.array([t / t_max], dtype=np.float32)]
    ).astype(np.float32)
    return GlobalState(grids=grids, vector=vector)


def save_grid_images(obs: EgoObservation, path_prefix: str) -> list[str]:
    """Dump each channel as a binary PGM (P5) grayscale image for inspection."""
    names = ("load", "obstacle", "teammate")
    paths = []
    for ch, name in enumerate(names):
        img = (obs.grids[ch] * 255).astype(np.uint8)
        path = f"{path_prefix}_{name}.pgm"
        with open(path, "wb") as f:
            f.write(f"P5\n{GRID_N} {GRID_N}\n255\n".encode())
            f.write(img.tobytes())
        paths.append(path)
    return paths
