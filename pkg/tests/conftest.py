"""Shared test fixtures and independent oracle implementations.

The oracles here deliberately re-derive results by a different route than the
package (exhaustive search, dense sampling, double loops, finite differences)
so agreement is evidence of correctness rather than of shared code.
"""
import heapq
import math

import numpy as np
import torch

from cabletow.world import Pose2, WorldConfig, wall_boxes

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Grid-path oracle: Dijkstra with per-node (straight, diagonal) move counts.

def dijkstra_counts(occ: np.ndarray, start: tuple[int, int],
                    goal: tuple[int, int]) -> tuple[int, int] | None:
    """Minimal-cost 8-connected path cost as exact move counts.

    Same movement rules as the planner (unit/sqrt2 costs, diagonals cannot cut
    corners) but plain Dijkstra with no heuristic. Returns (n_straight,
    n_diagonal) or None when unreachable. Since sqrt2 is irrational the
    optimal count pair is unique, so exact-cost comparison is meaningful.
    """
    ny, nx = occ.shape
    sx, sy = start
    gx, gy = goal
    if occ[sy, sx] or occ[gy, gx]:
        return None
    dist = np.full((ny, nx), np.inf)
    counts = {}
    dist[sy, sx] = 0.0
    counts[(sx, sy)] = (0, 0)
    heap = [(0.0, sx, sy)]
    moves = [(1, 0, False), (-1, 0, False), (0, 1, False), (0, -1, False),
             (1, 1, True), (1, -1, True), (-1, 1, True), (-1, -1, True)]
    while heap:
        d, ix, iy = heapq.heappop(heap)
        if d > dist[iy, ix]:
            continue
        if (ix, iy) == (gx, gy):
            return counts[(ix, iy)]
        ns, nd = counts[(ix, iy)]
        for dx, dy, diag in moves:
            jx, jy = ix + dx, iy + dy
            if not (0 <= jx < nx and 0 <= jy < ny) or occ[jy, jx]:
                continue
            if diag and (occ[iy, jx] or occ[jy, ix]):
                continue
            cns, cnd = (ns + 1, nd) if not diag else (ns, nd + 1)
            cd = cns + cnd * SQRT2
            if cd < dist[jy, jx]:
                dist[jy, jx] = cd
                counts[(jx, jy)] = (cns, cnd)
                heapq.heappush(heap, (cd, jx, jy))
    return None


def random_occupancy(rng: np.random.Generator, n: int = 32,
                     density: float = 0.25) -> np.ndarray:
    return rng.random((n, n)) < density


# ---------------------------------------------------------------------------
# Advantage oracle: literal double loop over the GAE definition.

def brute_gae(rewards, values, dones, bootstrap, gamma, lam):
    """O(T^2) generalized-advantage estimate for one environment sequence."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    t_len = len(rewards)
    adv = np.zeros(t_len)
    for t in range(t_len):
        acc = 0.0
        disc = 1.0
        for k in range(t, t_len):
            v_next = values[k + 1] if k + 1 < t_len else float(bootstrap)
            delta = rewards[k] + gamma * v_next * (1.0 - dones[k]) - values[k]
            acc += disc * delta
            if dones[k]:
                break
            disc *= gamma * lam
        adv[t] = acc
    return adv


# ---------------------------------------------------------------------------
# Collision oracle: dense point sampling of one box against the other.

def box_lattice(cx, cy, hx, hy, yaw, spacing):
    """World-frame lattice of points covering a box at the given spacing."""
    us = np.arange(-hx, hx + 1e-12, spacing)
    vs = np.arange(-hy, hy + 1e-12, spacing)
    uu, vv = np.meshgrid(us, vs)
    c, s = math.cos(yaw), math.sin(yaw)
    xs = cx + c * uu - s * vv
    ys = cy + s * uu + c * vv
    return np.column_stack([xs.ravel(), ys.ravel()])


def points_in_box(pts, cx, cy, hx, hy, yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    dx = pts[:, 0] - cx
    dy = pts[:, 1] - cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (np.abs(u) < hx) & (np.abs(v) < hy)


def sampled_overlap(b1, b2, spacing):
    """True iff a lattice point of either box lies strictly inside the other."""
    if points_in_box(box_lattice(*b1, spacing), *b2).any():
        return True
    return bool(points_in_box(box_lattice(*b2, spacing), *b1).any())


# ---------------------------------------------------------------------------
# Ego-grid oracle: per-cell point-in-box in world coordinates.

def oracle_ego_grids(state, agent, scenario):
    """Expected (3, 57, 57) grids, computed cell-by-cell in the world frame.

    Valid only for zero observation noise. Mirrors the documented contract:
    cell centers inside an entity box are marked; entities are gated by the
    L1 distance from the robot (walls by their nearest boundary point); the
    observing robot itself is excluded.
    """
    cfg = scenario.config
    me = state.robots[agent]
    n, cell, c0 = 57, 0.06, 28
    grids = np.zeros((3, n, n), dtype=np.uint8)
    right = np.array([math.sin(me.theta), -math.cos(me.theta)])
    fwd = np.array([math.cos(me.theta), math.sin(me.theta)])
    origin = np.array([me.x, me.y])

    def l1(px, py):
        return abs(px - me.x) + abs(py - me.y)

    lh = cfg.load_edge / 2.0
    oh = cfg.obstacle_edge / 2.0
    boxes = {0: [], 1: [], 2: []}
    if l1(state.load.x, state.load.y) <= 1.71:
        boxes[0].append((state.load.x, state.load.y, lh, lh, state.load.theta))
    for p in state.obstacles:
        if l1(p.x, p.y) <= 1.71:
            boxes[1].append((p.x, p.y, oh, oh, p.theta))
    e = cfg.map_extent
    gate_pts = [
        (min(max(me.x, 0.0), e), 0.0), (min(max(me.x, 0.0), e), e),
        (0.0, min(max(me.y, 0.0), e)), (e, min(max(me.y, 0.0), e)),
    ]
    for gate, wb in zip(gate_pts, wall_boxes(cfg)):
        if l1(*gate) <= 1.71:
            boxes[1].append(wb)
    for j, r in enumerate(state.robots):
        if j != agent and l1(r.x, r.y) <= 1.71:
            boxes[2].append((r.x, r.y, r.hx, r.hy, r.theta))

    for row in range(n):
        for col in range(n):
            p = origin + (col - c0) * cell * right + (c0 - row) * cell * fwd
            for ch, blist in boxes.items():
                for (bx, by, hx, hy, yaw) in blist:
                    c, s = math.cos(yaw), math.sin(yaw)
                    dx, dy = p[0] - bx, p[1] - by
                    u = c * dx + s * dy
                    v = -s * dx + c * dy
                    if abs(u) <= hx and abs(v) <= hy:
                        grids[ch, row, col] = 1
    return grids


# ---------------------------------------------------------------------------
# Finite-difference gradient checking (64-bit, central differences).

def max_fd_rel_err(module: torch.nn.Module, loss_fn, eps: float = 1e-6) -> float:
    """Largest relative error between autograd and central finite differences
    over every parameter scalar of `module`. Runs entirely in float64."""
    module.double()
    module.zero_grad()
    loss = loss_fn(module)
    loss.backward()
    worst = 0.0
    with torch.no_grad():
        for p in module.parameters():
            flat = p.data.view(-1)
            grad = p.grad.view(-1) if p.grad is not None else torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                lp = loss_fn(module).item()
                flat[i] = orig - eps
                lm = loss_fn(module).item()
                flat[i] = orig
                fd = (lp - lm) / (2.0 * eps)
                ad = grad[i].item()
                err = abs(fd - ad) / max(1.0, abs(fd), abs(ad))
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Scripted towing controller (plugs into the evaluation loop like a policy).

class ScriptedTowPolicy(torch.nn.Module):
    """Deterministic hand-written tow controller.

    Decodes world positions from the normalized observation vector, steers the
    robot toward a point past the local goal so the taut cable drags the load
    along the planned path. Mimics the policy interface (mu, sigma, h).
    """

    def __init__(self, map_extent: float, cable_length: float):
        super().__init__()
        self.half = map_extent / 2.0
        self.cable = cable_length

    def initial_hidden(self, batch: int = 1) -> torch.Tensor:
        return torch.zeros(batch, 1)

    @staticmethod
    def _unit(vector: np.ndarray, fallback=(1.0, 0.0)) -> np.ndarray:
        norm = float(np.hypot(vector[0], vector[1]))
        return vector / norm if norm > 1e-9 else np.array(fallback)

    def forward(self, vec, grids, h):
        out = np.zeros((vec.shape[0], 3), dtype=np.float32)
        v = vec.numpy()
        margin = 0.55  # keep aim points clear of the walls
        lo, hi = margin, 2.0 * self.half - margin
        for i in range(vec.shape[0]):
            me = v[i, 0:2] * self.half + self.half
            sin_t, cos_t = float(v[i, 2]), float(v[i, 3])
            load = v[i, 4:6] * self.half + self.half
            attach = v[i, 8:10] * self.half + self.half
            p_loc = v[i, 10:12] * self.half + self.half
            gap = p_loc - load
            if float(np.hypot(gap[0], gap[1])) < 1.3:
                # Final approach: p_loc is the goal. Park one cable past it so
                # the trailing load settles inside the success disk; rotate the
                # pull direction away from walls when the natural one is
                # blocked. The cable length is read off the taut robot-attach
                # distance since the true draw is not observable directly.
                c_est = 0.9 * min(1.2, max(0.8, float(np.hypot(
                    me[0] - attach[0], me[1] - attach[1]))))
                d_hat = self._unit(gap)
                target = None
                for deg in (0, 30, -30, 60, -60, 90, -90, 120, -120,
                            150, -150, 180):
                    a = math.radians(deg)
                    e = np.array([d_hat[0] * math.cos(a) - d_hat[1] * math.sin(a),
                                  d_hat[0] * math.sin(a) + d_hat[1] * math.cos(a)])
                    cand = p_loc + e * c_est
                    if lo <= cand[0] <= hi and lo <= cand[1] <= hi:
                        target = cand
                        break
                if target is None:
                    target = np.clip(p_loc + d_hat * c_est, lo, hi)
            else:
                target = np.clip(p_loc + self._unit(gap) * 0.9 * self.cable,
                                 lo, hi)
            w = target - me
            # Detour when the straight run to the target crosses the load.
            rel = load - me
            seg2 = float(w @ w)
            if seg2 > 1e-12:
                t_par = float(rel @ w) / seg2
                miss = rel - np.clip(t_par, 0.0, 1.0) * w
                if t_par > 0.0 and float(np.hypot(miss[0], miss[1])) < 0.75:
                    away = self._unit(me - load)
                    side = np.array([-away[1], away[0]])
                    if float(side @ w) < 0:
                        side = -side
                    target = np.clip(load + self._unit(away + side) * 0.85,
                                     lo, hi)
                    w = target - me
            dist = float(np.hypot(w[0], w[1]))
            if dist > 1e-9:
                w = w / dist
            speed = min(0.5, 2.0 * dist)
            wx, wy = float(w[0]), float(w[1])
            v_sag = speed * (wx * cos_t + wy * sin_t)
            v_lat = speed * (-wx * sin_t + wy * cos_t)
            heading_err = math.atan2(wy, wx) - math.atan2(sin_t, cos_t)
            heading_err = (heading_err + math.pi) % (2.0 * math.pi) - math.pi
            out[i] = (v_sag, v_lat, max(-0.8, min(0.8, 1.5 * heading_err)))
        mu = torch.from_numpy(out)
        return mu, torch.full_like(mu, 0.05), h


# ---------------------------------------------------------------------------
# Common template factories.

def empty_template(extent: float = 8.0, team: int = 1, **kw) -> WorldConfig:
    return WorldConfig(map_extent=extent, n_obstacles=0, team_size=team, **kw)


def fixed_single_scenario(load_xy=(3.0, 3.0), goal=(5.5, 3.0), theta=0.0,
                          extent=8.0, cable=1.0):
    """Deterministic 1-robot scenario with every sampled quantity pinned."""
    from cabletow.world import DomainRandomizationDraw, Scenario

    cfg = WorldConfig(
        map_extent=extent, n_obstacles=0, team_size=1,
        cable_lengths=(cable,), attachment_angles=(0.0,),
        attachment_offsets=(0.0,), goal=goal,
    )
    dr = DomainRandomizationDraw(
        kp_lin=40.0, kd_lin=5.0, kp_ang=30.0, kd_ang=3.0,
        friction=0.7, load_mass=2.0, cable_lengths=(cable,),
        obs_noise_sigma=0.0,
    )
    lx, ly = load_xy
    robot = Pose2(lx + cfg.load_edge / 2.0 + 0.5 * cable, ly, theta)
    return Scenario(
        config=cfg, dr=dr, load_pose=Pose2(lx, ly, 0.0),
        robot_poses=(robot,), obstacle_poses=(), rng_seed=12345,
    )
