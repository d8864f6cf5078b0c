"""Global load-path planning: map rasterization, A*, rolling local goal.

The grid covers the map interior [0, E] x [0, E]. A cell is occupied iff its
center lies within (inflation + half cell diagonal) of an obstacle box or of
the boundary region — a conservative rule, so anything touching a cell
boundary occupies the cells on both sides. A* runs once per episode; the
local goal is re-extracted from the fixed path every decision step.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .geometry import points_box_distance
from .world import Pose2, WorldConfig

SQRT2 = math.sqrt(2.0)
DEFAULT_LOOKAHEAD = 1.8

# (dix, diy, cost, straight?) — diagonal moves must not cut corners: both
# adjacent cardinal cells must be free for the load to pass.
_MOVES = (
    (1, 0, 1.0, True), (-1, 0, 1.0, True), (0, 1, 1.0, True), (0, -1, 1.0, True),
    (1, 1, SQRT2, False), (1, -1, SQRT2, False), (-1, 1, SQRT2, False), (-1, -1, SQRT2, False),
)


class NoPath(RuntimeError):
    """No collision-free grid path between the requested endpoints."""


@dataclass(frozen=True)
class OccupancyGrid:
    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray  # bool, shape (ny, nx), indexed [iy, ix]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (
            int(math.floor((x - self.origin[0]) / self.resolution)),
            int(math.floor((y - self.origin[1]) / self.resolution)),
        )

    def center_of(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def is_free(self, ix: int, iy: int) -> bool:
        return self.in_bounds(ix, iy) and not self.cells[iy, ix]


@dataclass(frozen=True)
class LoadPath:
    """Grid path for the load; waypoints are cell centers in order."""

    waypoints: np.ndarray   # (K, 2) world coordinates
    arclength: np.ndarray   # (K,) cumulative meters, arclength[0] = 0
    cells: np.ndarray       # (K, 2) int (ix, iy)
    moves: tuple[int, int]  # (straight, diagonal) move counts
    resolution: float

    @property
    def cost_cells(self) -> float:
        """Path cost in cell units: n_straight + n_diagonal * sqrt(2)."""
        return self.moves[0] + self.moves[1] * SQRT2

    @property
    def total_length(self) -> float:
        return float(self.arclength[-1])


def rasterize_global(
    cfg: WorldConfig,
    obstacles: tuple[Pose2, ...],
    resolution: float | None = None,
    inflation: float | None = None,
) -> OccupancyGrid:
    res = cfg.plan_resolution if resolution is None else resolution
    infl = cfg.plan_inflation if inflation is None else inflation
    e = cfg.map_extent
    n = int(round(e / res))
    half_diag = res * SQRT2 / 2.0
    reach = infl + half_diag

    xs = (np.arange(n) + 0.5) * res
    cx, cy = np.meshgrid(xs, xs)  # cx varies along axis 1 (ix), cy along axis 0 (iy)
    boundary_dist = np.minimum(np.minimum(cx, cy), np.minimum(e - cx, e - cy))
    occ = boundary_dist <= reach

    if obstacles:
        pts = np.column_stack([cx.ravel(), cy.ravel()])
        h = cfg.obstacle_edge / 2.0
        for p in obstacles:
            d = points_box_distance(pts, p.x, p.y, h, h, p.theta)
            occ |= (d <= reach).reshape(n, n)

    return OccupancyGrid(resolution=res, origin=(0.0, 0.0), cells=occ)


def _octile(ax: int, ay: int, bx: int, by: int) -> float:
    dx, dy = abs(ax - bx), abs(ay - by)
    return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)


def astar(grid: OccupancyGrid, start: tuple[float, float],
          goal: tuple[float, float]) -> LoadPath:
    """Minimal-cost 8-connected path between the cells containing two points.

    Unit cost for straight moves, sqrt(2) for diagonals, octile heuristic.
    Raises NoPath when an endpoint cell is blocked/out of bounds or the goal
    is unreachable.
    """
    sx, sy = grid.cell_of(*start)
    gx, gy = grid.cell_of(*goal)
    if not grid.is_free(sx, sy):
        raise NoPath(f"start cell ({sx}, {sy}) blocked or out of bounds")
    if not grid.is_free(gx, gy):
        raise NoPath(f"goal cell ({gx}, {gy}) blocked or out of bounds")

    nx, ny = grid.width, grid.height
    occ = grid.cells
    g_cost = np.full((ny, nx), np.inf)
    parent = np.full((ny, nx), -1, dtype=np.int32)
    g_cost[sy, sx] = 0.0
    counter = 0
    heap = [(_octile(sx, sy, gx, gy), 0.0, counter, sx, sy)]
    found = False
    while heap:
        f, g, _, ix, iy = heapq.heappop(heap)
        if g > g_cost[iy, ix]:
            continue
        if ix == gx and iy == gy:
            found = True
            break
        for dix, diy, cost, straight in _MOVES:
            jx, jy = ix + dix, iy + diy
            if not (0 <= jx < nx and 0 <= jy < ny) or occ[jy, jx]:
                continue
            if not straight and (occ[iy, jx] or occ[jy, ix]):
                continue
            ng = g + cost
            if ng < g_cost[jy, jx]:
                g_cost[jy, jx] = ng
                parent[jy, jx] = iy * nx + ix
                counter += 1
                heapq.heappush(heap, (ng + _octile(jx, jy, gx, gy), ng, counter, jx, jy))
    if not found:
        raise NoPath(f"goal cell ({gx}, {gy}) unreachable from ({sx}, {sy})")

    cells = [(gx, gy)]
    while cells[-1] != (sx, sy):
        p = parent[cells[-1][1], cells[-1][0]]
        cells.append((int(p % nx), int(p // nx)))
    cells.reverse()
    cells_arr = np.array(cells, dtype=np.int64)
    ns = nd = 0
    for (ax, ay), (bx, by) in zip(cells[:-1], cells[1:]):
        if ax != bx and ay != by:
            nd += 1
        else:
            ns += 1
    waypoints = np.array([grid.center_of(ix, iy) for ix, iy in cells])
    steps = np.hypot(np.diff(waypoints[:, 0]), np.diff(waypoints[:, 1]))
    arclength = np.concatenate([[0.0], np.cumsum(steps)])
    return LoadPath(
        waypoints=waypoints,
        arclength=arclength,
        cells=cells_arr,
        moves=(ns, nd),
        resolution=grid.resolution,
    )


def local_goal(
    path: LoadPath,
    load_pos: tuple[float, float],
    final_goal: tuple[float, float],
    lookahead: float = DEFAULT_LOOKAHEAD,
) -> tuple[float, float]:
    """Project the load onto the path and advance `lookahead` meters of
    arclength; returns final_goal when less than that remains. Projection
    ties break toward the earlier arclength.
    """
    w = path.waypoints
    if len(w) < 2:
        return (float(final_goal[0]), float(final_goal[1]))
    p = np.asarray(load_pos, dtype=float)
    a = w[:-1]
    d = w[1:] - a
    seg_len2 = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("ij,ij->i", p - a, d) / seg_len2, 0.0, 1.0)
    proj = a + t[:, None] * d
    dist2 = np.einsum("ij,ij->i", p - proj, p - proj)
    k = int(np.argmin(dist2))  # first minimum = earliest arclength
    s_star = path.arclength[k] + t[k] * math.sqrt(seg_len2[k])
    target = s_star + lookahead
    if target >= path.arclength[-1] - 1e-12:
        return (float(final_goal[0]), float(final_goal[1]))
    j = int(np.searchsorted(path.arclength, target, side="right") - 1)
    j = min(j, len(w) - 2)
    frac = (target - path.arclength[j]) / (path.arclength[j + 1] - path.arclength[j])
    pt = w[j] + frac * (w[j + 1] - w[j])
    return (float(pt[0]), float(pt[1]))
