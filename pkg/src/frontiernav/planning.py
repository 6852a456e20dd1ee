"""Grid planning: optimal 8-connected shortest paths, goal geodesics,
correct-frontier labeling, the greedy exploration oracle, and the local
plan-and-follow controller.

All planning is deterministic. Step costs are resolution (cardinal) and
resolution * sqrt(2) (diagonal); diagonal steps never cut corners.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from . import world
from .gridops import OBSTACLE, UNKNOWN, dijkstra_grid, first_blocked_on_segment
from .mapping import Frontier, OccupancyGrid
from .world import Action, ActionConfig, ImageNavTask, ObjectNavTask, Pose, Scene, Task

GridSource = Union[Scene, OccupancyGrid]


class Unreachable(Exception):
    pass


class ControllerStuck(Exception):
    pass


@dataclass(frozen=True)
class PathResult:
    length: float  # meters
    cells: tuple[tuple[int, int], ...]  # (col, row), start to goal


@dataclass(frozen=True)
class OracleConfig:
    goal_switch_distance: float = 3.5

    def __post_init__(self):
        if self.goal_switch_distance <= 0.0:
            raise ValueError("goal_switch_distance must be positive")


def _resolution(source: GridSource) -> float:
    return source.resolution


def blocked_mask(source: GridSource, unknown_is: str = "free",
                 inflate_radius: float = 0.0) -> np.ndarray:
    """Boolean non-traversable mask with Unknown interpreted per unknown_is
    and obstacles dilated by inflate_radius (Euclidean, cell centers)."""
    if isinstance(source, Scene):
        blocked = source.cells == world.OBSTACLE
    else:
        blocked = source.cells == OBSTACLE
        if unknown_is == "obstacle":
            blocked = blocked | (source.cells == UNKNOWN)
        elif unknown_is != "free":
            raise ValueError(f"unknown_is must be 'free' or 'obstacle', got {unknown_is!r}")
    if inflate_radius > 0.0:
        radius_cells = int(math.floor(inflate_radius / _resolution(source) + 1e-9))
        if radius_cells > 0:
            k = radius_cells
            dy, dx = np.mgrid[-k:k + 1, -k:k + 1]
            structure = (dx * dx + dy * dy) * _resolution(source) ** 2 \
                <= inflate_radius ** 2 + 1e-12
            blocked = ndimage.binary_dilation(blocked, structure=structure)
    return np.ascontiguousarray(blocked)


def _run_dijkstra(blocked: np.ndarray, sources: Sequence[tuple[int, int]],
                  res: float, target_mask: Optional[np.ndarray] = None):
    src_rows = np.array([r for _, r in sources], dtype=np.int64)
    src_cols = np.array([c for c, _ in sources], dtype=np.int64)
    early = target_mask is not None
    if target_mask is None:
        target_mask = np.zeros(blocked.shape, dtype=bool)
    return dijkstra_grid(blocked, src_rows, src_cols, res,
                         np.ascontiguousarray(target_mask), early)


def _reconstruct(parent: np.ndarray, reached: int, width: int) -> tuple[tuple[int, int], ...]:
    cells = []
    node = reached
    while node >= 0:
        cells.append((node % width, node // width))
        node = parent[node]
    cells.reverse()
    return tuple(cells)


def grid_shortest_path(source: GridSource, from_cell: tuple[int, int],
                       to_cell: tuple[int, int], unknown_is: str = "free",
                       inflate_radius: float = 0.0) -> PathResult:
    """Optimal 8-connected path between two cells, or raise Unreachable."""
    blocked = blocked_mask(source, unknown_is, inflate_radius)
    h, w = blocked.shape
    fc, fr = from_cell
    tc, tr = to_cell
    if not (0 <= fc < w and 0 <= fr < h and 0 <= tc < w and 0 <= tr < h):
        raise Unreachable(f"cell out of bounds: {from_cell} -> {to_cell}")
    if blocked[fr, fc]:
        raise Unreachable(f"start cell {from_cell} is not traversable after inflation")
    target_mask = np.zeros((h, w), dtype=bool)
    target_mask[tr, tc] = True
    dist, parent, reached = _run_dijkstra(blocked, [from_cell], _resolution(source), target_mask)
    if reached < 0:
        raise Unreachable(f"no path from {from_cell} to {to_cell}")
    return PathResult(length=float(dist[tr, tc]), cells=_reconstruct(parent, reached, w))


def goal_target_mask(scene: Scene, task: Task) -> np.ndarray:
    """Traversable cells from which the goal counts as reached: cells
    8-adjacent to a goal-instance cell (ObjectNav) or the goal-pose cell
    (ImageNav)."""
    mask = np.zeros(scene.cells.shape, dtype=bool)
    if isinstance(task, ObjectNavTask):
        instances = [o for o in scene.objects if o.category == task.category]
        if not instances:
            raise world.GoalAbsent(f"category {task.category!r} not present in scene")
        for inst in instances:
            for col, row in inst.cells:
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        c, r = col + dc, row + dr
                        if scene.is_free_cell(c, r):
                            mask[r, c] = True
    else:
        col, row = world.cell_of(task.goal_pose.x, task.goal_pose.y, scene.resolution)
        if scene.is_free_cell(col, row):
            mask[row, col] = True
    return mask


@lru_cache(maxsize=256)
def goal_distance_field(scene: Scene, task: Task) -> np.ndarray:
    """Geodesic distance (meters) from every cell to the nearest goal
    target cell on the true map; inf where unreachable. Cached per
    (scene, task)."""
    target = goal_target_mask(scene, task)
    sources = [(int(c), int(r)) for r, c in zip(*np.nonzero(target))]
    blocked = blocked_mask(scene)
    if not sources:
        dist = np.full(scene.cells.shape, np.inf)
    else:
        dist, _, _ = _run_dijkstra(blocked, sources, scene.resolution)
    dist.setflags(write=False)
    return dist


def geodesic_goal_distance(scene: Scene, from_cell: tuple[int, int], task: Task) -> float:
    """Shortest-path length to the closest goal instance (0 when already
    adjacent); raises Unreachable when no instance can be reached."""
    col, row = from_cell
    dist = goal_distance_field(scene, task)
    d = float(dist[row, col])
    if not math.isfinite(d):
        raise Unreachable(f"goal unreachable from cell {from_cell}")
    return d


def true_path_to_goal(scene: Scene, from_cell: tuple[int, int], task: Task) -> PathResult:
    """Shortest true-map path from the agent cell to the nearest goal
    target cell."""
    blocked = blocked_mask(scene)
    fc, fr = from_cell
    if blocked[fr, fc]:
        raise Unreachable(f"start cell {from_cell} is not traversable")
    target = goal_target_mask(scene, task)
    dist, parent, reached = _run_dijkstra(blocked, [from_cell], scene.resolution, target)
    if reached < 0:
        raise Unreachable(f"goal unreachable from cell {from_cell}")
    w = blocked.shape[1]
    return PathResult(length=float(dist.ravel()[reached]),
                      cells=_reconstruct(parent, reached, w))


def distance_field_from(source: GridSource, from_cell: tuple[int, int],
                        unknown_is: str = "free", inflate_radius: float = 0.0) -> np.ndarray:
    """Distance field (meters) from one cell over the given occupancy
    source; inf where unreachable."""
    blocked = blocked_mask(source, unknown_is, inflate_radius)
    dist, _, _ = _run_dijkstra(blocked, [from_cell], _resolution(source))
    return dist


def label_correct_frontier(scene: Scene, agent_cell: tuple[int, int],
                           frontiers: Sequence[Frontier], task: Task,
                           belief: Optional[OccupancyGrid] = None) -> int:
    """Id of the frontier lying on the true shortest path to the goal.

    When several frontiers intersect the path, the one crossed earliest
    wins. When none intersects (goal inside explored space), falls back to
    argmin of belief-distance(agent, waypoint) + true-distance(waypoint,
    goal), ties by lowest id."""
    if not frontiers:
        raise ValueError("frontiers must be non-empty")
    path = true_path_to_goal(scene, agent_cell, task)
    cell_to_fid: dict[tuple[int, int], int] = {}
    for f in frontiers:
        for cell in f.cells:
            cell_to_fid[cell] = f.id
    for cell in path.cells:
        if cell in cell_to_fid:
            return cell_to_fid[cell]

    goal_dist = goal_distance_field(scene, task)
    if belief is not None:
        agent_dist = distance_field_from(belief, agent_cell, unknown_is="free")
    else:
        agent_dist = distance_field_from(scene, agent_cell)
    best_id = None
    best_key = None
    for f in sorted(frontiers, key=lambda f: f.id):
        col, row = world.cell_of(f.waypoint[0], f.waypoint[1], scene.resolution)
        total = float(agent_dist[row, col]) + float(goal_dist[row, col])
        if math.isfinite(total) and (best_key is None or total < best_key):
            best_key = total
            best_id = f.id
    if best_id is None:
        return min(f.id for f in frontiers)
    return best_id


def greedy_oracle_step(scene: Scene, belief: OccupancyGrid, agent: Pose,
                       frontiers: Sequence[Frontier], task: Task,
                       cfg: OracleConfig = OracleConfig()) -> int:
    """Greedy exploration oracle: head for the closest frontier in the
    belief until the goal is within cfg.goal_switch_distance geodesically,
    then pick the frontier leading to the goal."""
    if not frontiers:
        raise ValueError("frontiers must be non-empty")
    agent_cell = world.cell_of(agent.x, agent.y, scene.resolution)
    d = geodesic_goal_distance(scene, agent_cell, task)
    if d <= cfg.goal_switch_distance:
        return label_correct_frontier(scene, agent_cell, frontiers, task, belief)
    dist = distance_field_from(belief, agent_cell, unknown_is="free")
    best_id = None
    best_key = None
    for f in sorted(frontiers, key=lambda f: f.id):
        col, row = belief.cell_of(*f.waypoint)
        dd = float(dist[row, col])
        if math.isfinite(dd) and (best_key is None or dd < best_key):
            best_key = dd
            best_id = f.id
    if best_id is None:
        return min(f.id for f in frontiers)
    return best_id


def _plan_on_belief(belief: OccupancyGrid, start: tuple[int, int],
                    goal: tuple[int, int], inflate_radius: float):
    """One planning attempt; returns path cells or None."""
    blocked = blocked_mask(belief, unknown_is="free", inflate_radius=inflate_radius)
    h, w = blocked.shape
    sc, sr = start
    gc, gr = goal
    if not (0 <= gc < w and 0 <= gr < h):
        return None
    truly_blocked = belief.cells[sr, sc] == OBSTACLE
    if truly_blocked:
        return None
    # The agent may sit inside its own inflation ring; allow leaving.
    if blocked[sr, sc]:
        blocked = blocked.copy()
        blocked[sr, sc] = False
    target_mask = np.zeros((h, w), dtype=bool)
    if not blocked[gr, gc]:
        target_mask[gr, gc] = True
    else:
        # Goal swallowed by inflation: accept any traversable neighbor.
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                r, c = gr + dr, gc + dc
                if 0 <= r < h and 0 <= c < w and not blocked[r, c]:
                    target_mask[r, c] = True
        if not target_mask.any():
            return None
    _, parent, reached = _run_dijkstra(blocked, [start], belief.resolution, target_mask)
    if reached < 0:
        return None
    return _reconstruct(parent, reached, w)


def _sweep_blocked(belief: OccupancyGrid, x: float, y: float,
                   heading_deg: float, step: float) -> bool:
    """True when a forward step along heading crosses a known Obstacle cell
    (Unknown passes); off-grid counts as blocked."""
    rad = math.radians(heading_deg)
    dx, dy = math.cos(rad), math.sin(rad)
    n = max(1, math.ceil(step / (belief.resolution / 2.0)))
    for k in range(1, n + 1):
        col, row = belief.cell_of(x + step * dx * k / n, y + step * dy * k / n)
        if not belief.in_bounds(col, row) or belief.cells[row, col] == OBSTACLE:
            return True
    return False


def local_controller_step(belief: OccupancyGrid, pose: Pose,
                          waypoint: tuple[float, float],
                          cfg: ActionConfig = ActionConfig(),
                          inflate_radius: float = 0.18) -> Action:
    """Plan-and-follow controller replacing a learned point-goal policy.

    Replans a belief-space path (Unknown as Free) on every call, then turns
    until the aim direction is within half a turn step and drives forward.
    Raises ControllerStuck when no belief path to the waypoint exists."""
    start = belief.cell_of(pose.x, pose.y)
    goal = belief.cell_of(*waypoint)
    path = _plan_on_belief(belief, start, goal, inflate_radius)
    if path is None and inflate_radius > 0.0:
        path = _plan_on_belief(belief, start, goal, 0.0)
    if path is None:
        raise ControllerStuck(f"no belief path from {start} to waypoint cell {goal}")

    if len(path) < 2:
        aim = waypoint
    else:
        # Pure pursuit on the path: aim at the furthest cell still visible
        # from the pose (known obstacles only), capped by a short lookahead.
        obstacle = np.ascontiguousarray(belief.cells == OBSTACLE)
        lookahead = 4.0 * cfg.forward_step
        aim = belief.cell_center(*path[1])
        travelled = 0.0
        prev = belief.cell_center(*path[0])
        for cell in path[1:]:
            cur = belief.cell_center(*cell)
            travelled += math.hypot(cur[0] - prev[0], cur[1] - prev[1])
            prev = cur
            bcol, _ = first_blocked_on_segment(
                obstacle, pose.x - belief.origin[0], pose.y - belief.origin[1],
                cur[0] - belief.origin[0], cur[1] - belief.origin[1],
                belief.resolution)
            if bcol >= 0:
                break
            aim = cur
            if travelled >= lookahead:
                break

    ax = aim[0] - pose.x
    ay = aim[1] - pose.y
    if math.hypot(ax, ay) < 1e-9:
        return Action.FORWARD
    aim_deg = math.degrees(math.atan2(ay, ax))

    # Among headings reachable by turning, take the clear one best aligned
    # with the aim. With nothing blocked nearby this reduces to the plain
    # rule: turn while the aim is more than half a turn step off, else go.
    n_headings = max(1, round(360.0 / cfg.turn_step))
    best_key = None
    best_rot = 0.0
    for k in range(n_headings):
        rot = k * cfg.turn_step
        if rot > 180.0:
            rot -= 360.0
        heading = pose.heading + rot
        if _sweep_blocked(belief, pose.x, pose.y, heading, cfg.forward_step):
            continue
        delta = (aim_deg - heading + 180.0) % 360.0 - 180.0
        key = (abs(delta), abs(rot), 0.0 if rot >= 0.0 else 1.0)
        if best_key is None or key < best_key:
            best_key = key
            best_rot = rot
    if best_key is None:
        raise ControllerStuck("every heading is blocked in the belief")
    if abs(best_rot) < 1e-9:
        return Action.FORWARD
    return Action.TURN_LEFT if best_rot > 0.0 else Action.TURN_RIGHT
