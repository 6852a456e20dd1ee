"""Ground-truth 2D grid world: scenes, agent kinematics, depth sensing,
oracle goal detection, and episode sampling.

World coordinates are meters with x = col * resolution, y = row * resolution
(cell (col, row) spans [col*res, (col+1)*res) x [row*res, (row+1)*res)).
Headings are degrees, 0 = +x axis, counterclockwise positive.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Optional, Union

import numpy as np
from scipy import ndimage

from .gridops import first_blocked_on_segment, raycast_rays

FLOOR = np.uint8(0)
OBSTACLE = np.uint8(1)

_EIGHT_CONN = np.ones((3, 3), dtype=bool)


class InvalidPose(Exception):
    pass


class GoalAbsent(Exception):
    pass


class GenerationFailed(Exception):
    pass


class SamplingFailed(Exception):
    pass


class Action(Enum):
    FORWARD = "forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    STOP = "stop"


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float  # degrees in [0, 360)

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise InvalidPose(f"non-finite pose ({self.x}, {self.y}, {self.heading})")
        object.__setattr__(self, "heading", self.heading % 360.0)

    @property
    def heading_vec(self) -> tuple[float, float]:
        rad = math.radians(self.heading)
        return math.cos(rad), math.sin(rad)


@dataclass(frozen=True)
class ObjectInstance:
    category: str
    cells: frozenset[tuple[int, int]]  # (col, row)
    centroid: tuple[float, float]


@dataclass(frozen=True, eq=False)
class Scene:
    id: str
    seed: int
    resolution: float
    cells: np.ndarray  # uint8 (height, width); FLOOR or OBSTACLE
    objects: tuple[ObjectInstance, ...]

    def __post_init__(self):
        self.cells.setflags(write=False)

    @property
    def width_cells(self) -> int:
        return self.cells.shape[1]

    @property
    def height_cells(self) -> int:
        return self.cells.shape[0]

    @cached_property
    def obstacle_mask(self) -> np.ndarray:
        mask = self.cells == OBSTACLE
        mask.setflags(write=False)
        return mask

    def in_bounds(self, col: int, row: int) -> bool:
        return 0 <= col < self.width_cells and 0 <= row < self.height_cells

    def is_free_cell(self, col: int, row: int) -> bool:
        return self.in_bounds(col, row) and self.cells[row, col] == FLOOR

    def free_cells(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.cells == FLOOR)
        return [(int(c), int(r)) for r, c in zip(rows, cols)]

    def categories(self) -> list[str]:
        return sorted({o.category for o in self.objects})


@dataclass(frozen=True)
class SensorConfig:
    num_rays: int = 91
    fov: float = 90.0
    max_range: float = 5.0
    detect_range: float = 4.0

    def __post_init__(self):
        if self.num_rays < 2:
            raise ValueError("num_rays must be >= 2")
        if not (0.0 < self.fov <= 360.0):
            raise ValueError("fov must be in (0, 360]")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")


@dataclass(frozen=True)
class ActionConfig:
    forward_step: float = 0.25
    turn_step: float = 30.0

    def __post_init__(self):
        if self.forward_step <= 0.0:
            raise ValueError("forward_step must be positive")
        if self.turn_step <= 0.0 or abs(360.0 % self.turn_step) > 1e-9:
            raise ValueError("turn_step must divide 360")


@dataclass(frozen=True, eq=False)
class DepthScan:
    """One depth sweep. angles_deg are absolute world bearings per ray."""

    pose: Pose
    ranges: np.ndarray
    hits: np.ndarray
    angles_deg: np.ndarray
    max_range: float
    resolution: float

    def __post_init__(self):
        for arr in (self.ranges, self.hits, self.angles_deg):
            arr.setflags(write=False)


@dataclass(frozen=True)
class ObjectNavTask:
    category: str


@dataclass(frozen=True)
class ImageNavTask:
    goal_pose: Pose


Task = Union[ObjectNavTask, ImageNavTask]


@dataclass(frozen=True)
class EpisodeSpec:
    scene_id: str
    start: Pose
    task: Task
    success_radius: float = 1.0
    max_steps: int = 500


def cell_of(x: float, y: float, resolution: float) -> tuple[int, int]:
    return int(math.floor(x / resolution)), int(math.floor(y / resolution))


def cell_center(col: int, row: int, resolution: float) -> tuple[float, float]:
    return (col + 0.5) * resolution, (row + 0.5) * resolution


def apply_action(pose: Pose, action: Action, scene: Scene,
                 cfg: ActionConfig = ActionConfig()) -> tuple[Pose, bool]:
    """Apply one discrete action. A blocked Forward is a no-op with
    collided=True; turns rotate in place."""
    col, row = cell_of(pose.x, pose.y, scene.resolution)
    if not scene.in_bounds(col, row):
        raise InvalidPose(f"pose off-grid at cell ({col}, {row})")
    if action is Action.STOP:
        return pose, False
    if action is Action.TURN_LEFT:
        return Pose(pose.x, pose.y, pose.heading + cfg.turn_step), False
    if action is Action.TURN_RIGHT:
        return Pose(pose.x, pose.y, pose.heading - cfg.turn_step), False

    dx, dy = pose.heading_vec
    tx = pose.x + cfg.forward_step * dx
    ty = pose.y + cfg.forward_step * dy
    # Sweep the segment at sub-cell granularity (<= resolution / 2).
    steps = max(1, math.ceil(cfg.forward_step / (scene.resolution / 2.0)))
    for k in range(1, steps + 1):
        px = pose.x + cfg.forward_step * dx * k / steps
        py = pose.y + cfg.forward_step * dy * k / steps
        c, r = cell_of(px, py, scene.resolution)
        if not scene.in_bounds(c, r) or scene.cells[r, c] == OBSTACLE:
            return pose, True
    return Pose(tx, ty, pose.heading), False


def raycast_depth(scene: Scene, pose: Pose, cfg: SensorConfig = SensorConfig()) -> DepthScan:
    """Depth sweep of cfg.num_rays rays spread uniformly across cfg.fov,
    centered on the pose heading. Each ray stops at the first obstacle
    cell boundary, clamped to cfg.max_range."""
    if cfg.num_rays > 1:
        offsets = np.linspace(-cfg.fov / 2.0, cfg.fov / 2.0, cfg.num_rays)
    else:
        offsets = np.zeros(1)
    angles_deg = pose.heading + offsets
    ranges, hits = raycast_rays(scene.obstacle_mask, pose.x, pose.y,
                                np.radians(angles_deg), cfg.max_range,
                                scene.resolution)
    return DepthScan(pose=pose, ranges=ranges, hits=hits, angles_deg=angles_deg,
                     max_range=cfg.max_range, resolution=scene.resolution)


def _bearing_within(pose: Pose, px: float, py: float, half_fov_deg: float) -> bool:
    dx = px - pose.x
    dy = py - pose.y
    if dx == 0.0 and dy == 0.0:
        return True
    bearing = math.degrees(math.atan2(dy, dx)) - pose.heading
    bearing = (bearing + 180.0) % 360.0 - 180.0
    return abs(bearing) <= half_fov_deg


def oracle_detect_goal(scene: Scene, pose: Pose, task: Task,
                       cfg: SensorConfig = SensorConfig()) -> Optional[tuple[float, float]]:
    """Geometric stand-in for a learned detector: returns the nearest goal
    point within detect_range, inside the fov, with clear line of sight,
    else None."""
    res = scene.resolution
    if isinstance(task, ObjectNavTask):
        instances = [o for o in scene.objects if o.category == task.category]
        if not instances:
            raise GoalAbsent(f"category {task.category!r} not present in scene")
        targets = [(cell_center(c, r, res), True) for o in instances for (c, r) in sorted(o.cells)]
    else:
        targets = [((task.goal_pose.x, task.goal_pose.y), False)]

    half_fov = cfg.fov / 2.0
    mask = scene.obstacle_mask
    best: Optional[tuple[float, float, float]] = None
    for (px, py), target_is_obstacle in targets:
        d = math.hypot(px - pose.x, py - pose.y)
        if d > cfg.detect_range:
            continue
        if not _bearing_within(pose, px, py, half_fov):
            continue
        bcol, brow = first_blocked_on_segment(mask, pose.x, pose.y, px, py, res)
        if target_is_obstacle:
            tcol, trow = cell_of(px, py, res)
            visible = (bcol, brow) == (tcol, trow)
        else:
            visible = bcol < 0
        if not visible:
            continue
        key = (d, px, py)
        if best is None or key < best:
            best = key
    if best is None:
        return None
    return best[1], best[2]


@dataclass(frozen=True)
class SceneParams:
    width: int = 96
    height: int = 96
    resolution: float = 0.1
    room_count_range: tuple[int, int] = (4, 7)
    room_size_range: tuple[int, int] = (16, 34)  # cells, i.e. 1.6-3.4 m rooms
    corridor_width: int = 6  # cells; keep wider than the planner inflation
    categories: tuple[str, ...] = ("bed", "chair", "plant", "sofa", "table", "toilet")
    instances_per_category_range: tuple[int, int] = (1, 2)
    object_size_range: tuple[int, int] = (2, 4)  # footprint cells

    def __post_init__(self):
        if self.room_size_range[1] + 2 > min(self.width, self.height):
            raise ValueError("rooms do not fit within the grid")
        if self.room_count_range[0] < 1:
            raise ValueError("need at least one room")


def _floor_connected(cells: np.ndarray) -> bool:
    floor = cells == FLOOR
    if not floor.any():
        return False
    _, count = ndimage.label(floor, structure=_EIGHT_CONN)
    return count == 1


def _carve_corridor(cells: np.ndarray, a: tuple[int, int], b: tuple[int, int],
                    width: int, horizontal_first: bool) -> None:
    (ac, ar), (bc, br) = a, b
    h, w = cells.shape

    def carve(c0, c1, r0, r1):
        c0, c1 = max(1, min(c0, c1)), min(w - 2, max(c0, c1))
        r0, r1 = max(1, min(r0, r1)), min(h - 2, max(r0, r1))
        cells[r0:r1 + 1, c0:c1 + 1] = FLOOR

    if horizontal_first:
        carve(ac, bc, ar, ar + width - 1)
        carve(bc, bc + width - 1, ar, br)
    else:
        carve(ac, ac + width - 1, ar, br)
        carve(ac, bc, br, br + width - 1)


def _place_object(cells: np.ndarray, rooms: list[tuple[int, int, int, int]],
                  rng: random.Random, size: int,
                  object_cells: set[tuple[int, int]]) -> Optional[frozenset[tuple[int, int]]]:
    """Convert a small blob of wall-adjacent floor cells inside a room into
    an object footprint, keeping the remaining floor fully connected.

    Footprints keep a one-cell gap from other objects so every instance
    stays visible from its open side."""
    h, w = cells.shape

    def wall_adjacent(c: int, r: int) -> bool:
        return (cells[r - 1, c] == OBSTACLE or cells[r + 1, c] == OBSTACLE
                or cells[r, c - 1] == OBSTACLE or cells[r, c + 1] == OBSTACLE)

    def near_other_object(c: int, r: int) -> bool:
        return any((c + dc, r + dr) in object_cells
                   for dr in (-1, 0, 1) for dc in (-1, 0, 1))

    candidates = []
    for (x0, y0, rw, rh) in rooms:
        for r in range(y0, min(y0 + rh, h - 1)):
            for c in range(x0, min(x0 + rw, w - 1)):
                if cells[r, c] == FLOOR and wall_adjacent(c, r) and not near_other_object(c, r):
                    candidates.append((c, r))
    candidates = sorted(set(candidates))
    if not candidates:
        return None

    for _ in range(40):
        c, r = candidates[rng.randrange(len(candidates))]
        chosen = [(c, r)]
        # Grow along the wall to the requested footprint size.
        while len(chosen) < size:
            frontier_cells = [
                (cc + dc, rr + dr)
                for cc, rr in chosen
                for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 < cc + dc < w - 1 and 0 < rr + dr < h - 1
                and cells[rr + dr, cc + dc] == FLOOR
                and (cc + dc, rr + dr) not in chosen
                and wall_adjacent(cc + dc, rr + dr)
                and not near_other_object(cc + dc, rr + dr)
            ]
            if not frontier_cells:
                break
            frontier_cells = sorted(set(frontier_cells))
            chosen.append(frontier_cells[rng.randrange(len(frontier_cells))])
        saved = [cells[rr, cc] for cc, rr in chosen]
        for cc, rr in chosen:
            cells[rr, cc] = OBSTACLE
        ok = _floor_connected(cells)
        if ok:
            # Every object cell must stay visible from some floor cell.
            for cc, rr in chosen:
                if not any(cells[rr + dr, cc + dc] == FLOOR
                           for dr in (-1, 0, 1) for dc in (-1, 0, 1)
                           if (dr, dc) != (0, 0)
                           and 0 <= rr + dr < h and 0 <= cc + dc < w):
                    ok = False
                    break
        if ok:
            return frozenset(chosen)
        for (cc, rr), val in zip(chosen, saved):
            cells[rr, cc] = val
    return None


def generate_scene(seed: int, params: SceneParams = SceneParams()) -> Scene:
    """Procedural rooms-and-corridors scene, deterministic in seed.

    Rooms are carved into a solid grid and chained with L-corridors; one
    connectivity flood fill validates the result. Objects are placed
    against room walls on cells that become non-traversable."""
    rng = random.Random(seed)
    for _attempt in range(25):
        cells = np.full((params.height, params.width), OBSTACLE, dtype=np.uint8)
        room_count = rng.randint(*params.room_count_range)
        rooms: list[tuple[int, int, int, int]] = []
        for _ in range(room_count):
            rw = rng.randint(*params.room_size_range)
            rh = rng.randint(*params.room_size_range)
            x0 = y0 = 1
            for _try in range(10):
                x0 = rng.randint(1, params.width - rw - 1)
                y0 = rng.randint(1, params.height - rh - 1)
                overlap = sum(
                    max(0, min(x0 + rw, ox + ow) - max(x0, ox))
                    * max(0, min(y0 + rh, oy + oh) - max(y0, oy))
                    for ox, oy, ow, oh in rooms)
                if overlap <= 0.3 * rw * rh:
                    break
            rooms.append((x0, y0, rw, rh))
            cells[y0:y0 + rh, x0:x0 + rw] = FLOOR
        for i in range(1, len(rooms)):
            ax = rooms[i - 1][0] + rooms[i - 1][2] // 2
            ay = rooms[i - 1][1] + rooms[i - 1][3] // 2
            bx = rooms[i][0] + rooms[i][2] // 2
            by = rooms[i][1] + rooms[i][3] // 2
            _carve_corridor(cells, (ax, ay), (bx, by), params.corridor_width,
                            rng.random() < 0.5)
        if not _floor_connected(cells):
            continue

        objects: list[ObjectInstance] = []
        object_cells: set[tuple[int, int]] = set()
        feasible = True
        for cat in params.categories:
            count = rng.randint(*params.instances_per_category_range)
            for _ in range(count):
                footprint = _place_object(cells, rooms, rng,
                                          rng.randint(*params.object_size_range),
                                          object_cells)
                if footprint is None:
                    feasible = False
                    break
                object_cells.update(footprint)
                cx = sum(cell_center(c, r, params.resolution)[0] for c, r in footprint) / len(footprint)
                cy = sum(cell_center(c, r, params.resolution)[1] for c, r in footprint) / len(footprint)
                objects.append(ObjectInstance(category=cat, cells=footprint, centroid=(cx, cy)))
            if not feasible:
                break
        if not feasible:
            continue
        return Scene(id=f"scene-{seed:08d}", seed=seed, resolution=params.resolution,
                     cells=cells, objects=tuple(objects))
    raise GenerationFailed(f"could not generate a valid scene for seed {seed}")


def sample_episode(scene: Scene, seed: int, kind: str, min_geodesic: float = 3.0,
                   categories: Optional[Iterable[str]] = None,
                   success_radius: float = 1.0, max_steps: int = 500) -> EpisodeSpec:
    """Sample a solvable episode; the start-to-goal geodesic distance is
    at least min_geodesic. kind is "objectnav" or "imagenav"."""
    from . import planning  # local import: planning depends on world types

    rng = random.Random(seed)
    free = scene.free_cells()
    if not free:
        raise SamplingFailed("scene has no free cells")

    def lattice_heading() -> float:
        return rng.randrange(12) * 30.0

    if kind == "objectnav":
        present = scene.categories()
        if categories is not None:
            allowed = set(categories)
            present = [c for c in present if c in allowed]
        if not present:
            raise SamplingFailed("no goal categories available in scene")
        category = present[rng.randrange(len(present))]
        task: Task = ObjectNavTask(category)
        dist = planning.goal_distance_field(scene, task)
        for _ in range(500):
            col, row = free[rng.randrange(len(free))]
            d = dist[row, col]
            if math.isfinite(d) and d >= min_geodesic:
                start = Pose(*cell_center(col, row, scene.resolution), lattice_heading())
                return EpisodeSpec(scene_id=scene.id, start=start, task=task,
                                   success_radius=success_radius, max_steps=max_steps)
        raise SamplingFailed(f"no start at least {min_geodesic} m from a {category}")

    if kind == "imagenav":
        for _ in range(100):
            gcol, grow = free[rng.randrange(len(free))]
            goal = Pose(*cell_center(gcol, grow, scene.resolution), lattice_heading())
            task = ImageNavTask(goal)
            dist = planning.goal_distance_field(scene, task)
            for _ in range(50):
                col, row = free[rng.randrange(len(free))]
                d = dist[row, col]
                if math.isfinite(d) and d >= min_geodesic:
                    start = Pose(*cell_center(col, row, scene.resolution), lattice_heading())
                    return EpisodeSpec(scene_id=scene.id, start=start, task=task,
                                       success_radius=success_radius, max_steps=max_steps)
        raise SamplingFailed(f"no start/goal pair at least {min_geodesic} m apart")

    raise ValueError(f"unknown episode kind {kind!r}")


# --- scene file format -------------------------------------------------

_RLE_RE = re.compile(r"(\d+)([FO])")


def _rle_encode(cells: np.ndarray) -> str:
    flat = cells.ravel()
    parts = []
    i = 0
    n = flat.size
    while i < n:
        j = i
        while j < n and flat[j] == flat[i]:
            j += 1
        parts.append(f"{j - i}{'F' if flat[i] == FLOOR else 'O'}")
        i = j
    return "".join(parts)


def _rle_decode(data: str, width: int, height: int) -> np.ndarray:
    out = np.empty(width * height, dtype=np.uint8)
    pos = 0
    for count, char in _RLE_RE.findall(data):
        count = int(count)
        out[pos:pos + count] = FLOOR if char == "F" else OBSTACLE
        pos += count
    if pos != width * height:
        raise ValueError(f"RLE data covers {pos} cells, expected {width * height}")
    return out.reshape(height, width)


def scene_to_json(scene: Scene) -> str:
    doc = {
        "id": scene.id,
        "seed": scene.seed,
        "resolution": scene.resolution,
        "width_cells": scene.width_cells,
        "height_cells": scene.height_cells,
        "cells": _rle_encode(scene.cells),
        "objects": [
            {"category": o.category, "cells": [[c, r] for c, r in sorted(o.cells)]}
            for o in scene.objects
        ],
    }
    return json.dumps(doc, indent=2)


def scene_from_json(text: str) -> Scene:
    doc = json.loads(text)
    cells = _rle_decode(doc["cells"], doc["width_cells"], doc["height_cells"])
    res = float(doc["resolution"])
    objects = []
    for entry in doc["objects"]:
        fp = frozenset((int(c), int(r)) for c, r in entry["cells"])
        cx = sum(cell_center(c, r, res)[0] for c, r in fp) / len(fp)
        cy = sum(cell_center(c, r, res)[1] for c, r in fp) / len(fp)
        objects.append(ObjectInstance(category=entry["category"], cells=fp, centroid=(cx, cy)))
    return Scene(id=doc["id"], seed=int(doc["seed"]), resolution=res,
                 cells=cells, objects=tuple(objects))


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        fh.write(scene_to_json(scene))
        fh.write("\n")


def load_scene(path) -> Scene:
    with open(path) as fh:
        return scene_from_json(fh.read())
