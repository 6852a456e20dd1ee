"""Agent belief: incremental occupancy mapping, frontier extraction and
tracking, and representative-view selection.

Belief cells are Unknown / Free / Obstacle. Obstacle marks are sticky and
cells never return to Unknown (static world).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .gridops import FREE, OBSTACLE, UNKNOWN, best_view_indices, integrate_rays
from .world import DepthScan, Pose, SensorConfig

_EIGHT_CONN = np.ones((3, 3), dtype=bool)

# (d_col, d_row) of the four frontier-adjacency directions; d_row is +y.
_CARDINALS = ((1, 0), (-1, 0), (0, 1), (0, -1))


class GridMismatch(Exception):
    pass


class NoHistory(Exception):
    pass


@dataclass(frozen=True)
class ViewRecord:
    frame_index: int
    pose: Pose


@dataclass(frozen=True)
class Frontier:
    id: int
    cells: frozenset[tuple[int, int]]  # (col, row), all Free and touching Unknown
    waypoint: tuple[float, float]      # world point on the frontier (medoid cell)
    normal: tuple[float, float]        # unit vector into Unknown space
    boundary_dir: tuple[float, float]  # unit vector along the boundary


class OccupancyGrid:
    """Mutable belief map; one per episode, single-writer."""

    __slots__ = ("resolution", "origin", "cells")

    def __init__(self, width_cells: int, height_cells: int, resolution: float,
                 origin: tuple[float, float] = (0.0, 0.0)):
        self.resolution = resolution
        self.origin = origin
        self.cells = np.full((height_cells, width_cells), UNKNOWN, dtype=np.uint8)

    @classmethod
    def for_scene(cls, scene) -> "OccupancyGrid":
        return cls(scene.width_cells, scene.height_cells, scene.resolution)

    @property
    def width_cells(self) -> int:
        return self.cells.shape[1]

    @property
    def height_cells(self) -> int:
        return self.cells.shape[0]

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor((x - self.origin[0]) / self.resolution)),
                int(math.floor((y - self.origin[1]) / self.resolution)))

    def cell_center(self, col: int, row: int) -> tuple[float, float]:
        return (self.origin[0] + (col + 0.5) * self.resolution,
                self.origin[1] + (row + 0.5) * self.resolution)

    def in_bounds(self, col: int, row: int) -> bool:
        return 0 <= col < self.width_cells and 0 <= row < self.height_cells

    def unknown_count(self) -> int:
        return int(np.count_nonzero(self.cells == UNKNOWN))

    def copy(self) -> "OccupancyGrid":
        dup = OccupancyGrid(self.width_cells, self.height_cells, self.resolution, self.origin)
        dup.cells[:] = self.cells
        return dup


def integrate_scan(grid: OccupancyGrid, scan: DepthScan) -> OccupancyGrid:
    """Fold one depth scan into the belief (in place).

    Ray-traversed cells become Free, hit endpoints become Obstacle, and the
    agent's own cell becomes Free. Obstacle marks are never overwritten."""
    if abs(scan.resolution - grid.resolution) > 1e-12:
        raise GridMismatch(f"scan resolution {scan.resolution} != grid {grid.resolution}")
    col, row = grid.cell_of(scan.pose.x, scan.pose.y)
    if not grid.in_bounds(col, row):
        raise GridMismatch(f"scan pose outside grid at cell ({col}, {row})")
    integrate_rays(grid.cells,
                   scan.pose.x - grid.origin[0], scan.pose.y - grid.origin[1],
                   np.radians(scan.angles_deg), scan.ranges, scan.hits,
                   grid.resolution)
    return grid


def frontier_cell_mask(cells: np.ndarray) -> np.ndarray:
    """Free cells 4-adjacent to at least one Unknown cell."""
    free = cells == FREE
    unknown = cells == UNKNOWN
    adj = np.zeros_like(free)
    adj[:-1, :] |= unknown[1:, :]
    adj[1:, :] |= unknown[:-1, :]
    adj[:, :-1] |= unknown[:, 1:]
    adj[:, 1:] |= unknown[:, :-1]
    return free & adj


def _principal_axis(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float] | None:
    """Dominant eigenvector of the 2x2 covariance, None when isotropic."""
    if xs.size < 2:
        return None
    mx = xs.mean()
    my = ys.mean()
    dx = xs - mx
    dy = ys - my
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    sxy = float(dx @ dy)
    disc = math.hypot(sxx - syy, 2.0 * sxy)
    if disc < 1e-12:
        return None
    lam = (sxx + syy + disc) / 2.0
    vx, vy = sxy, lam - sxx
    if math.hypot(vx, vy) < 1e-12:
        vx, vy = lam - syy, sxy
    norm = math.hypot(vx, vy)
    if norm < 1e-12:
        return None
    return vx / norm, vy / norm


def _canonical(v: tuple[float, float]) -> tuple[float, float]:
    if v[0] < 0.0 or (v[0] == 0.0 and v[1] < 0.0):
        return -v[0], -v[1]
    return v


def extract_frontiers(grid: OccupancyGrid, min_frontier_cells: int = 3) -> list[Frontier]:
    """Cluster frontier cells into 8-connected components.

    Components smaller than min_frontier_cells are dropped. Ids follow
    raster discovery order; use FrontierTracker for ids stable across
    timesteps."""
    cells = grid.cells
    unknown = cells == UNKNOWN
    mask = frontier_cell_mask(cells)
    labels, count = ndimage.label(mask, structure=_EIGHT_CONN)
    frontiers: list[Frontier] = []
    fid = 0
    for comp in range(1, count + 1):
        rows, cols = np.nonzero(labels == comp)
        if rows.size < min_frontier_cells:
            continue
        order = np.lexsort((cols, rows))
        rows = rows[order]
        cols = cols[order]

        # Majority vote of the directions pointing at adjacent Unknown cells.
        h, w = cells.shape
        counts = []
        for dc, dr in _CARDINALS:
            nr = rows + dr
            nc = cols + dc
            ok = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
            counts.append(int(np.count_nonzero(unknown[nr[ok], nc[ok]])))
        vote_x = float(counts[0] - counts[1])
        vote_y = float(counts[2] - counts[3])
        if math.hypot(vote_x, vote_y) < 1e-12:
            best = max(range(4), key=lambda i: (counts[i], -i))
            vote_x, vote_y = float(_CARDINALS[best][0]), float(_CARDINALS[best][1])

        axis = _principal_axis(cols.astype(np.float64), rows.astype(np.float64))
        if axis is None:
            norm = math.hypot(vote_x, vote_y)
            nx, ny = vote_x / norm, vote_y / norm
            bx, by = _canonical((-ny, nx))
        else:
            bx, by = _canonical(axis)
            nx, ny = -by, bx
            if nx * vote_x + ny * vote_y < 0.0:
                nx, ny = -nx, -ny

        cx = cols.mean()
        cy = rows.mean()
        medoid = int(np.argmin((cols - cx) ** 2 + (rows - cy) ** 2))
        waypoint = grid.cell_center(int(cols[medoid]), int(rows[medoid]))
        frontiers.append(Frontier(
            id=fid,
            cells=frozenset((int(c), int(r)) for c, r in zip(cols, rows)),
            waypoint=waypoint,
            normal=(nx, ny),
            boundary_dir=(bx, by),
        ))
        fid += 1
    return frontiers


class FrontierTracker:
    """Keeps frontier ids stable across steps via maximum cell overlap."""

    def __init__(self, min_frontier_cells: int = 3):
        self.min_frontier_cells = min_frontier_cells
        self._previous: list[Frontier] = []
        self._next_id = 0

    def update(self, grid: OccupancyGrid) -> list[Frontier]:
        components = extract_frontiers(grid, self.min_frontier_cells)
        pairs = []
        for ci, comp in enumerate(components):
            for prev in self._previous:
                overlap = len(comp.cells & prev.cells)
                if overlap > 0:
                    pairs.append((-overlap, prev.id, ci))
        pairs.sort()
        assigned: dict[int, int] = {}
        used_prev: set[int] = set()
        for neg_overlap, prev_id, ci in pairs:
            if ci in assigned or prev_id in used_prev:
                continue
            assigned[ci] = prev_id
            used_prev.add(prev_id)
        result = []
        for ci, comp in enumerate(components):
            if ci in assigned:
                fid = assigned[ci]
            else:
                fid = self._next_id
                self._next_id += 1
            result.append(Frontier(id=fid, cells=comp.cells, waypoint=comp.waypoint,
                                   normal=comp.normal, boundary_dir=comp.boundary_dir))
        self._next_id = max(self._next_id, max((f.id for f in result), default=-1) + 1)
        result.sort(key=lambda f: f.id)
        self._previous = result
        return result


def select_representative_view(frontier: Frontier, history: list[ViewRecord],
                               grid: OccupancyGrid,
                               cfg: SensorConfig = SensorConfig()) -> int:
    """Pick the history frame that best depicts the frontier.

    Candidates must see the waypoint (within fov and max_range, clear line
    of sight on the belief with Unknown treated as transparent); the score
    is the signed dot of the view direction with the into-unknown normal.
    If no frame passes the predicate, the best-scoring frame overall is
    returned. Ties keep the earliest frame."""
    if not history:
        raise NoHistory("cannot select a representative view from empty history")
    xs = np.array([v.pose.x - grid.origin[0] for v in history])
    ys = np.array([v.pose.y - grid.origin[1] for v in history])
    headings = np.radians([v.pose.heading for v in history])
    obstacle_mask = grid.cells == OBSTACLE
    wx = frontier.waypoint[0] - grid.origin[0]
    wy = frontier.waypoint[1] - grid.origin[1]
    best_vis, best_any = best_view_indices(
        obstacle_mask, xs, ys, headings, wx, wy,
        frontier.normal[0], frontier.normal[1],
        math.radians(cfg.fov), cfg.max_range, grid.resolution)
    idx = best_vis if best_vis >= 0 else best_any
    return history[idx].frame_index


# --- debug rendering ----------------------------------------------------

_FRONTIER_PALETTE = [
    (230, 60, 60), (60, 130, 230), (60, 200, 90), (240, 180, 40),
    (180, 80, 220), (40, 200, 200), (240, 120, 40), (140, 140, 70),
]


def render_ppm(grid: OccupancyGrid, frontiers: list[Frontier] = ()) -> str:
    """Plain (P3) PPM: Unknown gray, Free white, Obstacle black, frontier
    cells colored by id. Row 0 of the grid is the bottom image row."""
    h, w = grid.cells.shape
    rgb = np.zeros((h, w, 3), dtype=np.int16)
    rgb[grid.cells == UNKNOWN] = (128, 128, 128)
    rgb[grid.cells == FREE] = (255, 255, 255)
    rgb[grid.cells == OBSTACLE] = (0, 0, 0)
    for f in frontiers:
        color = _FRONTIER_PALETTE[f.id % len(_FRONTIER_PALETTE)]
        for col, row in f.cells:
            rgb[row, col] = color
    lines = [f"P3\n{w} {h}\n255"]
    for row in range(h - 1, -1, -1):
        lines.append(" ".join(f"{r} {g} {b}" for r, g, b in rgb[row]))
    return "\n".join(lines) + "\n"


def render_ascii(grid: OccupancyGrid, frontiers: list[Frontier] = ()) -> str:
    """ASCII rendering: '?' Unknown, '.' Free, '#' Obstacle, digits for
    frontier cells (id mod 10)."""
    h, w = grid.cells.shape
    chars = np.full((h, w), "?", dtype="<U1")
    chars[grid.cells == FREE] = "."
    chars[grid.cells == OBSTACLE] = "#"
    for f in frontiers:
        digit = str(f.id % 10)
        for col, row in f.cells:
            chars[row, col] = digit
    return "\n".join("".join(chars[row]) for row in range(h - 1, -1, -1)) + "\n"


def write_snapshot(grid: OccupancyGrid, frontiers: list[Frontier], path) -> None:
    with open(path, "w") as fh:
        fh.write(render_ppm(grid, frontiers))
