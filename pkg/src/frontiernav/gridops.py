"""Low-level grid kernels: DDA ray traversal, Dijkstra planning, view scoring.

All kernels operate on row-major numpy arrays indexed ``[row, col]`` with
world coordinates ``x = col * resolution`` (cell spans ``[col*res, (col+1)*res)``).
They are jitted with numba for per-step use inside episode loops; with
``NUMBA_DISABLE_JIT=1`` they run as plain Python for debugging.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# Belief cell codes shared with the mapping module.
UNKNOWN = np.uint8(0)
FREE = np.uint8(1)
OBSTACLE = np.uint8(2)

SQRT2 = math.sqrt(2.0)


@njit(cache=True)
def raycast_rays(blocked, x0, y0, angles_rad, max_range, res):
    """March each ray through the grid, returning (ranges, hits).

    A ray's range is the distance at which it first enters a blocked cell,
    clamped to max_range; hit is False when no blocked cell is entered
    within max_range (including rays that leave the grid).
    """
    h, w = blocked.shape
    n = angles_rad.size
    ranges = np.empty(n, np.float64)
    hits = np.zeros(n, np.bool_)
    for i in range(n):
        dx = math.cos(angles_rad[i])
        dy = math.sin(angles_rad[i])
        col = int(math.floor(x0 / res))
        row = int(math.floor(y0 / res))
        step_c = 1 if dx > 0.0 else (-1 if dx < 0.0 else 0)
        step_r = 1 if dy > 0.0 else (-1 if dy < 0.0 else 0)
        if dx > 0.0:
            t_max_x = ((col + 1) * res - x0) / dx
        elif dx < 0.0:
            t_max_x = (col * res - x0) / dx
        else:
            t_max_x = np.inf
        if dy > 0.0:
            t_max_y = ((row + 1) * res - y0) / dy
        elif dy < 0.0:
            t_max_y = (row * res - y0) / dy
        else:
            t_max_y = np.inf
        t_delta_x = res / abs(dx) if dx != 0.0 else np.inf
        t_delta_y = res / abs(dy) if dy != 0.0 else np.inf

        rng = max_range
        hit = False
        t = 0.0
        while True:
            if col < 0 or col >= w or row < 0 or row >= h:
                break
            if blocked[row, col] and t > 0.0:
                if t <= max_range:
                    rng = t
                    hit = True
                break
            if t > max_range:
                break
            if t_max_x < t_max_y:
                t = t_max_x
                t_max_x += t_delta_x
                col += step_c
            else:
                t = t_max_y
                t_max_y += t_delta_y
                row += step_r
        ranges[i] = rng
        hits[i] = hit
    return ranges, hits


@njit(cache=True)
def integrate_rays(cells, x0, y0, angles_rad, ranges, hits, res):
    """Mark cells traversed by each ray Free and hit endpoints Obstacle.

    Free marks never overwrite Obstacle; the start cell is marked Free.
    """
    h, w = cells.shape
    scol = int(math.floor(x0 / res))
    srow = int(math.floor(y0 / res))
    if 0 <= scol < w and 0 <= srow < h and cells[srow, scol] != OBSTACLE:
        cells[srow, scol] = FREE
    for i in range(angles_rad.size):
        dx = math.cos(angles_rad[i])
        dy = math.sin(angles_rad[i])
        r = ranges[i]
        col = scol
        row = srow
        step_c = 1 if dx > 0.0 else (-1 if dx < 0.0 else 0)
        step_r = 1 if dy > 0.0 else (-1 if dy < 0.0 else 0)
        if dx > 0.0:
            t_max_x = ((col + 1) * res - x0) / dx
        elif dx < 0.0:
            t_max_x = (col * res - x0) / dx
        else:
            t_max_x = np.inf
        if dy > 0.0:
            t_max_y = ((row + 1) * res - y0) / dy
        elif dy < 0.0:
            t_max_y = (row * res - y0) / dy
        else:
            t_max_y = np.inf
        t_delta_x = res / abs(dx) if dx != 0.0 else np.inf
        t_delta_y = res / abs(dy) if dy != 0.0 else np.inf

        t = 0.0
        while t < r:
            if 0 <= col < w and 0 <= row < h:
                if cells[row, col] != OBSTACLE:
                    cells[row, col] = FREE
            else:
                break
            if t_max_x < t_max_y:
                t = t_max_x
                t_max_x += t_delta_x
                col += step_c
            else:
                t = t_max_y
                t_max_y += t_delta_y
                row += step_r
        if hits[i]:
            # Endpoint cell: nudge past the boundary so the hit cell is
            # identified even for ranges lying exactly on a cell face.
            eps = res * 1e-7
            ex = x0 + (r + eps) * dx
            ey = y0 + (r + eps) * dy
            ecol = int(math.floor(ex / res))
            erow = int(math.floor(ey / res))
            if 0 <= ecol < w and 0 <= erow < h:
                cells[erow, ecol] = OBSTACLE


@njit(cache=True)
def first_blocked_on_segment(blocked, x0, y0, x1, y1, res):
    """First blocked cell entered walking from (x0,y0) to (x1,y1).

    The walk stops once the cell containing the endpoint is processed.
    Returns (col, row) of the first blocked cell, or (-1, -1) if the
    segment is clear. The start cell is not tested.
    """
    h, w = blocked.shape
    tcol = int(math.floor(x1 / res))
    trow = int(math.floor(y1 / res))
    seg = math.hypot(x1 - x0, y1 - y0)
    if seg == 0.0:
        return -1, -1
    dx = (x1 - x0) / seg
    dy = (y1 - y0) / seg
    col = int(math.floor(x0 / res))
    row = int(math.floor(y0 / res))
    step_c = 1 if dx > 0.0 else (-1 if dx < 0.0 else 0)
    step_r = 1 if dy > 0.0 else (-1 if dy < 0.0 else 0)
    if dx > 0.0:
        t_max_x = ((col + 1) * res - x0) / dx
    elif dx < 0.0:
        t_max_x = (col * res - x0) / dx
    else:
        t_max_x = np.inf
    if dy > 0.0:
        t_max_y = ((row + 1) * res - y0) / dy
    elif dy < 0.0:
        t_max_y = (row * res - y0) / dy
    else:
        t_max_y = np.inf
    t_delta_x = res / abs(dx) if dx != 0.0 else np.inf
    t_delta_y = res / abs(dy) if dy != 0.0 else np.inf

    t = 0.0
    first = True
    while True:
        if col < 0 or col >= w or row < 0 or row >= h:
            return -1, -1
        if not first and blocked[row, col]:
            return col, row
        if col == tcol and row == trow:
            return -1, -1
        if t > seg:
            return -1, -1
        first = False
        if t_max_x < t_max_y:
            t = t_max_x
            t_max_x += t_delta_x
            col += step_c
        else:
            t = t_max_y
            t_max_y += t_delta_y
            row += step_r


@njit(cache=True)
def dijkstra_grid(blocked, src_rows, src_cols, res, target_mask, early_exit):
    """8-connected Dijkstra over a blocked mask.

    Step costs are res (cardinal) and res*sqrt(2) (diagonal); a diagonal
    step requires both adjacent cardinal cells to be traversable. With
    early_exit the search stops when any target_mask cell is settled.

    Returns (dist field [m], parent flat-index field, reached flat index
    or -1).
    """
    h, w = blocked.shape
    n = h * w
    dist = np.full(n, np.inf, np.float64)
    parent = np.full(n, -1, np.int64)
    cap = n * 8 + 8
    heap_d = np.empty(cap, np.float64)
    heap_n = np.empty(cap, np.int64)
    size = 0

    for k in range(src_rows.size):
        node = src_rows[k] * w + src_cols[k]
        if blocked[src_rows[k], src_cols[k]]:
            continue
        if dist[node] == 0.0:
            continue
        dist[node] = 0.0
        # heap push
        i = size
        heap_d[i] = 0.0
        heap_n[i] = node
        size += 1
        while i > 0:
            p = (i - 1) >> 1
            if heap_d[p] <= heap_d[i]:
                break
            heap_d[p], heap_d[i] = heap_d[i], heap_d[p]
            heap_n[p], heap_n[i] = heap_n[i], heap_n[p]
            i = p

    diag = res * SQRT2
    reached = -1
    while size > 0:
        d = heap_d[0]
        node = heap_n[0]
        size -= 1
        heap_d[0] = heap_d[size]
        heap_n[0] = heap_n[size]
        i = 0
        while True:
            l = 2 * i + 1
            r_ = 2 * i + 2
            m = i
            if l < size and heap_d[l] < heap_d[m]:
                m = l
            if r_ < size and heap_d[r_] < heap_d[m]:
                m = r_
            if m == i:
                break
            heap_d[m], heap_d[i] = heap_d[i], heap_d[m]
            heap_n[m], heap_n[i] = heap_n[i], heap_n[m]
            i = m
        if d > dist[node]:
            continue
        row = node // w
        col = node % w
        if early_exit and target_mask[row, col]:
            reached = node
            break
        for dr in range(-1, 2):
            for dc in range(-1, 2):
                if dr == 0 and dc == 0:
                    continue
                nr = row + dr
                nc = col + dc
                if nr < 0 or nr >= h or nc < 0 or nc >= w:
                    continue
                if blocked[nr, nc]:
                    continue
                if dr != 0 and dc != 0:
                    # no corner cutting
                    if blocked[row + dr, col] or blocked[row, col + dc]:
                        continue
                    nd = d + diag
                else:
                    nd = d + res
                nnode = nr * w + nc
                if nd < dist[nnode]:
                    dist[nnode] = nd
                    parent[nnode] = node
                    i = size
                    heap_d[i] = nd
                    heap_n[i] = nnode
                    size += 1
                    while i > 0:
                        p = (i - 1) >> 1
                        if heap_d[p] <= heap_d[i]:
                            break
                        heap_d[p], heap_d[i] = heap_d[i], heap_d[p]
                        heap_n[p], heap_n[i] = heap_n[i], heap_n[p]
                        i = p
    return dist.reshape(h, w), parent, reached


@njit(cache=True)
def best_view_indices(obstacle_mask, xs, ys, headings_rad, wx, wy, nx, ny,
                      fov_rad, max_range, res):
    """Score history poses as views of a frontier waypoint.

    Score is the signed dot of the view direction with the into-unknown
    normal. Returns (best index passing the visibility predicate or -1,
    best index overall). Ties keep the earliest index.
    """
    best_vis = -1
    best_vis_score = -2.0
    best_any = -1
    best_any_score = -2.0
    half_fov = fov_rad / 2.0
    for i in range(xs.size):
        vx = math.cos(headings_rad[i])
        vy = math.sin(headings_rad[i])
        score = vx * nx + vy * ny
        if score > best_any_score:
            best_any = i
            best_any_score = score
        dxw = wx - xs[i]
        dyw = wy - ys[i]
        d = math.hypot(dxw, dyw)
        if d > max_range:
            continue
        if d > 0.0:
            bearing = math.atan2(dyw, dxw) - headings_rad[i]
            bearing = (bearing + math.pi) % (2.0 * math.pi) - math.pi
            if abs(bearing) > half_fov:
                continue
        bcol, brow = first_blocked_on_segment(obstacle_mask, xs[i], ys[i], wx, wy, res)
        if bcol >= 0:
            continue
        if score > best_vis_score:
            best_vis = i
            best_vis_score = score
    return best_vis, best_any
