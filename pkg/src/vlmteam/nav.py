"""Grid path planning for the navigation variant.

Obstacles are no-enter boxes.  The map is split into square cells; a cell is
blocked when it overlaps any (optionally inflated) obstacle.  Paths come from
8-connected A* with an octile heuristic and no corner cutting.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NoPath, ParseError, StartOrGoalBlocked, Unreachable, ValidationError
from .scene import BoundingBox, PixelCoord, RasterImage

SQRT2 = math.sqrt(2.0)
NEIGHBORS = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
OBSTACLE_COLOR = (90, 40, 40)
PATH_COLOR = (0, 90, 255)
FREE_COLOR = (235, 235, 235)


@dataclass
class NavMap:
    width: int
    height: int
    obstacles: list[BoundingBox] = field(default_factory=list)
    cell: int = 8
    inflation: int = 0  # half the robot footprint, in pixels
    start: PixelCoord | None = None
    targets: dict[str, BoundingBox] = field(default_factory=dict)

    def __post_init__(self):
        if self.cell < 1:
            raise ValidationError("cell must be >= 1")
        for ob in self.obstacles:
            if ob.x0 < 0 or ob.y0 < 0 or ob.x1 >= self.width or ob.y1 >= self.height:
                raise ValidationError(f"obstacle {ob.as_list()} outside the {self.width}x{self.height} map")
        self._grid = None

    @property
    def cols(self) -> int:
        return -(-self.width // self.cell)

    @property
    def rows(self) -> int:
        return -(-self.height // self.cell)

    def inflated(self) -> list[BoundingBox]:
        r = self.inflation
        return [BoundingBox(o.x0 - r, o.y0 - r, o.x1 + r, o.y1 + r) for o in self.obstacles]

    @property
    def blocked(self) -> np.ndarray:
        """``(rows, cols)`` boolean grid of cells overlapping an obstacle."""
        if self._grid is None:
            grid = np.zeros((self.rows, self.cols), dtype=bool)
            c = self.cell
            for ob in self.inflated():
                i0, i1 = max(ob.x0 // c, 0), min(ob.x1 // c, self.cols - 1)
                j0, j1 = max(ob.y0 // c, 0), min(ob.y1 // c, self.rows - 1)
                if i0 <= i1 and j0 <= j1:
                    grid[j0 : j1 + 1, i0 : i1 + 1] = True
            self._grid = grid
        return self._grid

    def cell_of(self, p) -> tuple[int, int]:
        return int(p[0]) // self.cell, int(p[1]) // self.cell

    def cell_center(self, cx: int, cy: int) -> PixelCoord:
        x = min(cx * self.cell + self.cell // 2, self.width - 1)
        y = min(cy * self.cell + self.cell // 2, self.height - 1)
        return PixelCoord(x, y)

    def in_obstacle(self, p) -> bool:
        return any(ob.contains(p) for ob in self.inflated())

    def free(self, p) -> bool:
        x, y = int(p[0]), int(p[1])
        if not (0 <= x < self.width and 0 <= y < self.height):
            return False
        cx, cy = self.cell_of((x, y))
        return not self.in_obstacle((x, y)) and not self.blocked[cy, cx]


@dataclass
class NavPath:
    waypoints: list[PixelCoord]
    cells: list[tuple[int, int]]
    cost: float  # in cell units

    @property
    def length_px(self) -> float:
        return float(sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(self.waypoints, self.waypoints[1:])))

    def to_dict(self) -> dict:
        return {
            "waypoints": [[int(p[0]), int(p[1])] for p in self.waypoints],
            "cells": [list(c) for c in self.cells],
            "cost": self.cost,
        }


def octile(a, b) -> float:
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(dx, dy) + (SQRT2 - 1) * min(dx, dy)


def grid_neighbors(blocked: np.ndarray, x: int, y: int):
    """8-neighbours of cell ``(x, y)``; diagonals need both side cells free."""
    rows, cols = blocked.shape
    for dx, dy in NEIGHBORS:
        nx, ny = x + dx, y + dy
        if not (0 <= nx < cols and 0 <= ny < rows) or blocked[ny, nx]:
            continue
        if dx and dy and (blocked[y, nx] or blocked[ny, x]):
            continue
        yield nx, ny, (SQRT2 if dx and dy else 1.0)


def astar(blocked: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> tuple[list[tuple[int, int]], float]:
    h0 = octile(start, goal)
    open_heap = [(h0, h0, start[0], start[1])]
    g = {start: 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    closed: set[tuple[int, int]] = set()
    while open_heap:
        _, _, x, y = heapq.heappop(open_heap)
        node = (x, y)
        if node in closed:
            continue
        if node == goal:
            path = [node]
            while path[-1] in parent:
                path.append(parent[path[-1]])
            return path[::-1], g[node]
        closed.add(node)
        for nx, ny, step in grid_neighbors(blocked, x, y):
            nxt = (nx, ny)
            cand = g[node] + step
            if nxt in closed or cand >= g.get(nxt, math.inf) - 1e-12:
                continue
            g[nxt] = cand
            parent[nxt] = node
            h = octile(nxt, goal)
            heapq.heappush(open_heap, (cand + h, h, nx, ny))
    raise NoPath(f"no path from cell {start} to cell {goal}")


def plan_path(nav: NavMap, start, goal) -> NavPath:
    for name, p in (("start", start), ("goal", goal)):
        if not nav.free(p):
            raise StartOrGoalBlocked(f"{name} {tuple(p)} is blocked or off the map")
    s, t = nav.cell_of(start), nav.cell_of(goal)
    cells, cost = astar(nav.blocked, s, t)
    pts = [nav.cell_center(*c) for c in cells]
    pts[0] = PixelCoord(int(start[0]), int(start[1]))
    if len(pts) > 1:
        pts[-1] = PixelCoord(int(goal[0]), int(goal[1]))
    else:
        pts.append(PixelCoord(int(goal[0]), int(goal[1])))
        cells.append(t)
    return NavPath(pts, cells, cost)


def face_candidates(box: BoundingBox, clearance: int) -> list[tuple[str, PixelCoord]]:
    cx, cy = (box.x0 + box.x1) // 2, (box.y0 + box.y1) // 2
    return [
        ("left", PixelCoord(box.x0 - clearance, cy)),
        ("right", PixelCoord(box.x1 + clearance, cy)),
        ("top", PixelCoord(cx, box.y0 - clearance)),
        ("bottom", PixelCoord(cx, box.y1 + clearance)),
    ]


def approach_point(target_box: BoundingBox, robot, nav: NavMap, clearance: int = 16) -> PixelCoord:
    """Reachable stand-off point next to ``target_box`` with the shortest path from ``robot``."""
    if clearance < 1:
        raise ValueError("clearance must be >= 1 so the point stays outside the box")
    best = None
    for i, (_, p) in enumerate(face_candidates(target_box, clearance)):
        if target_box.contains(p) or not nav.free(p):
            continue
        try:
            path = plan_path(nav, robot, p)
        except (NoPath, StartOrGoalBlocked):
            continue
        key = (path.cost, i)
        if best is None or key < best[0]:
            best = (key, p)
    if best is None:
        raise Unreachable(f"no reachable approach point around {target_box.as_list()}")
    return best[1]


def map_from_dict(data: dict) -> NavMap:
    try:
        start = data.get("start")
        return NavMap(
            width=int(data["width"]),
            height=int(data["height"]),
            obstacles=[BoundingBox.from_list(o) for o in data.get("obstacles", [])],
            cell=int(data.get("cell", 8)),
            inflation=int(data.get("inflation", 0)),
            start=PixelCoord(int(start[0]), int(start[1])) if start is not None else None,
            targets={k: BoundingBox.from_list(v) for k, v in data.get("targets", {}).items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed map: {exc!r}") from exc


def load_map(path) -> NavMap:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return map_from_dict(data)


def render_path(nav: NavMap, path=None, extra_points=()) -> RasterImage:
    """Map overlay; ``path`` is one NavPath, a list of them, or None."""
    px = np.empty((nav.height, nav.width, 3), dtype=np.uint8)
    px[:] = FREE_COLOR
    for ob in nav.obstacles:
        px[ob.y0 : ob.y1 + 1, ob.x0 : ob.x1 + 1] = OBSTACLE_COLOR
    paths = [path] if isinstance(path, NavPath) else list(path or [])
    segments = [(a, b) for p in paths for a, b in zip(p.waypoints, p.waypoints[1:])]
    for a, b in segments:
        n = max(abs(b[0] - a[0]), abs(b[1] - a[1]), 1)
        for t in np.linspace(0.0, 1.0, n + 1):
            x = int(round(a[0] + t * (b[0] - a[0])))
            y = int(round(a[1] + t * (b[1] - a[1])))
            px[max(y - 1, 0) : y + 2, max(x - 1, 0) : x + 2] = PATH_COLOR
    for p in extra_points:
        x, y = int(p[0]), int(p[1])
        px[max(y - 3, 0) : y + 4, max(x - 3, 0) : x + 4] = (255, 0, 0)
    return RasterImage(px)
