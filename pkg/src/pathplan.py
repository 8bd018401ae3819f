"""
Grid path planning on a belief-map snapshot.

Unknown space is never traversed: a cell is traversable only when it is
free in the snapshot and at least ``d_min`` away from every occupied cell
centre.  Clearance comes from a KD-tree over occupied centres and is
evaluated lazily, only for cells the search actually touches.

Pipeline used by the mission engine::

    plan_path  →  postprocess_path  →  shortcut_path
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoPathError, StartInvalidError
from .mapping import Box, CellState, MapSnapshot
from .models import PlannerParams

logger = logging.getLogger(__name__)

_OFFSETS = np.array(
    [d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0)],
    dtype=np.int64,
)
_OFFSET_NORMS = np.linalg.norm(_OFFSETS, axis=1)


def _box_members() -> tuple[np.ndarray, np.ndarray]:
    """Cells of the box spanned by the origin and each offset, origin excluded."""
    members: list[tuple[int, int, int]] = []
    starts: list[int] = []
    for d in _OFFSETS:
        starts.append(len(members))
        ranges = [range(min(0, int(v)), max(0, int(v)) + 1) for v in d]
        members.extend(c for c in itertools.product(*ranges) if c != (0, 0, 0))
    return np.array(members, dtype=np.int64), np.array(starts, dtype=np.int64)


_BOX_MEMBERS, _BOX_STARTS = _box_members()


# ── Types ─────────────────────────────────────────────────────────────────────

@dataclass
class Path:
    """Waypoint polyline; consecutive duplicates are dropped on construction."""
    waypoints: np.ndarray
    clearance: float = math.inf

    def __post_init__(self) -> None:
        pts = np.asarray(self.waypoints, dtype=float).reshape(-1, 3)
        if len(pts) > 1:
            keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-12])
            pts = pts[keep]
        self.waypoints = pts

    def __len__(self) -> int:
        return int(self.waypoints.shape[0])

    @property
    def start(self) -> np.ndarray:
        return self.waypoints[0]

    @property
    def end(self) -> np.ndarray:
        return self.waypoints[-1]

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)

    @property
    def length(self) -> float:
        return float(self.lengths.sum())


class ObstacleIndex:
    """KD-tree over occupied voxel centres with exact nearest queries."""

    def __init__(self, points: np.ndarray, resolution: float = 0.2) -> None:
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        self.resolution = float(resolution)
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def distance(self, points: np.ndarray) -> np.ndarray | float:
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 3)
        if self._tree is None:
            d = np.full(flat.shape[0], np.inf)
        else:
            d, _ = self._tree.query(flat)
        return float(d[0]) if pts.ndim == 1 else d

    def nearest(self, point: np.ndarray) -> tuple[float, Optional[np.ndarray]]:
        if self._tree is None:
            return math.inf, None
        d, i = self._tree.query(np.asarray(point, dtype=float))
        return float(d), self.points[int(i)]

    def segment_clearance(self, a: np.ndarray, b: np.ndarray) -> float:
        """Minimum obstacle distance over half-voxel samples of segment *ab*."""
        return float(np.min(self.distance(_samples(a, b, self.resolution))))


def build_obstacle_index(snapshot: MapSnapshot, region: Optional[Box] = None) -> ObstacleIndex:
    """Index the occupied cell centres of *snapshot*, optionally only inside *region* (m)."""
    centres = snapshot.occupied_centers()
    if region is not None and len(centres):
        inside = np.all((centres >= np.asarray(region[0])) & (centres <= np.asarray(region[1])), axis=1)
        centres = centres[inside]
    return ObstacleIndex(centres, snapshot.resolution)


def _samples(a: np.ndarray, b: np.ndarray, resolution: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(1, math.ceil(float(np.linalg.norm(b - a)) / (0.5 * resolution)))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return a + (b - a) * t


def segment_in_free_space(snapshot: MapSnapshot, a: np.ndarray, b: np.ndarray) -> bool:
    """True iff every half-voxel sample of *ab* lies in a free cell of *snapshot*."""
    cells = snapshot.cell_of(_samples(a, b, snapshot.resolution))
    return bool(np.all(snapshot.states_of(cells) == CellState.FREE))


# ── Search ────────────────────────────────────────────────────────────────────

class _Traversability:
    """Lazily filled free-and-clear mask over the snapshot lattice."""

    def __init__(self, snapshot: MapSnapshot, index: ObstacleIndex, d_min: float) -> None:
        self.snapshot = snapshot
        self.index = index
        self.d_min = d_min
        self._shape = np.asarray(snapshot.shape)
        # -1 = not evaluated yet
        self._mask = np.full(snapshot.shape, -1, dtype=np.int8)

    def __call__(self, cells: np.ndarray) -> np.ndarray:
        local = cells - self.snapshot.origin
        inside = np.all((local >= 0) & (local < self._shape), axis=1)
        out = np.zeros(cells.shape[0], dtype=bool)
        if not inside.any():
            return out
        li = local[inside]
        idx = (li[:, 0], li[:, 1], li[:, 2])
        known = self._mask[idx]
        todo = known < 0
        if todo.any():
            t = li[todo]
            free = self.snapshot.states[t[:, 0], t[:, 1], t[:, 2]] == CellState.FREE
            clear = np.zeros(len(t), dtype=bool)
            if free.any():
                centres = self.snapshot.center_of(t[free] + self.snapshot.origin)
                clear[free] = np.asarray(self.index.distance(centres)) >= self.d_min
            known[todo] = clear.astype(np.int8)
            self._mask[t[:, 0], t[:, 1], t[:, 2]] = known[todo]
        out[inside] = known > 0
        return out


def _resolve_goal(
    trav: _Traversability,
    goal_cell: np.ndarray,
    tolerance: float,
    resolution: float,
) -> tuple[set[tuple[int, int, int]], float]:
    """Target cells and the heuristic slack their spread allows."""
    if trav(goal_cell[None, :])[0]:
        return {tuple(int(v) for v in goal_cell)}, 0.0
    rings = max(1, int(math.floor(tolerance / resolution + 1e-9)))
    for r in range(1, rings + 1):
        span = np.arange(-r, r + 1)
        cube = np.stack(np.meshgrid(span, span, span, indexing="ij"), axis=-1).reshape(-1, 3)
        ring = cube[np.abs(cube).max(axis=1) == r] + goal_cell
        ok = trav(ring)
        if ok.any():
            return {tuple(int(v) for v in c) for c in ring[ok]}, r * resolution * math.sqrt(3.0)
    raise NoPathError(
        f"no traversable cell within {tolerance} m of goal cell {goal_cell.tolist()}"
    )


def plan_path(
    snapshot: MapSnapshot,
    start: np.ndarray,
    goal: np.ndarray,
    d_min: float,
    params: Optional[PlannerParams] = None,
    index: Optional[ObstacleIndex] = None,
) -> Path:
    """
    Shortest 26-connected path from *start* to *goal* through traversable cells.

    A move from cell ``c`` to neighbour ``c'`` costs ``res·‖c' − c‖`` and is
    allowed when ``c'`` is traversable and every cell of the box spanned by
    ``c`` and ``c'`` is free.  The start cell only needs to be free.  When
    the goal cell itself is not traversable the search targets the closest
    ring of traversable cells around it, up to ``goal_tolerance``.

    The first waypoint is *start* itself, the rest are cell centres.
    """
    params = params or PlannerParams()
    index = index if index is not None else build_obstacle_index(snapshot)
    res = snapshot.resolution
    start = np.asarray(start, dtype=float).reshape(3)
    goal = np.asarray(goal, dtype=float).reshape(3)

    start_cell = snapshot.cell_of(start)
    if snapshot.states_of(start_cell) != CellState.FREE:
        raise StartInvalidError(
            f"start {start.tolist()} is not in free space "
            f"(cell state {CellState(int(snapshot.states_of(start_cell))).name.lower()})"
        )

    trav = _Traversability(snapshot, index, d_min)
    goal_cell = snapshot.cell_of(goal)
    targets, slack = _resolve_goal(trav, goal_cell, params.goal_tolerance, res)
    gx, gy, gz = (int(v) for v in goal_cell)

    def heuristic(c: tuple[int, int, int]) -> float:
        d = res * math.sqrt((c[0] - gx) ** 2 + (c[1] - gy) ** 2 + (c[2] - gz) ** 2)
        return max(0.0, d - slack)

    step_cost = (res * _OFFSET_NORMS).tolist()
    s = tuple(int(v) for v in start_cell)
    g_cost: dict[tuple[int, int, int], float] = {s: 0.0}
    parent: dict[tuple[int, int, int], tuple[int, int, int]] = {}
    closed: set[tuple[int, int, int]] = set()
    h0 = heuristic(s)
    heap: list[tuple[float, float, tuple[int, int, int]]] = [(h0, h0, s)]
    expansions = 0

    while heap:
        _, _, c = heapq.heappop(heap)
        if c in closed:
            continue
        if c in targets:
            return _reconstruct(c, parent, start, snapshot, index)
        closed.add(c)
        expansions += 1
        if expansions > params.max_expansions:
            raise NoPathError(
                f"search gave up after {params.max_expansions} expansions "
                f"towards {goal.tolist()}"
            )

        ca = np.array(c, dtype=np.int64)
        neighbours = ca + _OFFSETS
        ok = trav(neighbours)
        if not ok.any():
            continue
        box_free = snapshot.states_of(ca + _BOX_MEMBERS) == CellState.FREE
        ok &= np.logical_and.reduceat(box_free, _BOX_STARTS)

        base = g_cost[c]
        for k in np.flatnonzero(ok):
            n = (int(neighbours[k, 0]), int(neighbours[k, 1]), int(neighbours[k, 2]))
            if n in closed:
                continue
            ng = base + step_cost[k]
            if ng < g_cost.get(n, math.inf):
                g_cost[n] = ng
                parent[n] = c
                hn = heuristic(n)
                heapq.heappush(heap, (ng + hn, hn, n))

    raise NoPathError(f"goal {goal.tolist()} is not reachable from {start.tolist()}")


def _reconstruct(
    cell: tuple[int, int, int],
    parent: dict[tuple[int, int, int], tuple[int, int, int]],
    start: np.ndarray,
    snapshot: MapSnapshot,
    index: ObstacleIndex,
) -> Path:
    cells = [cell]
    while cells[-1] in parent:
        cells.append(parent[cells[-1]])
    cells.reverse()
    pts = snapshot.center_of(np.array(cells, dtype=np.int64))
    pts[0] = start
    path = Path(pts)
    path.clearance = float(np.min(index.distance(path.waypoints)))
    logger.debug("plan_path: %d cells, %.2f m, clearance %.2f m",
                 len(cells), path.length, path.clearance)
    return path


def path_cost(path: Path, resolution: float) -> float:
    """Grid cost of a planned path, measured between cell centres."""
    cells = np.floor(path.waypoints / resolution).astype(np.int64)
    return float(resolution * np.linalg.norm(np.diff(cells, axis=0), axis=1).sum())


# ── Post-processing ───────────────────────────────────────────────────────────

def postprocess_path(
    path: Path,
    index: ObstacleIndex,
    d_min: float,
    max_iters: int,
    snapshot: Optional[MapSnapshot] = None,
) -> Path:
    """
    Push waypoints closer than *d_min* to an obstacle away from it, half a
    voxel per iteration.  A move is kept only when it raises that waypoint's
    clearance and its two segments stay in free space (with *snapshot*) and
    no closer to obstacles than before.  The first waypoint never moves.
    """
    pts = path.waypoints.copy()
    if len(pts) < 2 or len(index) == 0:
        return Path(pts, clearance=float(np.min(index.distance(pts))) if len(pts) else math.inf)
    step = 0.5 * index.resolution

    def segments_ok(i: int, candidate: np.ndarray) -> bool:
        for j in (i - 1, i + 1):
            if j < 0 or j >= len(pts):
                continue
            if snapshot is not None and not segment_in_free_space(snapshot, pts[j], candidate):
                return False
            if index.segment_clearance(pts[j], candidate) < index.segment_clearance(pts[j], pts[i]):
                return False
        return True

    for _ in range(max_iters):
        moved = False
        for i in range(1, len(pts)):
            d, q = index.nearest(pts[i])
            if q is None or d >= d_min or d == 0.0:
                continue
            candidate = pts[i] + (pts[i] - q) / d * step
            if index.distance(candidate) <= d or not segments_ok(i, candidate):
                continue
            pts[i] = candidate
            moved = True
        if not moved:
            break

    out = Path(pts)
    out.clearance = float(np.min(index.distance(out.waypoints)))
    return out


def shortcut_path(
    path: Path,
    index: ObstacleIndex,
    d_min: float,
    snapshot: Optional[MapSnapshot] = None,
) -> Path:
    """
    Greedy line-of-sight shortcutting: from each kept waypoint, advance to the
    farthest following waypoint that stays visible with clearance *d_min*
    (and inside free cells when *snapshot* is given).
    """
    pts = path.waypoints
    if len(pts) <= 2:
        return Path(pts.copy(), clearance=path.clearance)

    def visible(a: np.ndarray, b: np.ndarray) -> bool:
        if index.segment_clearance(a, b) < d_min:
            return False
        return snapshot is None or segment_in_free_space(snapshot, a, b)

    keep = [0]
    i = 0
    while i < len(pts) - 1:
        j = i + 1
        while j + 1 < len(pts) and visible(pts[i], pts[j + 1]):
            j += 1
        keep.append(j)
        i = j

    out = Path(pts[keep])
    out.clearance = float(np.min(index.distance(out.waypoints))) if len(index) else math.inf
    return out
