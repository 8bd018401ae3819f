"""
Probabilistic tri-state voxel map.

Each robot owns an :class:`OccupancyMap`: a two-level store (a dict of
8×8×8 float32 blocks keyed by block index) of clamped log-odds values, NaN
meaning "never observed".  A cell is occupied when its log-odds reaches
``occupied_threshold``, free when it is at or below ``free_threshold`` and
unknown otherwise.

Planning, frontier extraction and goal scoring work on a :class:`MapSnapshot`,
an immutable dense copy of the cell states taken at decision time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import EmptyReportError, FrameMismatchError
from .models import MappingParams, Scan
from .raycast import pack_cells, unpack_cells, walk_cells

logger = logging.getLogger(__name__)

BLOCK = 8

# Fraction of a voxel by which surface points are pushed along their ray, so a
# return measured exactly on a voxel face lands in the voxel it was measured on.
_FACE_NUDGE = 1e-6

_NEIGHBOURS_6 = np.array([
    [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
], dtype=np.int64)


class CellState(IntEnum):
    UNKNOWN  = 0
    FREE     = 1
    OCCUPIED = 2


Box = tuple[np.ndarray, np.ndarray]


def _by_block(cells: np.ndarray):
    """Yield ``(block key, row indices, in-block indices)`` per touched block."""
    if not cells.shape[0]:
        return
    blocks = cells // BLOCK
    local = cells - blocks * BLOCK
    keys, inverse = np.unique(blocks, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
    for j, key in enumerate(keys):
        rows = order[bounds[j]:bounds[j + 1]]
        yield tuple(int(v) for v in key), rows, local[rows]


# ── Scan pre-filter ───────────────────────────────────────────────────────────

def intensity_quantile(intensities: np.ndarray, percentile: float) -> float:
    """Order statistic ``sorted(i)[floor(p·n)]``."""
    ordered = np.sort(np.asarray(intensities, dtype=float))
    k = min(len(ordered) - 1, int(math.floor(percentile * len(ordered))))
    return float(ordered[k])


def filter_scan(scan: Scan, neighborhood: float, percentile: float) -> Scan:
    """
    Drop near-field low-intensity returns (dust, droplets).

    A return is removed iff its range is ``<= neighborhood`` and its intensity
    is strictly below the *percentile* quantile of this scan's intensities.
    """
    if len(scan) == 0:
        return scan
    cutoff = intensity_quantile(scan.intensities, percentile)
    drop = (scan.ranges <= neighborhood) & (scan.intensities < cutoff)
    if not drop.any():
        return scan
    logger.debug("filter_scan: dropped %d of %d returns (cutoff %.3f)",
                 int(drop.sum()), len(scan), cutoff)
    return scan.select(~drop)


# ── Occupancy map ─────────────────────────────────────────────────────────────

class OccupancyMap:
    """Sparse log-odds voxel map in the global voxel frame."""

    def __init__(self, params: Optional[MappingParams] = None) -> None:
        self.params = params or MappingParams()
        self.resolution = self.params.resolution
        self._blocks: dict[tuple[int, int, int], np.ndarray] = {}

    # ── Cell access ──────────────────────────────────────────────────────────

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.floor(pts / self.resolution).astype(np.int64)

    def center_of(self, cells: np.ndarray) -> np.ndarray:
        return (np.asarray(cells, dtype=float) + 0.5) * self.resolution

    def log_odds(self, cells: np.ndarray) -> np.ndarray:
        """Log-odds of each cell, NaN where never observed."""
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)
        out = np.full(cells.shape[0], np.nan, dtype=np.float32)
        for key, rows, local in _by_block(cells):
            arr = self._blocks.get(key)
            if arr is not None:
                out[rows] = arr[local[:, 0], local[:, 1], local[:, 2]]
        return out

    def classify(self, values: np.ndarray) -> np.ndarray:
        """Map log-odds values to :class:`CellState` codes (uint8)."""
        values = np.asarray(values)
        states = np.zeros(values.shape, dtype=np.uint8)
        with np.errstate(invalid="ignore"):
            states[values >= self.params.occupied_threshold] = CellState.OCCUPIED
            states[values <= self.params.free_threshold] = CellState.FREE
        return states

    def states(self, cells: np.ndarray) -> np.ndarray:
        return self.classify(self.log_odds(cells))

    def state_at(self, point: np.ndarray) -> CellState:
        return CellState(int(self.states(self.cell_of(point).reshape(1, 3))[0]))

    def update_cells(self, cells: np.ndarray, delta: float) -> None:
        """Add *delta* once to each (distinct) cell and clamp."""
        lo, hi = self.params.clamp_min, self.params.clamp_max
        for key, _, local in _by_block(np.asarray(cells, dtype=np.int64).reshape(-1, 3)):
            arr = self._blocks.get(key)
            if arr is None:
                arr = np.full((BLOCK, BLOCK, BLOCK), np.nan, dtype=np.float32)
                self._blocks[key] = arr
            idx = (local[:, 0], local[:, 1], local[:, 2])
            current = arr[idx]
            current = np.where(np.isnan(current), 0.0, current) + delta
            arr[idx] = np.clip(current, lo, hi)

    # ── Integration ──────────────────────────────────────────────────────────

    def integrate(self, scan: Scan) -> "OccupancyMap":
        """
        Fuse one scan: every end-point cell gets one hit, every other cell
        crossed by a return or a no-return ray gets one miss.
        """
        res = self.resolution
        hits = np.zeros((0, 3), dtype=np.int64)
        if len(scan):
            surface = scan.endpoints + scan.directions * (_FACE_NUDGE * res)
            hits = np.floor(surface / res).astype(np.int64)

        directions = np.concatenate([scan.directions, scan.miss_directions])
        lengths = np.concatenate([scan.ranges, scan.miss_ranges])
        _, crossed = walk_cells(scan.origin, directions, lengths, res)

        hit_keys = np.unique(pack_cells(hits))
        miss_keys = np.setdiff1d(np.unique(pack_cells(crossed)), hit_keys, assume_unique=True)

        self.update_cells(unpack_cells(miss_keys), self.params.miss)
        self.update_cells(unpack_cells(hit_keys), self.params.hit)
        return self

    # ── Queries ──────────────────────────────────────────────────────────────

    @property
    def block_count(self) -> int:
        return len(self._blocks)

    def _dense_values(self) -> tuple[np.ndarray, np.ndarray]:
        """(cells, log-odds) of every observed cell, lexicographic order."""
        if not self._blocks:
            return np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.float32)
        cells, values = [], []
        for key in sorted(self._blocks):
            arr = self._blocks[key]
            local = np.argwhere(~np.isnan(arr))
            cells.append(local + np.asarray(key, dtype=np.int64) * BLOCK)
            values.append(arr[local[:, 0], local[:, 1], local[:, 2]])
        c = np.concatenate(cells)
        v = np.concatenate(values)
        order = np.argsort(pack_cells(c), kind="stable")
        return c[order], v[order]

    def cells_in_state(self, state: CellState) -> np.ndarray:
        cells, values = self._dense_values()
        return cells[self.classify(values) == state]

    def counts(self) -> dict[CellState, int]:
        _, values = self._dense_values()
        states = self.classify(values)
        return {s: int(np.count_nonzero(states == s)) for s in (CellState.FREE, CellState.OCCUPIED)}

    def known_count(self) -> int:
        c = self.counts()
        return c[CellState.FREE] + c[CellState.OCCUPIED]

    @property
    def explored_volume(self) -> float:
        return self.known_count() * self.resolution ** 3

    def occupied_centers(self) -> np.ndarray:
        return self.center_of(self.cells_in_state(CellState.OCCUPIED))

    def blocks(self) -> dict[tuple[int, int, int], np.ndarray]:
        """Read-only view of the block store (for export)."""
        return {k: v.copy() for k, v in self._blocks.items()}

    def set_block(self, key: tuple[int, int, int], values: np.ndarray) -> None:
        arr = np.asarray(values, dtype=np.float32).reshape(BLOCK, BLOCK, BLOCK).copy()
        self._blocks[tuple(int(v) for v in key)] = arr

    def copy(self) -> "OccupancyMap":
        other = OccupancyMap(self.params)
        other._blocks = {k: v.copy() for k, v in self._blocks.items()}
        return other

    def snapshot(self, bounds: Optional[Box] = None) -> "MapSnapshot":
        """Dense immutable copy of the cell states (optionally clipped to *bounds*, m)."""
        if not self._blocks:
            return MapSnapshot(self.resolution, np.zeros(3, dtype=np.int64),
                               np.zeros((1, 1, 1), dtype=np.uint8))
        keys = np.array(list(self._blocks), dtype=np.int64)
        lo = keys.min(axis=0) * BLOCK
        hi = (keys.max(axis=0) + 1) * BLOCK
        if bounds is not None:
            lo = np.maximum(lo, np.floor(np.asarray(bounds[0]) / self.resolution).astype(np.int64))
            hi = np.minimum(hi, np.floor(np.asarray(bounds[1]) / self.resolution).astype(np.int64) + 1)
            hi = np.maximum(hi, lo + 1)
        states = np.zeros(tuple(hi - lo), dtype=np.uint8)
        for key, arr in self._blocks.items():
            b0 = np.asarray(key, dtype=np.int64) * BLOCK
            a = np.maximum(b0, lo)
            b = np.minimum(b0 + BLOCK, hi)
            if np.any(a >= b):
                continue
            src = arr[a[0] - b0[0]:b[0] - b0[0], a[1] - b0[1]:b[1] - b0[1], a[2] - b0[2]:b[2] - b0[2]]
            states[a[0] - lo[0]:b[0] - lo[0], a[1] - lo[1]:b[1] - lo[1], a[2] - lo[2]:b[2] - lo[2]] = \
                self.classify(src)
        return MapSnapshot(self.resolution, lo, states)


def integrate_scan(occupancy_map: OccupancyMap, scan: Scan) -> OccupancyMap:
    return occupancy_map.integrate(scan)


def union_maps(maps: list[OccupancyMap], params: Optional[MappingParams] = None) -> OccupancyMap:
    """
    Union of known cells; a cell occupied in any map is occupied, otherwise
    free if free anywhere.  Used for the merged-map artifact only.
    """
    params = params or (maps[0].params if maps else MappingParams())
    merged = OccupancyMap(params)
    occupied: list[np.ndarray] = []
    free: list[np.ndarray] = []
    for m in maps:
        occupied.append(pack_cells(m.cells_in_state(CellState.OCCUPIED)))
        free.append(pack_cells(m.cells_in_state(CellState.FREE)))
    occ_keys = np.unique(np.concatenate(occupied)) if occupied else np.zeros(0, np.int64)
    free_keys = np.setdiff1d(np.unique(np.concatenate(free)) if free else np.zeros(0, np.int64),
                             occ_keys, assume_unique=True)
    merged.update_cells(unpack_cells(free_keys), params.clamp_min)
    merged.update_cells(unpack_cells(occ_keys), params.clamp_max)
    return merged


# ── Snapshot ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class MapSnapshot:
    """Dense cell states over the box ``[origin, origin + shape)`` (cells)."""
    resolution: float
    origin: np.ndarray
    states: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.int64).reshape(3))
        self.states.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.states.shape)  # type: ignore[return-value]

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        return np.floor(np.asarray(points, dtype=float) / self.resolution).astype(np.int64)

    def center_of(self, cells: np.ndarray) -> np.ndarray:
        return (np.asarray(cells, dtype=float) + 0.5) * self.resolution

    def states_of(self, cells: np.ndarray) -> np.ndarray:
        """States of global cells; anything outside the snapshot is unknown."""
        cells = np.asarray(cells, dtype=np.int64)
        flat = cells.reshape(-1, 3) - self.origin
        inside = np.all((flat >= 0) & (flat < np.asarray(self.shape)), axis=1)
        out = np.zeros(flat.shape[0], dtype=np.uint8)
        f = flat[inside]
        out[inside] = self.states[f[:, 0], f[:, 1], f[:, 2]]
        return out.reshape(cells.shape[:-1])

    def state_at(self, point: np.ndarray) -> CellState:
        return CellState(int(self.states_of(self.cell_of(point))))

    def is_free(self, cells: np.ndarray) -> np.ndarray:
        return self.states_of(cells) == CellState.FREE

    def cells_in_state(self, state: CellState) -> np.ndarray:
        return np.argwhere(self.states == state) + self.origin

    def occupied_centers(self) -> np.ndarray:
        return self.center_of(self.cells_in_state(CellState.OCCUPIED))

    @cached_property
    def _integrals(self) -> tuple[np.ndarray, np.ndarray]:
        """Summed-volume tables of free and known cells, zero-padded in front."""
        def table(mask: np.ndarray) -> np.ndarray:
            t = np.zeros(tuple(s + 1 for s in mask.shape), dtype=np.int64)
            t[1:, 1:, 1:] = mask.astype(np.int64).cumsum(0).cumsum(1).cumsum(2)
            return t
        return table(self.states == CellState.FREE), table(self.states != CellState.UNKNOWN)

    def box_counts(self, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        (free, unknown, total) cell counts of the inclusive cell boxes
        ``[lo, hi]`` (vectorised over rows).
        """
        lo = np.atleast_2d(np.asarray(lo, dtype=np.int64))
        hi = np.atleast_2d(np.asarray(hi, dtype=np.int64))
        total = np.prod(np.maximum(hi - lo + 1, 0), axis=1)
        shape = np.asarray(self.shape)
        a = np.clip(lo - self.origin, 0, shape)
        b = np.clip(hi - self.origin + 1, 0, shape)
        b = np.maximum(a, b)
        free_t, known_t = self._integrals

        def box_sum(t: np.ndarray) -> np.ndarray:
            return (
                t[b[:, 0], b[:, 1], b[:, 2]]
                - t[a[:, 0], b[:, 1], b[:, 2]] - t[b[:, 0], a[:, 1], b[:, 2]] - t[b[:, 0], b[:, 1], a[:, 2]]
                + t[a[:, 0], a[:, 1], b[:, 2]] + t[a[:, 0], b[:, 1], a[:, 2]] + t[b[:, 0], a[:, 1], a[:, 2]]
                - t[a[:, 0], a[:, 1], a[:, 2]]
            )
        free = box_sum(free_t)
        known = box_sum(known_t)
        return free, total - known, total


def _as_snapshot(source: "OccupancyMap | MapSnapshot") -> MapSnapshot:
    return source.snapshot() if isinstance(source, OccupancyMap) else source


# ── Frontiers ─────────────────────────────────────────────────────────────────

def extract_frontiers(
    source: "OccupancyMap | MapSnapshot",
    bounds: Optional[Box] = None,
) -> np.ndarray:
    """
    Free cells with at least one unknown 6-neighbour, as an (n, 3) array of
    global cell indices in lexicographic order.  With *bounds* (m) only cells
    whose centre lies inside the box are kept.
    """
    snap = _as_snapshot(source)
    padded = np.pad(snap.states, 1, constant_values=CellState.UNKNOWN)
    unknown = padded == CellState.UNKNOWN
    near_unknown = np.zeros(snap.shape, dtype=bool)
    nx, ny, nz = snap.shape
    for dx, dy, dz in _NEIGHBOURS_6:
        near_unknown |= unknown[1 + dx:1 + dx + nx, 1 + dy:1 + dy + ny, 1 + dz:1 + dz + nz]
    cells = np.argwhere((snap.states == CellState.FREE) & near_unknown) + snap.origin

    if bounds is not None and len(cells):
        centres = snap.center_of(cells)
        inside = np.all((centres >= np.asarray(bounds[0])) & (centres <= np.asarray(bounds[1])), axis=1)
        cells = cells[inside]
    return cells


def cube_cells(center: np.ndarray, radius: float, resolution: float) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive cell box of the cells whose centres lie in the cube ``center ± radius``."""
    c = np.atleast_2d(np.asarray(center, dtype=float))
    lo = np.ceil((c - radius) / resolution - 0.5 - 1e-9).astype(np.int64)
    hi = np.floor((c + radius) / resolution - 0.5 + 1e-9).astype(np.int64)
    return lo, hi


def unknown_free_ratio(
    source: "OccupancyMap | MapSnapshot",
    center: np.ndarray,
    radius: float,
) -> float:
    """
    (# unknown)/(# free) over the axis-aligned cube of half-size *radius*;
    ``inf`` when the cube holds no free cell.
    """
    snap = _as_snapshot(source)
    return float(unknown_free_ratios(snap, np.asarray(center, dtype=float)[None, :], radius)[0])


def unknown_free_ratios(snap: MapSnapshot, centers: np.ndarray, radius: float) -> np.ndarray:
    lo, hi = cube_cells(centers, radius, snap.resolution)
    free, unknown, _ = snap.box_counts(lo, hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(free > 0, unknown / np.maximum(free, 1), np.inf)
    return ratio.astype(float)


# ── Accuracy ──────────────────────────────────────────────────────────────────

@dataclass
class AccuracyReport:
    mean: float
    std: float
    per_point_errors: np.ndarray

    @classmethod
    def from_errors(cls, errors: np.ndarray) -> "AccuracyReport":
        errors = np.asarray(errors, dtype=float)
        return cls(mean=float(errors.mean()), std=float(errors.std()), per_point_errors=errors)

    def histogram(self, bins: int = 10) -> list[tuple[float, float, int]]:
        top = max(float(self.per_point_errors.max()), 1e-9)
        counts, edges = np.histogram(self.per_point_errors, bins=bins, range=(0.0, top))
        return [(float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts)]


def points_accuracy(points: np.ndarray, world) -> AccuracyReport:
    """Point-to-point error of *points* against the world's rock voxel centres."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if not len(points):
        raise EmptyReportError("the map has no occupied cell to evaluate")
    in_rock = world.occupied_at(points) & world.in_extents(points)
    errors = np.empty(len(points))
    if in_rock.any():
        centres = world.cell_center(points[in_rock])
        errors[in_rock] = np.linalg.norm(points[in_rock] - centres, axis=1)
    if (~in_rock).any():
        errors[~in_rock] = world.rock_distance(points[~in_rock])
    return AccuracyReport.from_errors(errors)


def map_accuracy(occupancy_map: OccupancyMap, world) -> AccuracyReport:
    """For every occupied map voxel centre, the distance to the nearest rock voxel centre."""
    if not math.isclose(occupancy_map.resolution, world.resolution, rel_tol=1e-9):
        raise FrameMismatchError(
            f"map resolution {occupancy_map.resolution} m differs from world "
            f"resolution {world.resolution} m"
        )
    return points_accuracy(occupancy_map.occupied_centers(), world)
