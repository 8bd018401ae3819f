"""
Vectorised voxel traversal.

Both the LiDAR simulator and the occupancy map walk rays through a regular
grid whose cell ``c`` covers ``[c·res, (c+1)·res)`` on every axis (the global
voxel frame).  Rays are marched together with a numpy DDA: every iteration
advances each active ray by one cell, and rays that are finished are
compacted out of the working arrays.
"""

from __future__ import annotations

import numpy as np


class _RayMarch:
    """Working arrays of a batch of rays sharing one origin."""

    def __init__(self, origin: np.ndarray, directions: np.ndarray, resolution: float) -> None:
        origin = np.asarray(origin, dtype=float)
        directions = np.asarray(directions, dtype=float).reshape(-1, 3)
        n = directions.shape[0]

        start = np.floor(origin / resolution).astype(np.int64)
        self.rows    = np.arange(n)
        self.cells   = np.tile(start, (n, 1))
        self.step    = np.sign(directions).astype(np.int64)
        self.t_enter = np.zeros(n)

        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(directions != 0.0, 1.0 / directions, np.inf)
            boundary = (self.cells + (self.step > 0)) * resolution
            t_max = np.where(directions != 0.0, (boundary - origin) * inv, np.inf)
        self.t_max   = np.maximum(t_max, 0.0)
        self.t_delta = np.where(directions != 0.0, resolution * np.abs(inv), np.inf)

    @property
    def size(self) -> int:
        return int(self.rows.shape[0])

    def next_exit(self) -> np.ndarray:
        """Distance at which each active ray leaves its current cell."""
        return self.t_max.min(axis=1)

    def keep(self, mask: np.ndarray) -> None:
        self.rows    = self.rows[mask]
        self.cells   = self.cells[mask]
        self.step    = self.step[mask]
        self.t_enter = self.t_enter[mask]
        self.t_max   = self.t_max[mask]
        self.t_delta = self.t_delta[mask]

    def advance(self) -> None:
        axis = np.argmin(self.t_max, axis=1)
        r = np.arange(self.size)
        self.t_enter = self.t_max[r, axis]
        self.cells[r, axis] += self.step[r, axis]
        self.t_max[r, axis] += self.t_delta[r, axis]


def walk_cells(
    origin: np.ndarray,
    directions: np.ndarray,
    lengths: np.ndarray,
    resolution: float,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Every cell touched by each ray from *origin* up to its length.

    Returns ``(ray_ids, cells)``; the origin cell and the cell containing
    the end point are included.
    """
    lengths = np.asarray(lengths, dtype=float).reshape(-1)
    march = _RayMarch(origin, directions, resolution)
    ids: list[np.ndarray] = []
    cells: list[np.ndarray] = []

    while march.size:
        ids.append(march.rows.copy())
        cells.append(march.cells.copy())
        march.keep(march.next_exit() < lengths[march.rows])
        if march.size:
            march.advance()

    if not ids:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 3), dtype=np.int64)
    return np.concatenate(ids), np.concatenate(cells)


def first_hit(
    occupancy: np.ndarray,
    offset: np.ndarray,
    origin: np.ndarray,
    directions: np.ndarray,
    max_range: float,
    resolution: float,
) -> tuple[np.ndarray, np.ndarray]:
    """
    March rays through a dense occupancy lattice until they hit rock.

    *offset* is the global index of ``occupancy[0, 0, 0]``.  The cell holding
    the origin is never reported as a hit.

    Returns ``(hit, distance)``.  For hits, *distance* is where the ray enters
    the occupied cell.  For the rest it is where the ray leaves the lattice,
    or *max_range*, whichever comes first.
    """
    directions = np.asarray(directions, dtype=float).reshape(-1, 3)
    n = directions.shape[0]
    shape = np.asarray(occupancy.shape)
    offset = np.asarray(offset, dtype=np.int64)

    hit = np.zeros(n, dtype=bool)
    distance = np.full(n, float(max_range))
    march = _RayMarch(origin, directions, resolution)

    while march.size:
        march.keep(march.next_exit() < max_range)
        if not march.size:
            break
        march.advance()

        local = march.cells - offset
        outside = np.any((local < 0) | (local >= shape), axis=1)
        distance[march.rows[outside]] = march.t_enter[outside]

        occupied = np.zeros(march.size, dtype=bool)
        inside = ~outside
        if inside.any():
            idx = local[inside]
            occupied[inside] = occupancy[idx[:, 0], idx[:, 1], idx[:, 2]]
        distance[march.rows[occupied]] = march.t_enter[occupied]
        hit[march.rows[occupied]] = True

        march.keep(inside & ~occupied)

    return hit, distance


# ── Cell keys ─────────────────────────────────────────────────────────────────

_BITS = 21
_BIAS = 1 << (_BITS - 1)
_MASK = (1 << _BITS) - 1


def pack_cells(cells: np.ndarray) -> np.ndarray:
    """Encode integer cell indices as sortable int64 keys."""
    c = np.asarray(cells, dtype=np.int64).reshape(-1, 3) + _BIAS
    return (c[:, 0] << (2 * _BITS)) | (c[:, 1] << _BITS) | c[:, 2]


def unpack_cells(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.empty((keys.shape[0], 3), dtype=np.int64)
    out[:, 0] = (keys >> (2 * _BITS)) & _MASK
    out[:, 1] = (keys >> _BITS) & _MASK
    out[:, 2] = keys & _MASK
    return out - _BIAS
