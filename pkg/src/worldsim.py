"""
Ground-truth cave world: generation, LiDAR simulation and collision queries.

Voxel frame
-----------
Voxel ``c`` (integer triple) covers ``[c·res, (c+1)·res)`` on every axis.  A
world stores a dense boolean lattice (``True`` = rock) together with the
global index of its first voxel, so world voxels and belief-map cells share
one frame.  Everything outside the lattice counts as rock for collision
queries; a sensor ray that leaves the lattice simply produces no return.

Generation
----------
``generate_cave`` grows a random-walk tunnel skeleton.  The first tunnel
starts at the base station; every further tunnel branches off an interior
node of an earlier one, which guarantees junctions, and tunnel ends are
dead ends.  Some tunnels turn into vertical shafts for a stretch and a few
skeleton nodes are blown up into domes.  The skeleton is carved with a
Euclidean distance transform and free space not 26-connected to the base
station is filled back in.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DomainError, GenerationError, WorldFormatError
from .models import CaveParams, Scan, SensorModel
from .raycast import first_hit

logger = logging.getLogger(__name__)

# Intensity bands of simulated returns
SURFACE_INTENSITY_MIN = 0.05
DUST_INTENSITY_MAX    = 0.04
_MIN_RANGE            = 1e-3

_MAX_GENERATED_VOXELS = 200_000_000
_CONNECTIVITY_26      = np.ones((3, 3, 3), dtype=bool)


# ── World ─────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class GroundTruthWorld:
    """
    Immutable dense voxel world.

    Attributes
    ----------
    resolution    : Voxel edge length (m)
    origin_index  : Global voxel index of ``occupancy[0, 0, 0]``
    occupancy     : Boolean lattice, ``True`` = rock
    base_station  : Base station position (m)
    spawn_points  : (k, 3) robot launch positions (m)
    """
    resolution: float
    origin_index: tuple[int, int, int]
    occupancy: np.ndarray
    base_station: np.ndarray
    spawn_points: np.ndarray

    def __post_init__(self) -> None:
        if not (isinstance(self.resolution, (int, float)) and math.isfinite(self.resolution)
                and self.resolution > 0):
            raise WorldFormatError("resolution", f"must be > 0, got {self.resolution!r}")
        occ = np.array(self.occupancy, dtype=bool, copy=True)
        if occ.ndim != 3 or 0 in occ.shape:
            raise WorldFormatError("shape", f"expected a non-empty 3-D lattice, got {occ.shape}")
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "origin_index", tuple(int(v) for v in self.origin_index))

        base = np.asarray(self.base_station, dtype=float).reshape(3)
        spawns = np.asarray(self.spawn_points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "base_station", base)
        object.__setattr__(self, "spawn_points", spawns)

        if occ.all():
            raise WorldFormatError("occupancy", "the lattice has no free voxel")
        if not self.is_free(base):
            raise WorldFormatError("base_station", "does not lie in a free voxel")
        if spawns.shape[0] == 0:
            raise WorldFormatError("spawn_points", "at least one spawn point is required")
        for i, p in enumerate(spawns):
            if not self.is_free(p):
                raise WorldFormatError(f"spawn_points[{i}]", "does not lie in a free voxel")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroundTruthWorld):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.origin_index == other.origin_index
            and np.array_equal(self.occupancy, other.occupancy)
            and np.array_equal(self.base_station, other.base_station)
            and np.array_equal(self.spawn_points, other.spawn_points)
        )

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def from_occupancy(
        cls,
        occupancy: np.ndarray,
        resolution: float,
        origin_index: tuple[int, int, int] = (0, 0, 0),
        base_station: Optional[np.ndarray] = None,
        spawn_points: Optional[np.ndarray] = None,
    ) -> "GroundTruthWorld":
        """
        World from a bare lattice.  Without a base station the centre of the
        first free voxel (C order) is used; spawn points default to the base.
        """
        occ = np.asarray(occupancy, dtype=bool)
        if base_station is None:
            free = np.argwhere(~occ)
            if not len(free):
                raise WorldFormatError("occupancy", "the lattice has no free voxel")
            base_station = (free[0] + np.asarray(origin_index) + 0.5) * resolution
        base = np.asarray(base_station, dtype=float).reshape(3)
        spawns = base[None, :] if spawn_points is None else spawn_points
        return cls(resolution, origin_index, occ, base, spawns)

    # ── Geometry ─────────────────────────────────────────────────────────────

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.occupancy.shape)  # type: ignore[return-value]

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.origin_index, dtype=float) * self.resolution

    @property
    def extents(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.origin
        return lo, lo + np.asarray(self.shape, dtype=float) * self.resolution

    @property
    def free_count(self) -> int:
        return int(self.occupancy.size - np.count_nonzero(self.occupancy))

    @property
    def free_volume(self) -> float:
        return self.free_count * self.resolution ** 3

    def local_index(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.floor(pts / self.resolution).astype(np.int64) - np.asarray(self.origin_index)

    def in_extents(self, points: np.ndarray) -> np.ndarray | bool:
        pts = np.asarray(points, dtype=float)
        idx = self.local_index(pts)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.shape)), axis=1)
        return bool(inside[0]) if pts.ndim == 1 else inside

    def occupied_at(self, points: np.ndarray) -> np.ndarray:
        """Vectorised rock lookup; positions outside the lattice are rock."""
        idx = self.local_index(points)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.shape)), axis=1)
        out = np.ones(idx.shape[0], dtype=bool)
        i = idx[inside]
        out[inside] = self.occupancy[i[:, 0], i[:, 1], i[:, 2]]
        return out

    def is_free(self, point: np.ndarray) -> bool:
        return not bool(self.occupied_at(point)[0])

    def local_centers(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3) + np.asarray(self.origin_index)
        return (idx + 0.5) * self.resolution

    def cell_center(self, point: np.ndarray) -> np.ndarray:
        p = np.asarray(point, dtype=float)
        return (np.floor(p / self.resolution) + 0.5) * self.resolution

    # ── Distance queries ─────────────────────────────────────────────────────

    @cached_property
    def surface_centers(self) -> np.ndarray:
        """Centres of rock voxels with at least one free 6-neighbour."""
        interior = ndimage.binary_erosion(self.occupancy, border_value=1)
        surface = self.occupancy & ~interior
        return self.local_centers(np.argwhere(surface))

    @cached_property
    def _surface_tree(self) -> Optional[cKDTree]:
        pts = self.surface_centers
        return cKDTree(pts) if len(pts) else None

    def rock_distance(self, points: np.ndarray) -> np.ndarray:
        """
        Distance to the nearest rock-voxel centre, the rock beyond the
        lattice faces included.

        Exact for points outside rock: the closest rock voxel seen from free
        space is always a surface voxel or lies just past a face.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        d = self._bounds_distance(pts)
        if self._surface_tree is not None and len(pts):
            d = np.minimum(d, self._surface_tree.query(pts)[0])
        return d

    def _bounds_distance(self, pts: np.ndarray) -> np.ndarray:
        """Distance to the nearest voxel centre outside the lattice (0 outside it)."""
        res = self.resolution
        lo, hi = self.extents
        lateral = pts - (np.floor(pts / res) + 0.5) * res
        best = np.full(pts.shape[0], np.inf)
        for axis in range(3):
            side = np.delete(lateral, axis, axis=1)
            side_sq = np.einsum("ij,ij->i", side, side)
            for across in (pts[:, axis] - lo[axis], hi[axis] - pts[:, axis]):
                best = np.minimum(best, np.sqrt((across + 0.5 * res) ** 2 + side_sq))
        inside = self.in_extents(pts) if len(pts) else np.zeros(0, dtype=bool)
        return np.where(inside, best, 0.0)

    def collision_free_segment(self, a: np.ndarray, b: np.ndarray, clearance: float) -> bool:
        return collision_free_segment(self, a, b, clearance)


# ── Queries ───────────────────────────────────────────────────────────────────

def collision_free_segment(
    world: GroundTruthWorld,
    a: np.ndarray,
    b: np.ndarray,
    clearance: float,
) -> bool:
    """
    True iff every half-voxel sample of segment *ab* lies outside rock and at
    least *clearance* from every rock-voxel centre.
    """
    a = np.asarray(a, dtype=float).reshape(3)
    b = np.asarray(b, dtype=float).reshape(3)
    # fixed endpoint order keeps the sample set identical for (a, b) and (b, a)
    if tuple(b) < tuple(a):
        a, b = b, a
    length = float(np.linalg.norm(b - a))
    n = max(1, math.ceil(length / (0.5 * world.resolution)))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    samples = a + (b - a) * t

    if world.occupied_at(samples).any():
        return False
    if clearance <= 0.0:
        return True
    return bool(np.all(world.rock_distance(samples) >= clearance))


def sensor_directions(model: SensorModel, heading: float) -> np.ndarray:
    """Unit ray directions, elevation-major, azimuth starting at *heading*."""
    az = heading + 2.0 * np.pi * np.arange(model.horizontal_rays) / model.horizontal_rays
    if model.vertical_rays > 1:
        half = math.radians(model.vfov) / 2.0
        el = np.linspace(-half, half, model.vertical_rays)
    else:
        el = np.zeros(1)
    e, a = np.meshgrid(el, az, indexing="ij")
    dirs = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1)
    return dirs.reshape(-1, 3)


def simulate_scan(
    world: GroundTruthWorld,
    position: np.ndarray,
    heading: float,
    model: SensorModel,
    rng_seed: int,
    timestamp: float = 0.0,
) -> Scan:
    """
    Simulate one LiDAR sweep from *position*.

    Surface returns carry intensity ``clamp(1 − r/max_range, 0.05, 1)``.
    ``Poisson(dust_rate)`` dust returns are appended after them, closer than
    ``dust_range_max`` and with intensity in ``[0, 0.04)``.
    """
    position = np.asarray(position, dtype=float).reshape(3)
    if not world.in_extents(position):
        lo, hi = world.extents
        raise DomainError(
            f"pose {position.tolist()} lies outside the world extents "
            f"{lo.tolist()} – {hi.tolist()}"
        )

    noise_seq, dust_seq = np.random.SeedSequence(rng_seed).spawn(2)
    noise_rng = np.random.default_rng(noise_seq)
    dust_rng = np.random.default_rng(dust_seq)

    dirs = sensor_directions(model, heading)
    hit, distance = first_hit(
        world.occupancy, np.asarray(world.origin_index), position, dirs,
        model.max_range, world.resolution,
    )

    ranges = distance[hit]
    if model.noise_sigma > 0.0:
        ranges = ranges + noise_rng.normal(0.0, model.noise_sigma, size=dirs.shape[0])[hit]
    ranges = np.clip(ranges, _MIN_RANGE, model.max_range)
    intensities = np.clip(1.0 - ranges / model.max_range, SURFACE_INTENSITY_MIN, 1.0)
    directions = dirs[hit]

    missed = ~hit & (distance > 0.0)
    miss_dirs = dirs[missed]
    miss_ranges = distance[missed]

    count = int(dust_rng.poisson(model.dust_rate)) if model.dust_rate > 0 else 0
    if count:
        half = math.radians(model.vfov) / 2.0
        az = dust_rng.uniform(0.0, 2.0 * np.pi, count)
        el = dust_rng.uniform(-half, half, count)
        dust_dirs = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)
        reach = min(model.dust_range_max, model.max_range)
        dust_ranges = reach * (1.0 - dust_rng.random(count))
        dust_int = dust_rng.uniform(0.0, DUST_INTENSITY_MAX, count)
        directions  = np.concatenate([directions, dust_dirs])
        ranges      = np.concatenate([ranges, dust_ranges])
        intensities = np.concatenate([intensities, dust_int])

    return Scan(
        origin          = position.copy(),
        heading         = float(heading),
        timestamp       = float(timestamp),
        directions      = directions,
        ranges          = ranges,
        intensities     = intensities,
        miss_directions = miss_dirs,
        miss_ranges     = miss_ranges,
    )


# ── Generation ────────────────────────────────────────────────────────────────

def generate_cave(seed: int, params: Optional[CaveParams] = None) -> GroundTruthWorld:
    """Generate a deterministic cave world for *(seed, params)*."""
    params = params or CaveParams()
    res = params.resolution
    if params.tunnel_width < 2.0 * res:
        raise GenerationError(
            f"tunnel_width {params.tunnel_width} m is narrower than two voxels ({2.0 * res} m)"
        )
    if params.tunnel_count < 2:
        raise GenerationError("tunnel_count must be >= 2 so the cave has a junction")

    rng = np.random.default_rng(seed)
    tunnels = _grow_skeleton(rng, params)
    domes = _pick_domes(rng, tunnels, params.dome_count)

    radius = params.tunnel_width / 2.0
    dense = np.concatenate([_densify(t, 0.5 * res) for t in tunnels])
    reach = max(radius, params.dome_radius if domes else 0.0) + params.rock_margin + res
    lo = np.floor((dense.min(axis=0) - reach) / res).astype(np.int64)
    hi = np.ceil((dense.max(axis=0) + reach) / res).astype(np.int64)
    shape = tuple(int(v) for v in hi - lo)
    if math.prod(shape) > _MAX_GENERATED_VOXELS:
        raise GenerationError(
            f"cave spans {shape} voxels at {res} m; raise the resolution or shorten the tunnels"
        )

    skeleton = np.zeros(shape, dtype=bool)
    idx = np.floor(dense / res).astype(np.int64) - lo
    skeleton[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    free = ndimage.distance_transform_edt(~skeleton, sampling=res) <= radius

    for centre in domes:
        _carve_sphere(free, lo, res, centre, params.dome_radius)

    base = (np.floor(tunnels[0][0] / res) + 0.5) * res
    base_idx = tuple(int(v) for v in np.floor(base / res).astype(np.int64) - lo)
    labels, _ = ndimage.label(free, structure=_CONNECTIVITY_26)
    free = labels == labels[base_idx]

    spawns: list[np.ndarray] = []
    for node in tunnels[0][1:4]:
        centre = (np.floor(node / res) + 0.5) * res
        i = tuple(int(v) for v in np.floor(centre / res).astype(np.int64) - lo)
        if free[i] and not any(np.allclose(centre, s) for s in [base, *spawns]):
            spawns.append(centre)
    spawns = spawns or [base]

    world = GroundTruthWorld(
        resolution   = res,
        origin_index = tuple(int(v) for v in lo),
        occupancy    = ~free,
        base_station = base,
        spawn_points = np.array(spawns),
    )
    logger.info(
        "generated cave seed=%d: %d tunnels, %d domes, lattice %s, free volume %.1f m³",
        seed, len(tunnels), len(domes), shape, world.free_volume,
    )
    return world


def _grow_skeleton(rng: np.random.Generator, params: CaveParams) -> list[np.ndarray]:
    tunnels: list[np.ndarray] = []
    for t in range(params.tunnel_count):
        if t == 0:
            start = np.zeros(3)
            yaw = rng.uniform(-np.pi, np.pi)
        else:
            parent = tunnels[int(rng.integers(len(tunnels)))]
            i = int(rng.integers(1, len(parent) - 1))
            start = parent[i].copy()
            tangent = parent[i + 1] - parent[i - 1]
            side = 1.0 if rng.random() < 0.5 else -1.0
            yaw = math.atan2(tangent[1], tangent[0]) + side * rng.uniform(np.pi / 4, 3 * np.pi / 4)

        length = max(3.0 * params.tunnel_width,
                     rng.normal(params.tunnel_length_mean, params.tunnel_length_std))
        steps = max(2, math.ceil(length / params.step_length))

        shaft_from = shaft_to = -1
        shaft_dir = 1.0
        if rng.random() < params.shaft_probability:
            shaft_from = int(rng.integers(steps // 3, max(steps // 3 + 1, 2 * steps // 3)))
            shaft_to = shaft_from + max(1, int(rng.uniform(4.0, 10.0) / params.step_length))
            shaft_dir = 1.0 if rng.random() < 0.5 else -1.0

        points = [start]
        p = start
        pitch = 0.0
        for s in range(steps):
            yaw += rng.normal(0.0, params.turn_sigma)
            pitch = float(np.clip(0.5 * pitch + rng.normal(0.0, 0.3 * params.turn_sigma),
                                  -0.3, 0.3))
            if shaft_from <= s < shaft_to:
                direction = np.array([0.0, 0.0, shaft_dir])
            else:
                direction = np.array([
                    math.cos(pitch) * math.cos(yaw),
                    math.cos(pitch) * math.sin(yaw),
                    math.sin(pitch),
                ])
            p = p + params.step_length * direction
            points.append(p)
        tunnels.append(np.array(points))
    return tunnels


def _pick_domes(rng: np.random.Generator, tunnels: list[np.ndarray], count: int) -> list[np.ndarray]:
    domes = []
    for _ in range(count):
        tunnel = tunnels[int(rng.integers(len(tunnels)))]
        # interior nodes only, tunnel ends stay dead ends
        domes.append(tunnel[int(rng.integers(1, len(tunnel) - 1))].copy())
    return domes


def _densify(polyline: np.ndarray, spacing: float) -> np.ndarray:
    out = [polyline[:1]]
    for a, b in zip(polyline[:-1], polyline[1:]):
        n = max(1, math.ceil(float(np.linalg.norm(b - a)) / spacing))
        t = np.linspace(0.0, 1.0, n + 1)[1:, None]
        out.append(a + (b - a) * t)
    return np.concatenate(out)


def _carve_sphere(free: np.ndarray, lo: np.ndarray, res: float,
                  centre: np.ndarray, radius: float) -> None:
    c = np.floor(centre / res).astype(np.int64) - lo
    r = int(math.ceil(radius / res))
    a = np.maximum(c - r, 0)
    b = np.minimum(c + r + 1, np.asarray(free.shape))
    grids = np.meshgrid(*[np.arange(a[k], b[k]) for k in range(3)], indexing="ij")
    centres = [(g + lo[k] + 0.5) * res for k, g in enumerate(grids)]
    inside = sum((centres[k] - centre[k]) ** 2 for k in range(3)) <= radius ** 2
    free[a[0]:b[0], a[1]:b[1], a[2]:b[2]] |= inside


# ── Builders ──────────────────────────────────────────────────────────────────

def corridor_world(
    length: float = 160.0,
    width: float = 3.0,
    height: float = 3.0,
    resolution: float = 0.2,
    margin: float = 1.0,
) -> GroundTruthWorld:
    """Straight corridor along +x from x = 0, base station 1 m inside."""
    n = [max(1, round(v / resolution)) for v in (length, width, height)]
    m = max(1, math.ceil(margin / resolution))
    occ = np.ones((n[0] + 2 * m, n[1] + 2 * m, n[2] + 2 * m), dtype=bool)
    occ[m:m + n[0], m:m + n[1], m:m + n[2]] = False
    origin_index = (-m, -m - n[1] // 2, -m - n[2] // 2)

    def centre(x_cell: int) -> np.ndarray:
        return (np.array([min(x_cell, n[0] - 1), 0, 0]) + 0.5) * resolution

    step = max(1, round(1.0 / resolution))
    base = centre(step)
    spawns = [centre(k * step) for k in (2, 3, 4) if k * step < n[0]] or [base]
    return GroundTruthWorld(resolution, origin_index, occ, base, np.array(spawns))


def box_room_world(
    size: float = 8.0,
    resolution: float = 0.2,
    margin: float = 1.0,
) -> GroundTruthWorld:
    """Closed cubic room centred on the origin; everything spawns at the centre."""
    n = max(1, round(size / resolution))
    m = max(1, math.ceil(margin / resolution))
    occ = np.ones((n + 2 * m,) * 3, dtype=bool)
    occ[m:m + n, m:m + n, m:m + n] = False
    origin_index = (-m - n // 2,) * 3
    base = np.full(3, 0.5 * resolution)
    return GroundTruthWorld(resolution, origin_index, occ, base, base[None, :].copy())


# ── Statistics ────────────────────────────────────────────────────────────────

@dataclass
class WorldStats:
    free_cells: int
    free_volume: float           # m³
    width_edges: np.ndarray      # m, histogram bin edges
    width_counts: np.ndarray

    def histogram_rows(self) -> list[tuple[float, float, int]]:
        return [
            (float(self.width_edges[i]), float(self.width_edges[i + 1]), int(c))
            for i, c in enumerate(self.width_counts)
        ]


def world_statistics(world: GroundTruthWorld, bin_width: float = 0.5) -> WorldStats:
    """Free volume and a histogram of corridor widths sampled on the medial voxels."""
    free = ~world.occupancy
    dist = ndimage.distance_transform_edt(free, sampling=world.resolution)
    medial = free & (dist >= ndimage.maximum_filter(dist, size=3))
    widths = 2.0 * dist[medial] - world.resolution
    top = max(bin_width, float(widths.max()) if widths.size else bin_width)
    edges = np.arange(0.0, top + bin_width, bin_width)
    counts, edges = np.histogram(widths, bins=edges)
    return WorldStats(
        free_cells   = world.free_count,
        free_volume  = world.free_volume,
        width_edges  = edges,
        width_counts = counts,
    )


def spawn_point(world: GroundTruthWorld, robot_id: int) -> np.ndarray:
    return world.spawn_points[robot_id % len(world.spawn_points)].copy()

