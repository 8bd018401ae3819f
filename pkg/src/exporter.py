"""
Artifact writers and readers.

Mission output directory
------------------------
metrics.json             MissionMetrics, sorted keys, values rounded by the engine
events.jsonl             one event object per line, in emission order
robot_<i>.traj           executed trajectory, rows ``t x y z heading``
robot_<i>_tree.scht      the robot's homing-tree replica at mission end
merged_map.txt           ASCII map export (``# SCMAP1``)
merged_map.npz           block store of the merged map
homing_tree.scht/.json   base-station homing tree, binary and JSON

Every writer has a matching reader so the artifacts round-trip.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterable, Optional

import numpy as np

from .errors import FrameMismatchError, InputError, MapFormatError
from .homing import HomingTree, decode_tree, encode_tree
from .mapping import BLOCK, CellState, OccupancyMap, union_maps
from .models import MappingParams
from .motion import Trajectory

if TYPE_CHECKING:
    from .fleet import MissionEvent, MissionMetrics, MissionResult

logger = logging.getLogger(__name__)

MAP_MAGIC = "SCMAP1"
# A point further than this (in voxels) from a voxel centre is not on the map grid.
_CENTRE_TOLERANCE = 1e-3


# ── Metrics and events ────────────────────────────────────────────────────────

def dumps_metrics(metrics: "MissionMetrics", baseline: Optional["MissionMetrics"] = None) -> str:
    data = metrics.to_dict()
    if baseline is not None:
        data["baseline"] = baseline.to_dict()
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def write_metrics(metrics: "MissionMetrics", path: str,
                  baseline: Optional["MissionMetrics"] = None) -> None:
    Path(path).write_text(dumps_metrics(metrics, baseline), encoding="utf-8")


def load_metrics(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not a metrics file ({exc})") from exc
    if not isinstance(data, dict) or "robots" not in data:
        raise InputError(f"{path}: not a metrics file (no 'robots' record)")
    return data


def write_events(events: Iterable["MissionEvent"], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for event in events:
            f.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")


def read_events(path: str) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{n}: {exc}") from exc
    return out


# ── Trajectories ──────────────────────────────────────────────────────────────

def write_trajectory(trajectory: Trajectory, path: str, t0: float = 0.0) -> None:
    """One row per sample: ``t x y z heading`` (s, m, rad)."""
    times = t0 + trajectory.times
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# t x y z heading  t_s={trajectory.t_s:g}\n")
        for t, p, h in zip(times, trajectory.positions, trajectory.headings):
            f.write(f"{t:.4f} {p[0]:.4f} {p[1]:.4f} {p[2]:.4f} {h:.5f}\n")


def read_trajectory(path: str) -> tuple[float, Trajectory]:
    """Returns ``(t0, trajectory)``."""
    rows = []
    t_s = None
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line.split():
                    if token.startswith("t_s="):
                        t_s = float(token[4:])
                continue
            parts = line.split()
            if len(parts) != 5:
                raise InputError(f"{path}:{n}: expected 't x y z heading', got {line!r}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise InputError(f"{path}:{n}: {exc}") from exc
    if not rows:
        raise InputError(f"{path}: no trajectory samples")
    data = np.array(rows)
    if t_s is None:
        t_s = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 1.0
    return float(data[0, 0]), Trajectory(data[:, 1:4], data[:, 4], t_s)


# ── Maps ──────────────────────────────────────────────────────────────────────

def write_map_ascii(occupancy_map: OccupancyMap, path: str, include_free: bool = True) -> None:
    """
    Known voxel centres, one per line: ``x y z free|occupied``.  The header
    carries the resolution so the loader can rebuild the voxel frame.
    """
    groups = [(CellState.OCCUPIED, "occupied")]
    if include_free:
        groups.append((CellState.FREE, "free"))
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {MAP_MAGIC}\n# resolution {occupancy_map.resolution!r}\n")
        for state, label in groups:
            cells = occupancy_map.cells_in_state(state).reshape(-1, 3)
            cells = cells[np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))]
            for p in occupancy_map.center_of(cells):
                f.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {label}\n")


def load_map_ascii(path: str, params: Optional[MappingParams] = None) -> OccupancyMap:
    """Rebuild an :class:`OccupancyMap` (cells at the clamp values) from an ASCII export."""
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != f"# {MAP_MAGIC}":
        raise MapFormatError(f"{path}: missing '# {MAP_MAGIC}' header")
    head = lines[1].split() if len(lines) > 1 else []
    try:
        if head[:2] != ["#", "resolution"]:
            raise ValueError("missing resolution line")
        resolution = float(head[2])
        if not resolution > 0:
            raise ValueError(f"resolution must be > 0, got {resolution}")
    except (IndexError, ValueError) as exc:
        raise MapFormatError(f"{path}:2: {exc}") from exc

    points = {"free": [], "occupied": []}
    for n, line in enumerate(lines[2:], 3):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 4 or parts[3] not in points:
            raise MapFormatError(f"{path}:{n}: expected 'x y z free|occupied', got {line!r}")
        try:
            points[parts[3]].append([float(v) for v in parts[:3]])
        except ValueError as exc:
            raise MapFormatError(f"{path}:{n}: {exc}") from exc

    params = MappingParams.from_dict({**(params or MappingParams()).to_dict(), "resolution": resolution})
    out = OccupancyMap(params)
    for label, delta in (("free", params.clamp_min), ("occupied", params.clamp_max)):
        pts = np.array(points[label], dtype=float).reshape(-1, 3)
        if not len(pts):
            continue
        x = pts / resolution - 0.5
        if np.abs(x - np.round(x)).max() > _CENTRE_TOLERANCE:
            raise FrameMismatchError(f"{path}: {label} points are not voxel centres at {resolution} m")
        out.update_cells(np.round(x).astype(np.int64), delta)
    return out


def save_map_npz(occupancy_map: OccupancyMap, path: str) -> None:
    blocks = occupancy_map.blocks()
    keys = sorted(blocks)
    np.savez_compressed(
        path,
        version    = np.array(MAP_MAGIC),
        params     = np.array(json.dumps(occupancy_map.params.to_dict(), sort_keys=True)),
        keys       = np.array(keys, dtype=np.int64).reshape(-1, 3),
        values     = np.array([blocks[k] for k in keys], dtype=np.float32).reshape(-1, BLOCK, BLOCK, BLOCK),
    )


def load_map_npz(path: str) -> OccupancyMap:
    try:
        with np.load(path, allow_pickle=False) as data:
            if str(data["version"]) != MAP_MAGIC:
                raise MapFormatError(f"{path}: unsupported map version {str(data['version'])!r}")
            params = MappingParams.from_dict(json.loads(str(data["params"])))
            keys, values = data["keys"], data["values"]
    except (KeyError, ValueError, OSError) as exc:
        if isinstance(exc, MapFormatError):
            raise
        raise MapFormatError(f"{path}: not a map snapshot ({exc})") from exc
    if len(keys) != len(values):
        raise MapFormatError(f"{path}: {len(keys)} block keys for {len(values)} blocks")
    out = OccupancyMap(params)
    for key, block in zip(keys, values):
        out.set_block(tuple(int(v) for v in key), block)
    return out


def load_map(path: str) -> OccupancyMap:
    """Either export format, picked by suffix."""
    if Path(path).suffix == ".npz":
        return load_map_npz(path)
    return load_map_ascii(path)


def merge_map_exports(paths: list[str]) -> OccupancyMap:
    """Union of several exported maps (occupied wins).  No registration is attempted."""
    maps = [load_map(p) for p in paths]
    if not maps:
        raise InputError("no map exports to merge")
    res = maps[0].resolution
    for p, m in zip(paths, maps):
        if not math.isclose(m.resolution, res, rel_tol=1e-9):
            raise FrameMismatchError(f"{p}: resolution {m.resolution} m, expected {res} m")
    return union_maps(maps, maps[0].params)


# ── Homing trees ──────────────────────────────────────────────────────────────

def write_tree(tree: HomingTree, path: str) -> None:
    Path(path).write_bytes(encode_tree(tree))


def read_tree(path: str) -> HomingTree:
    return decode_tree(Path(path).read_bytes())


def write_tree_json(tree: HomingTree, path: str) -> None:
    Path(path).write_text(json.dumps(tree.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_tree_json(path: str) -> HomingTree:
    return HomingTree.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ── Mission bundle ────────────────────────────────────────────────────────────

def write_mission_artifacts(
    result: "MissionResult",
    out_dir: str,
    progress_cb: Optional[Callable[[str], None]] = None,
) -> dict[str, Path]:
    """Write every artifact of *result* into *out_dir*; returns name → path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    def emit(name: str, writer: Callable[[str], None]) -> None:
        target = out / name
        writer(str(target))
        written[name] = target
        logger.debug("wrote %s", target)

    if progress_cb:
        progress_cb(f"Writing artifacts to {out}…")
    emit("metrics.json", lambda p: write_metrics(result.metrics, p, result.baseline))
    emit("events.jsonl", lambda p: write_events(result.events, p))
    for i, traj in enumerate(result.trajectories):
        if traj is not None:
            emit(f"robot_{i}.traj", lambda p, traj=traj, i=i: write_trajectory(traj, p, result.start_times[i]))
    for i, tree in enumerate(result.trees):
        if tree is not None:
            emit(f"robot_{i}_tree.scht", lambda p, tree=tree: write_tree(tree, p))

    merged = result.merged_map()
    emit("merged_map.txt", lambda p: write_map_ascii(merged, p))
    emit("merged_map.npz", lambda p: save_map_npz(merged, p))
    emit("homing_tree.scht", lambda p: write_tree(result.base_tree, p))
    emit("homing_tree.json", lambda p: write_tree_json(result.base_tree, p))
    if progress_cb:
        progress_cb(f"{len(written)} file(s) written")
    return written
