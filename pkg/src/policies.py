"""
Greedy exploration policies: which frontier to fly to next.

``deep_lateral``           frontier closest to the direction of flight
``highest_frontier``       frontier with the largest z
``unknown_ratio``          frontier whose neighbourhood has the most unknown per free cell,
                           inside the bounded area around the robot's spawn point
``full_coverage_bounded``  nearest frontier inside the bounded area

Ties are broken by distance and then by the lexicographic cell index, so a
ranking is a pure function of the snapshot and the robot state.
"""

from __future__ import annotations

import logging
from typing import Iterable, Optional, Protocol

import numpy as np

from .mapping import MapSnapshot, OccupancyMap, extract_frontiers, unknown_free_ratios
from .models import POLICIES, PolicyParams

logger = logging.getLogger(__name__)

# Below this speed the heading stands in for the direction of flight.
_MOVING_SPEED = 0.1


class Pose(Protocol):
    position: np.ndarray
    velocity: np.ndarray
    heading: float


def _flight_direction(state: Pose) -> np.ndarray:
    v = np.asarray(state.velocity, dtype=float)
    speed = float(np.linalg.norm(v))
    if speed >= _MOVING_SPEED:
        return v / speed
    return np.array([np.cos(state.heading), np.sin(state.heading), 0.0])


def rank_goals(
    policy: str,
    source: "OccupancyMap | MapSnapshot",
    state: Pose,
    params: Optional[PolicyParams] = None,
    anchor: Optional[np.ndarray] = None,
    visited: Iterable[np.ndarray] = (),
    blacklist: Iterable[tuple[int, int, int]] = (),
) -> np.ndarray:
    """
    Candidate goals (frontier cell centres), best first.

    *anchor* centres the bounded area (default: the robot position).
    Frontiers closer than ``min_goal_distance`` to the robot, within
    ``visited_radius`` of a *visited* goal, or whose cell is in *blacklist*
    are skipped.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    params = params or PolicyParams()
    snap = source.snapshot() if isinstance(source, OccupancyMap) else source
    position = np.asarray(state.position, dtype=float)
    anchor = position if anchor is None else np.asarray(anchor, dtype=float)

    bounds = None
    if policy in ("unknown_ratio", "full_coverage_bounded"):
        bounds = (anchor - params.bounded_area, anchor + params.bounded_area)
    cells = extract_frontiers(snap, bounds)
    if not len(cells):
        return np.zeros((0, 3))

    keep = np.ones(len(cells), dtype=bool)
    banned = set(blacklist)
    if banned:
        keep &= np.array([tuple(int(v) for v in c) not in banned for c in cells])
    centres = snap.center_of(cells)
    dist = np.linalg.norm(centres - position, axis=1)
    keep &= dist >= params.min_goal_distance
    seen = np.asarray(list(visited), dtype=float).reshape(-1, 3)
    if len(seen):
        near = np.linalg.norm(centres[:, None, :] - seen[None, :, :], axis=2).min(axis=1)
        keep &= near > params.visited_radius
    cells, centres, dist = cells[keep], centres[keep], dist[keep]
    if not len(cells):
        return np.zeros((0, 3))

    # lexsort: last key is primary
    tie = (cells[:, 2], cells[:, 1], cells[:, 0])
    if policy == "deep_lateral":
        direction = _flight_direction(state)
        offsets = centres - position
        cosine = offsets @ direction / np.maximum(dist, 1e-12)
        angle = np.arccos(np.clip(cosine, -1.0, 1.0))
        order = np.lexsort((*tie, dist, angle))
    elif policy == "highest_frontier":
        order = np.lexsort((*tie, dist, -centres[:, 2]))
    elif policy == "unknown_ratio":
        ratio = unknown_free_ratios(snap, centres, params.ratio_radius)
        order = np.lexsort((*tie, dist, -ratio))
    else:
        order = np.lexsort((*tie, dist))
    return centres[order]


def select_goal(
    policy: str,
    source: "OccupancyMap | MapSnapshot",
    state: Pose,
    params: Optional[PolicyParams] = None,
    anchor: Optional[np.ndarray] = None,
    visited: Iterable[np.ndarray] = (),
    blacklist: Iterable[tuple[int, int, int]] = (),
) -> Optional[np.ndarray]:
    """Best goal for *policy*, or ``None`` when exploration is exhausted."""
    ranked = rank_goals(policy, source, state, params, anchor, visited, blacklist)
    return ranked[0].copy() if len(ranked) else None
