"""
Velocity-adaptive trajectory sampling.

A planned :class:`~src.pathplan.Path` becomes a time-parameterised
:class:`Trajectory` (one position/heading pair every ``t_s`` seconds) in
four stages:

1. ``uniform_resample``   – stations at most ``v_max·t_s`` apart, waypoints included.
2. ``segment_velocities`` – the speed each turn allows, from the acceleration
   a vehicle flying the uniform samples at ``v_max`` would need there.
3. ``segment_profile``    – per transition: constant acceleration, number of
   transition points and the adapted acceleration.
4. ``sample_distances``   – the resulting sequence of sampling distances.

``sample_trajectory`` composes the four and passes the result through a
feasibility limiter that enforces the speed and acceleration caps sample by
sample.  Indexing convention: transition ``j`` joins samples ``j`` and
``j+1``; the speed ``v_k`` of ``segment_velocities`` belongs to the turn at
sample ``k+1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import AppendError, ConstraintError, IndexOutOfRangeError
from .models import MotionConstraints
from .pathplan import Path

logger = logging.getLogger(__name__)

# Tolerance absorbing float noise in the ceil of the transition-point count.
_CEIL_EPS = 1e-9
_REPAIR_ROUNDS = 20
_REPAIR_FACTOR = 0.8


# ── Types ─────────────────────────────────────────────────────────────────────

@dataclass
class SegmentProfile:
    """Per-transition quantities; ``speeds`` has one more entry than ``lengths``."""
    lengths: np.ndarray     # l_k (m)
    speeds: np.ndarray      # node speeds (m/s), transition k runs speeds[k] → speeds[k+1]
    t_acc: np.ndarray       # s
    a_bar: np.ndarray       # required constant acceleration (m/s²)
    counts: np.ndarray      # N_k
    accel: np.ndarray       # adapted acceleration a_k (signed)
    t_s: float

    def __len__(self) -> int:
        return int(self.lengths.shape[0])


@dataclass
class Trajectory:
    """Position/heading pairs at a fixed period ``t_s``."""
    positions: np.ndarray
    headings: np.ndarray
    t_s: float
    profile: Optional[SegmentProfile] = None
    clamped: Optional[np.ndarray] = None    # per sample: speed floor engaged nearby

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.headings = np.asarray(self.headings, dtype=float).reshape(-1)
        if self.clamped is None:
            self.clamped = np.zeros(len(self.positions), dtype=bool)

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def duration(self) -> float:
        return max(0, len(self) - 1) * self.t_s

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.t_s

    @property
    def step_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.positions, axis=0), axis=1)

    @property
    def length(self) -> float:
        return float(self.step_lengths.sum())

    def speeds(self) -> np.ndarray:
        """Speed of every transition, ‖Δp‖/t_s."""
        return self.step_lengths / self.t_s

    def interpolate(self, t: float) -> tuple[np.ndarray, float]:
        """Linearly interpolated (position, heading) at time *t*, clamped to the ends."""
        n = len(self)
        if n == 1 or t <= 0.0:
            return self.positions[0].copy(), float(self.headings[0])
        if t >= self.duration:
            return self.positions[-1].copy(), float(self.headings[-1])
        x = t / self.t_s
        i = min(int(math.floor(x)), n - 2)
        f = x - i
        p = self.positions[i] + f * (self.positions[i + 1] - self.positions[i])
        h = self.headings[i] + f * wrap_angle(self.headings[i + 1] - self.headings[i])
        return p, float(wrap_angle(h))


def wrap_angle(a):
    """Wrap to [-π, π)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# ── Geometry helpers ──────────────────────────────────────────────────────────

def _stations_of(points: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])


def _along(points: np.ndarray, cum: np.ndarray, stations: np.ndarray) -> np.ndarray:
    """Points at arclength *stations* along the polyline *points*."""
    if len(points) == 1:
        return np.repeat(points[:1], len(stations), axis=0)
    s = np.clip(stations, 0.0, cum[-1])
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(points) - 2)
    seg = cum[idx + 1] - cum[idx]
    f = np.where(seg > 0, (s - cum[idx]) / np.where(seg > 0, seg, 1.0), 0.0)
    return points[idx] + f[:, None] * (points[idx + 1] - points[idx])


def _headings(
    positions: np.ndarray,
    constraints: MotionConstraints,
    initial: Optional[float] = None,
) -> np.ndarray:
    """Face the direction of travel, rate-limited to heading_rate_max."""
    n = len(positions)
    delta = np.diff(positions, axis=0)
    horiz = np.hypot(delta[:, 0], delta[:, 1])
    desired = np.arctan2(delta[:, 1], delta[:, 0])
    out = np.empty(n)
    if initial is not None:
        out[0] = initial
    else:
        moving = np.flatnonzero(horiz > 1e-9)
        out[0] = desired[moving[0]] if len(moving) else 0.0
    limit = constraints.heading_rate_max * constraints.t_s
    for i in range(1, n):
        j = min(i, n - 2)
        if horiz[j] <= 1e-9:
            out[i] = out[i - 1]
            continue
        turn = wrap_angle(desired[j] - out[i - 1])
        out[i] = wrap_angle(out[i - 1] + max(-limit, min(limit, turn)))
    return out


# ── Sampling stages ───────────────────────────────────────────────────────────

def uniform_resample(
    path: Path,
    constraints: MotionConstraints,
    initial_heading: Optional[float] = None,
) -> Trajectory:
    """
    Samples at most ``v_max·t_s`` apart along *path*.

    Every waypoint is a sample and each segment is split into the fewest
    equal steps no longer than ``v_max·t_s``, so the samples never leave the
    polyline and their chords add up to its length.  A segment that is a
    whole multiple of the sampling distance, a straight path in particular,
    gets exactly that spacing.  A zero-length path gives a single sample.
    """
    points = path.waypoints
    delta = constraints.sample_distance
    lengths = np.linalg.norm(np.diff(points, axis=0), axis=1)
    if float(lengths.sum()) <= 1e-12:
        heading = 0.0 if initial_heading is None else initial_heading
        return Trajectory(points[:1].copy(), np.array([heading]), constraints.t_s)

    pieces = [points[:1]]
    for a, b, l in zip(points[:-1], points[1:], lengths):
        if l <= 1e-12:
            continue
        n = max(1, int(math.ceil(l / delta - _CEIL_EPS)))
        f = np.arange(1, n + 1)[:, None] / n
        pieces.append(a + f * (b - a))
    positions = np.concatenate(pieces)
    return Trajectory(positions, _headings(positions, constraints, initial_heading), constraints.t_s)


def _transition_accelerations(positions: np.ndarray, t_s: float) -> np.ndarray:
    v = np.diff(positions, axis=0) / t_s
    return np.linalg.norm(np.diff(v, axis=0), axis=1) / t_s


def required_acceleration(traj: Trajectory, k: int) -> float:
    """``‖v(k+1) − v(k)‖ / t_s`` with ``v(k)`` the velocity of transition *k*."""
    if not 0 <= k <= len(traj) - 3:
        raise IndexOutOfRangeError(
            f"acceleration index {k} outside [0, {len(traj) - 3}] for {len(traj)} samples"
        )
    p = traj.positions
    v0 = (p[k + 1] - p[k]) / traj.t_s
    v1 = (p[k + 2] - p[k + 1]) / traj.t_s
    return float(np.linalg.norm(v1 - v0) / traj.t_s)


def _turn_speeds(traj: Trajectory, c: MotionConstraints) -> tuple[np.ndarray, np.ndarray]:
    """(speeds, floor engaged) per turn."""
    if len(traj) < 3:
        return np.zeros(0), np.zeros(0, dtype=bool)
    a_n = _transition_accelerations(traj.positions, traj.t_s)
    over = a_n > c.a_max
    with np.errstate(divide="ignore"):
        scaled = np.where(over, c.v_max * c.a_max / np.where(over, a_n, 1.0), c.v_max)
    return np.where(over, np.maximum(scaled, c.v_min), c.v_max), over & (scaled < c.v_min)


def segment_velocities(traj: Trajectory, constraints: MotionConstraints) -> np.ndarray:
    """Speed allowed by each turn: ``max(v_max·a_max/a_n, v_min)`` when ``a_n > a_max``, else ``v_max``."""
    return _turn_speeds(traj, constraints)[0]


def segment_profile(
    speeds: np.ndarray,
    lengths: np.ndarray,
    constraints: MotionConstraints,
) -> SegmentProfile:
    """
    Constant-acceleration profile of every transition.

    ``t_acc = 2·l/(v_k + v_k+1)``, ``ā = |v_k+1 − v_k| / t_acc``,
    ``N = ⌈l/(v_k·t_s)⌉`` when ``ā = 0`` else ``⌈t_acc/t_s⌉``, and
    ``a_k = ±ā/(N·t_s)`` signed by the speed change.
    """
    v = np.asarray(speeds, dtype=float)
    l = np.asarray(lengths, dtype=float)
    if v.shape[0] != l.shape[0] + 1:
        raise ConstraintError(f"need {l.shape[0] + 1} node speeds for {l.shape[0]} segments, got {v.shape[0]}")
    if (l <= 0).any():
        raise ConstraintError("segment lengths must be > 0")
    if (v <= 0).any():
        raise ConstraintError("segment speeds must be > 0")
    t_s = constraints.t_s
    v0, v1 = v[:-1], v[1:]
    t_acc = 2.0 * l / (v0 + v1)
    a_bar = np.abs(v1 - v0) / t_acc
    x = np.where(a_bar == 0.0, l / (v0 * t_s), t_acc / t_s)
    counts = np.maximum(1, np.ceil(x - _CEIL_EPS)).astype(np.int64)
    accel = np.sign(v1 - v0) * a_bar / (counts * t_s)
    return SegmentProfile(
        lengths = l,
        speeds  = v,
        t_acc   = t_acc,
        a_bar   = a_bar,
        counts  = counts,
        accel   = accel,
        t_s     = t_s,
    )


def _raw_distances(profile: SegmentProfile, k: int) -> np.ndarray:
    i = np.arange(1, int(profile.counts[k]) + 1)
    t_s = profile.t_s
    return profile.speeds[k] * t_s + i * profile.accel[k] * t_s * t_s


def sample_distances(profile: SegmentProfile, k: int) -> np.ndarray:
    """``d_k,i = v_k·t_s + i·a_k·t_s²`` for ``i = 1..N_k``."""
    if not 0 <= k < len(profile):
        raise IndexOutOfRangeError(f"segment index {k} outside [0, {len(profile) - 1}]")
    d = _raw_distances(profile, k)
    if (d <= 0).any():
        raise ConstraintError(
            f"segment {k}: sampling distance {float(d.min()):.4f} m <= 0 "
            f"(v_k={profile.speeds[k]:.3f} m/s, a_k={profile.accel[k]:.3f} m/s²)"
        )
    return d


# ── Feasibility limiter ───────────────────────────────────────────────────────

def _segment_targets(profile: SegmentProfile, k: int) -> np.ndarray:
    """Speed targets of transition *k* from its sampling distances."""
    lo, hi = sorted((profile.speeds[k], profile.speeds[k + 1]))
    try:
        d = sample_distances(profile, k)
    except ConstraintError:
        # a short braking segment overshoots zero; hold its lower speed
        logger.debug("segment %d: non-positive sampling distance, holding %.3f m/s", k, lo)
        return np.full(int(profile.counts[k]), lo)
    return np.clip(d / profile.t_s, lo, hi)


def _speed_limits(
    profile: SegmentProfile,
    stations: np.ndarray,
    node_clamped: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Part boundaries (m), target speed and floor flag of every part."""
    bounds, limits, flags = [np.zeros(1)], [], []
    for k in range(len(profile)):
        n = int(profile.counts[k])
        bounds.append(stations[k] + profile.lengths[k] * np.arange(1, n + 1) / n)
        limits.append(_segment_targets(profile, k))
        flags.append(np.full(n, bool(node_clamped[k] or node_clamped[k + 1])))
    b = np.concatenate(bounds)
    b[-1] = stations[-1]
    return b, np.concatenate(limits), np.concatenate(flags)


def _envelope(bounds: np.ndarray, limits: np.ndarray, end_speed: float, decel: float) -> np.ndarray:
    """Backward braking envelope at every part boundary."""
    env = np.empty(len(bounds))
    env[-1] = min(end_speed, limits[-1])
    for j in range(len(limits) - 1, -1, -1):
        env[j] = min(limits[j], math.sqrt(env[j + 1] ** 2 + 2.0 * decel * (bounds[j + 1] - bounds[j])))
    return env


def _march(
    bounds: np.ndarray,
    limits: np.ndarray,
    env: np.ndarray,
    start_speed: float,
    c: MotionConstraints,
    decel: float,
) -> np.ndarray:
    """Arclength stations of the limited trajectory."""
    total = float(bounds[-1])
    t_s = c.t_s
    cap = c.v_max * t_s
    acc = c.a_max * t_s * t_s
    floor = 0.5 * acc
    stations = [0.0]
    s, d_prev, j = 0.0, start_speed * t_s, 0
    guard = int(total / floor) + 16
    while len(stations) < guard:
        while j < len(limits) - 1 and s >= bounds[j + 1]:
            j += 1
        allowed = min(limits[j], math.sqrt(env[j + 1] ** 2 + 2.0 * decel * max(0.0, bounds[j + 1] - s)))
        d = min(cap, d_prev + acc, allowed * t_s)
        d = max(d, d_prev - acc, floor)
        if s + d >= total - 1e-9:
            stations.append(total)
            break
        s += d
        stations.append(s)
        d_prev = d
    else:
        stations.append(total)
    return np.array(stations)


def sample_trajectory(
    path: Path,
    constraints: MotionConstraints,
    v_start: Optional[float] = None,
    v_end: Optional[float] = None,
    initial_heading: Optional[float] = None,
) -> Trajectory:
    """
    Full sampling pipeline plus feasibility limiting.

    *v_start* is the speed the vehicle already has (default: the first turn
    speed).  ``v_end=0`` brings the vehicle to rest at the path end; the
    default keeps the last turn speed.  The speed target of every transition
    comes from its ``sample_distances``.  Raises :class:`ConstraintError` when
    the limiter cannot bring every unclamped sample under ``a_max``.
    """
    c = constraints
    base = uniform_resample(path, c, initial_heading)
    n = len(base)
    if n == 1:
        return base

    turn_speeds, turn_clamped = _turn_speeds(base, c)
    u = np.empty(n)
    u[1:n - 1] = turn_speeds
    u[0] = (min(max(v_start, c.v_min), c.v_max) if v_start is not None
            else (turn_speeds[0] if n > 2 else c.v_max))
    u[-1] = min(max(v_end, c.v_min), c.v_max) if v_end is not None else u[-2]
    node_clamped = np.zeros(n, dtype=bool)
    node_clamped[1:n - 1] = turn_clamped

    profile = segment_profile(u, base.step_lengths, c)
    polyline = base.positions
    cum = _stations_of(polyline)
    bounds, limits, flags = _speed_limits(profile, cum, node_clamped)

    decel = 0.5 * c.a_max
    end_speed = 0.0 if (v_end is not None and v_end <= 0.0) else float(u[-1])
    start_speed = float(u[0]) if v_start is None else min(max(float(v_start), 0.0), c.v_max)

    for round_ in range(_REPAIR_ROUNDS):
        env = _envelope(bounds, limits, end_speed, decel)
        stations = _march(bounds, limits, env, start_speed, c, decel)
        positions = _along(polyline, cum, stations)
        part = np.clip(np.searchsorted(bounds, stations, side="right") - 1, 0, len(limits) - 1)
        if len(positions) < 4:
            break
        acc = np.linalg.norm(positions[2:] - 2.0 * positions[1:-1] + positions[:-2], axis=1) / c.t_s ** 2
        bad = np.flatnonzero((acc > c.a_max * (1.0 + 1e-4)) & ~flags[part[1:-1]])
        bad = bad[bad < len(acc) - 1]   # the closing residual step is exempt
        if not len(bad):
            break
        for i in bad + 1:
            touched = np.unique(np.clip(part[i - 1:i + 2], 0, len(limits) - 1))
            limits[touched] *= _REPAIR_FACTOR
        logger.debug("sample_trajectory: repair round %d, %d corner sample(s)", round_ + 1, len(bad))
    else:
        raise ConstraintError(
            f"acceleration cap still exceeded at {len(bad)} sample(s) after {_REPAIR_ROUNDS} repair rounds "
            f"(worst {float(acc[bad].max()):.3f} m/s², cap {c.a_max:.3f} m/s²)"
        )

    return Trajectory(
        positions = positions,
        headings  = _headings(positions, c, initial_heading),
        t_s       = c.t_s,
        profile   = profile,
        clamped   = flags[part],
    )


# ── Appending ─────────────────────────────────────────────────────────────────

def append_trajectory(
    current: Trajectory,
    progress: int,
    new_path: Path,
    constraints: MotionConstraints,
    v_end: Optional[float] = None,
) -> Trajectory:
    """
    Join *new_path* onto the not-yet-flown part of *current* without stopping.

    The junction is the first sample at or after *progress* within one
    sample distance of the new path's start.  Enough samples before it are
    re-sampled together with the new path that the vehicle can brake to
    ``v_min`` for a reversal; everything before that is kept verbatim.
    """
    c = constraints
    n = len(current)
    if not 0 <= progress < n:
        raise IndexOutOfRangeError(f"progress index {progress} outside [0, {n - 1}]")
    pos = current.positions
    reach = np.linalg.norm(pos[progress:] - new_path.start, axis=1)
    near = np.flatnonzero(reach <= c.sample_distance + 1e-9)
    if not len(near):
        raise AppendError(
            f"new path starts {float(reach.min()):.2f} m from the remaining trajectory "
            f"(limit {c.sample_distance:.2f} m)"
        )
    j = progress + int(near[0])

    rest = pos[j:]
    if rest.shape == new_path.waypoints.shape and np.array_equal(rest, new_path.waypoints):
        return current

    speeds = current.speeds()
    w = float(speeds[min(j, len(speeds) - 1)]) if len(speeds) else 0.0
    back = 1
    if w > c.v_min:
        back = int(math.ceil((w * w - c.v_min ** 2) / c.a_max / (w * c.t_s))) + 1
    k = max(progress, j - back)

    v_start = float(speeds[k - 1]) if k >= 1 and len(speeds) else (float(speeds[0]) if len(speeds) else 0.0)
    joined = Path(np.concatenate([pos[k:j + 1], new_path.waypoints]))
    tail = sample_trajectory(joined, c, v_start=v_start, v_end=v_end,
                             initial_heading=float(current.headings[k]))
    return Trajectory(
        positions = np.concatenate([pos[:k], tail.positions]),
        headings  = np.concatenate([current.headings[:k], tail.headings]),
        t_s       = c.t_s,
        profile   = tail.profile,
        clamped   = np.concatenate([current.clamped[:k], tail.clamped]),
    )


def hover_trajectory(position: np.ndarray, heading: float, t_s: float) -> Trajectory:
    """Single-sample trajectory holding *position*."""
    return Trajectory(np.asarray(position, dtype=float).reshape(1, 3), np.array([heading]), t_s)
