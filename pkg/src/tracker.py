"""
Reference tracker.

A virtual vehicle modelled as a triple integrator follows a sampled
:class:`~src.motion.Trajectory` and emits full translational references
(position, velocity, acceleration, jerk, heading, heading rate) at a fixed
rate, 100 Hz by default.  The trajectory samples are the control points of
a uniform cubic B-spline, which supplies a consistent reference position,
velocity, acceleration and jerk.  The cascade

    velocity  ← reference velocity + position correction
    accel     ← reference accel    + K_V·(velocity error)
    jerk      ← reference jerk     + K_A·(acceleration error)

places the three closed-loop poles of the tracking error at -2 rad/s, so a
step in position is approached without overshoot.  Every quantity is
clipped to its norm bound after each update; the position correction is
additionally capped by the speed from which the vehicle can still brake at
half the acceleration limit.
"""

from __future__ import annotations

import logging
import math
from typing import Iterator, Optional

import numpy as np

from .errors import ConstraintError
from .models import MotionConstraints, ReferenceState
from .motion import Trajectory, hover_trajectory, wrap_angle

logger = logging.getLogger(__name__)

DEFAULT_RATE = 100.0

K_P = 2.0 / 3.0
K_V = 2.0
K_A = 6.0


def _limit(vec: np.ndarray, bound: float) -> np.ndarray:
    n = float(np.linalg.norm(vec))
    return vec * (bound / n) if n > bound else vec


class ReferenceTracker:
    """Single-owner state machine; advance with :meth:`tick` or :meth:`step`."""

    def __init__(
        self,
        constraints: MotionConstraints,
        state: ReferenceState,
        rate: float = DEFAULT_RATE,
    ) -> None:
        if rate <= 0:
            raise ConstraintError(f"tracker rate must be > 0, got {rate}")
        if not state.within(constraints):
            raise ConstraintError(
                "initial reference state violates the motion constraints "
                f"(|v|={np.linalg.norm(state.velocity):.3f}, |a|={np.linalg.norm(state.acceleration):.3f}, "
                f"|j|={np.linalg.norm(state.jerk):.3f}, heading rate={state.heading_rate:.3f})"
            )
        self.constraints = constraints
        self.rate = float(rate)
        self.period = 1.0 / self.rate
        self.state = state.copy()
        self.trajectory: Trajectory = hover_trajectory(state.position, state.heading, constraints.t_s)
        self.time = 0.0
        self._points: np.ndarray = np.zeros((0, 3))
        self._points_of: Optional[Trajectory] = None

    # ── Trajectory ───────────────────────────────────────────────────────────

    def set_trajectory(self, trajectory: Trajectory, keep_time: bool = False) -> None:
        """Follow *trajectory*; *keep_time* continues the clock (appended trajectories)."""
        self.trajectory = trajectory
        if not keep_time:
            self.time = 0.0

    @property
    def progress_index(self) -> int:
        n = len(self.trajectory)
        return min(n - 1, int(math.floor(self.time / self.trajectory.t_s + 1e-9)))

    @property
    def remaining_time(self) -> float:
        return max(0.0, self.trajectory.duration - self.time)

    @property
    def finished(self) -> bool:
        return self.remaining_time <= 0.0

    # ── Reference ────────────────────────────────────────────────────────────

    def _control_points(self) -> np.ndarray:
        if self._points_of is not self.trajectory:
            p = self.trajectory.positions
            head = 2.0 * p[0] - p[1] if len(p) > 1 else p[0]
            self._points = np.vstack([head, p, p[-1], p[-1]])
            self._points_of = self.trajectory
        return self._points

    def reference(self, t: float) -> ReferenceState:
        """
        Reference at time *t* from the uniform cubic B-spline over the samples.

        The spline starts at the first sample with the first transition's
        velocity and comes to rest at the last sample one period after the
        trajectory ends; its jerk is constant between samples.
        """
        c = self.constraints
        w = self.trajectory.t_s
        n = len(self.trajectory)
        if n == 1 or t >= n * w:
            return ReferenceState(
                position = self.trajectory.positions[-1].copy(),
                heading  = float(self.trajectory.headings[-1]),
            )
        pts = self._control_points()
        x = max(t / w, 0.0)
        i = min(int(math.floor(x)), n - 1)
        u = x - i
        p0, p1, p2, p3 = pts[i:i + 4]
        pos = ((1 - u) ** 3 * p0 + (3 * u ** 3 - 6 * u ** 2 + 4) * p1
               + (-3 * u ** 3 + 3 * u ** 2 + 3 * u + 1) * p2 + u ** 3 * p3) / 6.0
        vel = (-(1 - u) ** 2 * p0 + (3 * u ** 2 - 4 * u) * p1
               + (-3 * u ** 2 + 2 * u + 1) * p2 + u ** 2 * p3) / (2.0 * w)
        acc = ((1 - u) * p0 + (3 * u - 2) * p1 + (1 - 3 * u) * p2 + u * p3) / (w * w)
        jerk = (-p0 + 3 * p1 - 3 * p2 + p3) / w ** 3
        return ReferenceState(
            position     = pos,
            velocity     = _limit(vel, c.v_max),
            acceleration = _limit(acc, c.a_max),
            jerk         = jerk,
            heading      = self.trajectory.interpolate(t)[1],
        )

    # ── Integration ──────────────────────────────────────────────────────────

    def tick(self) -> ReferenceState:
        c = self.constraints
        h = self.period
        s = self.state
        ref = self.reference(self.time)

        error = ref.position - s.position
        dist = float(np.linalg.norm(error))
        v_des = ref.velocity.copy()
        if dist > 0.0:
            v_des = v_des + error / dist * min(K_P * dist, math.sqrt(c.a_max * dist))
        v_des = _limit(v_des, c.v_max)
        a_des = _limit(ref.acceleration + K_V * (v_des - s.velocity), c.a_max)
        jerk = _limit(ref.jerk + K_A * (a_des - s.acceleration), c.j_max)

        acc = _limit(s.acceleration + jerk * h, c.a_max)
        vel = _limit(s.velocity + acc * h, c.v_max)
        pos = s.position + vel * h

        turn = float(wrap_angle(ref.heading - s.heading))
        rate = max(-c.heading_rate_max, min(c.heading_rate_max, turn / h))

        self.state = ReferenceState(
            position     = pos,
            velocity     = vel,
            acceleration = acc,
            jerk         = (acc - s.acceleration) / h,
            heading      = float(wrap_angle(s.heading + rate * h)),
            heading_rate = rate,
        )
        self.time += h
        return self.state

    def step(self, dt: float) -> ReferenceState:
        """Advance by *dt* seconds (rounded to whole ticks, at least one)."""
        for _ in range(max(1, int(round(dt * self.rate)))):
            self.tick()
        return self.state


def track(
    trajectory: Trajectory,
    state: ReferenceState,
    constraints: MotionConstraints,
    rate: float = DEFAULT_RATE,
    settle: Optional[float] = 1.0,
) -> Iterator[ReferenceState]:
    """
    Stream of reference states following *trajectory* from *state*.

    The stream covers the trajectory duration plus *settle* seconds; with
    ``settle=None`` it never ends.  Raises :class:`ConstraintError` up front
    when *state* is infeasible.
    """
    tracker = ReferenceTracker(constraints, state, rate)
    tracker.set_trajectory(trajectory)

    def stream() -> Iterator[ReferenceState]:
        if settle is None:
            while True:
                yield tracker.tick()
        for _ in range(int(round((trajectory.duration + settle) * tracker.rate))):
            yield tracker.tick()

    return stream()
