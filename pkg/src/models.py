"""
Data models for the cave exploration simulator.

Two kinds of models live here:

* Settings dataclasses (sensor, mapping, planner, motion, homing, policy,
  world source, mission).  Defaults sit in the field list, range checks in
  ``__post_init__``, and every class round-trips through ``to_dict`` /
  ``from_dict`` so a whole mission is one human-editable JSON scenario file.
* Value types shared by several modules (:class:`Scan`,
  :class:`ReferenceState`).

Scenario JSON errors are reported with the dotted path of the offending
field, e.g. ``motion.v_max: must be >= v_min``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Any, ClassVar, Optional

import numpy as np

from .errors import ConfigError


# ── Helpers ───────────────────────────────────────────────────────────────────

def _require(cond: bool, name: str, message: str) -> None:
    if not cond:
        raise ConfigError(name, message)


class _Settings:
    """Mixin: JSON round-trip with field-precise errors."""

    # field name → nested settings class
    _NESTED: ClassVar[dict[str, type]] = {}

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        for f in fields(self):  # type: ignore[arg-type]
            value = getattr(self, f.name)
            if isinstance(value, _Settings):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: Any, prefix: str = ""):
        where = prefix or cls.__name__
        if not isinstance(data, dict):
            raise ConfigError(where, f"expected an object, got {type(data).__name__}")
        known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
        for key in data:
            if key not in known:
                raise ConfigError(_join(prefix, key), "unknown field")
        kwargs: dict[str, Any] = {}
        for name, value in data.items():
            nested = cls._NESTED.get(name)
            if nested is not None:
                value = nested.from_dict(value, _join(prefix, name))
            kwargs[name] = value
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            raise exc.nested(prefix) if prefix else exc
        except TypeError as exc:
            raise ConfigError(where, str(exc)) from exc


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def _positive(obj: Any, *names: str) -> None:
    for name in names:
        value = getattr(obj, name)
        _require(isinstance(value, (int, float)) and not isinstance(value, bool),
                 name, f"must be a number, got {value!r}")
        _require(math.isfinite(value) and value > 0, name, f"must be > 0, got {value!r}")


# ── Settings ──────────────────────────────────────────────────────────────────

@dataclass
class CaveParams(_Settings):
    """Tunnel-skeleton statistics for procedural cave generation."""
    tunnel_count: int         = 4
    tunnel_width: float       = 2.4    # m, corridor diameter
    tunnel_length_mean: float = 30.0   # m
    tunnel_length_std: float  = 8.0    # m
    step_length: float        = 1.0    # m per random-walk step
    turn_sigma: float         = 0.35   # rad, heading perturbation per step
    shaft_probability: float  = 0.15   # chance per tunnel of a vertical shaft
    dome_count: int           = 1
    dome_radius: float        = 4.0    # m
    resolution: float         = 0.2    # m per voxel
    rock_margin: float        = 1.0    # m of solid rock around the cave

    def __post_init__(self) -> None:
        _positive(self, "tunnel_width", "tunnel_length_mean", "step_length",
                  "resolution", "rock_margin", "dome_radius")
        _require(int(self.tunnel_count) == self.tunnel_count and self.tunnel_count >= 1,
                 "tunnel_count", "must be a positive integer")
        _require(self.tunnel_length_std >= 0, "tunnel_length_std", "must be >= 0")
        _require(self.turn_sigma >= 0, "turn_sigma", "must be >= 0")
        _require(0.0 <= self.shaft_probability <= 1.0, "shaft_probability",
                 "must lie in [0, 1]")
        _require(int(self.dome_count) == self.dome_count and self.dome_count >= 0,
                 "dome_count", "must be a non-negative integer")
        self.tunnel_count = int(self.tunnel_count)
        self.dome_count = int(self.dome_count)


@dataclass
class SensorModel(_Settings):
    """Rotating LiDAR model: a vertical fan of rays swept horizontally."""
    horizontal_rays: int   = 180
    vertical_rays: int     = 16
    vfov: float            = 45.0   # deg
    max_range: float       = 50.0   # m
    scan_rate: float       = 10.0   # Hz
    noise_sigma: float     = 0.0    # m, range noise std
    dust_rate: float       = 0.0    # expected false returns per scan
    dust_range_max: float  = 2.0    # m

    def __post_init__(self) -> None:
        _require(0.0 < self.vfov <= 180.0, "vfov", "must lie in (0, 180] degrees")
        _positive(self, "max_range", "scan_rate", "dust_range_max")
        _require(self.noise_sigma >= 0, "noise_sigma", "must be >= 0")
        _require(self.dust_rate >= 0, "dust_rate", "must be >= 0")
        for name in ("horizontal_rays", "vertical_rays"):
            value = getattr(self, name)
            _require(int(value) == value and value >= 1, name, "must be a positive integer")
            setattr(self, name, int(value))


@dataclass
class MappingParams(_Settings):
    """Log-odds occupancy filter and scan pre-filter settings."""
    resolution: float           = 0.2
    hit: float                  = 0.85
    miss: float                 = -0.40
    clamp_min: float            = -2.0
    clamp_max: float            = 3.5
    occupied_threshold: float   = 0.0
    free_threshold: float       = -0.1
    filter_percentile: float    = 0.10
    filter_neighborhood: float  = 3.0    # m

    def __post_init__(self) -> None:
        _positive(self, "resolution", "filter_neighborhood")
        _require(self.hit > 0, "hit", "must be > 0")
        _require(self.miss < 0, "miss", "must be < 0")
        _require(self.clamp_min < self.free_threshold <= self.occupied_threshold < self.clamp_max,
                 "free_threshold",
                 "need clamp_min < free_threshold <= occupied_threshold < clamp_max")
        _require(0.0 <= self.filter_percentile < 1.0, "filter_percentile",
                 "must lie in [0, 1)")


@dataclass
class PlannerParams(_Settings):
    """Grid planner, clearance post-processing and goal resolution."""
    d_min: float            = 0.7      # m, required obstacle clearance
    postprocess_iters: int  = 20
    goal_tolerance: float   = 1.0      # m, search radius around an infeasible goal
    max_expansions: int     = 200_000

    def __post_init__(self) -> None:
        _positive(self, "goal_tolerance")
        _require(math.isfinite(self.d_min) and self.d_min >= 0, "d_min", f"must be >= 0, got {self.d_min!r}")
        _require(self.postprocess_iters >= 0, "postprocess_iters", "must be >= 0")
        _require(self.max_expansions >= 1, "max_expansions", "must be >= 1")


@dataclass
class MotionConstraints(_Settings):
    """Dynamic limits of the vehicle and the trajectory sampling period."""
    v_max: float             = 2.0    # m/s
    v_min: float             = 0.3    # m/s
    a_max: float             = 2.0    # m/s²
    j_max: float             = 5.0    # m/s³
    t_s: float               = 0.2    # s
    heading_rate_max: float  = 1.5    # rad/s

    def __post_init__(self) -> None:
        _positive(self, "v_max", "v_min", "a_max", "j_max", "t_s", "heading_rate_max")
        _require(self.v_min <= self.v_max, "v_min", "must be <= v_max")

    @property
    def sample_distance(self) -> float:
        """Uniform sampling distance v_max·t_s."""
        return self.v_max * self.t_s


@dataclass
class HomingParams(_Settings):
    """Homing-tree and radio settings."""
    d_e: float             = 1.0    # m, minimum edge length
    d_c: float             = 50.0   # m, communication radius
    v_nominal: float       = 1.2    # m/s, assumed homing speed
    reserve_time: float    = 30.0   # s, battery margin
    record_spacing: float  = 2.0    # m of travel between pose-node candidates

    def __post_init__(self) -> None:
        _positive(self, "d_e", "d_c", "v_nominal", "reserve_time", "record_spacing")
        _require(self.d_e < self.d_c, "d_e", "must be < d_c")


@dataclass
class PolicyParams(_Settings):
    """Goal-selection tuning shared by all exploration policies."""
    bounded_area: float       = 10.0   # m, half-size of the bounded box (policy D / coverage)
    ratio_radius: float       = 1.0    # m, half-size of the unknown/free window per frontier
    visited_radius: float     = 1.5    # m, frontiers this close to a reached goal are skipped
    min_goal_distance: float  = 1.0    # m, frontiers closer than this are skipped
    max_goal_attempts: int    = 8      # plan attempts per decision before giving up

    def __post_init__(self) -> None:
        _positive(self, "bounded_area", "ratio_radius", "visited_radius")
        _require(self.min_goal_distance >= 0, "min_goal_distance", "must be >= 0")
        _require(self.max_goal_attempts >= 1, "max_goal_attempts", "must be >= 1")


WORLD_KINDS = ("generate", "file", "corridor", "room")


@dataclass
class WorldSource(_Settings):
    """Where the ground-truth world of a mission comes from."""
    kind: str              = "generate"
    seed: int              = 1
    path: Optional[str]    = None
    cave: CaveParams       = field(default_factory=CaveParams)
    # corridor / room builders
    length: float          = 160.0
    width: float           = 3.0
    height: float          = 3.0
    size: float            = 8.0
    resolution: float      = 0.2

    _NESTED = {"cave": CaveParams}

    def __post_init__(self) -> None:
        _require(self.kind in WORLD_KINDS, "kind", f"must be one of {', '.join(WORLD_KINDS)}")
        _require(self.kind != "file" or bool(self.path), "path", "required when kind is 'file'")
        _positive(self, "length", "width", "height", "size", "resolution")


POLICIES = ("deep_lateral", "highest_frontier", "unknown_ratio", "full_coverage_bounded")
HOMING_MODES = ("relay", "return_to_base")


@dataclass
class MissionConfig(_Settings):
    """
    Complete description of one multi-robot mission.

    Saved as a ``.scenario.json`` file; every field has a default so a
    scenario only needs to list what it changes.
    """
    world: WorldSource              = field(default_factory=WorldSource)
    robot_count: int                = 1
    stagger: float                  = 60.0     # s between launches
    policies: list[str]             = field(default_factory=lambda: ["deep_lateral"])
    motion: MotionConstraints       = field(default_factory=MotionConstraints)
    homing: HomingParams            = field(default_factory=HomingParams)
    sensor: SensorModel             = field(default_factory=SensorModel)
    mapping: MappingParams          = field(default_factory=MappingParams)
    planner: PlannerParams          = field(default_factory=PlannerParams)
    policy: PolicyParams            = field(default_factory=PolicyParams)
    battery_budget: float           = 300.0    # s of flight
    seed: int                       = 0
    dt: float                       = 0.1      # s per engine tick
    pose_noise_sigma: float         = 0.0      # m
    homing_mode: str                = "relay"
    max_mission_time: float         = 3600.0   # s, simulated-time cap
    sync_interval: float            = 2.0      # s between radio synchronisations
    replan_lead: float              = 2.0      # s of remaining trajectory that triggers replanning
    compute_baseline: bool          = True

    _NESTED = {
        "world":   WorldSource,
        "motion":  MotionConstraints,
        "homing":  HomingParams,
        "sensor":  SensorModel,
        "mapping": MappingParams,
        "planner": PlannerParams,
        "policy":  PolicyParams,
    }

    def __post_init__(self) -> None:
        if isinstance(self.policies, str):
            self.policies = [self.policies]
        self.validate()

    def validate(self) -> None:
        _require(int(self.robot_count) == self.robot_count and self.robot_count >= 1,
                 "robot_count", f"must be a positive integer, got {self.robot_count!r}")
        self.robot_count = int(self.robot_count)
        _require(self.stagger >= 0, "stagger", "must be >= 0")
        _require(len(self.policies) >= 1, "policies", "at least one policy is required")
        for i, name in enumerate(self.policies):
            _require(name in POLICIES, f"policies[{i}]",
                     f"unknown policy {name!r}; choose from {', '.join(POLICIES)}")
        _require(len(self.policies) in (1, self.robot_count), "policies",
                 "give one policy for all robots or one per robot")
        _positive(self, "battery_budget", "dt", "max_mission_time", "sync_interval")
        _require(self.dt <= self.motion.t_s, "dt", "must be <= motion.t_s")
        _require(self.pose_noise_sigma >= 0, "pose_noise_sigma", "must be >= 0")
        _require(self.replan_lead >= 0, "replan_lead", "must be >= 0")
        _require(self.homing_mode in HOMING_MODES, "homing_mode",
                 f"must be one of {', '.join(HOMING_MODES)}")

    def policy_for(self, robot_id: int) -> str:
        if len(self.policies) == 1:
            return self.policies[0]
        return self.policies[robot_id]

    # ── Serialisation ────────────────────────────────────────────────────────

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "MissionConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("scenario", f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(data)


# ── Shared value types ────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Scan:
    """
    One LiDAR sweep.

    ``directions``/``ranges``/``intensities`` hold the returns (unit vectors,
    metres, [0, 1]).  Rays that produced no return are kept separately in
    ``miss_directions``/``miss_ranges`` so map integration can clear the
    space they crossed.
    """
    origin: np.ndarray
    heading: float
    timestamp: float
    directions: np.ndarray
    ranges: np.ndarray
    intensities: np.ndarray
    miss_directions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    miss_ranges: np.ndarray     = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return int(self.ranges.shape[0])

    @property
    def endpoints(self) -> np.ndarray:
        return self.origin[None, :] + self.directions * self.ranges[:, None]

    def select(self, keep: np.ndarray) -> "Scan":
        """Return a scan with only the returns where *keep* is true (order kept)."""
        return Scan(
            origin          = self.origin,
            heading         = self.heading,
            timestamp       = self.timestamp,
            directions      = self.directions[keep],
            ranges          = self.ranges[keep],
            intensities     = self.intensities[keep],
            miss_directions = self.miss_directions,
            miss_ranges     = self.miss_ranges,
        )


@dataclass
class ReferenceState:
    """Full translational reference of the virtual vehicle model."""
    position: np.ndarray
    velocity: np.ndarray     = field(default_factory=lambda: np.zeros(3))
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))
    jerk: np.ndarray         = field(default_factory=lambda: np.zeros(3))
    heading: float           = 0.0
    heading_rate: float      = 0.0

    def copy(self) -> "ReferenceState":
        return ReferenceState(
            position     = self.position.copy(),
            velocity     = self.velocity.copy(),
            acceleration = self.acceleration.copy(),
            jerk         = self.jerk.copy(),
            heading      = self.heading,
            heading_rate = self.heading_rate,
        )

    def within(self, constraints: MotionConstraints, tol: float = 1e-9) -> bool:
        """True if every magnitude respects *constraints*."""
        return (
            float(np.linalg.norm(self.velocity))     <= constraints.v_max * (1 + tol)
            and float(np.linalg.norm(self.acceleration)) <= constraints.a_max * (1 + tol)
            and float(np.linalg.norm(self.jerk))     <= constraints.j_max * (1 + tol)
            and abs(self.heading_rate)               <= constraints.heading_rate_max * (1 + tol)
        )


class RobotMode(str, Enum):
    IDLE      = "idle"
    EXPLORING = "exploring"
    HOMING    = "homing"
    LANDED    = "landed"
    FAILED    = "failed"

    @property
    def airborne(self) -> bool:
        return self in (RobotMode.EXPLORING, RobotMode.HOMING)
