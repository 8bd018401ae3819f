"""Shared fixtures: small worlds and fast mission settings."""

from __future__ import annotations

import numpy as np
import pytest

from src.models import MissionConfig, MotionConstraints, SensorModel
from src.worldsim import GroundTruthWorld, box_room_world, corridor_world


@pytest.fixture
def constraints() -> MotionConstraints:
    return MotionConstraints()


@pytest.fixture
def room() -> GroundTruthWorld:
    """4 m closed cube at 0.2 m, centred on the origin."""
    return box_room_world(size=4.0, resolution=0.2)


@pytest.fixture
def corridor() -> GroundTruthWorld:
    """20 m × 3 m × 3 m corridor along +x."""
    return corridor_world(length=20.0, width=3.0, height=3.0, resolution=0.2)


@pytest.fixture
def wall_world() -> GroundTruthWorld:
    """Free slab with a rock wall whose face sits at x = 5.0 m."""
    res = 0.2
    occ = np.ones((40, 20, 20), dtype=bool)      # x ∈ [-1, 7), y, z ∈ [-2, 2)
    occ[1:30, 1:19, 1:19] = False                 # free up to x = 5.0
    return GroundTruthWorld.from_occupancy(
        occ, res, origin_index=(-5, -10, -10), base_station=np.array([0.1, 0.1, 0.1]),
    )


@pytest.fixture
def fast_sensor() -> SensorModel:
    return SensorModel(horizontal_rays=72, vertical_rays=9, vfov=90.0, max_range=10.0)


@pytest.fixture
def room_config(fast_sensor: SensorModel) -> MissionConfig:
    """Single robot in a 4 m room, coarse sensing, short battery."""
    return MissionConfig.from_dict({
        "world":            {"kind": "room", "size": 4.0, "resolution": 0.2},
        "robot_count":      1,
        "battery_budget":   90.0,
        "max_mission_time": 150.0,
        "sensor":           fast_sensor.to_dict(),
        "planner":          {"d_min": 0.5},
        "policy":           {"min_goal_distance": 0.6, "visited_radius": 0.5},
        "compute_baseline": False,
        "seed":             5,
    })
