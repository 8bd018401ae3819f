from __future__ import annotations

import logging

import numpy as np
import pytest

from src.fleet import (
    MissionEngine,
    MissionEvent,
    MissionResult,
    build_world,
    comm_graph,
    run_mission,
    step,
)
from src.models import MissionConfig, RobotMode
from src.motion import sample_trajectory
from src.pathplan import Path


def _room_config(**overrides) -> MissionConfig:
    data = {
        "world":            {"kind": "room", "size": 4.0, "resolution": 0.2},
        "robot_count":      1,
        "battery_budget":   90.0,
        "max_mission_time": 150.0,
        "sensor":           {"horizontal_rays": 72, "vertical_rays": 9, "vfov": 90.0, "max_range": 10.0},
        "planner":          {"d_min": 0.5},
        "policy":           {"min_goal_distance": 0.6, "visited_radius": 0.5},
        "compute_baseline": False,
        "seed":             5,
    }
    data.update(overrides)
    return MissionConfig.from_dict(data)


@pytest.fixture(scope="module")
def room_mission() -> MissionResult:
    return run_mission(_room_config())


# ── Radio graph ───────────────────────────────────────────────────────────────

def test_comm_graph_range() -> None:
    near = comm_graph(np.array([[0.0, 0, 0], [49.0, 0, 0]]), 50.0)
    assert near.adjacent(0, 1) and near.is_connected
    far = comm_graph(np.array([[0.0, 0, 0], [51.0, 0, 0]]), 50.0)
    assert not far.adjacent(0, 1) and not far.is_connected
    exact = comm_graph(np.array([[0.0, 0, 0], [0.0, 50.0, 0]]), 50.0)
    assert exact.adjacent(1, 0)


def test_comm_graph_chain() -> None:
    graph = comm_graph(np.array([[0.0, 0, 0], [40.0, 0, 0], [80.0, 0, 0], [300.0, 0, 0]]), 50.0)
    assert graph.adjacent(0, 1) and graph.adjacent(1, 2)
    assert not graph.adjacent(0, 2)
    assert graph.connected(0, 2)
    assert not graph.connected(0, 3)
    assert graph.components == [[0, 1, 2], [3]]


# ── Engine ────────────────────────────────────────────────────────────────────

def test_build_world_kinds() -> None:
    corridor = build_world(MissionConfig.from_dict(
        {"world": {"kind": "corridor", "length": 20.0, "width": 3.0, "height": 3.0}}))
    assert np.allclose(corridor.base_station, [1.1, 0.1, 0.1])
    room = build_world(_room_config())
    assert room.free_count == 20 ** 3


def test_zero_battery_lands_without_takeoff() -> None:
    engine = MissionEngine(_room_config())
    engine.robots[0].state.battery_remaining = 0.0
    step(engine, engine.config.dt)
    robot = engine.robots[0]
    assert robot.state.mode is RobotMode.LANDED
    assert np.allclose(robot.state.position, engine.world.base_station)
    assert robot.flight_time == 0.0
    assert [e.kind for e in engine.events] == ["landed"]
    assert engine.done


def test_staggered_launch() -> None:
    engine = MissionEngine(_room_config(robot_count=2, stagger=3.0))
    for _ in range(10):
        engine.step(0.1)
    assert engine.robots[0].state.mode is RobotMode.EXPLORING
    assert engine.robots[1].state.mode is RobotMode.IDLE
    assert len(engine.launched()) == 1
    for _ in range(21):
        engine.step(0.1)
    assert engine.robots[1].state.mode is RobotMode.EXPLORING


def test_step_rejects_non_positive_dt() -> None:
    engine = MissionEngine(_room_config())
    with pytest.raises(ValueError):
        engine.step(0.0)


def test_mapping_resolution_follows_the_world(caplog) -> None:
    with caplog.at_level(logging.WARNING, logger="src.fleet"):
        engine = MissionEngine(_room_config(mapping={"resolution": 0.4}))
    assert engine.config.mapping.resolution == pytest.approx(0.2)
    assert engine.robots[0].map.resolution == pytest.approx(0.2)
    assert "mapping resolution" in caplog.text


def test_short_runs_are_deterministic() -> None:
    runs = []
    for _ in range(2):
        engine = MissionEngine(_room_config())
        for _ in range(60):
            engine.step(engine.config.dt)
        runs.append((engine.metrics().to_dict(), [e.to_dict() for e in engine.events]))
    assert runs[0] == runs[1]
    assert runs[0][0]["robots"][0]["explored_volume"] > 0.0


def test_blocked_homing_trajectory_is_replanned() -> None:
    engine = MissionEngine(_room_config())
    engine.step(engine.config.dt)
    r = engine.robots[0]
    start = r.state.position.copy()
    doomed = sample_trajectory(Path(np.array([start, start + [1.5, 0.0, 0.0]])), engine.config.motion, v_end=0.0)
    r.tracker.set_trajectory(doomed)
    r.state.mode = RobotMode.HOMING
    r.landing = doomed.positions[-1].copy()
    rock = start + np.array([[0.8, 0.0, 0.0], [1.0, 0.0, 0.0], [1.2, 0.0, 0.0]])
    r.map.update_cells(r.map.cell_of(rock), r.map.params.clamp_max)

    engine._scan(r, engine.time)

    kinds = [e.kind for e in engine.events]
    assert "blocked" in kinds and "homing_replan" in kinds
    assert r.tracker.trajectory is not doomed
    assert r.state.mode is RobotMode.HOMING
    assert not engine._blocked(r)


def test_event_record_layout() -> None:
    event = MissionEvent(1.25, 0, "landed", {"position": [0.0, 1.0, 2.0]})
    assert event.to_dict() == {"t": 1.25, "robot": 0, "event": "landed", "position": [0.0, 1.0, 2.0]}


# ── Full mission ──────────────────────────────────────────────────────────────

def test_room_mission_lands_near_base(room_mission: MissionResult) -> None:
    m = room_mission.metrics
    robot = m.robots[0]
    assert robot.status == "landed"
    assert np.linalg.norm(np.array(robot.landing) - room_mission.world.base_station) <= 50.0
    assert m.relay_connected
    assert 0.0 < robot.exploration_time <= robot.flight_time <= 90.0
    assert robot.explored_volume > 0.0
    assert m.merged_explored_volume == pytest.approx(robot.explored_volume)
    assert "homing" in [e.kind for e in room_mission.events]


def test_room_mission_keeps_clear_of_rock(room_mission: MissionResult) -> None:
    assert "failed" not in [e.kind for e in room_mission.events]
    flown = room_mission.trajectories[0]
    assert flown is not None and len(flown) > 1
    clearance = room_mission.world.rock_distance(flown.positions)
    assert clearance.min() >= 0.5 - 0.2


def test_room_mission_explored_volume_matches_map(room_mission: MissionResult) -> None:
    robot = room_mission.metrics.robots[0]
    known = room_mission.maps[0].known_count()
    assert robot.explored_volume == pytest.approx(known * 0.2 ** 3)
    assert room_mission.trees[0].accumulated_cost(0) == 0.0


def _corridor_config(**overrides) -> MissionConfig:
    data = {
        "world":            {"kind": "corridor", "length": 40.0, "width": 3.0, "height": 3.0, "resolution": 0.2},
        "robot_count":      2,
        "stagger":          20.0,
        "battery_budget":   80.0,
        "max_mission_time": 200.0,
        "homing":           {"d_c": 12.0, "reserve_time": 10.0},
        "sensor":           {"horizontal_rays": 72, "vertical_rays": 9, "vfov": 90.0, "max_range": 10.0},
        "planner":          {"d_min": 0.5},
        "policy":           {"min_goal_distance": 0.6, "visited_radius": 0.5},
        "compute_baseline": False,
        "seed":             11,
    }
    data.update(overrides)
    return MissionConfig.from_dict(data)


@pytest.fixture(scope="module")
def corridor_relay() -> MissionResult:
    return run_mission(_corridor_config())


def test_corridor_relay_chains_landings_to_base(corridor_relay: MissionResult) -> None:
    """Two robots in a 40 m corridor with a 12 m radio range, launched 20 s apart."""
    m = corridor_relay.metrics
    assert [r.status for r in m.robots] == ["landed", "landed"]
    assert m.relay_connected
    base = corridor_relay.world.base_station
    landings = [np.array(r.landing) for r in m.robots]
    for i, spot in enumerate(landings):
        anchors = [base] + [p for j, p in enumerate(landings) if j != i]
        assert min(np.linalg.norm(spot - a) for a in anchors) <= 12.0 + 0.5
    assert all(r.exploration_time > 0.0 for r in m.robots)
    assert [r.launch_time for r in m.robots] == [0.0, 20.0]


def _assert_clear_of_rock(result: MissionResult) -> None:
    assert "failed" not in [e.kind for e in result.events]
    margin = result.config.planner.d_min - result.world.resolution
    for flown in result.trajectories:
        if flown is not None and len(flown) > 1:
            assert result.world.rock_distance(flown.positions).min() >= margin


def test_corridor_relay_keeps_clear_of_rock(corridor_relay: MissionResult) -> None:
    _assert_clear_of_rock(corridor_relay)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_room_missions_keep_clear_of_rock(seed: int) -> None:
    """Three seeded single-robot room missions on a 60 s battery."""
    _assert_clear_of_rock(run_mission(_room_config(seed=seed, battery_budget=60.0, max_mission_time=100.0)))
