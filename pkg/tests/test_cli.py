from __future__ import annotations

import json
import re

import numpy as np
from click.testing import CliRunner

from main import cli
from src.exporter import write_map_ascii
from src.mapping import OccupancyMap
from src.world_file import save_world
from src.worldsim import box_room_world

SMALL_CAVE = {
    "tunnel_count":       2,
    "tunnel_width":       2.0,
    "tunnel_length_mean": 8.0,
    "tunnel_length_std":  0.0,
    "dome_count":         0,
    "resolution":         0.4,
}


def _write_json(path, data) -> str:
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def _short_room_scenario(tmp_path) -> str:
    return _write_json(tmp_path / "room.json", {
        "world":            {"kind": "room", "size": 4.0, "resolution": 0.2},
        "battery_budget":   60.0,
        "max_mission_time": 12.0,
        "sensor":           {"horizontal_rays": 72, "vertical_rays": 9, "vfov": 90.0, "max_range": 10.0},
        "planner":          {"d_min": 0.5},
        "policy":           {"min_goal_distance": 0.6, "visited_radius": 0.5},
        "seed":             3,
    })


def test_generate_world_is_reproducible(tmp_path) -> None:
    params = _write_json(tmp_path / "cave.json", SMALL_CAVE)
    runner = CliRunner()
    outputs = []
    for name in ("a.scsw", "b.scsw"):
        out = tmp_path / name
        result = runner.invoke(cli, ["generate-world", "--seed", "4", "--params", params, "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert "World saved" in result.output
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_generate_world_rejects_bad_parameters(tmp_path) -> None:
    runner = CliRunner()
    for bad in ({**SMALL_CAVE, "tunnel_width": -1.0}, {**SMALL_CAVE, "tunnel_count": 1}, {"wings": 2}):
        params = _write_json(tmp_path / "bad.json", bad)
        result = runner.invoke(cli, ["generate-world", "--params", params, "--out", str(tmp_path / "x.scsw")])
        assert result.exit_code == 2, result.output
    assert not (tmp_path / "x.scsw").exists()


def test_show_scenario_fills_defaults(tmp_path) -> None:
    scenario = _write_json(tmp_path / "s.json", {"robot_count": 3})
    result = CliRunner().invoke(cli, ["show-scenario", scenario])
    assert result.exit_code == 0, result.output
    data = json.loads(result.output)
    assert data["robot_count"] == 3
    assert data["homing"]["d_c"] == 50.0
    assert data["policies"] == ["deep_lateral"]


def test_invalid_scenario_exit_code(tmp_path) -> None:
    runner = CliRunner()
    zero = _write_json(tmp_path / "zero.json", {"robot_count": 0})
    result = runner.invoke(cli, ["run", "--scenario", zero, "--out", str(tmp_path / "out")])
    assert result.exit_code == 2
    assert "robot_count" in result.output

    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    assert runner.invoke(cli, ["show-scenario", str(broken)]).exit_code == 2


def test_run_writes_identical_artifacts(tmp_path) -> None:
    scenario = _short_room_scenario(tmp_path)
    runner = CliRunner()
    metrics = []
    for name in ("first", "second"):
        out = tmp_path / name
        result = runner.invoke(cli, ["run", "--scenario", scenario, "--out", str(out), "--no-baseline"])
        assert result.exit_code == 0, result.output
        for artifact in ("metrics.json", "events.jsonl", "robot_0.traj", "merged_map.txt",
                         "merged_map.npz", "homing_tree.scht", "homing_tree.json", "scenario.json"):
            assert (out / artifact).exists(), artifact
        metrics.append((out / "metrics.json").read_text(encoding="utf-8"))
    assert metrics[0] == metrics[1]
    assert json.loads(metrics[0])["robots"][0]["explored_volume"] > 0.0


def test_run_keeps_partial_artifacts_when_the_engine_fails(tmp_path, monkeypatch) -> None:
    from src.errors import DomainError
    from src.fleet import MissionEngine

    original = MissionEngine._scan

    def failing_scan(self, r, t):
        if t > 1.0:
            raise DomainError("pose left the world")
        original(self, r, t)

    monkeypatch.setattr(MissionEngine, "_scan", failing_scan)
    out = tmp_path / "out"
    result = CliRunner().invoke(cli, ["run", "--scenario", _short_room_scenario(tmp_path),
                                      "--out", str(out), "--no-baseline"])
    assert result.exit_code == 1
    assert "pose left the world" in result.output
    for artifact in ("scenario.json", "metrics.json", "events.jsonl", "merged_map.txt", "homing_tree.scht"):
        assert (out / artifact).exists(), artifact
    events = [json.loads(line) for line in (out / "events.jsonl").read_text(encoding="utf-8").splitlines()]
    assert events[-1]["event"] == "aborted"
    assert events[-1]["stage"] == "mission"
    assert json.loads((out / "metrics.json").read_text(encoding="utf-8"))["robots"][0]["flight_time"] > 1.0


def test_homing_experiment_needs_two_robots(tmp_path) -> None:
    scenario = _short_room_scenario(tmp_path)
    result = CliRunner().invoke(cli, ["homing-experiment", "--scenario", scenario, "--reps", "1",
                                      "--out", str(tmp_path / "exp")])
    assert result.exit_code == 2


def test_eval_map_against_its_world(tmp_path) -> None:
    world_path = tmp_path / "room.scsw"
    save_world(box_room_world(size=4.0, resolution=0.2), str(world_path))
    surface = OccupancyMap()
    surface.update_cells(np.array([[10, 0, 0], [-11, 3, 3]]), 3.5)
    map_path = tmp_path / "map.txt"
    write_map_ascii(surface, str(map_path))

    result = CliRunner().invoke(cli, ["eval-map", str(map_path), str(world_path)])
    assert result.exit_code == 0, result.output
    assert "points: 2" in result.output
    assert "mean:   0.0000 m" in result.output


def test_closed_room_map_is_accurate(tmp_path) -> None:
    """One robot maps the 4 m room for up to 60 s; the merged map is scored with eval-map."""
    scenario = _short_room_scenario(tmp_path)
    _write_json(tmp_path / "room.json", {**json.loads((tmp_path / "room.json").read_text(encoding="utf-8")),
                                          "max_mission_time": 60.0})
    world_path = tmp_path / "room.scsw"
    save_world(box_room_world(size=4.0, resolution=0.2), str(world_path))
    runner = CliRunner()
    out = tmp_path / "out"
    result = runner.invoke(cli, ["run", "--scenario", scenario, "--out", str(out), "--no-baseline"])
    assert result.exit_code == 0, result.output

    result = runner.invoke(cli, ["eval-map", str(out / "merged_map.txt"), str(world_path)])
    assert result.exit_code == 0, result.output
    assert int(re.search(r"points: (\d+)", result.output).group(1)) > 100
    assert float(re.search(r"mean: +([0-9.]+) m", result.output).group(1)) <= 0.2


def test_eval_map_rejects_other_frames(tmp_path) -> None:
    world_path = tmp_path / "room.scsw"
    save_world(box_room_world(size=4.0, resolution=0.4), str(world_path))
    surface = OccupancyMap()
    surface.update_cells(np.array([[10, 0, 0]]), 3.5)
    map_path = tmp_path / "map.txt"
    write_map_ascii(surface, str(map_path))
    result = CliRunner().invoke(cli, ["eval-map", str(map_path), str(world_path)])
    assert result.exit_code == 2


def test_shipped_scenarios_load() -> None:
    from pathlib import Path

    runner = CliRunner()
    for scenario in sorted(Path(__file__).parent.parent.glob("scenarios/*.json")):
        result = runner.invoke(cli, ["show-scenario", str(scenario)])
        assert result.exit_code == 0, (scenario.name, result.output)
