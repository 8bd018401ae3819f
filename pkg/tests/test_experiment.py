from __future__ import annotations

import csv
import math
import os
from pathlib import Path

import numpy as np
import pytest

from src.errors import ConfigError
from src.experiment import HomingTable, RepetitionResult, repetition_config, run_homing_experiment, write_homing_table
from src.models import MissionConfig


def _table() -> HomingTable:
    return HomingTable([
        RepetitionResult(0, 10, 10, relay=[100.0, 120.0, 150.0], baseline=[100.0, 100.0, 100.0]),
        RepetitionResult(1, 11, 11, relay=[110.0, 140.0, 170.0], baseline=[100.0, 120.0, 100.0]),
    ])


def test_table_means_and_increase() -> None:
    table = _table()
    assert table.robot_count == 3
    np.testing.assert_allclose(table.mean_relay, [105.0, 130.0, 160.0])
    np.testing.assert_allclose(table.mean_baseline, [100.0, 110.0, 100.0])
    np.testing.assert_allclose(table.increase_pct, [5.0, 100.0 * 20.0 / 110.0, 60.0])
    assert table.is_non_decreasing()


def test_zero_baseline_is_nan() -> None:
    table = HomingTable([RepetitionResult(0, 1, 1, relay=[10.0, 5.0], baseline=[0.0, 5.0])])
    pct = table.increase_pct
    assert math.isnan(pct[0]) and pct[1] == 0.0


def test_trend_tolerance() -> None:
    rising = HomingTable([RepetitionResult(0, 1, 1, relay=[100.0, 110.0, 120.0], baseline=[100.0] * 3)])
    assert rising.is_non_decreasing()
    dip = HomingTable([RepetitionResult(0, 1, 1, relay=[110.0, 108.5, 120.0], baseline=[100.0] * 3)])
    assert dip.is_non_decreasing(tolerance=2.0)
    assert not dip.is_non_decreasing(tolerance=1.0)
    two_dips = HomingTable([RepetitionResult(0, 1, 1, relay=[110.0, 109.0, 120.0, 119.0],
                                             baseline=[100.0] * 4)])
    assert not two_dips.is_non_decreasing()


def test_write_table(tmp_path) -> None:
    path = tmp_path / "homing_table.csv"
    write_homing_table(_table(), str(path))
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["robot", "relay_exploration_time_s", "baseline_exploration_time_s", "increase_pct"]
    assert rows[1] == ["1", "105.000", "100.000", "5.00"]
    assert rows[3] == ["3", "160.000", "100.000", "60.00"]


def test_repetition_config_shifts_seeds() -> None:
    base = MissionConfig.from_dict({
        "robot_count": 2, "seed": 7, "homing_mode": "return_to_base", "compute_baseline": False,
        "world": {"kind": "generate", "seed": 40},
    })
    rep = repetition_config(base, 3)
    assert rep.seed == 10 and rep.world.seed == 43
    assert rep.homing_mode == "relay" and rep.compute_baseline
    assert base.seed == 7 and base.world.seed == 40


def test_experiment_needs_two_robots() -> None:
    with pytest.raises(ConfigError):
        run_homing_experiment(MissionConfig(), 2)


def _corridor_trend_config() -> MissionConfig:
    return MissionConfig.from_dict({
        "world":            {"kind": "corridor", "length": 40.0, "width": 3.0, "height": 3.0, "resolution": 0.2},
        "robot_count":      3,
        "stagger":          20.0,
        "battery_budget":   80.0,
        "max_mission_time": 220.0,
        "homing":           {"d_c": 12.0, "reserve_time": 10.0},
        "sensor":           {"horizontal_rays": 72, "vertical_rays": 9, "vfov": 90.0, "max_range": 10.0},
        "planner":          {"d_min": 0.5},
        "policy":           {"min_goal_distance": 0.6, "visited_radius": 0.5},
        "seed":             21,
    })


def test_relay_never_shortens_exploration() -> None:
    """3 robots × 2 seeds in a 40 m corridor with a 12 m radio range."""
    table = run_homing_experiment(_corridor_trend_config(), 2)
    assert table.robot_count == 3
    assert np.all(table.mean_baseline > 0.0)
    assert np.all(np.isfinite(table.increase_pct))
    assert np.all(table.increase_pct >= -1.0)


@pytest.mark.skipif(not os.environ.get("CAVESIM_FULL_EXPERIMENT"),
                    reason="full-scale experiment; set CAVESIM_FULL_EXPERIMENT=1")
def test_homing_trend_full_scale() -> None:
    """5 robots × 6 seeds on the shipped generated-cave scenario, six worker processes."""
    config = MissionConfig.load(str(Path(__file__).parent.parent / "scenarios" / "homing_trend.json"))
    table = run_homing_experiment(config, 6, jobs=6)
    assert table.robot_count == 5
    assert table.is_non_decreasing()
    assert table.increase_pct[-1] > 0.0
