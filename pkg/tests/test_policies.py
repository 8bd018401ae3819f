from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from src.mapping import CellState, MapSnapshot
from src.models import POLICIES, PolicyParams
from src.policies import rank_goals, select_goal

F, O, U = CellState.FREE, CellState.OCCUPIED, CellState.UNKNOWN


def _state(position, velocity=(0.0, 0.0, 0.0), heading: float = 0.0) -> SimpleNamespace:
    return SimpleNamespace(position=np.array(position, dtype=float),
                           velocity=np.array(velocity, dtype=float), heading=heading)


def _sealed_box() -> np.ndarray:
    states = np.full((7, 7, 7), O, dtype=np.uint8)
    states[1:6, 1:6, 1:6] = F
    return states


def _column() -> MapSnapshot:
    """Free shaft along z with one opening at z≈2.5 and a wide opening at z≈10.5."""
    states = np.full((5, 5, 13), O, dtype=np.uint8)
    states[2, 2, 1:12] = F
    states[3, 2, 2] = U
    for x, y in ((3, 2), (1, 2), (2, 3), (2, 1)):
        states[x, y, 10] = U
    return MapSnapshot(1.0, np.zeros(3), states)


def test_single_frontier_under_every_policy() -> None:
    states = _sealed_box()
    states[6, 3, 3] = U
    snap = MapSnapshot(1.0, np.zeros(3), states)
    for policy in POLICIES:
        goal = select_goal(policy, snap, _state([2.5, 3.5, 3.5]))
        assert np.allclose(goal, [5.5, 3.5, 3.5]), policy


def test_deep_lateral_prefers_the_frontier_ahead() -> None:
    states = _sealed_box()
    states[0, 3, 3] = U
    states[6, 3, 3] = U
    snap = MapSnapshot(1.0, np.zeros(3), states)
    forward = select_goal("deep_lateral", snap, _state([3.5, 3.5, 3.5], velocity=(1.0, 0.0, 0.0)))
    backward = select_goal("deep_lateral", snap, _state([3.5, 3.5, 3.5], velocity=(-1.0, 0.0, 0.0)))
    assert np.allclose(forward, [5.5, 3.5, 3.5])
    assert np.allclose(backward, [1.5, 3.5, 3.5])
    hovering = select_goal("deep_lateral", snap, _state([3.5, 3.5, 3.5], heading=np.pi))
    assert np.allclose(hovering, [1.5, 3.5, 3.5])


def test_highest_frontier() -> None:
    snap = _column()
    state = _state([2.5, 2.5, 3.5])
    assert select_goal("highest_frontier", snap, state)[2] == pytest.approx(10.5)
    assert select_goal("full_coverage_bounded", snap, state)[2] == pytest.approx(2.5)


def test_unknown_ratio_prefers_the_open_end() -> None:
    snap = _column()
    ranked = rank_goals("unknown_ratio", snap, _state([2.5, 2.5, 3.5]))
    assert ranked[:, 2].tolist() == [10.5, 2.5]


def test_bounded_area_limits_candidates() -> None:
    snap = _column()
    params = PolicyParams(bounded_area=3.0)
    ranked = rank_goals("full_coverage_bounded", snap, _state([2.5, 2.5, 8.5]), params,
                        anchor=np.array([2.5, 2.5, 2.5]))
    assert ranked[:, 2].tolist() == [2.5]


def test_visited_and_blacklisted_goals_are_skipped() -> None:
    states = _sealed_box()
    states[0, 3, 3] = U
    states[6, 3, 3] = U
    snap = MapSnapshot(1.0, np.zeros(3), states)
    state = _state([3.5, 3.5, 3.5], velocity=(1.0, 0.0, 0.0))
    banned = select_goal("deep_lateral", snap, state, blacklist=[(5, 3, 3)])
    assert np.allclose(banned, [1.5, 3.5, 3.5])
    seen = select_goal("deep_lateral", snap, state, visited=[np.array([5.0, 3.5, 3.5])])
    assert np.allclose(seen, [1.5, 3.5, 3.5])
    assert select_goal("deep_lateral", snap, state, blacklist=[(5, 3, 3), (1, 3, 3)]) is None


def test_fully_known_map_is_exhausted() -> None:
    snap = MapSnapshot(1.0, np.zeros(3), _sealed_box())
    for policy in POLICIES:
        assert select_goal(policy, snap, _state([3.5, 3.5, 3.5])) is None


def test_unknown_policy_name() -> None:
    snap = MapSnapshot(1.0, np.zeros(3), _sealed_box())
    with pytest.raises(ValueError):
        rank_goals("random_walk", snap, _state([3.5, 3.5, 3.5]))
