from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from src.errors import NoHomingPathError, TreeFormatError, TreeIncompatibleError, UnknownNodeError
from src.homing import (
    BASE_ID,
    HomingNode,
    HomingTree,
    NodeKind,
    cost,
    decode_tree,
    encode_tree,
    homing_path,
    homing_trigger,
    insert_node,
    merge_trees,
    node_id,
    plan_home,
    retrace_path,
    return_to_base_path,
    same_tree,
)
from src.models import HomingParams

P = HomingParams()      # d_e 1, d_c 50, v_nominal 1.2, reserve 30


def _within(limit: float):
    return lambda a, b: float(np.linalg.norm(np.asarray(a) - np.asarray(b))) <= limit


def _always(a, b) -> bool:
    return True


def _never(a, b) -> bool:
    return False


def _pose(robot: int, k: int, x: float, y: float = 0.0, z: float = 0.0) -> HomingNode:
    return HomingNode(node_id(robot, k), NodeKind.POSE, np.array([x, y, z]))


def _corridor_tree(length: int = 100, spacing: int = 2) -> HomingTree:
    """Pose chain along +x, each node only sees its neighbours."""
    tree = HomingTree(np.zeros(3), P)
    for k, x in enumerate(range(spacing, length + 1, spacing)):
        assert insert_node(tree, _pose(0, k, float(x)), _within(2.5))
    return tree


def _oracle_acc(parents: dict, edges: dict, kinds: dict, n: int) -> float:
    if kinds[n].is_comm:
        return 0.0
    return edges[n] + _oracle_acc(parents, edges, kinds, parents[n])


# ── Costs ─────────────────────────────────────────────────────────────────────

def test_cost() -> None:
    a = np.array([1.0, 2.0, 3.0])
    assert cost(a, a, P) == 0.0
    assert cost(np.zeros(3), np.array([12.0, 0.0, 0.0]), P) == pytest.approx(10.0)


def test_accumulated_cost_along_a_chain() -> None:
    tree = HomingTree(np.zeros(3), P)
    assert insert_node(tree, _pose(0, 0, 3.6), _within(5.0))
    assert insert_node(tree, _pose(0, 1, 8.4), _within(5.0))
    assert tree.node(node_id(0, 1)).parent == node_id(0, 0)
    assert tree.accumulated_cost(node_id(0, 0)) == pytest.approx(3.0)
    assert tree.accumulated_cost(node_id(0, 1)) == pytest.approx(7.0)
    assert tree.accumulated_cost(BASE_ID) == 0.0
    with pytest.raises(UnknownNodeError):
        tree.accumulated_cost(42)


def test_pose_parented_to_landed_robot() -> None:
    tree = HomingTree(np.zeros(3), P)
    insert_node(tree, HomingNode(node_id(1, 0), NodeKind.LANDED_ROBOT, np.array([30.0, 0, 0])), _always)
    insert_node(tree, _pose(0, 0, 36.0), _within(10.0))
    assert tree.node(node_id(0, 0)).parent == node_id(1, 0)
    assert tree.accumulated_cost(node_id(0, 0)) == pytest.approx(5.0)


def test_pose_insertion_rejections() -> None:
    tree = HomingTree(np.zeros(3), P)
    assert insert_node(tree, _pose(0, 0, 5.0), _always)
    assert tree.node(node_id(0, 0)).parent == BASE_ID
    assert not insert_node(tree, _pose(0, 1, 5.5), _always)
    assert not insert_node(tree, _pose(0, 2, 50.0), _never)
    assert tree.rejected == {node_id(0, 1), node_id(0, 2)}
    assert len(tree) == 2


def test_insertion_matches_brute_force() -> None:
    """200 random sequences of 19 pose insertions, each closed by one beacon insertion."""
    rng = np.random.default_rng(17)
    see = _within(8.0)
    for _ in range(200):
        tree = HomingTree(np.zeros(3), P)
        for k in range(19):
            node = _pose(0, k, *rng.uniform(-10.0, 10.0, 3))
            ids, positions, acc = tree.arrays()
            dist = np.linalg.norm(positions - node.position, axis=1)
            options = [cost(node.position, positions[i], P) + acc[i]
                       for i in range(len(ids)) if see(node.position, positions[i])]
            accepted = insert_node(tree, node, see)
            assert accepted == (bool(dist.min() >= P.d_e) and bool(options))
            if accepted:
                assert tree.accumulated_cost(node.id) == pytest.approx(min(options))
            tree.check_invariants()

        before = {n.id: tree.accumulated_cost(n.id) for n in tree.pose_nodes()}
        parents = {i: n.parent for i, n in tree.nodes.items()}
        edges = {i: n.edge_cost for i, n in tree.nodes.items()}
        kinds = {i: n.kind for i, n in tree.nodes.items()}

        beacon = HomingNode(node_id(5, 0), NodeKind.DEPLOYED_BEACON, rng.uniform(-10.0, 10.0, 3))
        parents[beacon.id], edges[beacon.id], kinds[beacon.id] = BASE_ID, 0.0, beacon.kind
        for pid in sorted(before):
            c = cost(beacon.position, tree.node(pid).position, P)
            if c < _oracle_acc(parents, edges, kinds, pid) and see(beacon.position, tree.node(pid).position):
                parents[pid], edges[pid] = beacon.id, c

        insert_node(tree, beacon, see)
        tree.check_invariants()
        assert tree.node(beacon.id).parent == BASE_ID
        assert tree.parents() == parents
        for pid, old in before.items():
            assert tree.accumulated_cost(pid) <= old + 1e-12


# ── Homing paths ──────────────────────────────────────────────────────────────

def test_in_range_of_base_lands_in_place() -> None:
    tree = _corridor_tree()
    plan = homing_path(tree, np.array([30.0, 0.0, 0.0]), _within(2.5))
    assert plan.is_empty
    assert plan.cost == 0.0
    assert np.allclose(plan.landing, [30.0, 0.0, 0.0])


def test_corridor_landing_is_in_range_of_the_base() -> None:
    tree = _corridor_tree()
    plan = homing_path(tree, np.array([101.0, 0.0, 0.0]), _within(2.5))
    assert np.allclose(plan.landing, [50.0, 0.0, 0.0])
    assert np.linalg.norm(plan.landing) <= P.d_c
    assert plan.cost == pytest.approx(51.0 / 1.2)
    assert plan.node_ids[0] == node_id(0, 49)


def test_landed_robot_shortens_the_way_home() -> None:
    tree = _corridor_tree()
    current = np.array([101.0, 0.0, 0.0])
    before = homing_path(tree, current, _within(2.5))
    insert_node(tree, HomingNode(node_id(1, 0), NodeKind.LANDED_ROBOT, np.array([80.0, 0, 0])), _within(2.5))
    after = homing_path(tree, current, _within(2.5))
    assert before.cost == pytest.approx(51.0 / 1.2)
    assert np.linalg.norm(after.landing - [80.0, 0.0, 0.0]) <= P.d_c
    assert after.is_empty and after.cost == 0.0

    farther = np.array([139.0, 0.0, 0.0])
    tree = _corridor_tree(140)
    insert_node(tree, HomingNode(node_id(1, 0), NodeKind.LANDED_ROBOT, np.array([80.0, 0, 0])), _within(2.5))
    plan = homing_path(tree, farther, _within(2.5))
    assert np.allclose(plan.landing, [130.0, 0.0, 0.0])
    assert plan.cost == pytest.approx(9.0 / 1.2)


def test_return_to_base_follows_the_whole_tree() -> None:
    tree = _corridor_tree()
    plan = return_to_base_path(tree, np.array([101.0, 0.0, 0.0]), _within(2.5))
    assert np.allclose(plan.landing, tree.base.position)
    assert plan.cost == pytest.approx(101.0 / 1.2)
    assert plan.node_ids[-1] == BASE_ID


def test_retrace_breadcrumbs() -> None:
    tree = HomingTree(np.zeros(3), P)
    crumbs = np.array([[x, 0.0, 0.0] for x in range(0, 101, 10)], dtype=float)
    plan = retrace_path(crumbs, tree)
    assert np.allclose(plan.landing, [50.0, 0.0, 0.0])
    assert plan.cost == pytest.approx(50.0 / 1.2)
    full = retrace_path(crumbs, tree, to_base=True)
    assert np.allclose(full.landing, [0.0, 0.0, 0.0])
    assert full.cost == pytest.approx(100.0 / 1.2)
    with pytest.raises(NoHomingPathError):
        retrace_path(np.zeros((0, 3)), tree)


def test_unattachable_position_falls_back_to_breadcrumbs() -> None:
    tree = HomingTree(np.zeros(3), P)
    current = np.array([80.0, 0.0, 0.0])
    with pytest.raises(NoHomingPathError):
        plan_home(tree, current, _never)
    crumbs = np.array([[0.0, 0, 0], [40.0, 0, 0], [70.0, 0, 0]])
    plan = plan_home(tree, current, _never, breadcrumbs=crumbs)
    assert np.allclose(plan.landing, [40.0, 0.0, 0.0])


# ── Homing trigger ────────────────────────────────────────────────────────────

def _robot(x: float, battery: float) -> SimpleNamespace:
    return SimpleNamespace(position=np.array([x, 0.0, 0.0]), battery_remaining=battery)


def test_trigger_arithmetic() -> None:
    near = HomingParams(d_c=10.0, reserve_time=30.0)
    tree = HomingTree(np.zeros(3), near)                 # 72 m from base: 60 s home
    assert homing_trigger(_robot(72.0, 85.0), tree, _always, near)
    assert not homing_trigger(_robot(72.0, 85.0), tree, _always, HomingParams(d_c=10.0, reserve_time=20.0))
    assert homing_trigger(_robot(72.0, 90.0), tree, _always, near)


def test_trigger_with_full_battery_at_base() -> None:
    tree = HomingTree(np.zeros(3), P)
    assert not homing_trigger(_robot(0.0, 300.0), tree, _always)


def test_trigger_without_any_route_fires_at_once() -> None:
    tree = HomingTree(np.zeros(3), HomingParams(d_c=10.0))
    assert homing_trigger(_robot(72.0, 20.0), tree, _never)
    assert homing_trigger(_robot(72.0, 10_000.0), tree, _never)
    assert homing_trigger(_robot(72.0, 10_000.0), tree, _never, breadcrumbs=np.zeros((0, 3)))


def test_trigger_with_breadcrumbs_budgets_the_retrace() -> None:
    tree = HomingTree(np.zeros(3), HomingParams(d_c=10.0))
    crumbs = np.array([[0.0, 0.0, 0.0], [36.0, 0.0, 0.0]])
    assert not homing_trigger(_robot(72.0, 10_000.0), tree, _never, breadcrumbs=crumbs)
    assert homing_trigger(_robot(72.0, 20.0), tree, _never, breadcrumbs=crumbs)


# ── Merging ───────────────────────────────────────────────────────────────────

def _random_tree(rng: np.random.Generator, robot: int, n: int) -> HomingTree:
    tree = HomingTree(np.zeros(3), P)
    for k in range(n):
        insert_node(tree, _pose(robot, k, *rng.uniform(-12.0, 12.0, 3)), _within(9.0))
    return tree


def test_merge_with_empty_is_identity() -> None:
    tree = _corridor_tree(20)
    assert merge_trees(tree, HomingTree(np.zeros(3), P), _within(2.5)) is tree
    assert merge_trees(HomingTree(np.zeros(3), P), tree, _within(2.5)) is tree


def test_merge_is_commutative() -> None:
    rng = np.random.default_rng(8)
    for _ in range(20):
        a = _random_tree(rng, 0, 10)
        b = _random_tree(rng, 1, 10)
        ab = merge_trees(a, b, _within(9.0))
        ba = merge_trees(b, a, _within(9.0))
        assert same_tree(ab, ba)
        ab.check_invariants()
        for nid in ab.nodes:
            assert np.array_equal(ab.node(nid).position, ba.node(nid).position)
            assert ab.accumulated_cost(nid) == ba.accumulated_cost(nid)


def test_merged_landed_robot_makes_poses_cheaper() -> None:
    local = _corridor_tree()
    remote = local.copy()
    insert_node(remote, HomingNode(node_id(1, 0), NodeKind.LANDED_ROBOT, np.array([80.0, 0, 0])), _within(2.5))
    merged = merge_trees(local, remote, _within(2.5))
    merged.check_invariants()
    assert node_id(1, 0) in merged
    for n in merged.pose_nodes():
        assert merged.accumulated_cost(n.id) <= local.accumulated_cost(n.id) + 1e-9
    assert merged.accumulated_cost(node_id(0, 49)) == pytest.approx(20.0 / 1.2)


def test_merge_rejects_other_base() -> None:
    with pytest.raises(TreeIncompatibleError):
        merge_trees(HomingTree(np.zeros(3), P), HomingTree(np.ones(3), P), _always)
    with pytest.raises(TreeIncompatibleError):
        merge_trees(HomingTree(np.zeros(3), P), HomingTree(np.zeros(3), HomingParams(d_e=2.0)), _always)


# ── Radio codec ───────────────────────────────────────────────────────────────

def test_codec_round_trip() -> None:
    tree = _random_tree(np.random.default_rng(1), 0, 12)
    insert_node(tree, HomingNode(node_id(2, 0), NodeKind.LANDED_ROBOT, np.array([1.0, 2.0, 3.0])), _always)
    again = decode_tree(encode_tree(tree))
    assert same_tree(tree, again)
    assert again.params == tree.params
    for nid in tree.nodes:
        assert again.accumulated_cost(nid) == tree.accumulated_cost(nid)


def test_codec_layout_and_errors() -> None:
    data = encode_tree(_corridor_tree(10))
    assert data[:4] == b"SCHT" and data[4] == 1
    with pytest.raises(TreeFormatError):
        decode_tree(b"XXXX" + data[4:])
    with pytest.raises(TreeFormatError):
        decode_tree(data[:-3])
    with pytest.raises(TreeFormatError):
        decode_tree(data + b"\x00")
    with pytest.raises(TreeFormatError):
        decode_tree(data[:4] + b"\x07" + data[5:])


def test_dict_round_trip() -> None:
    tree = _corridor_tree(10)
    again = HomingTree.from_dict(tree.to_dict())
    assert same_tree(tree, again)
    with pytest.raises(TreeFormatError):
        HomingTree.from_dict({"params": P.to_dict(), "nodes": []})
