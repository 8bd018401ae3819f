"""
Homing tree: cooperative return-to-relay planning.

Every robot keeps a replica of a tree whose vertices are

* communication nodes – the base station, landed robots and deployed
  beacons.  Their accumulated cost is zero and their parent is always
  another communication node (the base has none);
* pose nodes – positions the robot flew through.  A pose node's parent is
  the visible node that minimises flight time to the nearest communication
  node.

When the battery runs low a robot follows parent links from its position
to the first communication node and lands as soon as it is within radio
range of it, becoming a communication node itself.  Replicas are exchanged
over the radio with :func:`merge_trees` and the compact ``SCHT`` codec.

Node ids: the base is ``0``; robot ``r`` numbers its ``k``-th node
``(r + 1)·10⁶ + k``.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Protocol

import numpy as np

from .errors import (
    HomingError,
    NoHomingPathError,
    TreeFormatError,
    TreeIncompatibleError,
    UnknownNodeError,
)
from .models import HomingParams
from .pathplan import Path

logger = logging.getLogger(__name__)

BASE_ID = 0
ROBOT_ID_STRIDE = 1_000_000

FreeRay = Callable[[np.ndarray, np.ndarray], bool]


class NodeKind(str, Enum):
    BASE            = "base"
    LANDED_ROBOT    = "landed_robot"
    DEPLOYED_BEACON = "deployed_beacon"
    POSE            = "pose"

    @property
    def is_comm(self) -> bool:
        return self is not NodeKind.POSE


_KIND_CODES = {kind: i for i, kind in enumerate(NodeKind)}


def node_id(robot_id: int, k: int) -> int:
    return (robot_id + 1) * ROBOT_ID_STRIDE + k


@dataclass
class HomingNode:
    id: int
    kind: NodeKind
    position: np.ndarray
    parent: Optional[int] = None
    edge_cost: float = 0.0

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.kind = NodeKind(self.kind)

    def copy(self) -> "HomingNode":
        return HomingNode(self.id, self.kind, self.position.copy(), self.parent, self.edge_cost)


def _distances(points: np.ndarray, p: np.ndarray) -> np.ndarray:
    return np.sqrt(((points - p) ** 2).sum(axis=1))


def cost(a: np.ndarray, b: np.ndarray, params: HomingParams) -> float:
    """Estimated flight time between two positions (s)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.sqrt((d ** 2).sum())) / params.v_nominal


# ── Tree ──────────────────────────────────────────────────────────────────────

class HomingTree:
    """One replica of the homing tree."""

    def __init__(self, base_position: np.ndarray, params: Optional[HomingParams] = None) -> None:
        self.params = params or HomingParams()
        self.nodes: dict[int, HomingNode] = {}
        self.rejected: set[int] = set()
        self._acc: Optional[dict[int, float]] = None
        self._arrays: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None
        self._add(HomingNode(BASE_ID, NodeKind.BASE, base_position))

    # ── Bookkeeping ──────────────────────────────────────────────────────────

    def _touch(self) -> None:
        self._acc = None
        self._arrays = None

    def _add(self, node: HomingNode) -> None:
        self.nodes[node.id] = node
        self._touch()

    def _reparent(self, node_id_: int, parent: int, edge_cost: float) -> None:
        node = self.nodes[node_id_]
        node.parent = parent
        node.edge_cost = edge_cost
        self._touch()

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id_: int) -> bool:
        return node_id_ in self.nodes

    @property
    def base(self) -> HomingNode:
        return self.nodes[BASE_ID]

    def node(self, node_id_: int) -> HomingNode:
        try:
            return self.nodes[node_id_]
        except KeyError:
            raise UnknownNodeError(node_id_) from None

    def comm_nodes(self) -> list[HomingNode]:
        return [self.nodes[i] for i in sorted(self.nodes) if self.nodes[i].kind.is_comm]

    def pose_nodes(self) -> list[HomingNode]:
        return [self.nodes[i] for i in sorted(self.nodes) if not self.nodes[i].kind.is_comm]

    def parents(self) -> dict[int, Optional[int]]:
        return {i: n.parent for i, n in self.nodes.items()}

    def copy(self) -> "HomingTree":
        other = HomingTree(self.base.position, self.params)
        other.nodes = {i: n.copy() for i, n in self.nodes.items()}
        other.rejected = set(self.rejected)
        return other

    # ── Costs ────────────────────────────────────────────────────────────────

    def _accumulated(self) -> dict[int, float]:
        if self._acc is not None:
            return self._acc
        acc: dict[int, float] = {}
        for start in self.nodes:
            chain: list[int] = []
            cur: Optional[int] = start
            while cur not in acc:
                node = self.nodes.get(cur) if cur is not None else None
                if node is None:
                    raise HomingError(f"node {chain[-1] if chain else start} has a dangling parent link")
                if node.kind.is_comm:
                    acc[cur] = 0.0
                    break
                chain.append(cur)
                if len(chain) > len(self.nodes):
                    raise HomingError(f"parent cycle through node {start}")
                cur = node.parent
            total = acc[cur]
            for nid in reversed(chain):
                total = self.nodes[nid].edge_cost + total
                acc[nid] = total
        self._acc = acc
        return acc

    def accumulated_cost(self, node_id_: int) -> float:
        """Flight time from the node along parent links to the first communication node."""
        if node_id_ not in self.nodes:
            raise UnknownNodeError(node_id_)
        return self._accumulated()[node_id_]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ids, positions, accumulated costs) in ascending id order."""
        if self._arrays is None:
            ids = np.array(sorted(self.nodes), dtype=np.int64)
            positions = np.array([self.nodes[int(i)].position for i in ids]).reshape(-1, 3)
            acc = self._accumulated()
            self._arrays = (ids, positions, np.array([acc[int(i)] for i in ids]))
        return self._arrays

    def chain(self, node_id_: int) -> list[int]:
        """Ids from *node_id_* up to and including the first communication node."""
        out = [node_id_]
        node = self.node(node_id_)
        while not node.kind.is_comm:
            node = self.node(node.parent)  # type: ignore[arg-type]
            out.append(node.id)
            if len(out) > len(self.nodes):
                raise HomingError(f"parent cycle through node {node_id_}")
        return out

    def route_to_base(self, node_id_: int) -> list[int]:
        out = [node_id_]
        node = self.node(node_id_)
        while node.parent is not None:
            node = self.node(node.parent)
            out.append(node.id)
            if len(out) > len(self.nodes):
                raise HomingError(f"parent cycle through node {node_id_}")
        return out

    def check_invariants(self) -> None:
        """Raise :class:`HomingError` unless the tree is well formed."""
        roots = [n.id for n in self.nodes.values() if n.parent is None]
        if roots != [BASE_ID] or self.base.kind is not NodeKind.BASE:
            raise HomingError(f"tree must have exactly the base as root, found {sorted(roots)}")
        for n in self.nodes.values():
            if n.kind.is_comm and n.parent is not None and not self.node(n.parent).kind.is_comm:
                raise HomingError(f"communication node {n.id} has pose parent {n.parent}")
        for nid in self.nodes:
            self.route_to_base(nid)

    # ── Serialisation ────────────────────────────────────────────────────────

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "nodes": [
                {
                    "id": n.id,
                    "kind": n.kind.value,
                    "position": [float(v) for v in n.position],
                    "parent": n.parent,
                    "edge_cost": n.edge_cost,
                }
                for n in (self.nodes[i] for i in sorted(self.nodes))
            ],
            "rejected": sorted(self.rejected),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HomingTree":
        try:
            params = HomingParams.from_dict(data["params"], "params")
            records = [HomingNode(r["id"], r["kind"], r["position"], r["parent"], r["edge_cost"])
                       for r in data["nodes"]]
            rejected = {int(i) for i in data.get("rejected", [])}
        except (KeyError, TypeError, ValueError) as exc:
            raise TreeFormatError(f"invalid tree record: {exc}") from exc
        return _assemble(params, records, rejected)


def _assemble(params: HomingParams, records: list[HomingNode], rejected: set[int]) -> HomingTree:
    base = [r for r in records if r.id == BASE_ID]
    if len(base) != 1 or base[0].kind is not NodeKind.BASE:
        raise TreeFormatError("tree has no base-station record with id 0")
    tree = HomingTree(base[0].position, params)
    for r in records:
        if r.id in tree.nodes and r.id != BASE_ID:
            raise TreeFormatError(f"duplicate node id {r.id}")
        tree.nodes[r.id] = r
    for r in records:
        if r.parent is not None and r.parent not in tree.nodes:
            raise TreeFormatError(f"node {r.id} refers to missing parent {r.parent}")
    tree.rejected = rejected
    tree._touch()
    try:
        tree.check_invariants()
    except HomingError as exc:
        raise TreeFormatError(str(exc)) from exc
    return tree


# ── Insertion ─────────────────────────────────────────────────────────────────

def insert_node(tree: HomingTree, node: HomingNode, free_ray: FreeRay) -> bool:
    """
    Insert *node* into *tree*; returns False when the node is rejected.

    Communication nodes hang below the cheapest communication node and then
    adopt every pose node they offer a cheaper, visible route to (pose nodes
    are visited in id order against their current accumulated cost).

    Pose nodes are rejected within ``d_e`` of any existing node, and when no
    existing node is visible.  Otherwise the parent is the visible node with
    the smallest ``cost + accumulated cost`` (ties by id).
    """
    params = tree.params
    if node.id in tree.nodes:
        raise HomingError(f"node id {node.id} already in the tree")
    node = node.copy()

    if node.kind.is_comm:
        if node.kind is NodeKind.BASE:
            raise HomingError("a tree has exactly one base station")
        comm = tree.comm_nodes()
        costs = [cost(node.position, c.position, params) for c in comm]
        best = int(np.argmin(costs))
        node.parent = comm[best].id
        node.edge_cost = costs[best]
        tree._add(node)
        for pose in tree.pose_nodes():
            c_np = cost(node.position, pose.position, params)
            if c_np < tree.accumulated_cost(pose.id) and free_ray(node.position, pose.position):
                tree._reparent(pose.id, node.id, c_np)
        logger.debug("homing tree: comm node %d under %d", node.id, node.parent)
        return True

    ids, positions, acc = tree.arrays()
    dist = _distances(positions, node.position)
    if (dist < params.d_e).any():
        tree.rejected.add(node.id)
        return False
    key = dist / params.v_nominal + acc
    for i in np.lexsort((ids, key)):
        if free_ray(node.position, positions[i]):
            node.parent = int(ids[i])
            node.edge_cost = cost(node.position, positions[i], params)
            tree._add(node)
            return True
    tree.rejected.add(node.id)
    return False


# ── Homing queries ────────────────────────────────────────────────────────────

@dataclass
class HomingPlan:
    """Route home: *waypoints* run from the current position to *landing*."""
    waypoints: np.ndarray
    landing: np.ndarray
    cost: float
    node_ids: list[int] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return len(self.waypoints) <= 1

    @property
    def path(self) -> Path:
        return Path(self.waypoints)


def _attach(tree: HomingTree, current: np.ndarray, free_ray: FreeRay) -> tuple[int, float]:
    ids, positions, acc = tree.arrays()
    dist = _distances(positions, current)
    key = dist / tree.params.v_nominal + acc
    for i in np.lexsort((ids, key)):
        if free_ray(current, positions[i]):
            return int(ids[i]), float(dist[i] / tree.params.v_nominal)
    raise NoHomingPathError(f"no tree node is visible from {np.round(current, 2).tolist()}")


def homing_path(
    tree: HomingTree,
    current: np.ndarray,
    free_ray: FreeRay,
    params: Optional[HomingParams] = None,
) -> HomingPlan:
    """
    Route from *current* along parent links to the first communication node,
    ending at the first route node within radio range ``d_c`` of it.  Empty
    when *current* already is in range of a communication node.
    """
    params = params or tree.params
    current = np.asarray(current, dtype=float).reshape(3)
    comm = tree.comm_nodes()
    comm_pos = np.array([c.position for c in comm])
    if (_distances(comm_pos, current) <= params.d_c).any():
        return HomingPlan(current[None, :].copy(), current.copy(), 0.0)

    attach, attach_cost = _attach(tree, current, free_ray)
    route = tree.chain(attach)
    target = tree.node(route[-1]).position
    total = attach_cost
    points = [current]
    used: list[int] = []
    for nid in route:
        node = tree.node(nid)
        if used:
            total += tree.node(used[-1]).edge_cost
        points.append(node.position)
        used.append(nid)
        if float(np.sqrt(((node.position - target) ** 2).sum())) <= params.d_c:
            break
    return HomingPlan(np.array(points), points[-1].copy(), total, used)


def return_to_base_path(tree: HomingTree, current: np.ndarray, free_ray: FreeRay) -> HomingPlan:
    """Full route to the base station with no radio-range shortcut."""
    current = np.asarray(current, dtype=float).reshape(3)
    attach, attach_cost = _attach(tree, current, free_ray)
    route = tree.route_to_base(attach)
    total = attach_cost + sum(tree.node(n).edge_cost for n in route[:-1])
    points = [current] + [tree.node(n).position for n in route]
    return HomingPlan(np.array(points), tree.base.position.copy(), total, route)


def retrace_path(
    breadcrumbs: np.ndarray,
    tree: HomingTree,
    params: Optional[HomingParams] = None,
    to_base: bool = False,
) -> HomingPlan:
    """
    Fly back over the robot's own breadcrumbs (newest first) until a
    communication node is in range, or all the way to the first breadcrumb.
    """
    params = params or tree.params
    crumbs = np.asarray(breadcrumbs, dtype=float).reshape(-1, 3)[::-1]
    if not len(crumbs):
        raise NoHomingPathError("no breadcrumbs to retrace")
    targets = np.array([tree.base.position]) if to_base else \
        np.array([c.position for c in tree.comm_nodes()])
    radius = 0.0 if to_base else params.d_c
    end = len(crumbs) - 1
    for i, p in enumerate(crumbs):
        if (_distances(targets, p) <= radius).any():
            end = i
            break
    points = crumbs[:end + 1]
    if to_base:
        points = np.concatenate([points, targets[:1]])
    length = float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())
    return HomingPlan(points, points[-1].copy(), length / params.v_nominal)


class Airborne(Protocol):
    position: np.ndarray
    battery_remaining: float


def plan_home(
    tree: HomingTree,
    current: np.ndarray,
    free_ray: FreeRay,
    mode: str = "relay",
    breadcrumbs: Optional[np.ndarray] = None,
) -> HomingPlan:
    """Homing plan for *mode*, falling back to the breadcrumbs when the tree cannot attach."""
    try:
        if mode == "return_to_base":
            return return_to_base_path(tree, current, free_ray)
        return homing_path(tree, current, free_ray)
    except NoHomingPathError:
        if breadcrumbs is None or not len(breadcrumbs):
            raise
        logger.debug("homing: tree unreachable from %s, retracing breadcrumbs",
                     np.round(current, 2).tolist())
        crumbs = np.concatenate([np.asarray(breadcrumbs).reshape(-1, 3), np.asarray(current)[None, :]])
        return retrace_path(crumbs, tree, to_base=(mode == "return_to_base"))


def homing_trigger(
    state: Airborne,
    tree: HomingTree,
    free_ray: FreeRay,
    params: Optional[HomingParams] = None,
    mode: str = "relay",
    breadcrumbs: Optional[np.ndarray] = None,
) -> bool:
    """
    True iff the remaining flight time no longer covers the way home plus the reserve.

    With neither a tree route nor breadcrumbs to retrace there is no way
    home to budget for, and the trigger fires at once.
    """
    params = params or tree.params
    try:
        plan = plan_home(tree, state.position, free_ray, mode, breadcrumbs)
        estimate = plan.cost
    except NoHomingPathError as exc:
        logger.debug("homing trigger: %s; forcing homing", exc)
        estimate = math.inf
    return state.battery_remaining <= estimate + params.reserve_time


# ── Merging ───────────────────────────────────────────────────────────────────

def _agrees(small: HomingTree, big: HomingTree) -> bool:
    if not set(small.nodes) <= set(big.nodes) or not small.rejected <= big.rejected:
        return False
    return all(big.nodes[i].parent == n.parent for i, n in small.nodes.items())


def same_tree(a: HomingTree, b: HomingTree) -> bool:
    """Same node ids, parents and rejections."""
    return _agrees(a, b) and _agrees(b, a)


def merge_trees(local: HomingTree, remote: HomingTree, free_ray: FreeRay) -> HomingTree:
    """
    Combine two replicas.

    When one replica already contains the other (same ids, same parents) the
    larger one is returned as is.  Otherwise the union is rebuilt from an
    empty tree: communication nodes by id, then pose nodes by id, skipping
    every id either side rejected.  The result does not depend on which
    side initiates.
    """
    p, q = local.params, remote.params
    if not np.array_equal(local.base.position, remote.base.position):
        raise TreeIncompatibleError(
            f"base stations differ: {local.base.position.tolist()} vs {remote.base.position.tolist()}"
        )
    if p.d_e != q.d_e:
        raise TreeIncompatibleError(f"minimum edge lengths differ: {p.d_e} vs {q.d_e}")

    if _agrees(remote, local):
        return local
    if _agrees(local, remote):
        return remote

    # same id on both sides: the cheaper record wins
    best: dict[int, tuple[float, HomingNode]] = {}
    for tree in (local, remote):
        for nid, node in tree.nodes.items():
            acc = tree.accumulated_cost(nid)
            if nid not in best or acc < best[nid][0]:
                best[nid] = (acc, node)
    records = {nid: node for nid, (_, node) in best.items()}
    rejected = local.rejected | remote.rejected

    merged = HomingTree(local.base.position, local.params)
    merged.rejected = set(rejected)
    comm = sorted(i for i, n in records.items() if n.kind.is_comm and i != BASE_ID)
    pose = sorted(i for i, n in records.items() if not n.kind.is_comm)
    for nid in comm + pose:
        if nid in rejected:
            continue
        src = records[nid]
        insert_node(merged, HomingNode(src.id, src.kind, src.position), free_ray)
    logger.debug("merge_trees: rebuilt %d nodes (%d rejected)", len(merged), len(merged.rejected))
    return merged


# ── Radio codec ───────────────────────────────────────────────────────────────
#
#   magic    4s   b"SCHT"
#   version  B    1
#   params   5d   d_e, d_c, v_nominal, reserve_time, record_spacing
#   count    I    node records
#   record   H    body length (49), then body:
#            Q id, B kind, 3d position, q parent (-1 = none), d edge cost
#   nrej     I    rejected ids, then nrej × Q
#
# All fields big-endian.

MAGIC = b"SCHT"
VERSION = 1
_HEAD = struct.Struct(">4sB5dI")
_LEN = struct.Struct(">H")
_BODY = struct.Struct(">QB3dqd")
_COUNT = struct.Struct(">I")
_ID = struct.Struct(">Q")


def encode_tree(tree: HomingTree) -> bytes:
    p = tree.params
    out = [_HEAD.pack(MAGIC, VERSION, p.d_e, p.d_c, p.v_nominal, p.reserve_time,
                      p.record_spacing, len(tree.nodes))]
    for nid in sorted(tree.nodes):
        n = tree.nodes[nid]
        body = _BODY.pack(n.id, _KIND_CODES[n.kind], *(float(v) for v in n.position),
                          -1 if n.parent is None else n.parent, n.edge_cost)
        out.append(_LEN.pack(len(body)) + body)
    out.append(_COUNT.pack(len(tree.rejected)))
    out.extend(_ID.pack(i) for i in sorted(tree.rejected))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, fmt: struct.Struct, what: str) -> tuple:
        end = self.pos + fmt.size
        if end > len(self.data):
            raise TreeFormatError(f"truncated {what} at byte {self.pos}")
        values = fmt.unpack_from(self.data, self.pos)
        self.pos = end
        return values


def decode_tree(data: bytes) -> HomingTree:
    reader = _Reader(bytes(data))
    magic, version, d_e, d_c, v_nom, reserve, spacing, count = reader.take(_HEAD, "header")
    if magic != MAGIC:
        raise TreeFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise TreeFormatError(f"unsupported tree version {version}")
    try:
        params = HomingParams(d_e=d_e, d_c=d_c, v_nominal=v_nom,
                              reserve_time=reserve, record_spacing=spacing)
    except ValueError as exc:
        raise TreeFormatError(f"invalid header parameters: {exc}") from exc

    kinds = list(NodeKind)
    records = []
    for i in range(count):
        (length,) = reader.take(_LEN, f"record {i} length")
        if length != _BODY.size:
            raise TreeFormatError(f"record {i}: body length {length}, expected {_BODY.size}")
        nid, kind, x, y, z, parent, edge = reader.take(_BODY, f"record {i}")
        if kind >= len(kinds):
            raise TreeFormatError(f"record {i}: unknown node kind {kind}")
        records.append(HomingNode(nid, kinds[kind], np.array([x, y, z]),
                                  None if parent < 0 else parent, edge))
    (n_rej,) = reader.take(_COUNT, "rejected count")
    rejected = {reader.take(_ID, f"rejected id {i}")[0] for i in range(n_rej)}
    if reader.pos != len(reader.data):
        raise TreeFormatError(f"{len(reader.data) - reader.pos} trailing byte(s)")
    return _assemble(params, records, rejected)
