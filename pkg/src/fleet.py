"""
Discrete-time multi-robot mission engine.

Each tick advances every airborne robot in id order through the loop

    track → battery → collision check → pose record → scan → decide

and every ``sync_interval`` seconds the robots (and the base station) that
can hear each other fold their homing trees together.  A mission is a pure
function of its :class:`~src.models.MissionConfig`; all randomness is drawn
from seed sequences keyed by (mission seed, robot id, scan index).
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import (
    AppendError,
    CaveSimError,
    ConstraintError,
    MissionAborted,
    NoHomingPathError,
    NoPathError,
    StartInvalidError,
)
from .homing import (
    HomingNode,
    HomingPlan,
    HomingTree,
    NodeKind,
    homing_trigger,
    insert_node,
    merge_trees,
    node_id,
    plan_home,
    same_tree,
)
from .mapping import CellState, MapSnapshot, OccupancyMap, filter_scan, union_maps
from .models import MissionConfig, ReferenceState, RobotMode
from .motion import Trajectory, append_trajectory, hover_trajectory, sample_trajectory
from .pathplan import (
    ObstacleIndex,
    Path,
    build_obstacle_index,
    plan_path,
    postprocess_path,
    shortcut_path,
)
from .policies import rank_goals
from .tracker import ReferenceTracker
from .world_file import load_world
from .worldsim import (
    GroundTruthWorld,
    box_room_world,
    collision_free_segment,
    corridor_world,
    generate_cave,
    simulate_scan,
    spawn_point,
)

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[str], None]

# Samples ahead of the tracker from which an appended plan starts.
LEAD_SAMPLES = 2
# Consecutive fruitless decisions before a robot gives up and homes.
MAX_FAILED_ROUNDS = 3
# Pause after a fruitless decision (s).
RETRY_DELAY = 1.0
# Minimum time between two decisions of one robot (s).
DECISION_INTERVAL = 0.5
LANDING_TOLERANCE = 0.25   # m
LANDING_SPEED = 0.25       # m/s


# ── World ─────────────────────────────────────────────────────────────────────

def build_world(config: MissionConfig) -> GroundTruthWorld:
    """Ground truth for ``config.world``."""
    src = config.world
    if src.kind == "file":
        return load_world(src.path)
    if src.kind == "corridor":
        return corridor_world(src.length, src.width, src.height, src.resolution)
    if src.kind == "room":
        return box_room_world(src.size, src.resolution)
    return generate_cave(src.seed, src.cave)


# ── Communication ─────────────────────────────────────────────────────────────

@dataclass
class CommGraph:
    """Disc-model radio graph; endpoint *i* is row *i* of the positions."""
    edges: set[tuple[int, int]]
    labels: np.ndarray

    def adjacent(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def connected(self, i: int, j: int) -> bool:
        return bool(self.labels[i] == self.labels[j])

    @property
    def is_connected(self) -> bool:
        return len(np.unique(self.labels)) <= 1

    @property
    def components(self) -> list[list[int]]:
        """Endpoint indices per component, ascending, ordered by smallest member."""
        groups: dict[int, list[int]] = {}
        for i, label in enumerate(self.labels):
            groups.setdefault(int(label), []).append(i)
        return sorted(groups.values(), key=lambda g: g[0])


def comm_graph(positions: np.ndarray, d_c: float) -> CommGraph:
    """Edge between every pair of endpoints at most *d_c* apart."""
    pts = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return CommGraph(set(), np.zeros(0, dtype=int))
    # query_pairs uses <=, pad a hair for round-off at exactly d_c
    pairs = cKDTree(pts).query_pairs(d_c * (1.0 + 1e-12) + 1e-12)
    edges = {(i, j) for i, j in pairs if np.linalg.norm(pts[i] - pts[j]) <= d_c + 1e-9}
    rows = [i for i, _ in edges]
    cols = [j for _, j in edges]
    adjacency = coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(adjacency, directed=False)
    return CommGraph(edges, labels)


# ── Robot state ───────────────────────────────────────────────────────────────

@dataclass
class RobotState:
    id: int
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    heading: float = 0.0
    battery_remaining: float = 0.0
    mode: RobotMode = RobotMode.IDLE
    trajectory: Optional[Trajectory] = None
    progress: int = 0


class _Robot:
    """Engine-side bookkeeping around one :class:`RobotState`."""

    def __init__(self, robot_id: int, config: MissionConfig, world: GroundTruthWorld) -> None:
        spawn = spawn_point(world, robot_id)
        self.state = RobotState(robot_id, spawn.copy(), battery_remaining=config.battery_budget)
        self.policy = config.policy_for(robot_id)
        self.spawn = spawn
        self.launch_time = robot_id * config.stagger
        self.map = OccupancyMap(config.mapping)
        self.tracker: Optional[ReferenceTracker] = None
        self.tree: Optional[HomingTree] = None

        self.breadcrumbs: list[np.ndarray] = []
        self.next_node = 0
        self.since_record = 0.0
        self.scan_index = 0
        self.next_scan = 0.0
        self.next_decision = 0.0
        self.needs_plan = False
        self.failed_rounds = 0
        self.goal: Optional[np.ndarray] = None
        self.visited: list[np.ndarray] = []
        self.blacklist: set[tuple[int, int, int]] = set()

        self.landing: Optional[np.ndarray] = None
        self.homing_started: Optional[float] = None
        self.end_time: Optional[float] = None
        self.flight_time = 0.0
        self.trajectory_length = 0.0
        self.homing_length = 0.0
        self.samples: list[tuple[float, np.ndarray, float]] = []

    @property
    def id(self) -> int:
        return self.state.id

    def record(self, t: float) -> None:
        self.samples.append((t, self.state.position.copy(), float(self.state.heading)))

    def executed(self, t_s: float) -> Optional[Trajectory]:
        """Flown positions as a trajectory sampled every engine tick."""
        if not self.samples:
            return None
        return Trajectory(
            positions = np.array([p for _, p, _ in self.samples]),
            headings  = np.array([h for _, _, h in self.samples]),
            t_s       = t_s,
        )


# ── Metrics ───────────────────────────────────────────────────────────────────

@dataclass
class RobotMetrics:
    id: int
    policy: str
    status: str
    launch_time: float          # s
    flight_time: float          # s airborne
    trajectory_length: float    # m
    explored_volume: float      # m³ known in the robot's own map
    exploration_time: float     # s from launch to the homing decision
    homing_time: float          # s from the homing decision to landing
    homing_length: float        # m flown while homing
    increase_pct: Optional[float] = None
    landing: Optional[list[float]] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class MissionMetrics:
    robots: list[RobotMetrics]
    merged_explored_volume: float
    relay_connected: bool
    mission_time: float
    baseline_exploration_time: Optional[list[float]] = None

    def to_dict(self) -> dict:
        return {
            "robots":                    [r.to_dict() for r in self.robots],
            "merged_explored_volume":    self.merged_explored_volume,
            "relay_connected":           self.relay_connected,
            "mission_time":              self.mission_time,
            "baseline_exploration_time": self.baseline_exploration_time,
        }


@dataclass
class MissionEvent:
    time: float
    robot: Optional[int]
    kind: str
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"t": round(self.time, 6), "robot": self.robot, "event": self.kind, **self.detail}


def _round_list(v: np.ndarray) -> list[float]:
    return [round(float(x), 4) for x in np.asarray(v).reshape(-1)]


# ── Engine ────────────────────────────────────────────────────────────────────

class MissionEngine:
    """
    Owns the world, the robots and the base station replica of the homing
    tree.  Drive it with :func:`step` (or :meth:`run`) and read
    :meth:`metrics` at the end.
    """

    def __init__(
        self,
        config: MissionConfig,
        world: Optional[GroundTruthWorld] = None,
        progress_cb: Optional[ProgressCallback] = None,
    ) -> None:
        config.validate()
        self.config = config
        self.world = world if world is not None else build_world(config)
        if abs(self.world.resolution - config.mapping.resolution) > 1e-12:
            logger.warning("mapping resolution %.3f differs from the world's %.3f; using the world's",
                           config.mapping.resolution, self.world.resolution)
            config = dataclasses.replace(
                config, mapping=dataclasses.replace(config.mapping, resolution=self.world.resolution))
            self.config = config
        self.progress_cb = progress_cb
        self.time = 0.0
        self.events: list[MissionEvent] = []
        self.base_tree = HomingTree(self.world.base_station, config.homing)
        self.robots = [_Robot(i, config, self.world) for i in range(config.robot_count)]
        self._next_sync = config.sync_interval
        self._ray_clearance = max(0.0, config.planner.d_min - self.world.resolution)
        self._ray_cache: dict[bytes, bool] = {}

    # ── Helpers ──────────────────────────────────────────────────────────────

    def free_ray(self, a: np.ndarray, b: np.ndarray) -> bool:
        """Ground-truth visibility with clearance, memoised per point pair."""
        ka = np.asarray(a, dtype=float).tobytes()
        kb = np.asarray(b, dtype=float).tobytes()
        key = ka + kb if ka <= kb else kb + ka
        hit = self._ray_cache.get(key)
        if hit is None:
            hit = collision_free_segment(self.world, a, b, self._ray_clearance)
            self._ray_cache[key] = hit
        return hit

    def _emit(self, t: float, robot: Optional[int], kind: str, **detail) -> None:
        self.events.append(MissionEvent(t, robot, kind, detail))
        if kind in ("launch", "homing", "landed", "failed"):
            message = f"t={t:7.1f}s robot {robot}: {kind}"
            if "reason" in detail:
                message += f" ({detail['reason']})"
            logger.info(message)
            if self.progress_cb:
                self.progress_cb(message)
        else:
            logger.debug("t=%.1fs robot %s: %s %s", t, robot, kind, detail)

    @property
    def done(self) -> bool:
        if self.time >= self.config.max_mission_time - 1e-9:
            return True
        return all(r.state.mode in (RobotMode.LANDED, RobotMode.FAILED) for r in self.robots)

    # ── Tick ─────────────────────────────────────────────────────────────────

    def step(self, dt: float) -> "MissionEngine":
        if dt <= 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        now = self.time
        for robot in self.robots:
            self._step_robot(robot, now, dt)
        self.time = now + dt
        if self.time + 1e-9 >= self._next_sync:
            self._sync(self.time)
            self._next_sync += self.config.sync_interval
        return self

    def run(self) -> "MissionEngine":
        while not self.done:
            self.step(self.config.dt)
        for r in self.robots:
            if r.state.mode.airborne:
                self._emit(self.time, r.id, "timeout", mode=r.state.mode.value)
        return self

    def _step_robot(self, r: _Robot, now: float, dt: float) -> None:
        s = r.state
        if s.mode is RobotMode.IDLE:
            if now + 1e-9 < r.launch_time:
                return
            self._launch(r, now)
        if not s.mode.airborne:
            return

        before = s.position
        ref = r.tracker.step(dt)
        t = now + dt
        s.position = ref.position.copy()
        s.velocity = ref.velocity.copy()
        s.heading = float(ref.heading)
        s.progress = r.tracker.progress_index
        moved = float(np.linalg.norm(s.position - before))
        r.trajectory_length += moved
        if s.mode is RobotMode.HOMING:
            r.homing_length += moved
        r.flight_time += dt
        s.battery_remaining = max(0.0, s.battery_remaining - dt)
        r.record(t)

        if not self.world.is_free(s.position):
            self._fail(r, t, "collision")
            return
        if s.battery_remaining <= 0.0:
            self._fail(r, t, "battery depleted")
            return

        if s.mode is RobotMode.EXPLORING:
            r.since_record += moved
            if r.since_record >= self.config.homing.record_spacing:
                r.since_record = 0.0
                self._record_pose(r, t)

        scanned = False
        if t + 1e-9 >= r.next_scan:
            self._scan(r, t)
            scanned = True

        if s.mode is RobotMode.EXPLORING:
            self._explore(r, t, scanned)
        elif s.mode is RobotMode.HOMING:
            self._check_landing(r, t)

    # ── Lifecycle ────────────────────────────────────────────────────────────

    def _launch(self, r: _Robot, t: float) -> None:
        s = r.state
        r.tree = self.base_tree.copy()
        r.tracker = ReferenceTracker(self.config.motion, ReferenceState(position=s.position.copy()))
        s.trajectory = r.tracker.trajectory
        r.breadcrumbs.append(s.position.copy())
        r.next_scan = t
        r.next_decision = t
        r.record(t)
        if s.battery_remaining <= 0.0:
            r.homing_started = t
            self._land(r, t)
            return
        s.mode = RobotMode.EXPLORING
        self._emit(t, r.id, "launch", position=_round_list(s.position), policy=r.policy)

    def _fail(self, r: _Robot, t: float, reason: str) -> None:
        r.state.mode = RobotMode.FAILED
        r.state.velocity = np.zeros(3)
        r.end_time = t
        self._emit(t, r.id, "failed", reason=reason, position=_round_list(r.state.position))

    def _land(self, r: _Robot, t: float) -> None:
        s = r.state
        if r.landing is not None:
            s.position = r.landing.copy()
        s.velocity = np.zeros(3)
        s.mode = RobotMode.LANDED
        r.end_time = t
        if self.config.homing_mode == "relay":
            node = HomingNode(node_id(r.id, r.next_node), NodeKind.LANDED_ROBOT, s.position.copy())
            r.next_node += 1
            insert_node(r.tree, node, self.free_ray)
        self._emit(t, r.id, "landed", position=_round_list(s.position),
                   battery=round(s.battery_remaining, 3))

    # ── Perception ───────────────────────────────────────────────────────────

    def _scan(self, r: _Robot, t: float) -> None:
        cfg = self.config
        s = r.state
        r.next_scan += 1.0 / cfg.sensor.scan_rate
        while r.next_scan <= t + 1e-9:
            r.next_scan += 1.0 / cfg.sensor.scan_rate
        seed = int(np.random.SeedSequence([cfg.seed, r.id, r.scan_index]).generate_state(1)[0])
        origin = s.position
        if cfg.pose_noise_sigma > 0.0:
            rng = np.random.default_rng([cfg.seed, r.id, r.scan_index, 1])
            noisy = s.position + rng.normal(0.0, cfg.pose_noise_sigma, 3)
            if self.world.in_extents(noisy):
                origin = noisy
        r.scan_index += 1
        scan = simulate_scan(self.world, origin, s.heading, cfg.sensor, seed, timestamp=t)
        scan = filter_scan(scan, cfg.mapping.filter_neighborhood, cfg.mapping.filter_percentile)
        r.map.integrate(scan)
        if s.mode.airborne and self._blocked(r):
            self._emit(t, r.id, "blocked", progress=s.progress, mode=s.mode.value)
            if s.mode is RobotMode.EXPLORING:
                r.needs_plan = True
            else:
                self._replan_home(r, t)

    def _blocked(self, r: _Robot) -> bool:
        """True when the rest of the active trajectory crosses a cell now mapped occupied."""
        pts = r.tracker.trajectory.positions[r.tracker.progress_index:]
        if len(pts) < 2:
            return False
        mids = 0.5 * (pts[1:] + pts[:-1])
        cells = r.map.cell_of(np.concatenate([pts, mids]))
        return bool((r.map.states(cells) == CellState.OCCUPIED).any())

    def _record_pose(self, r: _Robot, t: float) -> None:
        s = r.state
        r.breadcrumbs.append(s.position.copy())
        node = HomingNode(node_id(r.id, r.next_node), NodeKind.POSE, s.position.copy())
        r.next_node += 1
        if insert_node(r.tree, node, self.free_ray):
            self._emit(t, r.id, "tree_insert", node=node.id, parent=r.tree.node(node.id).parent)

    # ── Decisions ────────────────────────────────────────────────────────────

    def _explore(self, r: _Robot, t: float, scanned: bool) -> None:
        s = r.state
        if scanned and homing_trigger(s, r.tree, self.free_ray, self.config.homing,
                                      self.config.homing_mode, np.array(r.breadcrumbs)):
            self._start_homing(r, t, "battery")
            return
        due = r.tracker.remaining_time <= self.config.replan_lead and t + 1e-9 >= r.next_decision
        if r.needs_plan or due:
            self._decide(r, t)

    def _decide(self, r: _Robot, t: float) -> None:
        cfg = self.config
        s = r.state
        r.next_decision = t + DECISION_INTERVAL
        snap = r.map.snapshot()
        ranked = rank_goals(r.policy, snap, s, cfg.policy, anchor=r.spawn,
                            visited=r.visited, blacklist=r.blacklist)
        if not len(ranked):
            self._decision_failed(r, t, "no frontier")
            return
        index = build_obstacle_index(snap)
        current = r.tracker.trajectory
        can_append = not r.needs_plan and len(current) > 1 and not r.tracker.finished
        for appending in ((True, False) if can_append else (False,)):
            if appending:
                start = current.positions[min(len(current) - 1, r.tracker.progress_index + LEAD_SAMPLES)]
            else:
                start = s.position
            try:
                if self._plan_to_frontier(r, t, snap, index, ranked[:cfg.policy.max_goal_attempts],
                                          start, appending):
                    return
            except StartInvalidError as exc:
                self._emit(t, r.id, "plan_failed", reason=str(exc))
                continue
            break
        self._decision_failed(r, t, "no reachable frontier")

    def _plan_to_frontier(
        self,
        r: _Robot,
        t: float,
        snap: MapSnapshot,
        index: ObstacleIndex,
        goals: np.ndarray,
        start: np.ndarray,
        appending: bool,
    ) -> bool:
        cfg = self.config
        s = r.state
        for goal in goals:
            try:
                path = plan_path(snap, start, goal, cfg.planner.d_min, cfg.planner, index)
            except NoPathError:
                r.blacklist.add(tuple(int(v) for v in snap.cell_of(goal)))
                continue
            path = postprocess_path(path, index, cfg.planner.d_min, cfg.planner.postprocess_iters, snap)
            path = shortcut_path(path, index, cfg.planner.d_min, snap)
            r.visited.append(np.asarray(goal, dtype=float).copy())
            if len(path) < 2:
                continue
            try:
                self._follow(r, path, appending)
            except ConstraintError as exc:
                logger.debug("robot %d: goal %s: %s", r.id, np.round(goal, 2).tolist(), exc)
                r.blacklist.add(tuple(int(v) for v in snap.cell_of(goal)))
                continue
            r.goal = np.asarray(goal, dtype=float).copy()
            r.failed_rounds = 0
            r.needs_plan = False
            self._emit(t, r.id, "goal", goal=_round_list(goal), length=round(path.length, 3),
                       appended=appending)
            return True
        return False

    def _follow(self, r: _Robot, path: Path, appending: bool) -> None:
        """Hand *path* to the tracker, appended to the active trajectory when possible."""
        c = self.config.motion
        tracker = r.tracker
        if appending and len(tracker.trajectory) > 1:
            try:
                traj = append_trajectory(tracker.trajectory, tracker.progress_index, path, c, v_end=0.0)
                tracker.set_trajectory(traj, keep_time=True)
                r.state.trajectory = traj
                return
            except (AppendError, ConstraintError) as exc:
                logger.debug("robot %d: %s; sampling afresh", r.id, exc)
        first = path.waypoints[1] - path.waypoints[0]
        v_start = max(0.0, float(r.state.velocity @ first) / max(float(np.linalg.norm(first)), 1e-12))
        traj = sample_trajectory(path, c, v_start=v_start, v_end=0.0, initial_heading=r.state.heading)
        tracker.set_trajectory(traj)
        r.state.trajectory = traj

    def _decision_failed(self, r: _Robot, t: float, reason: str) -> None:
        r.failed_rounds += 1
        r.next_decision = t + RETRY_DELAY
        self._emit(t, r.id, "plan_failed", reason=reason, round=r.failed_rounds)
        if r.needs_plan:
            # the active trajectory is blocked: hold position
            r.tracker.set_trajectory(hover_trajectory(r.state.position, r.state.heading, self.config.motion.t_s))
            r.state.trajectory = r.tracker.trajectory
            r.needs_plan = False
        if r.failed_rounds >= MAX_FAILED_ROUNDS:
            self._start_homing(r, t, "exhausted")

    # ── Homing ───────────────────────────────────────────────────────────────

    def _home_plan(self, r: _Robot) -> HomingPlan:
        s = r.state
        try:
            return plan_home(r.tree, s.position, self.free_ray, self.config.homing_mode, np.array(r.breadcrumbs))
        except NoHomingPathError as exc:
            logger.warning("robot %d: %s; landing in place", r.id, exc)
            return HomingPlan(s.position[None, :].copy(), s.position.copy(), 0.0)

    def _fly_home(self, r: _Robot, plan: HomingPlan, appending: bool) -> None:
        s = r.state
        if not plan.is_empty:
            try:
                self._follow(r, plan.path, appending)
                return
            except ConstraintError as exc:
                logger.warning("robot %d: homing trajectory infeasible (%s); landing in place", r.id, exc)
        r.landing = s.position.copy()
        r.tracker.set_trajectory(hover_trajectory(s.position, s.heading, self.config.motion.t_s))
        s.trajectory = r.tracker.trajectory

    def _start_homing(self, r: _Robot, t: float, reason: str) -> None:
        s = r.state
        plan = self._home_plan(r)
        s.mode = RobotMode.HOMING
        r.homing_started = t
        r.landing = plan.landing.copy()
        self._fly_home(r, plan, appending=True)
        self._emit(t, r.id, "homing", reason=reason, cost=round(plan.cost, 3),
                   landing=_round_list(plan.landing), nodes=plan.node_ids)

    def _replan_home(self, r: _Robot, t: float) -> None:
        """Fly home afresh from the current position; the active homing trajectory is blocked."""
        plan = self._home_plan(r)
        r.landing = plan.landing.copy()
        self._fly_home(r, plan, appending=False)
        self._emit(t, r.id, "homing_replan", cost=round(plan.cost, 3),
                   landing=_round_list(plan.landing), nodes=plan.node_ids)

    def _check_landing(self, r: _Robot, t: float) -> None:
        s = r.state
        if not r.tracker.finished:
            return
        if np.linalg.norm(s.position - r.landing) > LANDING_TOLERANCE:
            return
        if np.linalg.norm(s.velocity) > LANDING_SPEED:
            return
        self._land(r, t)

    # ── Radio ────────────────────────────────────────────────────────────────

    def _sync(self, t: float) -> None:
        """Fold the trees of every radio component together, base first then robots by id."""
        members: list[Optional[_Robot]] = [None]
        positions = [self.world.base_station]
        for r in self.robots:
            if r.state.mode in (RobotMode.EXPLORING, RobotMode.HOMING, RobotMode.LANDED):
                members.append(r)
                positions.append(r.state.position)
        if len(members) < 2:
            return
        graph = comm_graph(np.array(positions), self.config.homing.d_c)
        for component in graph.components:
            if len(component) < 2:
                continue
            trees = [self.base_tree if members[i] is None else members[i].tree for i in component]
            merged = trees[0]
            for other in trees[1:]:
                merged = merge_trees(merged, other, self.free_ray)
            changed = []
            for i, tree in zip(component, trees):
                if tree is merged or same_tree(tree, merged):
                    continue
                if members[i] is None:
                    self.base_tree = merged.copy()
                    changed.append("base")
                else:
                    members[i].tree = merged.copy()
                    changed.append(members[i].id)
            if changed:
                self._emit(t, None, "merge", members=changed, nodes=len(merged))

    # ── Results ──────────────────────────────────────────────────────────────

    def launched(self) -> list[_Robot]:
        return [r for r in self.robots if r.tracker is not None]

    def metrics(self) -> MissionMetrics:
        robots = []
        for r in self.robots:
            end = r.end_time if r.end_time is not None else self.time
            launched = r.tracker is not None
            explore_end = r.homing_started if r.homing_started is not None else end
            robots.append(RobotMetrics(
                id                = r.id,
                policy            = r.policy,
                status            = r.state.mode.value,
                launch_time       = r.launch_time,
                flight_time       = round(r.flight_time, 6),
                trajectory_length = round(r.trajectory_length, 6),
                explored_volume   = round(r.map.explored_volume, 6),
                exploration_time  = round(max(0.0, explore_end - r.launch_time), 6) if launched else 0.0,
                homing_time       = round(end - r.homing_started, 6) if r.homing_started is not None else 0.0,
                homing_length     = round(r.homing_length, 6),
                landing           = _round_list(r.state.position)
                                    if r.state.mode is RobotMode.LANDED else None,
            ))
        maps = [r.map for r in self.launched()]
        merged = union_maps(maps, self.config.mapping).explored_volume if maps else 0.0
        return MissionMetrics(
            robots                 = robots,
            merged_explored_volume = round(merged, 6),
            relay_connected        = self.relay_connected(),
            mission_time           = round(self.time, 6),
        )

    def relay_connected(self) -> bool:
        """Base plus every landed robot form one radio component."""
        landed = [r.state.position for r in self.robots if r.state.mode is RobotMode.LANDED]
        graph = comm_graph(np.array([self.world.base_station, *landed]), self.config.homing.d_c)
        return graph.is_connected


def step(engine: MissionEngine, dt: float) -> MissionEngine:
    """Advance *engine* by one tick of *dt* seconds."""
    return engine.step(dt)


# ── Missions ──────────────────────────────────────────────────────────────────

@dataclass
class MissionResult:
    config: MissionConfig
    world: GroundTruthWorld
    metrics: MissionMetrics
    maps: list[OccupancyMap]
    trajectories: list[Optional[Trajectory]]
    start_times: list[Optional[float]]
    trees: list[Optional[HomingTree]]
    base_tree: HomingTree
    events: list[MissionEvent]
    baseline: Optional[MissionMetrics] = None

    def merged_map(self) -> OccupancyMap:
        return union_maps(self.maps, self.config.mapping)


def _execute(config: MissionConfig, world: GroundTruthWorld,
             progress_cb: Optional[ProgressCallback]) -> MissionEngine:
    return MissionEngine(config, world, progress_cb).run()


def _result(
    engine: MissionEngine,
    world: GroundTruthWorld,
    metrics: MissionMetrics,
    baseline: Optional[MissionMetrics] = None,
) -> MissionResult:
    return MissionResult(
        config       = engine.config,
        world        = world,
        metrics      = metrics,
        maps         = [r.map for r in engine.robots],
        trajectories = [r.executed(engine.config.dt) for r in engine.robots],
        start_times  = [r.samples[0][0] if r.samples else None for r in engine.robots],
        trees        = [r.tree for r in engine.robots],
        base_tree    = engine.base_tree,
        events       = engine.events,
        baseline     = baseline,
    )


def _aborted(engine: MissionEngine, world: GroundTruthWorld, exc: CaveSimError, stage: str) -> MissionAborted:
    engine._emit(engine.time, None, "aborted", stage=stage, reason=str(exc))
    logger.error("%s aborted at t=%.1fs: %s", stage, engine.time, exc)
    return MissionAborted(f"{stage} aborted at t={engine.time:.1f}s: {exc}",
                          partial=_result(engine, world, engine.metrics()))


def run_mission(
    config: MissionConfig,
    world: Optional[GroundTruthWorld] = None,
    progress_cb: Optional[ProgressCallback] = None,
) -> MissionResult:
    """
    Run all robots to completion.  In relay mode with ``compute_baseline``
    the mission is repeated with ``homing_mode="return_to_base"`` and each
    robot's exploration-time increase over that baseline is reported.
    """
    config.validate()
    world = world if world is not None else build_world(config)
    engine = MissionEngine(config, world, progress_cb)
    try:
        engine.run()
    except CaveSimError as exc:
        raise _aborted(engine, world, exc, "mission") from exc
    metrics = engine.metrics()

    baseline = None
    if config.compute_baseline and config.homing_mode == "relay":
        if progress_cb:
            progress_cb("baseline: return-to-base rerun")
        base_cfg = MissionConfig.from_dict(config.to_dict())
        base_cfg.homing_mode = "return_to_base"
        base_cfg.compute_baseline = False
        try:
            baseline = _execute(base_cfg, world, None).metrics()
        except CaveSimError as exc:
            raise _aborted(engine, world, exc, "baseline") from exc
        metrics.baseline_exploration_time = [r.exploration_time for r in baseline.robots]
        for ours, theirs in zip(metrics.robots, baseline.robots):
            if theirs.exploration_time > 0.0:
                ours.increase_pct = round(
                    100.0 * (ours.exploration_time - theirs.exploration_time) / theirs.exploration_time, 6)

    logger.info("mission finished at t=%.1fs: %s", engine.time,
                ", ".join(f"robot {r.id} {r.status}" for r in metrics.robots))
    return _result(engine, world, metrics, baseline)
