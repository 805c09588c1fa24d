"""Decision loop: spin, pick a frontier or object waypoint, plan, act.

A deterministic shortest-path planner with per-step replanning stands in for
the learned point-goal controller. Unknown cells are treated as traversable.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, TextIO

import numpy as np

from fronsim.mapping import (
    OBSTACLE,
    BeliefMap,
    FrontierSet,
    ValueMap,
    cluster_frontiers,
    extract_frontiers,
    integrate_observation,
    update_value_map,
)
from fronsim.metrics import KINDS, EpisodeResult, modeled_time_ms, zero_calls
from fronsim.perception import (
    DEFAULT_LAMBDA,
    Kind,
    PipelineConfig,
    SemanticField,
    compute_semantic_field,
    detect,
    score_semantic,
    segment_nearest_point,
    verify,
)
from fronsim.sensing import AgentPose, SensorConfig, heading_vector, sense
from fronsim.world import DEFAULT_SUCCESS_RADIUS, Cell, Episode, Scene, distance_field

SPIN_STEPS = 8
SLACK_PENALTY = 0.01
SUCCESS_BONUS = 2.5


class Phase(str, Enum):
    SPIN = "Spin"
    EXPLORE = "Explore"
    GO_TO_OBJECT = "GoToObject"
    DONE = "Done"


class Action(str, Enum):
    FORWARD = "Forward"
    TURN_LEFT = "TurnLeft45"
    TURN_RIGHT = "TurnRight45"
    STOP = "Stop"


class ExplorationExhausted(RuntimeError):
    def __init__(self, message: str, trace: "Optional[StepTrace]" = None):
        super().__init__(message)
        self.trace = trace


@dataclass
class AgentState:
    pose: AgentPose
    phase: Phase = Phase.SPIN
    spin_remaining: int = SPIN_STEPS
    goal_waypoint: Optional[Cell] = None
    locked_object_waypoint: Optional[Cell] = None


@dataclass
class StepTrace:
    step_index: int
    action: Action
    module_calls: dict[str, int] = field(default_factory=zero_calls)
    detection_event: bool = False
    verified: bool = False
    pose: Optional[AgentPose] = None
    waypoint: Optional[Cell] = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "step_index": self.step_index,
                "action": self.action.value,
                "module_calls": self.module_calls,
                "detection_event": self.detection_event,
                "verified": self.verified,
                "pose": {"cell": list(self.pose.cell), "heading": self.pose.heading} if self.pose else None,
                "waypoint": list(self.waypoint) if self.waypoint else None,
            },
            sort_keys=True,
        )


@dataclass
class Streams:
    """One independent random stream per stochastic module."""

    scorer: np.random.Generator
    detector: np.random.Generator
    segmenter: np.random.Generator
    verifier: np.random.Generator
    sensor: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        children = np.random.SeedSequence(seed).spawn(5)
        return cls(*(np.random.default_rng(c) for c in children))


def spin_init(state: AgentState) -> list[Action]:
    """The in-place revolution still owed: one left turn per remaining spin step."""
    if state.phase != Phase.SPIN:
        raise ValueError("spin_init requires the Spin phase")
    return [Action.TURN_LEFT] * state.spin_remaining


def choose_waypoint(state: AgentState, frontiers: FrontierSet, detection: Optional[Cell] = None) -> Cell:
    if state.phase not in (Phase.EXPLORE, Phase.GO_TO_OBJECT):
        raise ValueError(f"cannot choose a waypoint in phase {state.phase.value}")
    if detection is not None:
        state.locked_object_waypoint = detection
    if state.locked_object_waypoint is not None:
        state.phase = Phase.GO_TO_OBJECT
        state.goal_waypoint = state.locked_object_waypoint
        return state.locked_object_waypoint
    if not frontiers:
        raise ExplorationExhausted("no frontiers left and no detection")
    state.goal_waypoint = frontiers[0].cell
    return state.goal_waypoint


def _passable(belief: BeliefMap) -> np.ndarray:
    return belief.grid != OBSTACLE


def plan_path(belief: BeliefMap, start: Cell, goal: Cell) -> Optional[list[Cell]]:
    """A* over cells not known to be Obstacle, Manhattan heuristic.

    Returns the cell sequence from ``start`` to ``goal`` inclusive, or ``None``.
    Open-list ties are broken by (y, x).
    """
    h, w = belief.shape
    passable = _passable(belief).tolist()
    gx, gy = goal
    if not (0 <= gx < w and 0 <= gy < h) or not passable[gy][gx]:
        return None
    g = {start: 0}
    parent: dict[Cell, Cell] = {}
    heap = [(abs(start[0] - gx) + abs(start[1] - gy), start[1], start[0])]
    closed = set()
    while heap:
        _, y, x = heapq.heappop(heap)
        cur = (x, y)
        if cur in closed:
            continue
        if cur == goal:
            path = [cur]
            while cur in parent:
                cur = parent[cur]
                path.append(cur)
            return path[::-1]
        closed.add(cur)
        gc = g[cur] + 1
        for nx, ny in ((x, y - 1), (x - 1, y), (x + 1, y), (x, y + 1)):
            if not (0 <= nx < w and 0 <= ny < h) or not passable[ny][nx]:
                continue
            n = (nx, ny)
            if gc < g.get(n, 1 << 30):
                g[n] = gc
                parent[n] = cur
                heapq.heappush(heap, (gc + abs(nx - gx) + abs(ny - gy), ny, nx))
    return None


def _turns(from_heading: int, to_heading: int) -> int:
    k = ((to_heading - from_heading) // 45) % 8
    return min(k, 8 - k)


def _turn_toward(from_heading: int, to_heading: int) -> Action:
    k = ((to_heading - from_heading) // 45) % 8
    return Action.TURN_LEFT if k <= 4 else Action.TURN_RIGHT


_DIR_HEADING = {(1, 0): 0, (0, -1): 90, (-1, 0): 180, (0, 1): 270}


def motion_toward(pose: AgentPose, dist: np.ndarray) -> Action:
    """First action along a shortest path down the distance field ``dist``.

    Among neighbours that lie on some shortest path, the one needing the
    fewest turns wins (ties by (y, x)); Forward when already facing it.
    """
    x, y = pose.cell
    d = dist[y, x]
    best = None
    for (dx, dy), heading in _DIR_HEADING.items():
        nx, ny = x + dx, y + dy
        if dist[ny, nx] == d - 1 and dist[ny, nx] >= 0:
            key = (_turns(pose.heading, heading), ny, nx)
            if best is None or key < best[0]:
                best = (key, heading)
    if best is None:
        raise RuntimeError(f"no descent from {pose.cell}")
    (turns, _, _), heading = best
    return Action.FORWARD if turns == 0 else _turn_toward(pose.heading, heading)


def _select_target(
    state: AgentState, belief: BeliefMap, frontiers: FrontierSet, detection: Optional[Cell]
) -> tuple[Cell, np.ndarray]:
    """Waypoint plus the distance field toward it, falling back to reachable frontiers."""
    passable = _passable(belief)
    x, y = state.pose.cell
    target = choose_waypoint(state, frontiers, detection)
    dist = distance_field(belief.grid, [target], passable, stop_at=state.pose.cell)
    if dist[y, x] >= 0:
        return target, dist
    if state.phase == Phase.GO_TO_OBJECT:
        # unreachable object point: drop the lock and keep exploring
        state.locked_object_waypoint = None
        state.phase = Phase.EXPLORE
    for f in frontiers:
        dist = distance_field(belief.grid, [f.cell], passable, stop_at=state.pose.cell)
        if dist[y, x] >= 0:
            state.goal_waypoint = f.cell
            return f.cell, dist
    raise ExplorationExhausted("no reachable frontier")


@dataclass
class EpisodeContext:
    scene: Scene
    goal: str
    field: SemanticField
    pipeline: PipelineConfig
    sensor: SensorConfig
    streams: Streams
    success_radius: int = DEFAULT_SUCCESS_RADIUS


def step(
    state: AgentState, belief: BeliefMap, vmap: ValueMap, ctx: EpisodeContext, step_index: int = 0
) -> tuple[Action, StepTrace]:
    """One full pipeline pass and the action it produces.

    Raises :class:`ExplorationExhausted` after the modules have run when there
    is neither a locked object nor a reachable frontier.
    """
    if state.phase == Phase.DONE:
        raise ValueError("episode already finished")
    pipe = ctx.pipeline
    pose = state.pose
    calls = zero_calls()
    trace = StepTrace(step_index, Action.STOP, calls, pose=pose)

    obs = sense(ctx.scene, pose, ctx.sensor, ctx.streams.sensor)
    integrate_observation(belief, obs)
    score = score_semantic(pipe.scorer, obs, ctx.field, ctx.streams.scorer)
    calls[Kind.SCORER.value] += 1
    update_value_map(vmap, obs, score, pose, ctx.sensor)
    frontiers = cluster_frontiers(extract_frontiers(belief), vmap)

    det = detect(pipe.detector, obs, ctx.goal, ctx.streams.detector)
    calls[Kind.DETECTOR.value] += 1
    detection = None
    if det is not None:
        trace.detection_event = True
        point = segment_nearest_point(pipe.segmenter, det, obs, pose, ctx.streams.segmenter)
        calls[Kind.SEGMENTER.value] += 1
        ok = True
        if pipe.verifier is not None:
            ok = verify(pipe.verifier, det, ctx.streams.verifier)
            calls[Kind.VERIFIER.value] += 1
        trace.verified = ok
        if ok:
            detection = point

    if state.phase == Phase.SPIN:
        if detection is not None:
            state.locked_object_waypoint = detection
        state.spin_remaining -= 1
        if state.spin_remaining <= 0:
            state.phase = Phase.GO_TO_OBJECT if state.locked_object_waypoint else Phase.EXPLORE
        trace.action = Action.TURN_LEFT
        trace.waypoint = state.locked_object_waypoint
        return trace.action, trace

    try:
        target, dist = _select_target(state, belief, frontiers, detection)
    except ExplorationExhausted as exc:
        exc.trace = trace
        raise
    trace.waypoint = target
    d = int(dist[pose.cell[1], pose.cell[0]])

    if state.phase == Phase.GO_TO_OBJECT and d <= ctx.success_radius:
        state.phase = Phase.DONE
        trace.action = Action.STOP
    elif d == 0:
        trace.action = Action.TURN_LEFT
    else:
        trace.action = motion_toward(pose, dist)
    return trace.action, trace


def apply_action(scene: Scene, pose: AgentPose, action: Action) -> tuple[AgentPose, int]:
    """New pose and the number of cells travelled. Blocked moves are no-ops."""
    if action == Action.TURN_LEFT:
        return AgentPose(pose.cell, pose.heading + 45), 0
    if action == Action.TURN_RIGHT:
        return AgentPose(pose.cell, pose.heading - 45), 0
    if action != Action.FORWARD:
        return pose, 0
    dx, dy = heading_vector(pose.heading)
    x, y = pose.cell
    target = (x + dx, y + dy)
    if not scene.is_free(target):
        return pose, 0
    if dx and dy:
        # diagonal: no corner cutting, counted as two cell transitions
        if not (scene.is_free((x + dx, y)) and scene.is_free((x, y + dy))):
            return pose, 0
        return AgentPose(target, pose.heading), 2
    return AgentPose(target, pose.heading), 1


def run_episode(
    scene: Scene,
    episode: Episode,
    pipeline: PipelineConfig,
    cfg: SensorConfig,
    seed: int,
    success_radius: int = DEFAULT_SUCCESS_RADIUS,
    lam: float = DEFAULT_LAMBDA,
    trace_out: Optional[TextIO] = None,
    on_step: Optional[Callable[[int, AgentState, BeliefMap, ValueMap], None]] = None,
) -> EpisodeResult:
    """Run one episode to Stop, exhaustion or the step budget."""
    if episode.scene_id != scene.id:
        raise ValueError(f"episode is for scene {episode.scene_id!r}, got {scene.id!r}")
    ctx = EpisodeContext(
        scene=scene,
        goal=episode.goal_category,
        field=compute_semantic_field(scene, episode.goal_category, lam, success_radius),
        pipeline=pipeline,
        sensor=cfg,
        streams=Streams.from_seed(seed),
        success_radius=success_radius,
    )
    success_cells = scene.success_cells(episode.goal_category, success_radius)
    to_goal = distance_field(scene.truth, success_cells)

    state = AgentState(episode.start)
    belief = BeliefMap.like(scene)
    vmap = ValueMap.like(scene)
    calls = zero_calls()
    path = [state.pose.cell]
    travelled = 0
    reward = 0.0
    steps = 0
    success = False
    termination = "max_steps"

    while steps < episode.max_steps:
        before = int(to_goal[state.pose.cell[1], state.pose.cell[0]])
        try:
            action, trace = step(state, belief, vmap, ctx, steps)
        except ExplorationExhausted as exc:
            steps += 1
            for k, v in exc.trace.module_calls.items():
                calls[k] += v
            reward -= SLACK_PENALTY
            termination = "exhausted"
            if trace_out is not None:
                trace_out.write(exc.trace.to_json() + "\n")
            break
        steps += 1
        for k, v in trace.module_calls.items():
            calls[k] += v
        if trace_out is not None:
            trace_out.write(trace.to_json() + "\n")
        state.pose, moved = apply_action(scene, state.pose, action)
        if moved:
            travelled += moved
            path.append(state.pose.cell)
        after = int(to_goal[state.pose.cell[1], state.pose.cell[0]])
        reward += (before - after) - SLACK_PENALTY
        if on_step is not None:
            on_step(steps, state, belief, vmap)
        if action == Action.STOP:
            success = state.pose.cell in success_cells
            termination = "success" if success else "false_stop"
            if success:
                reward += SUCCESS_BONUS
            break

    return EpisodeResult(
        success=success,
        path_length=travelled,
        shortest_path_len=episode.shortest_path_len,
        steps=steps,
        module_calls=calls,
        modeled_time_ms=modeled_time_ms(calls, pipeline),
        reward=round(reward, 10),
        path=tuple(path),
        termination=termination,
        scene_id=scene.id,
        goal_category=episode.goal_category,
    )
