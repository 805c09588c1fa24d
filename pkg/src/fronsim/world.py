"""Grid scenes, object instances and episode sampling.

Scenes are 2D occupancy grids built by recursive room splitting with
carved doors. ``truth`` is a ``(height, width)`` uint8 array where 1 marks
an obstacle. Cells are addressed as ``(x, y)`` tuples throughout.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

Cell = tuple[int, int]

DEFAULT_VOCABULARY = ("chair", "bed", "potted_plant", "toilet", "tv", "couch")
DEFAULT_SCALE = 0.25
DEFAULT_SUCCESS_RADIUS = 4
DEFAULT_MAX_STEPS = 500
MIN_ROOM = 3
MAX_RETRIES = 32

NEIGHBORS4 = ((1, 0), (-1, 0), (0, 1), (0, -1))


class CellTruth(IntEnum):
    FREE = 0
    OBSTACLE = 1


class GenerationError(RuntimeError):
    pass


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObjectInstance:
    id: int
    category: str
    cells: tuple[Cell, ...]


@dataclass(frozen=True, eq=False)
class Scene:
    """Ground-truth world. Immutable; hashed by identity so it can key caches."""

    id: str
    truth: np.ndarray
    objects: tuple[ObjectInstance, ...] = ()
    scale: float = DEFAULT_SCALE
    _success: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.truth.setflags(write=False)

    @property
    def width(self) -> int:
        return int(self.truth.shape[1])

    @property
    def height(self) -> int:
        return int(self.truth.shape[0])

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and self.truth[cell[1], cell[0]] == CellTruth.FREE

    def free_cells(self) -> list[Cell]:
        ys, xs = np.nonzero(self.truth == CellTruth.FREE)
        return [(int(x), int(y)) for y, x in zip(ys, xs)]

    def categories(self) -> list[str]:
        return sorted({o.category for o in self.objects})

    def instances(self, category: str) -> list[ObjectInstance]:
        return [o for o in self.objects if o.category == category]

    def success_cells(self, category: str, radius: int = DEFAULT_SUCCESS_RADIUS) -> frozenset[Cell]:
        """Free cells within ``radius`` geodesic steps of any instance of ``category``."""
        key = (category, radius)
        if key not in self._success:
            sources = [c for o in self.instances(category) for c in o.cells]
            dist = distance_field(self.truth, sources)
            ys, xs = np.nonzero((dist >= 0) & (dist <= radius))
            self._success[key] = frozenset((int(x), int(y)) for y, x in zip(ys, xs))
        return self._success[key]

    def object_labels(self) -> np.ndarray:
        """Per-cell object id, -1 where no object."""
        if "_labels" not in self._success:
            labels = np.full(self.truth.shape, -1, dtype=np.int32)
            for o in self.objects:
                for x, y in o.cells:
                    labels[y, x] = o.id
            labels.setflags(write=False)
            self._success["_labels"] = labels
        return self._success["_labels"]

    def object_by_id(self, object_id: int) -> ObjectInstance:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise KeyError(object_id)


@dataclass(frozen=True)
class SceneParams:
    width: int
    height: int
    room_count: int = 1
    object_density: float = 0.0
    vocabulary: tuple[str, ...] = DEFAULT_VOCABULARY
    scale: float = DEFAULT_SCALE


@dataclass(frozen=True)
class Episode:
    scene_id: str
    start: "AgentPose"
    goal_category: str
    shortest_path_len: int
    max_steps: int = DEFAULT_MAX_STEPS

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "start": {"cell": list(self.start.cell), "heading": self.start.heading},
            "goal_category": self.goal_category,
            "shortest_path_len": self.shortest_path_len,
            "max_steps": self.max_steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        from fronsim.sensing import AgentPose

        start = AgentPose(tuple(d["start"]["cell"]), int(d["start"]["heading"]))
        return cls(
            scene_id=d["scene_id"],
            start=start,
            goal_category=d["goal_category"],
            shortest_path_len=int(d["shortest_path_len"]),
            max_steps=int(d.get("max_steps", DEFAULT_MAX_STEPS)),
        )


@dataclass(frozen=True)
class EpisodeSet:
    episodes: tuple[Episode, ...]
    seed: int

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self):
        return iter(self.episodes)

    def __getitem__(self, i: int) -> Episode:
        return self.episodes[i]

    def __add__(self, other: "EpisodeSet") -> "EpisodeSet":
        return EpisodeSet(self.episodes + other.episodes, self.seed)

    def to_json(self) -> str:
        doc = {"seed": self.seed, "episodes": [e.to_dict() for e in self.episodes]}
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EpisodeSet":
        doc = json.loads(text)
        return cls(tuple(Episode.from_dict(e) for e in doc["episodes"]), int(doc["seed"]))


# --------------------------------------------------------------------------
# distances


def distance_field(
    truth: np.ndarray,
    sources: Iterable[Cell],
    passable: Optional[np.ndarray] = None,
    stop_at: Optional[Cell] = None,
) -> np.ndarray:
    """Multi-source 4-connected BFS. Returns int32 distances, -1 where unreachable.

    ``passable`` defaults to the Free cells of ``truth``. The map border is
    never passable (scene borders are always obstacle). With ``stop_at`` the
    search ends once that cell is labelled; every cell strictly closer to the
    sources is final at that point, farther cells may still read -1.
    """
    h, w = truth.shape
    if passable is None:
        passable = truth == CellTruth.FREE
    passable = passable.copy()
    passable[0, :] = passable[-1, :] = passable[:, 0] = passable[:, -1] = False
    flat_pass = passable.ravel().tolist()
    dist = [-1] * (h * w)
    queue: deque[int] = deque()
    for x, y in sources:
        i = y * w + x
        if flat_pass[i] and dist[i] < 0:
            dist[i] = 0
            queue.append(i)
    stop = -1 if stop_at is None else stop_at[1] * w + stop_at[0]
    while queue and (stop < 0 or dist[stop] < 0):
        i = queue.popleft()
        d = dist[i] + 1
        for j in (i + 1, i - 1, i + w, i - w):
            if flat_pass[j] and dist[j] < 0:
                dist[j] = d
                queue.append(j)
    dist = np.asarray(dist, dtype=np.int32)
    return dist.reshape(h, w)


def geodesic_distance(scene: Scene, start: Cell, to_cells: Iterable[Cell]) -> Optional[int]:
    """Shortest 4-connected path length through Free cells, ``None`` if unreachable."""
    targets = {tuple(c) for c in to_cells}
    if not targets:
        return None
    if tuple(start) in targets:
        return 0
    w = scene.width
    passable = (scene.truth == CellTruth.FREE).ravel().tolist()
    tgt = {y * w + x for x, y in targets if scene.in_bounds((x, y))}
    s = start[1] * w + start[0]
    seen = {s}
    frontier = [s]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for i in frontier:
            for j in (i + 1, i - 1, i + w, i - w):
                if j in seen or not passable[j]:
                    continue
                if j in tgt:
                    return d
                seen.add(j)
                nxt.append(j)
        frontier = nxt
    return None


def flood_fill(truth: np.ndarray, start: Cell) -> set[Cell]:
    dist = distance_field(truth, [start])
    ys, xs = np.nonzero(dist >= 0)
    return {(int(x), int(y)) for y, x in zip(ys, xs)}


# --------------------------------------------------------------------------
# generation


@dataclass
class _Rect:
    x0: int
    y0: int
    x1: int
    y1: int  # inclusive

    @property
    def w(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def h(self) -> int:
        return self.y1 - self.y0 + 1


def _split_rooms(truth: np.ndarray, room_count: int, rng: np.random.Generator) -> list[tuple[str, int, int, int]]:
    h, w = truth.shape
    rooms = [_Rect(1, 1, w - 2, h - 2)]
    walls: list[tuple[str, int, int, int]] = []
    while len(rooms) < room_count:
        splittable = [r for r in rooms if r.w >= 2 * MIN_ROOM + 1 or r.h >= 2 * MIN_ROOM + 1]
        if not splittable:
            raise GenerationError(f"cannot fit {room_count} rooms in {w}x{h}")
        room = max(splittable, key=lambda r: r.w * r.h)
        rooms.remove(room)
        can_v = room.w >= 2 * MIN_ROOM + 1
        can_h = room.h >= 2 * MIN_ROOM + 1
        if can_v and can_h:
            vertical = room.w > room.h if room.w != room.h else bool(rng.integers(2))
        else:
            vertical = can_v
        if vertical:
            x = int(rng.integers(room.x0 + MIN_ROOM, room.x1 - MIN_ROOM + 1))
            truth[room.y0 : room.y1 + 1, x] = CellTruth.OBSTACLE
            walls.append(("v", x, room.y0, room.y1))
            rooms += [_Rect(room.x0, room.y0, x - 1, room.y1), _Rect(x + 1, room.y0, room.x1, room.y1)]
        else:
            y = int(rng.integers(room.y0 + MIN_ROOM, room.y1 - MIN_ROOM + 1))
            truth[y, room.x0 : room.x1 + 1] = CellTruth.OBSTACLE
            walls.append(("h", y, room.x0, room.x1))
            rooms += [_Rect(room.x0, room.y0, room.x1, y - 1), _Rect(room.x0, y + 1, room.x1, room.y1)]
    return walls


def _carve_doors(truth: np.ndarray, walls, rng: np.random.Generator) -> set[Cell]:
    doors = set()
    for axis, k, lo, hi in walls:
        if axis == "v":
            options = [(k, y) for y in range(lo, hi + 1) if truth[y, k - 1] == 0 and truth[y, k + 1] == 0]
        else:
            options = [(x, k) for x in range(lo, hi + 1) if truth[k - 1, x] == 0 and truth[k + 1, x] == 0]
        if not options:
            raise GenerationError("no door position available")
        x, y = options[int(rng.integers(len(options)))]
        truth[y, x] = CellTruth.FREE
        doors.add((x, y))
    return doors


def _place_objects(truth, doors, params: SceneParams, rng) -> list[ObjectInstance]:
    free = [(int(x), int(y)) for y, x in zip(*np.nonzero(truth == 0)) if (int(x), int(y)) not in doors]
    target = math.ceil(params.object_density * (len(free) + len(doors)))
    if target == 0:
        return []
    occupied: set[Cell] = set()
    blocked: set[Cell] = set(doors)  # occupied cells and their 4-neighbours
    objects: list[ObjectInstance] = []
    attempts = 0
    while len(occupied) < target:
        attempts += 1
        if attempts > 50 * target + 100:
            raise GenerationError(f"object_density {params.object_density} not satisfiable")
        seed_cell = free[int(rng.integers(len(free)))]
        if seed_cell in blocked:
            continue
        size = int(rng.integers(1, 5))
        cells = [seed_cell]
        for _ in range(size - 1):
            base = cells[int(rng.integers(len(cells)))]
            dx, dy = NEIGHBORS4[int(rng.integers(4))]
            c = (base[0] + dx, base[1] + dy)
            if truth[c[1], c[0]] == 0 and c not in blocked and c not in cells:
                cells.append(c)
        category = params.vocabulary[int(rng.integers(len(params.vocabulary)))]
        obj = ObjectInstance(len(objects), category, tuple(sorted(cells, key=lambda c: (c[1], c[0]))))
        objects.append(obj)
        for x, y in cells:
            occupied.add((x, y))
            blocked.add((x, y))
            for dx, dy in NEIGHBORS4:
                blocked.add((x + dx, y + dy))
    return objects


def generate_scene(seed: int, params: SceneParams) -> Scene:
    """Build a reproducible room-and-corridor scene.

    Rooms come from recursive splitting of the interior; every split wall gets
    one door. Objects are small 4-connected blobs on Free cells, kept one cell
    apart from each other and off door cells.
    """
    if params.width < 8 or params.height < 8:
        raise ValueError("width and height must be >= 8")
    if params.room_count < 1:
        raise ValueError("room_count must be >= 1")
    if not 0.0 <= params.object_density <= 1.0:
        raise ValueError("object_density must be in [0, 1]")
    if not params.vocabulary or any(not v or any(ch.isspace() for ch in v) for v in params.vocabulary):
        raise ValueError("vocabulary entries must be non-empty and contain no whitespace")

    rng = np.random.default_rng(seed)
    last_error: Exception | None = None
    for _ in range(MAX_RETRIES):
        truth = np.ones((params.height, params.width), dtype=np.uint8)
        truth[1:-1, 1:-1] = CellTruth.FREE
        try:
            walls = _split_rooms(truth, params.room_count, rng)
            doors = _carve_doors(truth, walls, rng)
            free = np.count_nonzero(truth == 0)
            ys, xs = np.nonzero(truth == 0)
            if len(flood_fill(truth, (int(xs[0]), int(ys[0])))) != free:
                raise GenerationError("free space is disconnected")
            objects = _place_objects(truth, doors, params, rng)
        except GenerationError as exc:
            last_error = exc
            continue
        scene_id = f"s{seed}-{params.width}x{params.height}-r{params.room_count}"
        return Scene(scene_id, truth, tuple(objects), params.scale)
    raise GenerationError(f"generation failed after {MAX_RETRIES} attempts: {last_error}")


# --------------------------------------------------------------------------
# episodes


def make_episodes(
    scene: Scene,
    n: int,
    seed: int,
    d_min: int = 8,
    d_max: int = 64,
    max_steps: int = DEFAULT_MAX_STEPS,
    success_radius: int = DEFAULT_SUCCESS_RADIUS,
) -> EpisodeSet:
    from fronsim.sensing import AgentPose

    if n == 0:
        return EpisodeSet((), seed)
    if not scene.objects:
        raise SamplingError("scene has no objects")
    if d_min < 1:
        raise ValueError("d_min must be >= 1")

    candidates: list[tuple[str, Cell, int]] = []
    for category in scene.categories():
        dist = distance_field(scene.truth, scene.success_cells(category, success_radius))
        ys, xs = np.nonzero((dist >= d_min) & (dist <= d_max))
        for y, x in zip(ys, xs):
            candidates.append((category, (int(x), int(y)), int(dist[y, x])))
    if len(candidates) < n:
        raise SamplingError(f"only {len(candidates)} valid starts for {n} episodes")

    rng = np.random.default_rng(seed)
    picks = rng.choice(len(candidates), size=n, replace=False)
    headings = rng.integers(0, 8, size=n) * 45
    episodes = []
    for idx, heading in zip(picks, headings):
        category, cell, d = candidates[int(idx)]
        episodes.append(Episode(scene.id, AgentPose(cell, int(heading)), category, d, max_steps))
    return EpisodeSet(tuple(episodes), seed)


# --------------------------------------------------------------------------
# scene file format


def dumps_scene(scene: Scene) -> str:
    lines = [f"SCENE v1 {scene.width} {scene.height} {scene.scale!r}"]
    for row in scene.truth:
        lines.append("".join("#" if v else "." for v in row))
    for o in scene.objects:
        coords = " ".join(f"{x},{y}" for x, y in o.cells)
        lines.append(f"{o.id} {o.category} {coords}")
    return "\n".join(lines) + "\n"


def loads_scene(text: str, scene_id: str) -> Scene:
    lines = text.splitlines()
    header = lines[0].split()
    if len(header) != 5 or header[:2] != ["SCENE", "v1"]:
        raise ValueError(f"bad scene header: {lines[0]!r}")
    width, height, scale = int(header[2]), int(header[3]), float(header[4])
    rows = lines[1 : 1 + height]
    if len(rows) != height or any(len(r) != width for r in rows):
        raise ValueError("scene grid does not match header dimensions")
    truth = np.array([[1 if ch == "#" else 0 for ch in r] for r in rows], dtype=np.uint8)
    objects = []
    for line in lines[1 + height :]:
        if not line.strip():
            continue
        parts = line.split()
        cells = tuple(tuple(int(v) for v in p.split(",")) for p in parts[2:])
        objects.append(ObjectInstance(int(parts[0]), parts[1], cells))
    return Scene(scene_id, truth, tuple(objects), scale)


def save_scene(scene: Scene, path: Path) -> None:
    Path(path).write_text(dumps_scene(scene), encoding="utf-8")


def load_scene(path: Path) -> Scene:
    path = Path(path)
    return loads_scene(path.read_text(encoding="utf-8"), path.stem)


def check_scene(scene: Scene) -> list[str]:
    """Return a list of violated scene invariants (empty when valid)."""
    problems = []
    t = scene.truth
    if not (t[0].all() and t[-1].all() and t[:, 0].all() and t[:, -1].all()):
        problems.append("border is not fully obstacle")
    free = scene.free_cells()
    if not free:
        problems.append("no free cells")
    elif len(flood_fill(t, free[0])) != len(free):
        problems.append("free cells are not 4-connected")
    for o in scene.objects:
        if not o.cells:
            problems.append(f"object {o.id} is empty")
            continue
        if any(not scene.is_free(c) for c in o.cells):
            problems.append(f"object {o.id} covers a non-free cell")
        cells = set(o.cells)
        seen = {o.cells[0]}
        stack = [o.cells[0]]
        while stack:
            x, y = stack.pop()
            for dx, dy in NEIGHBORS4:
                c = (x + dx, y + dy)
                if c in cells and c not in seen:
                    seen.add(c)
                    stack.append(c)
        if seen != cells:
            problems.append(f"object {o.id} is not 4-connected")
    return problems


def sorted_cells(cells: Sequence[Cell]) -> list[Cell]:
    return sorted(cells, key=lambda c: (c[1], c[0]))
