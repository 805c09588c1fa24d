"""Egocentric sensing by occlusion-aware ray casting on the truth grid.

Headings are degrees counter-clockwise from +x with the grid's y axis
pointing down, so heading 90 faces row ``y - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from types import MappingProxyType
from typing import Optional

import numpy as np

from fronsim.world import Cell, CellTruth, Scene

HEADING_STEP = 45


@dataclass(frozen=True)
class AgentPose:
    cell: Cell
    heading: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cell", (int(self.cell[0]), int(self.cell[1])))
        if self.heading % HEADING_STEP:
            raise ValueError(f"heading must be a multiple of {HEADING_STEP}, got {self.heading}")
        object.__setattr__(self, "heading", int(self.heading) % 360)

    def facing_cell(self) -> Cell:
        dx, dy = heading_vector(self.heading)
        return (self.cell[0] + dx, self.cell[1] + dy)


@dataclass(frozen=True)
class SensorConfig:
    fov: float = 90.0
    range: int = 12
    rays: int = 64

    def __post_init__(self):
        if not 0 < self.fov <= 360:
            raise ValueError("fov must be in (0, 360]")
        if self.range < 0:
            raise ValueError("range must be >= 0")
        if self.rays < 1:
            raise ValueError("rays must be >= 1")


@dataclass(frozen=True)
class ObjectHit:
    object_id: int
    category: str
    visible_cells: tuple[Cell, ...]
    nearest_distance: float


@dataclass(frozen=True, eq=False)
class Observation:
    pose: AgentPose
    visible: MappingProxyType  # Cell -> CellTruth, read-only (observations are cached)
    depth: tuple[float, ...]
    object_hits: tuple[ObjectHit, ...] = ()
    # parallel arrays over ``visible`` for vectorised consumers
    xs: np.ndarray = field(default=None, repr=False)
    ys: np.ndarray = field(default=None, repr=False)
    obstacle: np.ndarray = field(default=None, repr=False)

    def free_cells(self) -> list[Cell]:
        return [c for c, t in self.visible.items() if t == CellTruth.FREE]


def heading_vector(heading: int) -> Cell:
    """Unit grid step for a heading; diagonals step on both axes."""
    rad = math.radians(heading)
    return (int(round(math.cos(rad))), int(round(-math.sin(rad))))


def cell_bearing(origin: Cell, cell: Cell) -> float:
    """Bearing of ``cell`` seen from ``origin`` in the heading convention, degrees."""
    return math.degrees(math.atan2(origin[1] - cell[1], cell[0] - origin[0]))


def angle_offset(bearing: np.ndarray | float, heading: float) -> np.ndarray | float:
    """Signed offset wrapped to [-180, 180)."""
    return (np.asarray(bearing) - heading + 180.0) % 360.0 - 180.0


@lru_cache(maxsize=65536)
def _supercover_offsets(dx: int, dy: int) -> tuple[Cell, ...]:
    nx, ny = abs(dx), abs(dy)
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    x = y = 0
    cells = [(0, 0)]
    ix = iy = 0
    while ix < nx or iy < ny:
        decision = (1 + 2 * ix) * ny - (1 + 2 * iy) * nx
        if decision == 0:
            cells.append((x + sx, y))
            cells.append((x, y + sy))
            x += sx
            y += sy
            ix += 1
            iy += 1
        elif decision < 0:
            x += sx
            ix += 1
        else:
            y += sy
            iy += 1
        cells.append((x, y))
    return tuple(cells)


def supercover(a: Cell, b: Cell) -> list[Cell]:
    """All cells touched by the segment between the centres of ``a`` and ``b``.

    When the segment passes exactly through a lattice corner both side cells
    are included, so a diagonal gap between two obstacles is not see-through.
    """
    ax, ay = a
    return [(ax + ox, ay + oy) for ox, oy in _supercover_offsets(b[0] - ax, b[1] - ay)]


def line_of_sight(scene: Scene, a: Cell, b: Cell) -> bool:
    """True when no Obstacle lies strictly between ``a`` and ``b`` on the supercover."""
    if a == b:
        return True
    truth = scene.truth
    for x, y in supercover(a, b):
        if (x, y) == a or (x, y) == b:
            continue
        if truth[y, x]:
            return False
    return True


@lru_cache(maxsize=16384)
def _visible_disk(scene: Scene, cell: Cell, rng_cells: int):
    """Cells within ``rng_cells`` of ``cell`` with a clear line of sight, any bearing."""
    ax, ay = cell
    x0, x1 = max(0, ax - rng_cells), min(scene.width - 1, ax + rng_cells)
    y0, y1 = max(0, ay - rng_cells), min(scene.height - 1, ay + rng_cells)
    truth = scene.truth.tolist()
    r2 = rng_cells * rng_cells
    out = []
    for y in range(y0, y1 + 1):
        for x in range(x0, x1 + 1):
            if (x - ax) ** 2 + (y - ay) ** 2 > r2:
                continue
            if (x, y) == cell:
                out.append((x, y))
                continue
            clear = True
            for ox, oy in _supercover_offsets(x - ax, y - ay)[1:-1]:
                if truth[ay + oy][ax + ox]:
                    clear = False
                    break
            if clear:
                out.append((x, y))
    xs = np.array([c[0] for c in out], dtype=np.int32)
    ys = np.array([c[1] for c in out], dtype=np.int32)
    bearing = np.degrees(np.arctan2(ay - ys, xs - ax))
    return xs, ys, bearing


def ray_angles(heading: float, cfg: SensorConfig) -> np.ndarray:
    if cfg.rays == 1:
        return np.array([float(heading)])
    if cfg.fov >= 360:
        return heading - 180.0 + np.arange(cfg.rays) * 360.0 / cfg.rays
    return heading - cfg.fov / 2 + np.arange(cfg.rays) * cfg.fov / (cfg.rays - 1)


def cast_ray(scene: Scene, origin: Cell, angle_deg: float, max_range: float) -> float:
    """Distance from the origin centre to the first Obstacle boundary along the ray."""
    if max_range <= 0:
        return 0.0
    rad = math.radians(angle_deg)
    dx, dy = math.cos(rad), -math.sin(rad)
    x, y = origin
    # cell (x, y) spans [x - 0.5, x + 0.5]
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    t_delta_x = abs(1.0 / dx) if abs(dx) > 1e-12 else math.inf
    t_delta_y = abs(1.0 / dy) if abs(dy) > 1e-12 else math.inf
    t_max_x = 0.5 * t_delta_x
    t_max_y = 0.5 * t_delta_y
    truth = scene.truth
    h, w = truth.shape
    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            x += step_x
            t_max_x += t_delta_x
        else:
            t = t_max_y
            y += step_y
            t_max_y += t_delta_y
        if t >= max_range:
            return float(max_range)
        if not (0 <= x < w and 0 <= y < h) or truth[y, x]:
            return float(t)


@lru_cache(maxsize=32768)
def _sense_cached(scene: Scene, pose: AgentPose, cfg: SensorConfig) -> Observation:
    xs, ys, bearing = _visible_disk(scene, pose.cell, int(cfg.range))
    if cfg.fov >= 360:
        keep = np.ones(len(xs), dtype=bool)
    else:
        keep = np.abs(angle_offset(bearing, pose.heading)) <= cfg.fov / 2 + 1e-9
    keep |= (xs == pose.cell[0]) & (ys == pose.cell[1])
    xs, ys = xs[keep], ys[keep]
    obstacle = scene.truth[ys, xs].astype(bool)
    visible = MappingProxyType(
        {(x, y): CellTruth(int(o)) for x, y, o in zip(xs.tolist(), ys.tolist(), obstacle.tolist())}
    )

    depth = tuple(cast_ray(scene, pose.cell, a, cfg.range) for a in ray_angles(pose.heading, cfg))

    hits = []
    labels = scene.object_labels()[ys, xs]
    ax, ay = pose.cell
    for oid in sorted(set(labels.tolist()) - {-1}):
        sel = labels == oid
        cells = sorted(zip(xs[sel].tolist(), ys[sel].tolist()), key=lambda c: (c[1], c[0]))
        nearest = min(math.hypot(x - ax, y - ay) for x, y in cells)
        obj = scene.object_by_id(oid)
        hits.append(ObjectHit(oid, obj.category, tuple(cells), nearest))

    for arr in (xs, ys, obstacle):
        arr.setflags(write=False)
    return Observation(pose, visible, depth, tuple(hits), xs, ys, obstacle)


def sense(scene: Scene, pose: AgentPose, cfg: SensorConfig, rng: Optional[np.random.Generator] = None) -> Observation:
    """Observe the scene from ``pose``.

    Visible cells are those whose centre lies within ``cfg.range`` and inside
    the field of view, with a clear supercover line of sight from the agent
    cell. The first Obstacle on a line is itself visible. ``rng`` is accepted
    for interface stability; sensing is noise-free.
    """
    if not scene.is_free(pose.cell):
        raise ValueError(f"pose cell {pose.cell} is not free")
    return _sense_cached(scene, pose, cfg)
