"""Belief map, frontier extraction and the confidence-weighted value map."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from fronsim.sensing import AgentPose, Observation, SensorConfig, angle_offset
from fronsim.world import Cell

UNKNOWN, FREE, OBSTACLE = -1, 0, 1
WAYPOINT_VALUE_RADIUS = 2

_EIGHT = np.ones((3, 3), dtype=bool)


class BeliefMap:
    """Per-cell occupancy knowledge: -1 unknown, 0 free, 1 obstacle."""

    def __init__(self, width: int, height: int):
        self.grid = np.full((height, width), UNKNOWN, dtype=np.int8)

    @classmethod
    def like(cls, scene) -> "BeliefMap":
        return cls(scene.width, scene.height)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def state(self, cell: Cell) -> int:
        return int(self.grid[cell[1], cell[0]])

    def known_count(self) -> int:
        return int(np.count_nonzero(self.grid != UNKNOWN))

    def copy(self) -> "BeliefMap":
        out = BeliefMap.__new__(BeliefMap)
        out.grid = self.grid.copy()
        return out


class ValueMap:
    def __init__(self, width: int, height: int):
        self.value = np.zeros((height, width), dtype=np.float64)
        self.confidence = np.zeros((height, width), dtype=np.float64)

    @classmethod
    def like(cls, scene) -> "ValueMap":
        return cls(scene.width, scene.height)

    def copy(self) -> "ValueMap":
        out = ValueMap.__new__(ValueMap)
        out.value = self.value.copy()
        out.confidence = self.confidence.copy()
        return out


@dataclass(frozen=True)
class FrontierWaypoint:
    cell: Cell
    cluster_size: int
    value: float


FrontierSet = list  # list[FrontierWaypoint], sorted by value desc then (y, x)


def integrate_observation(belief: BeliefMap, obs: Observation) -> BeliefMap:
    """Write every visible cell's true state into the belief (in place)."""
    if len(obs.xs):
        belief.grid[obs.ys, obs.xs] = obs.obstacle.astype(np.int8)
    return belief


def frontier_mask(belief: BeliefMap) -> np.ndarray:
    g = belief.grid
    unknown = np.pad(g == UNKNOWN, 1, constant_values=False)
    near_unknown = unknown[:-2, 1:-1] | unknown[2:, 1:-1] | unknown[1:-1, :-2] | unknown[1:-1, 2:]
    return (g == FREE) & near_unknown


def extract_frontiers(belief: BeliefMap) -> set[Cell]:
    """Known-Free cells with at least one Unknown 4-neighbour."""
    ys, xs = np.nonzero(frontier_mask(belief))
    return set(zip(xs.tolist(), ys.tolist()))


def _disk(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def cluster_frontiers(cells: Iterable[Cell], vmap: ValueMap) -> FrontierSet:
    """Group frontier cells into 8-connected clusters, one waypoint each.

    The waypoint is the member nearest the cluster centroid (ties to the
    smallest (y, x)); its value is the best value-map entry within
    ``WAYPOINT_VALUE_RADIUS`` cells.
    """
    cells = list(cells)
    if not cells:
        return []
    mask = np.zeros(vmap.value.shape, dtype=bool)
    mask[[c[1] for c in cells], [c[0] for c in cells]] = True
    labels, n = ndimage.label(mask, structure=_EIGHT)
    ys, xs = np.nonzero(labels)  # row-major, so index order is (y, x) order
    lab = labels[ys, xs] - 1
    size = np.bincount(lab, minlength=n)
    cx = np.bincount(lab, weights=xs, minlength=n) / size
    cy = np.bincount(lab, weights=ys, minlength=n) / size
    d2 = (xs - cx[lab]) ** 2 + (ys - cy[lab]) ** 2
    order = np.lexsort((np.arange(len(xs)), d2, lab))
    first = order[np.searchsorted(lab[order], np.arange(n))]
    best = ndimage.maximum_filter(vmap.value, footprint=_disk(WAYPOINT_VALUE_RADIUS), mode="constant", cval=0.0)
    out = [
        FrontierWaypoint((int(xs[i]), int(ys[i])), int(size[k]), float(best[ys[i], xs[i]]))
        for k, i in enumerate(first)
    ]
    out.sort(key=lambda f: (-f.value, f.cell[1], f.cell[0]))
    return out


def view_confidence(obs: Observation, pose: AgentPose, cfg: SensorConfig) -> np.ndarray:
    """cos^2 falloff of the angular offset from the optical axis, per visible cell."""
    ax, ay = pose.cell
    bearing = np.degrees(np.arctan2(ay - obs.ys, obs.xs - ax))
    theta = np.abs(angle_offset(bearing, pose.heading))
    theta = np.where((obs.xs == ax) & (obs.ys == ay), 0.0, theta)
    half = cfg.fov / 2
    theta = np.minimum(theta, half)
    return np.cos(theta / half * (math.pi / 2)) ** 2


def update_value_map(
    vmap: ValueMap, obs: Observation, score: float, pose: AgentPose, cfg: SensorConfig
) -> ValueMap:
    """Confidence-weighted fusion of one view score into every visible Free cell (in place)."""
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score {score} outside [0, 1]")
    free = ~obs.obstacle
    if not free.any():
        return vmap
    xs, ys = obs.xs[free], obs.ys[free]
    c_new = view_confidence(obs, pose, cfg)[free]
    v_old = vmap.value[ys, xs]
    c_old = vmap.confidence[ys, xs]
    total = c_new + c_old
    ok = total > 0
    fused_v = np.where(ok, (c_new * score + c_old * v_old) / np.where(ok, total, 1.0), v_old)
    fused_c = np.where(ok, (c_new**2 + c_old**2) / np.where(ok, total, 1.0), c_old)
    vmap.value[ys, xs] = np.clip(fused_v, 0.0, 1.0)
    vmap.confidence[ys, xs] = np.clip(fused_c, 0.0, 1.0)
    return vmap


# --------------------------------------------------------------------------
# snapshot export

_BELIEF_RGB = {UNKNOWN: (128, 128, 128), FREE: (255, 255, 255), OBSTACLE: (0, 0, 0)}


def heat_ramp(v: np.ndarray) -> np.ndarray:
    """256-level black-red-yellow ramp; ``v`` in [0, 1] -> uint8 RGB."""
    i = np.clip(np.rint(np.asarray(v) * 255), 0, 255).astype(np.int32)
    r = np.minimum(255, 2 * i)
    g = np.maximum(0, 2 * i - 255)
    b = np.zeros_like(i)
    return np.stack([r, g, b], axis=-1).astype(np.uint8)


def render_snapshot(
    belief: BeliefMap,
    vmap: ValueMap,
    frontiers: FrontierSet = (),
    pose: Optional[AgentPose] = None,
    target: Optional[Cell] = None,
) -> np.ndarray:
    """Belief panel and value panel side by side, with markers, as an RGB array."""
    h, w = belief.shape
    left = np.zeros((h, w, 3), dtype=np.uint8)
    for state, rgb in _BELIEF_RGB.items():
        left[belief.grid == state] = rgb
    right = left.copy()
    scored = vmap.confidence > 0
    right[scored] = heat_ramp(vmap.value)[scored]

    def mark(img, cell, rgb, size):
        x, y = cell
        r = size // 2
        img[max(0, y - r) : y + r + 1, max(0, x - r) : x + r + 1] = rgb

    for panel in (left, right):
        for f in frontiers:
            mark(panel, f.cell, (0, 160, 255), 3)
        if target is not None:
            mark(panel, target, (0, 200, 0), 3)
        if pose is not None:
            mark(panel, pose.cell, (220, 0, 220), 1)
    sep = np.full((h, 1, 3), 64, dtype=np.uint8)
    return np.concatenate([left, sep, right], axis=1)


def to_ppm(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)
