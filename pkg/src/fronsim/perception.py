"""Behavioural and cost stand-ins for the neural modules.

Each module is a :class:`ModuleProfile`: a measured cost (parameters, VRAM,
per-call latency) plus accuracy knobs that drive a simple stochastic model.
Cost figures for the built-in profiles are the published measurements; the
accuracy knobs are modelling inputs and are flagged ``synthetic``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from fronsim.sensing import AgentPose, Observation
from fronsim.world import DEFAULT_SUCCESS_RADIUS, Cell, CellTruth, Scene, distance_field

log = logging.getLogger(__name__)

DEFAULT_VRAM_BUDGET_MIB = 12288
DEFAULT_LAMBDA = 16.0


class Kind(str, Enum):
    SCORER = "scorer"
    DETECTOR = "detector"
    SEGMENTER = "segmenter"
    VERIFIER = "verifier"


ACCURACY_DEFAULTS: dict[Kind, dict[str, float]] = {
    Kind.SCORER: {"noise_sigma": 0.1},
    Kind.DETECTOR: {"p_tp": 0.9, "p_fp": 0.005, "detect_range": 10.0},
    Kind.SEGMENTER: {"point_error_cells": 0.0},
    Kind.VERIFIER: {"p_accept_true": 1.0, "p_reject_false": 1.0},
}

_PROBABILITY_KNOBS = {"noise_sigma", "p_tp", "p_fp", "p_accept_true", "p_reject_false"}


class ProfileNotFoundError(KeyError):
    pass


class BudgetExceededError(ValueError):
    def __init__(self, total_mib: float, budget_mib: float, name: str = ""):
        self.total_mib = total_mib
        self.budget_mib = budget_mib
        label = f"pipeline {name!r}" if name else "pipeline"
        super().__init__(f"{label} needs {total_mib:g} MiB VRAM, over the {budget_mib:g} MiB budget")


@dataclass(frozen=True)
class ModuleProfile:
    name: str
    kind: Kind
    params_millions: Optional[float]
    vram_mib: Optional[float]
    latency_ms: float
    accuracy: Mapping[str, float] = field(default_factory=dict)
    synthetic: bool = True  # accuracy knobs are modelling inputs, not measurements

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        merged = dict(ACCURACY_DEFAULTS[self.kind])
        unknown = set(self.accuracy) - set(merged)
        if unknown:
            raise ValueError(f"{self.name}: unknown accuracy knobs for {self.kind.value}: {sorted(unknown)}")
        merged.update(self.accuracy)
        object.__setattr__(self, "accuracy", merged)
        if self.vram_mib is not None and self.vram_mib < 0:
            raise ValueError(f"{self.name}: vram_mib must be >= 0")
        if self.latency_ms < 0:
            raise ValueError(f"{self.name}: latency_ms must be >= 0")
        for k, v in merged.items():
            if k in _PROBABILITY_KNOBS and not 0.0 <= v <= 1.0:
                raise ValueError(f"{self.name}: {k}={v} outside [0, 1]")
            if v < 0:
                raise ValueError(f"{self.name}: {k} must be >= 0")

    def knob(self, key: str) -> float:
        return float(self.accuracy[key])

    def tuned(self, name: Optional[str] = None, latency_ms: Optional[float] = None, **knobs: float) -> "ModuleProfile":
        """Copy with some accuracy knobs (and optionally name/latency) replaced."""
        acc = dict(self.accuracy)
        acc.update(knobs)
        return replace(
            self,
            name=name or self.name,
            latency_ms=self.latency_ms if latency_ms is None else latency_ms,
            accuracy=acc,
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "params_millions": self.params_millions,
            "vram_mib": self.vram_mib,
            "latency_ms": self.latency_ms,
            "accuracy": dict(self.accuracy),
            "synthetic": self.synthetic,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModuleProfile":
        return cls(
            name=d["name"],
            kind=Kind(d["kind"]),
            params_millions=d.get("params_millions"),
            vram_mib=d.get("vram_mib"),
            latency_ms=float(d["latency_ms"]),
            accuracy=dict(d.get("accuracy", {})),
            synthetic=bool(d.get("synthetic", True)),
        )


# Params/VRAM from the model table, latencies from the inference-speed table.
# MobileSAM and nanoLLaVA latencies are knobs: only component totals were published.
_BUILTINS = (
    ModuleProfile("BLIP-2", Kind.SCORER, 1400.0, 2976, 123.6, {"noise_sigma": 0.05}),
    ModuleProfile("CLIP-ViT-B32", Kind.SCORER, 151.3, 806, 75.0, {"noise_sigma": 0.10}),
    ModuleProfile("YOLOv7-E6E", Kind.DETECTOR, 151.7, 3032, 206.2, {"p_tp": 0.95, "p_fp": 0.002, "detect_range": 10}),
    ModuleProfile("YOLOv7-W6", Kind.DETECTOR, 70.4, 1482, 167.6, {"p_tp": 0.85, "p_fp": 0.004, "detect_range": 9}),
    ModuleProfile("YOLOv7", Kind.DETECTOR, None, None, 168.2, {"p_tp": 0.75, "p_fp": 0.008, "detect_range": 8}),
    ModuleProfile("MobileSAM", Kind.SEGMENTER, 9.8, 486, 12.0, {"point_error_cells": 0}),
    ModuleProfile("nanoLLaVA", Kind.VERIFIER, 1100.0, 6002, 180.0, {"p_accept_true": 0.95, "p_reject_false": 0.9}),
)


def builtin_profiles() -> dict[str, ModuleProfile]:
    return {p.name: p for p in _BUILTINS}


def load_profiles(path: Path, base: Optional[Mapping[str, ModuleProfile]] = None) -> dict[str, ModuleProfile]:
    """Built-ins (or ``base``) overridden by name with the profiles in a JSON file."""
    registry = dict(builtin_profiles() if base is None else base)
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    items = doc["profiles"] if isinstance(doc, dict) else doc
    for item in items:
        p = ModuleProfile.from_dict(item)
        registry[p.name] = p
    return registry


def get_profile(name: str, registry: Optional[Mapping[str, ModuleProfile]] = None) -> ModuleProfile:
    registry = builtin_profiles() if registry is None else registry
    try:
        return registry[name]
    except KeyError:
        raise ProfileNotFoundError(f"unknown module profile {name!r}") from None


def vram_total(cfg: "PipelineConfig | Iterable[Optional[ModuleProfile]]") -> float:
    """Sum of VRAM over the configured modules. Unknown VRAM counts as 0."""
    modules = cfg.modules() if isinstance(cfg, PipelineConfig) else [m for m in cfg if m is not None]
    total = 0.0
    for m in modules:
        if m.vram_mib is None:
            log.warning("VRAM of %s is unknown; counted as 0 MiB", m.name)
            continue
        total += m.vram_mib
    return int(total) if float(total).is_integer() else total


@dataclass(frozen=True)
class PipelineConfig:
    scorer: ModuleProfile
    detector: ModuleProfile
    segmenter: ModuleProfile
    verifier: Optional[ModuleProfile] = None
    vram_budget_mib: float = DEFAULT_VRAM_BUDGET_MIB
    name: str = ""

    def __post_init__(self):
        for slot, kind in (
            ("scorer", Kind.SCORER),
            ("detector", Kind.DETECTOR),
            ("segmenter", Kind.SEGMENTER),
            ("verifier", Kind.VERIFIER),
        ):
            m = getattr(self, slot)
            if m is not None and m.kind != kind:
                raise ValueError(f"{slot} slot needs a {kind.value} profile, got {m.name} ({m.kind.value})")
        total = vram_total(self.modules())
        if total > self.vram_budget_mib:
            raise BudgetExceededError(total, self.vram_budget_mib, self.name)

    def modules(self) -> list[ModuleProfile]:
        return [m for m in (self.scorer, self.detector, self.segmenter, self.verifier) if m is not None]

    def latency_ms(self, kind: Kind) -> float:
        m = {Kind.SCORER: self.scorer, Kind.DETECTOR: self.detector,
             Kind.SEGMENTER: self.segmenter, Kind.VERIFIER: self.verifier}[Kind(kind)]
        return 0.0 if m is None else m.latency_ms

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "scorer": self.scorer.to_dict(),
            "detector": self.detector.to_dict(),
            "segmenter": self.segmenter.to_dict(),
            "verifier": None if self.verifier is None else self.verifier.to_dict(),
            "vram_budget_mib": self.vram_budget_mib,
        }


PRESETS: dict[str, tuple[str, str, str, Optional[str]]] = {
    "baseline": ("BLIP-2", "YOLOv7-E6E", "MobileSAM", None),
    "baseline-vqa": ("BLIP-2", "YOLOv7-E6E", "MobileSAM", "nanoLLaVA"),
    "clip-e6e": ("CLIP-ViT-B32", "YOLOv7-E6E", "MobileSAM", None),
    "clip-e6e-vqa": ("CLIP-ViT-B32", "YOLOv7-E6E", "MobileSAM", "nanoLLaVA"),
    "clip-yolov7-vqa": ("CLIP-ViT-B32", "YOLOv7", "MobileSAM", "nanoLLaVA"),
    "final": ("CLIP-ViT-B32", "YOLOv7-W6", "MobileSAM", None),
    "final-vqa": ("CLIP-ViT-B32", "YOLOv7-W6", "MobileSAM", "nanoLLaVA"),
}


def build_pipeline(spec: "str | Mapping", registry: Optional[Mapping[str, ModuleProfile]] = None) -> PipelineConfig:
    """Resolve a preset name or an inline mapping into a :class:`PipelineConfig`.

    Inline slots may name a registry profile or hold a full profile object.
    """
    registry = builtin_profiles() if registry is None else registry
    if isinstance(spec, str):
        if spec not in PRESETS:
            raise ProfileNotFoundError(f"unknown pipeline preset {spec!r}")
        s, d, g, v = PRESETS[spec]
        spec = {"name": spec, "scorer": s, "detector": d, "segmenter": g, "verifier": v}

    def resolve(slot):
        val = spec.get(slot)
        if val is None:
            return None
        if isinstance(val, str):
            return get_profile(val, registry)
        return ModuleProfile.from_dict(val)

    return PipelineConfig(
        scorer=resolve("scorer"),
        detector=resolve("detector"),
        segmenter=resolve("segmenter"),
        verifier=resolve("verifier"),
        vram_budget_mib=float(spec.get("vram_budget_mib", DEFAULT_VRAM_BUDGET_MIB)),
        name=spec.get("name", ""),
    )


# --------------------------------------------------------------------------
# behaviour models


@dataclass(frozen=True, eq=False)
class SemanticField:
    goal: str
    values: np.ndarray
    lam: float

    def __call__(self, cell: Cell) -> float:
        return float(self.values[cell[1], cell[0]])


@dataclass(frozen=True)
class DetectionResult:
    object_id: Optional[int]
    category: str
    observed_cells: tuple[Cell, ...]
    is_true_positive: bool


def compute_semantic_field(
    scene: Scene, goal: str, lam: float = DEFAULT_LAMBDA, success_radius: int = DEFAULT_SUCCESS_RADIUS
) -> SemanticField:
    """Latent relevance ``exp(-d / lam)`` of each cell, ``d`` its geodesic distance to the goal."""
    if not scene.instances(goal):
        raise KeyError(f"no instance of {goal!r} in scene {scene.id}")
    dist = distance_field(scene.truth, scene.success_cells(goal, success_radius))
    values = np.where(dist >= 0, np.exp(-np.maximum(dist, 0) / lam), 0.0)
    values.setflags(write=False)
    return SemanticField(goal, values, lam)


def score_semantic(profile: ModuleProfile, obs: Observation, field: SemanticField, rng: np.random.Generator) -> float:
    """Noisy in-view maximum of the latent field, clamped to [0, 1]."""
    if profile.kind != Kind.SCORER:
        raise ValueError(f"{profile.name} is not a scorer")
    noise = rng.standard_normal()
    free = ~obs.obstacle
    if not free.any():
        return 0.0
    best = float(field.values[obs.ys[free], obs.xs[free]].max())
    return min(1.0, max(0.0, best + profile.knob("noise_sigma") * noise))


def detect(
    profile: ModuleProfile, obs: Observation, goal: str, rng: np.random.Generator
) -> Optional[DetectionResult]:
    if profile.kind != Kind.DETECTOR:
        raise ValueError(f"{profile.name} is not a detector")
    reach = profile.knob("detect_range")
    in_range = [h for h in obs.object_hits if h.nearest_distance <= reach]
    goal_hits = sorted((h for h in in_range if h.category == goal), key=lambda h: (h.nearest_distance, h.object_id))
    others = sorted((h for h in in_range if h.category != goal), key=lambda h: h.object_id)
    u_tp = rng.random()
    u_fp = rng.random(len(others))
    if goal_hits:
        if u_tp < profile.knob("p_tp"):
            hit = goal_hits[0]
            return DetectionResult(hit.object_id, goal, hit.visible_cells, True)
        return None
    p_fp = profile.knob("p_fp")
    for hit, u in zip(others, u_fp):
        if u < p_fp:
            return DetectionResult(None, goal, hit.visible_cells, False)
    return None


def nearest_cell(cells: Iterable[Cell], origin: Cell) -> Cell:
    return min(cells, key=lambda c: ((c[0] - origin[0]) ** 2 + (c[1] - origin[1]) ** 2, c[1], c[0]))


def segment_nearest_point(
    profile: ModuleProfile, det: DetectionResult, obs: Observation, pose: AgentPose, rng: np.random.Generator
) -> Cell:
    """Closest observed object cell to the agent, jittered by the segmentation error.

    A jittered point that is not a visible Free cell falls back to the exact one.
    """
    if profile.kind != Kind.SEGMENTER:
        raise ValueError(f"{profile.name} is not a segmenter")
    if not det.observed_cells:
        raise ValueError("detection has no observed cells")
    exact = nearest_cell(det.observed_cells, pose.cell)
    err = int(math.floor(profile.knob("point_error_cells")))
    dx, dy = (int(v) for v in rng.integers(-err, err + 1, size=2))
    cand = (exact[0] + dx, exact[1] + dy)
    if obs.visible.get(cand) == CellTruth.FREE:
        return cand
    return exact


def verify(profile: ModuleProfile, det: DetectionResult, rng: np.random.Generator) -> bool:
    if profile.kind != Kind.VERIFIER:
        raise ValueError(f"{profile.name} is not a verifier")
    u = rng.random()
    if det.is_true_positive:
        return bool(u < profile.knob("p_accept_true"))
    return bool(u >= profile.knob("p_reject_false"))
