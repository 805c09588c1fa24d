"""Episode outcomes, SR/SPL and the latency cost model."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from fronsim.perception import Kind, PipelineConfig, vram_total
from fronsim.world import Cell

KINDS = (Kind.SCORER, Kind.DETECTOR, Kind.SEGMENTER, Kind.VERIFIER)

CSV_FIELDS = (
    "config", "episodes", "sr", "spl", "avg_steps", "avg_reward",
    "vlm_s", "det_s", "seg_s", "vqa_s", "total_min", "vram_mib",
)
_KIND_COLUMN = {Kind.SCORER: "vlm_s", Kind.DETECTOR: "det_s", Kind.SEGMENTER: "seg_s", Kind.VERIFIER: "vqa_s"}


class EmptyResultsError(ValueError):
    pass


def zero_calls() -> dict[str, int]:
    return {k.value: 0 for k in KINDS}


@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    path_length: int
    shortest_path_len: int
    steps: int
    module_calls: Mapping[str, int] = field(default_factory=zero_calls)
    modeled_time_ms: float = 0.0
    reward: float = 0.0
    path: tuple[Cell, ...] = ()
    termination: str = ""
    scene_id: str = ""
    goal_category: str = ""

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "path_length": self.path_length,
            "shortest_path_len": self.shortest_path_len,
            "steps": self.steps,
            "module_calls": dict(self.module_calls),
            "modeled_time_ms": self.modeled_time_ms,
            "reward": self.reward,
            "termination": self.termination,
            "scene_id": self.scene_id,
            "goal_category": self.goal_category,
            "path": [list(c) for c in self.path],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EpisodeResult":
        return cls(
            success=bool(d["success"]),
            path_length=int(d["path_length"]),
            shortest_path_len=int(d["shortest_path_len"]),
            steps=int(d["steps"]),
            module_calls=dict(d.get("module_calls", zero_calls())),
            modeled_time_ms=float(d.get("modeled_time_ms", 0.0)),
            reward=float(d.get("reward", 0.0)),
            path=tuple(tuple(c) for c in d.get("path", ())),
            termination=d.get("termination", ""),
            scene_id=d.get("scene_id", ""),
            goal_category=d.get("goal_category", ""),
        )


def modeled_time_ms(calls: Mapping[str, int], pipeline: PipelineConfig) -> float:
    return sum(calls.get(k.value, 0) * pipeline.latency_ms(k) for k in KINDS)


def _require(results: Sequence) -> None:
    if len(results) == 0:
        raise EmptyResultsError("no episode results")


def spl(results: Sequence[EpisodeResult]) -> float:
    """Success weighted by normalised inverse path length, in percent."""
    _require(results)
    if any(r.shortest_path_len <= 0 for r in results):
        raise ValueError("shortest_path_len must be > 0")
    total = math.fsum(r.shortest_path_len / max(r.path_length, r.shortest_path_len) for r in results if r.success)
    return 100.0 * total / len(results)


def success_rate(results: Sequence[EpisodeResult]) -> float:
    _require(results)
    return 100.0 * sum(1 for r in results if r.success) / len(results)


def modeled_component_time(results: Iterable[EpisodeResult], pipeline: PipelineConfig) -> dict[str, float]:
    """Seconds spent per module kind under the latency model."""
    calls = zero_calls()
    for r in results:
        for k in calls:
            calls[k] += r.module_calls.get(k, 0)
    return {k.value: calls[k.value] * pipeline.latency_ms(k) / 1000.0 for k in KINDS}


@dataclass(frozen=True)
class AggregateReport:
    config_name: str
    episodes: int
    sr_percent: float
    spl_percent: float
    avg_steps: float
    avg_reward: float
    component_time_s: Mapping[str, float]
    total_modeled_time_s: float
    vram_total_mib: float
    modules: Mapping[str, Optional[str]] = field(default_factory=dict)

    @property
    def total_min(self) -> float:
        return self.total_modeled_time_s / 60.0

    def row(self) -> dict:
        """Flat record with the export column names; floats rounded for stable output."""
        out = {
            "config": self.config_name,
            "episodes": self.episodes,
            "sr": round(self.sr_percent, 4),
            "spl": round(self.spl_percent, 4),
            "avg_steps": round(self.avg_steps, 4),
            "avg_reward": round(self.avg_reward, 4),
        }
        for kind, col in _KIND_COLUMN.items():
            out[col] = round(self.component_time_s.get(kind.value, 0.0), 4)
        out["total_min"] = round(self.total_min, 4)
        out["vram_mib"] = self.vram_total_mib
        return out


def aggregate(
    results: Sequence[EpisodeResult],
    pipeline: PipelineConfig,
    name: Optional[str] = None,
    overhead_ms_per_step: float = 0.0,
) -> AggregateReport:
    _require(results)
    n = len(results)
    comp = modeled_component_time(results, pipeline)
    steps = sum(r.steps for r in results)
    total_s = math.fsum(comp.values()) + overhead_ms_per_step * steps / 1000.0
    return AggregateReport(
        config_name=name if name is not None else pipeline.name,
        episodes=n,
        sr_percent=success_rate(results),
        spl_percent=spl(results),
        avg_steps=steps / n,
        avg_reward=math.fsum(r.reward for r in results) / n,
        component_time_s=comp,
        total_modeled_time_s=total_s,
        vram_total_mib=vram_total(pipeline),
        modules={
            "vlm": pipeline.scorer.name,
            "detector": pipeline.detector.name,
            "segmenter": pipeline.segmenter.name,
            "vqa": pipeline.verifier.name if pipeline.verifier else None,
        },
    )


# --------------------------------------------------------------------------
# export


def rows_to_csv(rows: Iterable[Mapping]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: r[k] for k in CSV_FIELDS})
    return buf.getvalue()


def rows_to_json(rows: Iterable[Mapping]) -> str:
    return json.dumps([{k: r[k] for k in CSV_FIELDS} for r in rows], indent=2) + "\n"


def _num(text: str):
    v = float(text)
    return int(v) if v.is_integer() and "." not in text else v


def rows_from_csv(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_FIELDS:
        raise ValueError(f"unexpected CSV header: {reader.fieldnames}")
    rows = []
    for rec in reader:
        row = {"config": rec["config"]}
        for k in CSV_FIELDS[1:]:
            row[k] = _num(rec[k])
        rows.append(row)
    return rows


def rows_from_json(text: str) -> list[dict]:
    rows = json.loads(text)
    for r in rows:
        missing = set(CSV_FIELDS) - set(r)
        if missing:
            raise ValueError(f"report row missing fields: {sorted(missing)}")
    return rows
