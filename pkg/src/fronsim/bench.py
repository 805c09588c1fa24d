"""Seeded, paired batch runs over pipeline configurations."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from fronsim.metrics import (
    AggregateReport,
    EpisodeResult,
    aggregate,
    rows_to_csv,
    rows_to_json,
    spl,
    success_rate,
)
from fronsim.perception import (
    BudgetExceededError,
    ModuleProfile,
    PipelineConfig,
    ProfileNotFoundError,
    build_pipeline,
    builtin_profiles,
    load_profiles,
)
from fronsim.policy import run_episode
from fronsim.sensing import SensorConfig
from fronsim.world import Episode, EpisodeSet, Scene, load_scene

DEFAULT_RESAMPLES = 10000
BOOTSTRAP_SEED = 0

ConfigEntry = Union[str, Mapping]


class SpecError(ValueError):
    """Malformed benchmark spec."""


class MismatchedEpisodesError(ValueError):
    pass


def _entry_name(entry: ConfigEntry) -> str:
    if isinstance(entry, str):
        return entry
    if isinstance(entry, Mapping) and isinstance(entry.get("name"), str) and entry["name"]:
        return entry["name"]
    raise SpecError("inline config needs a non-empty 'name'")


@dataclass
class BenchmarkSpec:
    episode_set_path: Path
    configs: list[ConfigEntry]
    seeds: list[int]
    output_dir: Path
    profiles_path: Optional[Path] = None
    compare: list[tuple[str, str]] = field(default_factory=list)
    n_resamples: int = DEFAULT_RESAMPLES
    sensor: SensorConfig = field(default_factory=SensorConfig)

    def __post_init__(self):
        if not self.configs:
            raise SpecError("at least one config is required")
        if not self.seeds:
            raise SpecError("at least one seed is required")
        names = [_entry_name(c) for c in self.configs]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise SpecError(f"duplicate config names: {dupes}")
        for s in self.seeds:
            if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2**64:
                raise SpecError(f"seed {s!r} is not a 64-bit unsigned integer")
        for a, b in self.compare:
            for n in (a, b):
                if n not in names:
                    raise SpecError(f"compare names unknown config {n!r}")
        if self.n_resamples < 1:
            raise SpecError("n_resamples must be >= 1")

    @property
    def names(self) -> list[str]:
        return [_entry_name(c) for c in self.configs]

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: Path = Path(".")) -> "BenchmarkSpec":
        if not isinstance(d, Mapping):
            raise SpecError("spec must be a JSON object")
        missing = [k for k in ("episode_set_path", "configs", "seeds", "output_dir") if k not in d]
        if missing:
            raise SpecError(f"spec missing keys: {missing}")
        known = {"episode_set_path", "configs", "seeds", "output_dir", "profiles_path", "compare", "n_resamples", "sensor"}
        extra = sorted(set(d) - known)
        if extra:
            raise SpecError(f"unknown spec keys: {extra}")
        if not isinstance(d["configs"], list) or not isinstance(d["seeds"], list):
            raise SpecError("configs and seeds must be lists")
        compare = d.get("compare", [])
        if not isinstance(compare, list) or any(not isinstance(p, list) or len(p) != 2 for p in compare):
            raise SpecError("compare must be a list of [a, b] pairs")
        try:
            sensor = SensorConfig(**d.get("sensor", {}))
        except (TypeError, ValueError) as exc:
            raise SpecError(f"bad sensor block: {exc}") from None
        rel = lambda p: Path(p) if Path(p).is_absolute() else base_dir / p  # noqa: E731
        return cls(
            episode_set_path=rel(d["episode_set_path"]),
            configs=list(d["configs"]),
            seeds=list(d["seeds"]),
            output_dir=rel(d["output_dir"]),
            profiles_path=rel(d["profiles_path"]) if d.get("profiles_path") else None,
            compare=[tuple(p) for p in compare],
            n_resamples=int(d.get("n_resamples", DEFAULT_RESAMPLES)),
            sensor=sensor,
        )

    @classmethod
    def load(cls, path: Path) -> "BenchmarkSpec":
        """Read a JSON spec. Relative paths inside resolve against the current directory."""
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)


@dataclass(frozen=True)
class EpisodeRecord:
    """One executed (episode, seed) pair; ``key`` identifies it across configs."""

    config: str
    episode_index: int
    seed: int
    episode: Episode
    result: EpisodeResult

    @property
    def key(self) -> tuple:
        e = self.episode
        return (self.episode_index, self.seed, e.scene_id, e.start.cell, e.start.heading, e.goal_category)

    def to_json(self) -> str:
        return json.dumps(
            {"config": self.config, "episode_index": self.episode_index, "seed": self.seed,
             "episode": self.episode.to_dict(), "result": self.result.to_dict()},
            sort_keys=True,
        )


@dataclass(frozen=True)
class ComparisonResult:
    config_a: str
    config_b: str
    delta_sr: float
    delta_spl: float
    delta_avg_steps: float
    ci_low: float
    ci_high: float
    n_resamples: int
    episodes: int = 0

    def excludes_zero(self) -> bool:
        return self.ci_low > 0 or self.ci_high < 0

    def line(self) -> str:
        return (
            f"{self.config_b} vs {self.config_a}: episodes={self.episodes} "
            f"delta_sr={self.delta_sr:+.4f} delta_spl={self.delta_spl:+.4f} "
            f"delta_avg_steps={self.delta_avg_steps:+.4f} "
            f"ci95=[{self.ci_low:+.4f}, {self.ci_high:+.4f}] resamples={self.n_resamples}"
        )


def bootstrap_mean_ci(diffs: Sequence[float], n_resamples: int = DEFAULT_RESAMPLES, seed: int = BOOTSTRAP_SEED) -> tuple[float, float, float]:
    """Mean of ``diffs`` and a percentile 95% interval that always contains it."""
    d = np.asarray(diffs, dtype=np.float64)
    if d.size == 0:
        raise ValueError("no differences to resample")
    point = float(d.mean())
    rng = np.random.default_rng(seed)
    means = np.empty(n_resamples)
    chunk = max(1, 2_000_000 // d.size)
    for lo in range(0, n_resamples, chunk):
        hi = min(n_resamples, lo + chunk)
        means[lo:hi] = d[rng.integers(0, d.size, (hi - lo, d.size))].mean(axis=1)
    low, high = np.percentile(means, [2.5, 97.5])
    return point, min(float(low), point), max(float(high), point)


def _as_records(name: str, items: Sequence) -> list:
    out = []
    for i, it in enumerate(items):
        if isinstance(it, EpisodeRecord):
            out.append((it.key, it.result))
        else:
            out.append(((i, it.scene_id, it.goal_category), it))
    return out


def compare(
    a_results: Sequence,
    b_results: Sequence,
    a: str = "a",
    b: str = "b",
    n_resamples: int = DEFAULT_RESAMPLES,
    seed: int = BOOTSTRAP_SEED,
) -> ComparisonResult:
    """Paired comparison of config ``b`` against ``a``; deltas are b minus a.

    Accepts :class:`EpisodeRecord` or bare :class:`EpisodeResult` sequences.
    """
    ra, rb = _as_records(a, a_results), _as_records(b, b_results)
    if len(ra) != len(rb) or any(ka != kb for (ka, _), (kb, _) in zip(ra, rb)):
        raise MismatchedEpisodesError(f"configs {a!r} and {b!r} did not run the same episodes")
    xa = [r for _, r in ra]
    xb = [r for _, r in rb]
    point, low, high = bootstrap_mean_ci([y.steps - x.steps for x, y in zip(xa, xb)], n_resamples, seed)
    return ComparisonResult(
        config_a=a,
        config_b=b,
        delta_sr=success_rate(xb) - success_rate(xa),
        delta_spl=spl(xb) - spl(xa),
        delta_avg_steps=point,
        ci_low=low,
        ci_high=high,
        n_resamples=n_resamples,
        episodes=len(xa),
    )


def accounting_check(avg_steps: float, episodes: int, latency_ms: float) -> float:
    """Seconds a module costs over a batch: steps x episodes x per-call latency."""
    if avg_steps <= 0 or episodes <= 0 or latency_ms <= 0:
        raise ValueError("accounting inputs must be positive")
    return avg_steps * episodes * latency_ms / 1000.0


def episode_seed(seed: int, index: int) -> int:
    """Stream seed for one (benchmark seed, episode index); shared by every config."""
    return int(np.random.SeedSequence([seed, index]).generate_state(2, dtype=np.uint64)[0])


# --------------------------------------------------------------------------


@dataclass
class BenchmarkRun:
    reports: list[AggregateReport]
    records: dict[str, list[EpisodeRecord]]
    pipelines: dict[str, PipelineConfig]
    skipped: dict[str, str]
    comparisons: list[ComparisonResult]

    @property
    def ok(self) -> bool:
        return not self.skipped


def load_episode_set(path: Path) -> tuple[EpisodeSet, dict[str, Scene]]:
    """Episode JSON plus its scenes, read from ``<scene_id>.scene`` next to it."""
    path = Path(path)
    eps = EpisodeSet.from_json(path.read_text())
    scenes = {}
    for sid in sorted({e.scene_id for e in eps}):
        scenes[sid] = load_scene(path.parent / f"{sid}.scene")
    return eps, scenes


def resolve_configs(spec: BenchmarkSpec) -> tuple[dict[str, PipelineConfig], dict[str, str]]:
    registry: Mapping[str, ModuleProfile] = builtin_profiles()
    if spec.profiles_path is not None:
        registry = load_profiles(spec.profiles_path, registry)
    pipelines, skipped = {}, {}
    for entry in spec.configs:
        name = _entry_name(entry)
        try:
            p = build_pipeline(entry, registry)
        except BudgetExceededError as exc:
            skipped[name] = str(exc)
            continue
        except (ProfileNotFoundError, KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"config {name!r}: {exc}") from None
        if p.name != name:
            p = PipelineConfig(p.scorer, p.detector, p.segmenter, p.verifier, p.vram_budget_mib, name)
        pipelines[name] = p
    return pipelines, skipped


def execute(spec: BenchmarkSpec, write: bool = True) -> BenchmarkRun:
    """Run every (config, episode, seed) triple and optionally write the outputs."""
    episodes, scenes = load_episode_set(spec.episode_set_path)
    pipelines, skipped = resolve_configs(spec)
    records: dict[str, list[EpisodeRecord]] = {}
    reports = []
    for name in sorted(pipelines):
        pipe = pipelines[name]
        recs = []
        for seed in spec.seeds:
            for i, ep in enumerate(episodes):
                res = run_episode(scenes[ep.scene_id], ep, pipe, spec.sensor, episode_seed(seed, i))
                recs.append(EpisodeRecord(name, i, seed, ep, res))
        records[name] = recs
        if recs:
            reports.append(aggregate([r.result for r in recs], pipe, name))

    pairs = spec.compare or list(itertools.combinations(sorted(pipelines), 2))
    comparisons = [
        compare(records[a], records[b], a, b, spec.n_resamples)
        for a, b in pairs
        if a in records and b in records and records[a]
    ]
    run = BenchmarkRun(reports, records, pipelines, skipped, comparisons)
    if write:
        write_outputs(run, Path(spec.output_dir))
    return run


def run_benchmark(spec: BenchmarkSpec) -> list[AggregateReport]:
    return execute(spec).reports


def write_outputs(run: BenchmarkRun, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rows = [r.row() for r in run.reports]
    (out / "metrics.csv").write_text(rows_to_csv(rows))
    (out / "metrics.json").write_text(rows_to_json(rows))
    with open(out / "episodes.jsonl", "w") as fh:
        for name in sorted(run.records):
            for rec in run.records[name]:
                fh.write(rec.to_json() + "\n")
    (out / "configs.json").write_text(
        json.dumps({n: run.pipelines[n].to_dict() for n in sorted(run.pipelines)}, indent=2, sort_keys=True) + "\n"
    )
    lines = [c.line() for c in run.comparisons]
    lines += [f"skipped {n}: {msg}" for n, msg in sorted(run.skipped.items())]
    (out / "comparison.txt").write_text("".join(l + "\n" for l in lines))
