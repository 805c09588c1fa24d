"""Command-line entry point: gen, run, bench, render, report."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from fronsim.bench import BenchmarkSpec, SpecError, episode_seed, execute
from fronsim.mapping import cluster_frontiers, extract_frontiers, render_snapshot, to_ppm
from fronsim.metrics import aggregate, rows_from_csv, rows_from_json, rows_to_csv, rows_to_json
from fronsim.perception import PRESETS, BudgetExceededError, ProfileNotFoundError, build_pipeline, builtin_profiles, load_profiles
from fronsim.policy import run_episode
from fronsim.sensing import SensorConfig
from fronsim.world import (
    EpisodeSet,
    GenerationError,
    SamplingError,
    SceneParams,
    generate_scene,
    load_scene,
    make_episodes,
    save_scene,
)

EXIT_USAGE = 1
EXIT_RUNTIME = 2
SEED_ENV = "FRONSIM_SEED"


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _seed(args) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return args.seed
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


def _pipeline(config: str, profiles: Optional[str]):
    registry = builtin_profiles()
    if profiles:
        registry = load_profiles(Path(profiles), registry)
    if config in PRESETS:
        return build_pipeline(config, registry)
    path = Path(config)
    if not path.is_file():
        raise UsageError(f"unknown config {config!r}: not a preset and not a file")
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{config}: invalid JSON ({exc})") from None
    spec.setdefault("name", path.stem)
    return build_pipeline(spec, registry)


# --------------------------------------------------------------------------


def cmd_gen(args) -> None:
    seed = _seed(args)
    if args.scenes < 1 or args.episodes < 0:
        raise UsageError("--scenes must be >= 1 and --episodes >= 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = SceneParams(args.width, args.height, args.rooms, args.objects)
    share, extra = divmod(args.episodes, args.scenes)
    combined = EpisodeSet((), seed)
    for i in range(args.scenes):
        n = share + (1 if i < extra else 0)
        try:
            scene = generate_scene(seed + i, params)
            eps = make_episodes(scene, n, seed + i)
        except (GenerationError, SamplingError, ValueError) as exc:
            raise RuntimeFailure(f"generation failed for scene seed {seed + i}: {exc}") from None
        save_scene(scene, out / f"{scene.id}.scene")
        combined = combined + eps
        print(f"scene {scene.id}: {len(scene.free_cells())} free cells, {len(scene.objects)} objects, {n} episodes")
    (out / "episodes.json").write_text(combined.to_json())


def _load_run_inputs(scene_path: str, episodes_path: str):
    try:
        scene = load_scene(Path(scene_path))
        eps = EpisodeSet.from_json(Path(episodes_path).read_text())
    except (OSError, ValueError, KeyError) as exc:
        raise RuntimeFailure(f"cannot load inputs: {exc}") from None
    mine = [(i, e) for i, e in enumerate(eps) if e.scene_id == scene.id]
    return scene, mine


def _snapshot_writer(directory: Path, prefix: str, every: int):
    def on_step(step_no, state, belief, vmap):
        if every > 0 and step_no % every == 0:
            fr = cluster_frontiers(extract_frontiers(belief), vmap)
            img = render_snapshot(belief, vmap, fr, state.pose, state.goal_waypoint)
            (directory / f"{prefix}_step{step_no:04d}.ppm").write_bytes(to_ppm(img))

    return on_step


def cmd_run(args) -> None:
    seed = _seed(args)
    if args.render_every < 0:
        raise UsageError("--render-every must be >= 0")
    pipe = _pipeline(args.config, args.profiles)
    scene, episodes = _load_run_inputs(args.scene, args.episodes)
    if not episodes:
        raise RuntimeFailure(f"no episodes for scene {scene.id}")
    render_dir = Path(args.render_dir)
    if args.render_every:
        render_dir.mkdir(parents=True, exist_ok=True)
    trace = open(args.trace, "w") if args.trace else None
    results = []
    try:
        for i, ep in episodes:
            hook = _snapshot_writer(render_dir, f"ep{i:03d}", args.render_every) if args.render_every else None
            r = run_episode(scene, ep, pipe, SensorConfig(), episode_seed(seed, i), trace_out=trace, on_step=hook)
            results.append(r)
            print(
                f"episode {i}: goal={ep.goal_category} success={int(r.success)} steps={r.steps} "
                f"path={r.path_length} shortest={r.shortest_path_len} reward={r.reward:.4f} end={r.termination}"
            )
    finally:
        if trace is not None:
            trace.close()
    row = aggregate(results, pipe).row()
    print("aggregate: " + " ".join(f"{k}={v}" for k, v in row.items()))


def cmd_bench(args) -> int:
    try:
        spec = BenchmarkSpec.load(Path(args.spec))
    except OSError as exc:
        raise UsageError(f"cannot read spec: {exc}") from None
    except SpecError as exc:
        raise UsageError(str(exc)) from None
    try:
        run = execute(spec)
    except SpecError as exc:
        raise UsageError(str(exc)) from None
    except (OSError, ValueError, KeyError) as exc:
        raise RuntimeFailure(str(exc)) from None
    sys.stdout.write(rows_to_csv(r.row() for r in run.reports))
    for c in run.comparisons:
        _err(c.line())
    for name, msg in sorted(run.skipped.items()):
        _err(f"skipped {name}: {msg}")
    return 0 if run.ok else EXIT_RUNTIME


def cmd_render(args) -> None:
    seed = _seed(args)
    pipe = _pipeline(args.config, args.profiles)
    scene, episodes = _load_run_inputs(args.scene, args.episodes)
    picked = [(i, e) for i, e in episodes if i == args.index]
    if not picked:
        raise RuntimeFailure(f"episode {args.index} not found for scene {scene.id}")
    i, ep = picked[0]
    grabbed = {}

    def on_step(step_no, state, belief, vmap):
        if args.step == 0 or step_no <= args.step:
            fr = cluster_frontiers(extract_frontiers(belief), vmap)
            grabbed["img"] = render_snapshot(belief, vmap, fr, state.pose, state.goal_waypoint)

    run_episode(scene, ep, pipe, SensorConfig(), episode_seed(seed, i), on_step=on_step)
    if "img" not in grabbed:
        raise RuntimeFailure("episode produced no steps to render")
    Path(args.out).write_bytes(to_ppm(grabbed["img"]))
    print(f"wrote {args.out}")


TABLE_COLUMNS = ("Config", "VLM", "Detector", "VQA", "Avg reward", "SPL", "SR", "Time, min")


def _module_names(src: Path, rows) -> dict[str, tuple[str, str, str]]:
    names = {}
    sidecar = src.parent / "configs.json"
    known = json.loads(sidecar.read_text()) if sidecar.is_file() else {}
    for r in rows:
        cfg = r["config"]
        if cfg in known:
            k = known[cfg]
            names[cfg] = (k["scorer"]["name"], k["detector"]["name"], (k.get("verifier") or {}).get("name", "-"))
        elif cfg in PRESETS:
            s, d, _, v = PRESETS[cfg]
            names[cfg] = (s, d, v or "-")
        else:
            names[cfg] = ("?", "?", "?")
    return names


def format_table(rows, modules) -> str:
    body = []
    for r in rows:
        vlm, det, vqa = modules[r["config"]]
        body.append((r["config"], vlm, det, vqa, f"{r['avg_reward']:.2f}", f"{r['spl']:.2f}", f"{r['sr']:.2f}", f"{r['total_min']:.2f}"))
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(TABLE_COLUMNS)]
    fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    lines = [fmt(TABLE_COLUMNS), fmt(["-" * w for w in widths])]
    lines += [fmt(b) for b in body]
    return "\n".join(lines) + "\n"


def cmd_report(args) -> None:
    src = Path(args.input)
    try:
        text = src.read_text()
    except OSError as exc:
        raise RuntimeFailure(f"cannot read {src}: {exc}") from None
    try:
        rows = rows_from_json(text) if src.suffix.lower() == ".json" else rows_from_csv(text)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"malformed report input: {exc}") from None
    if args.format == "csv":
        sys.stdout.write(rows_to_csv(rows))
    elif args.format == "json":
        sys.stdout.write(rows_to_json(rows))
    else:
        sys.stdout.write(format_table(rows, _module_names(src, rows)))


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fronsim", description="Frontier/value-map object navigation simulator and benchmark.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate scenes and an episode file")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--width", type=int, default=32)
    g.add_argument("--height", type=int, default=32)
    g.add_argument("--rooms", type=int, default=4)
    g.add_argument("--objects", type=float, default=0.04, help="fraction of free cells covered by objects")
    g.add_argument("--episodes", type=int, default=30, help="total episodes, split across scenes")
    g.add_argument("--scenes", type=int, default=1)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    def episode_flags(sp):
        sp.add_argument("--scene", required=True, help="scene file")
        sp.add_argument("--episodes", required=True, help="episode JSON file")
        sp.add_argument("--config", default="final", help="preset name or pipeline JSON file")
        sp.add_argument("--profiles", help="extra module profiles JSON")
        sp.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("run", help="run the episodes of one scene")
    episode_flags(r)
    r.add_argument("--trace", help="write per-step JSON lines here")
    r.add_argument("--render-every", type=int, default=0, metavar="N")
    r.add_argument("--render-dir", default="renders")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run a benchmark spec")
    b.add_argument("--spec", required=True)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("render", help="write a PPM snapshot of one episode")
    episode_flags(v)
    v.add_argument("--index", type=int, default=0, help="episode index in the episode file")
    v.add_argument("--step", type=int, default=0, help="snapshot after this step (0 = final)")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_render)

    t = sub.add_parser("report", help="reformat metrics")
    t.add_argument("--in", dest="input", required=True)
    t.add_argument("--format", choices=("csv", "json", "table"), default="table")
    t.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except UsageError as exc:
        _err(f"fronsim: error: {exc}")
        return EXIT_USAGE
    except BudgetExceededError as exc:
        _err(f"fronsim: {exc}")
        return EXIT_RUNTIME
    except ProfileNotFoundError as exc:
        _err(f"fronsim: error: {exc.args[0] if exc.args else exc}")
        return EXIT_USAGE
    except RuntimeFailure as exc:
        _err(f"fronsim: {exc}")
        return EXIT_RUNTIME
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
