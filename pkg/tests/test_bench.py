import json

import pytest

from fronsim.bench import (
    BenchmarkSpec,
    MismatchedEpisodesError,
    SpecError,
    accounting_check,
    bootstrap_mean_ci,
    compare,
    execute,
    run_benchmark,
)
from fronsim.metrics import EpisodeResult
from fronsim.world import EpisodeSet, SceneParams, generate_scene, make_episodes, save_scene


@pytest.fixture(scope="module")
def episode_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("eps")
    eps = EpisodeSet((), 0)
    for seed in (1, 2):
        s = generate_scene(seed, SceneParams(20, 20, 3, 0.04))
        save_scene(s, d / f"{s.id}.scene")
        eps = eps + make_episodes(s, 4, seed)
    (d / "episodes.json").write_text(eps.to_json())
    return d


def spec(d, out, configs=("final",), seeds=(0,)):
    return BenchmarkSpec(d / "episodes.json", list(configs), list(seeds), out)


def test_accounting_examples():
    assert accounting_check(141, 30, 123.6) == pytest.approx(522.828)
    assert abs(accounting_check(186, 30, 167.6) - 937.7) / 937.7 < 0.003
    assert accounting_check(1, 1, 1000) == 1.0
    with pytest.raises(ValueError):
        accounting_check(0, 30, 75)


def test_single_episode_single_config(tmp_path):
    d = tmp_path / "one"
    d.mkdir()
    s = generate_scene(3, SceneParams(16, 16, 1, 0.03))
    save_scene(s, d / f"{s.id}.scene")
    (d / "episodes.json").write_text(make_episodes(s, 1, 3, d_min=2).to_json())
    reports = run_benchmark(spec(d, tmp_path / "out"))
    assert len(reports) == 1 and reports[0].episodes == 1
    for f in ("metrics.csv", "metrics.json", "episodes.jsonl", "comparison.txt", "configs.json"):
        assert (tmp_path / "out" / f).exists()


def test_pairing_and_order_invariance(episode_dir, tmp_path):
    a = execute(spec(episode_dir, tmp_path / "a", ("final", "baseline"), (0, 7)))
    b = execute(spec(episode_dir, tmp_path / "b", ("baseline", "final"), (0, 7)))
    assert [r.config_name for r in a.reports] == ["baseline", "final"]
    assert [r.key for r in a.records["final"]] == [r.key for r in a.records["baseline"]]
    assert len(a.records["final"]) == 16
    for f in ("metrics.csv", "metrics.json", "episodes.jsonl", "comparison.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_budget_exceeded_config_skipped(episode_dir, tmp_path):
    run = execute(spec(episode_dir, tmp_path / "o", ("final", "baseline-vqa")))
    assert not run.ok and "baseline-vqa" in run.skipped and "12496" in run.skipped["baseline-vqa"]
    assert [r.config_name for r in run.reports] == ["final"]
    assert "skipped baseline-vqa" in (tmp_path / "o" / "comparison.txt").read_text()


def test_spec_validation(tmp_path):
    base = {"episode_set_path": "e.json", "configs": ["final"], "seeds": [1], "output_dir": "o"}
    BenchmarkSpec.from_dict(base)
    for bad in (
        {**base, "configs": []},
        {**base, "seeds": []},
        {**base, "configs": ["final", "final"]},
        {**base, "seeds": [-1]},
        {**base, "seeds": [2**64]},
        {**base, "configs": [{"scorer": "BLIP-2"}]},
        {**base, "compare": [["final", "nope"]]},
        {**base, "colour": 1},
        {k: v for k, v in base.items() if k != "seeds"},
    ):
        with pytest.raises(SpecError):
            BenchmarkSpec.from_dict(bad)
    f = tmp_path / "bad.json"
    f.write_text("{nope")
    with pytest.raises(SpecError):
        BenchmarkSpec.load(f)


def test_unknown_profile_is_spec_error(episode_dir, tmp_path):
    s = spec(episode_dir, tmp_path / "o", ({"name": "x", "scorer": "GPT", "detector": "YOLOv7", "segmenter": "MobileSAM"},))
    with pytest.raises(SpecError):
        execute(s)


def r(steps, success=True):
    return EpisodeResult(success, steps, max(1, steps // 2), steps)


def test_compare_self_is_zero():
    rs = [r(s) for s in (10, 20, 35, 50)]
    c = compare(rs, rs, "x", "x")
    assert c.delta_avg_steps == c.delta_sr == c.delta_spl == 0
    assert c.ci_low <= 0 <= c.ci_high


def test_compare_direction_and_degenerate():
    a = [r(s) for s in range(10, 60)]
    b = [r(s + 5 + (s % 3)) for s in range(10, 60)]
    c = compare(a, b, "a", "b")
    assert c.delta_avg_steps > 0 and c.excludes_zero()
    one = compare(a, b, "a", "b", n_resamples=1)
    assert one.ci_low <= one.delta_avg_steps <= one.ci_high
    assert compare(a, b, "a", "b") == c  # seeded


def test_compare_mismatch():
    with pytest.raises(MismatchedEpisodesError):
        compare([r(3)], [r(3), r(4)])


def test_bootstrap_ci_contains_mean():
    for diffs in ([1.0], [0, 0, 0, 100], list(range(-5, 9))):
        m, lo, hi = bootstrap_mean_ci(diffs, 500, 3)
        assert lo <= m <= hi


def test_spec_file_relative_paths(episode_dir, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    doc = {"episode_set_path": str(episode_dir / "episodes.json"), "configs": ["final"], "seeds": [5], "output_dir": "out"}
    (tmp_path / "spec.json").write_text(json.dumps(doc))
    s = BenchmarkSpec.load("spec.json")
    assert s.output_dir.as_posix() == "out"
    execute(s)
    assert (tmp_path / "out" / "metrics.csv").exists()
