import json
import subprocess
import sys

import pytest

from fronsim.cli import TABLE_COLUMNS, main
from fronsim.metrics import rows_from_csv


@pytest.fixture
def data(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("FRONSIM_SEED", raising=False)
    assert main(["gen", "--seed", "3", "--width", "20", "--height", "20", "--rooms", "3",
                 "--scenes", "2", "--episodes", "6", "--out", "data"]) == 0
    return tmp_path / "data"


def scene_file(d):
    return str(sorted(d.glob("*.scene"))[0])


def test_gen_summary_and_files(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("FRONSIM_SEED", raising=False)
    assert main(["gen", "--seed", "1", "--scenes", "2", "--episodes", "30", "--out", "d"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("scene s1-32x32-r4: ") and lines[0].endswith(" objects, 15 episodes")
    eps = json.loads((tmp_path / "d" / "episodes.json").read_text())["episodes"]
    assert len(eps) == 30 and len({e["scene_id"] for e in eps}) == 2


def test_gen_zero_episodes_and_determinism(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("FRONSIM_SEED", raising=False)
    for out in ("a", "b"):
        assert main(["gen", "--seed", "4", "--episodes", "0", "--out", out]) == 0
    assert json.loads((tmp_path / "a" / "episodes.json").read_text())["episodes"] == []
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_seed_env_override(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("FRONSIM_SEED", "9")
    main(["gen", "--seed", "1", "--episodes", "1", "--out", "d"])
    assert capsys.readouterr().out.startswith("scene s9-")


def test_gen_failure_exit_code(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("FRONSIM_SEED", raising=False)
    assert main(["gen", "--width", "10", "--height", "10", "--rooms", "1", "--objects", "0.95", "--out", "d"]) == 2


def test_usage_errors(data, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--bogus"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["launch"])
    assert exc.value.code == 1
    assert main(["run", "--scene", scene_file(data), "--episodes", str(data / "episodes.json"), "--config", "nope"]) == 1


def test_run_budget_rejected(data, capsys):
    code = main(["run", "--scene", scene_file(data), "--episodes", str(data / "episodes.json"), "--config", "baseline-vqa"])
    out = capsys.readouterr()
    assert code == 2
    assert "12496 MiB" in out.err and out.out == ""


def test_run_final_vqa_with_trace_and_renders(data, capsys):
    args = ["run", "--scene", scene_file(data), "--episodes", str(data / "episodes.json"), "--config", "final-vqa"]
    assert main(args + ["--trace", "t.jsonl", "--render-every", "0"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1].startswith("aggregate: config=final-vqa episodes=3 ") and "vram_mib=8776" in out[-1]
    assert sum(1 for l in out if l.startswith("episode ")) == 3
    assert not (data.parent / "renders").exists()
    steps = sum(int(l.split("steps=")[1].split()[0]) for l in out if l.startswith("episode "))
    assert len((data.parent / "t.jsonl").read_text().splitlines()) == steps
    assert main(args + ["--render-every", "10"]) == 0
    snaps = sorted((data.parent / "renders").glob("*.ppm"))
    assert snaps and snaps[0].read_bytes().startswith(b"P6\n41 20\n255\n")


def test_run_is_repeatable(data, capsys):
    args = ["run", "--scene", scene_file(data), "--episodes", str(data / "episodes.json"), "--seed", "2"]
    main(args)
    first = capsys.readouterr().out
    main(args)
    assert capsys.readouterr().out == first


def test_render(data, capsys):
    assert main(["render", "--scene", scene_file(data), "--episodes", str(data / "episodes.json"), "--step", "5", "--out", "x.ppm"]) == 0
    assert (data.parent / "x.ppm").read_bytes()[:2] == b"P6"


def write_spec(path, configs, out="out"):
    path.write_text(json.dumps({"episode_set_path": "data/episodes.json", "configs": configs, "seeds": [1], "output_dir": out}))


def test_bench_and_report(data, capsys):
    spec = data.parent / "spec.json"
    write_spec(spec, ["final", "baseline"])
    assert main(["bench", "--spec", str(spec)]) == 0
    csv_text = capsys.readouterr().out
    assert csv_text == (data.parent / "out" / "metrics.csv").read_text()

    assert main(["report", "--in", "out/metrics.csv", "--format", "table"]) == 0
    table = capsys.readouterr().out.splitlines()
    header = table[0].split("  ")
    assert [h.strip() for h in header if h.strip()] == list(TABLE_COLUMNS)
    assert len(table) == 4  # header, rule, two rows
    assert "BLIP-2" in table[2] and "YOLOv7-E6E" in table[2]

    assert main(["report", "--in", "out/metrics.csv", "--format", "json"]) == 0
    (data.parent / "m.json").write_text(capsys.readouterr().out)
    assert main(["report", "--in", "m.json", "--format", "csv"]) == 0
    assert rows_from_csv(capsys.readouterr().out) == rows_from_csv(csv_text)


def test_bench_skip_and_malformed(data, capsys):
    spec = data.parent / "spec.json"
    write_spec(spec, ["final", "baseline-vqa"])
    assert main(["bench", "--spec", str(spec)]) == 2
    assert "skipped baseline-vqa" in capsys.readouterr().err
    spec.write_text('{"configs": []}')
    assert main(["bench", "--spec", str(spec)]) == 1
    spec.write_text("not json")
    assert main(["bench", "--spec", str(spec)]) == 1


def test_console_script_exit_code(data):
    proc = subprocess.run(
        [sys.executable, "-m", "fronsim.cli", "run", "--scene", scene_file(data),
         "--episodes", str(data / "episodes.json"), "--config", "baseline-vqa"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2 and "12496" in proc.stderr
