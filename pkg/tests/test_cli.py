import json
import os
import subprocess
import sys

import pytest

from rdp_forge.cli import main
from rdp_forge.trace import load_dataset


@pytest.fixture(scope="module")
def corridor_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("corridor")
    data = d / "data.npz"
    assert main(["gen", "--env", "corridor", "--n", "10000", "--seed", "7", "--out", str(data)]) == 0
    return d, data


def test_gen_counts_and_is_deterministic(tmp_path):
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    for path in (a, b):
        assert main(["gen", "--env", "tmaze", "--n", "10000", "--seed", "7", "--out", str(path)]) == 0
    assert len(load_dataset(a)) == 10_000
    assert a.read_bytes() == b.read_bytes()
    meta = json.loads((tmp_path / "a.npz.meta.json").read_text())
    assert meta["config"]["seed"] == 7 and meta["n_episodes"] == 10_000


def test_gen_rejects_unknown_env(tmp_path, capsys):
    assert main(["gen", "--env", "bogus", "--out", str(tmp_path / "x.npz")]) == 2
    assert "--env" in capsys.readouterr().err


def test_argument_errors_exit_with_validation_code():
    with pytest.raises(SystemExit) as exc:
        main(["learn", "--tester", "nope"])
    assert exc.value.code == 2
    assert main(["learn", "--in", "missing.npz", "--out", "x.json"]) == 2


@pytest.mark.parametrize("tester", ["lang", "cms"])
def test_learn_and_eval_corridor(corridor_files, tester, capsys):
    d, data = corridor_files
    rdp = d / f"{tester}.json"
    assert main(["learn", "--in", str(data), "--out", str(rdp), "--tester", tester, "--family", "1,1,1",
                 "--delta", "0.05"]) == 0
    stats = json.loads((d / f"{tester}.json.stats.json").read_text())
    assert stats["Q"] == 11 and stats["config"]["tester"] == tester
    tests = (d / f"{tester}.json.tests.jsonl").read_text().splitlines()
    assert all("distinct" in json.loads(line) for line in tests)
    capsys.readouterr()
    assert main(["eval", "--in", str(data), "--rdp", str(rdp), "--eval-n", "1000", "--seed", "8"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["Q"] == 11 and report["mean_return"] == 1.0
    assert {"stderr", "learn_seconds", "fallback_steps"} <= set(report)


def test_language_metric_cannot_use_sketches(corridor_files):
    d, data = corridor_files
    assert main(["learn", "--in", str(data), "--out", str(d / "x.json"), "--tester", "lang",
                 "--store", "sketch"]) == 2


def test_budget_exceeded(corridor_files):
    d, data = corridor_files
    assert main(["learn", "--in", str(data), "--out", str(d / "x.json"), "--budget-s", "0.001"]) == 4


def test_config_file_then_flags(tmp_path, corridor_files):
    d, data = corridor_files
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"in": str(data), "out": str(tmp_path / "r.json"), "tester": "prefix", "delta": 0.1}))
    assert main(["learn", "--config", str(cfg), "--delta", "0.2"]) == 0
    used = json.loads((tmp_path / "r.json.stats.json").read_text())["config"]
    assert used["tester"] == "prefix" and used["delta"] == 0.2
    cfg.write_text(json.dumps({"colour": "red"}))
    assert main(["learn", "--config", str(cfg)]) == 2


def test_bench_json_matches_markdown(tmp_path):
    out = tmp_path / "bench.json"
    assert main(["bench", "--domains", "corridor,tmaze", "--testers", "lang,cms", "--eval-n", "200",
                 "--out", str(out)]) == 0
    table = json.loads(out.read_text())
    md = out.with_suffix(".md").read_text().splitlines()[2:]
    assert len(table["cells"]) == len(md) == 4
    for cell, row in zip(table["cells"], md):
        parts = [p.strip() for p in row.strip("|").split("|")]
        assert parts[0] == cell["domain"] and parts[2] == cell["tester"]
        assert int(parts[3]) == cell["Q"]
        assert parts[4].startswith(f"{cell['r']:.3f}")


def test_bench_marks_cells_over_budget(tmp_path):
    out = tmp_path / "bench.json"
    assert main(["bench", "--domains", "corridor", "--tester", "lang", "--budget-s", "0.001",
                 "--out", str(out)]) == 0
    cell = json.loads(out.read_text())["cells"][0]
    assert cell["status"] == "budget" and cell["Q"] is None
    assert "| - | - | - |" in out.with_suffix(".md").read_text()


def test_lemmas_command(tmp_path):
    out = tmp_path / "lemmas.json"
    assert main(["lemmas", "--trials", "60", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["passed"] is True


def test_console_script_and_log_level(tmp_path):
    env = {**os.environ, "RDP_FORGE_LOG": "INFO"}
    proc = subprocess.run([sys.executable, "-m", "rdp_forge.cli", "gen", "--env", "corridor", "--n", "10",
                           "--out", str(tmp_path / "d.npz")], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert "wrote 10 episodes" in proc.stderr
