import json

import pytest

from conftest import small_config
from proedge.cli import main
from proedge.config import ExperimentConfig, dump_config, load_config


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(dump_config(small_config()))
    return p


def err_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_gen_trace_deterministic(tmp_path, cfg_file):
    for d in ("a", "b"):
        assert main(["gen-trace", "--config", str(cfg_file), "--seed", "5",
                     "--out", str(tmp_path / d)]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "trace.txt").read_bytes() == (b / "trace.txt").read_bytes()
    assert (a / "trace.png").read_bytes() == (b / "trace.png").read_bytes()
    m = json.loads((a / "manifest.json").read_text())
    assert m["command"] == "gen-trace" and "trace.txt" in m["artifacts"]
    assert m["seeds"]["workload"] == 5


def test_empty_config_resolves_to_defaults(tmp_path, capsys):
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert main(["gen-trace", "--config", str(empty), "--out", str(tmp_path / "o"),
                 "--no-figures"]) == 0
    assert load_config(tmp_path / "o" / "config.resolved.yaml") == ExperimentConfig()


def test_gradcheck_passes_all_layer_kinds(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "gradcheck.json").read_text())
    assert set(rep) == {"dense", "conv1d", "lstm", "forecaster"}
    assert all(r["passed"] for r in rep.values())


def test_compare_without_checkpoints(tmp_path, capsys):
    assert main(["compare", "--out", str(tmp_path), "--baseline", str(tmp_path / "nope.json")]) == 1
    e = err_json(capsys)
    assert e["error"] == "missing-input" and "--hybrid" in e["message"]


def test_bad_config_reports_json(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("agent:\n  gamma: 1.5\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    e = err_json(capsys)
    assert e["error"] == "config" and "discount" in e["message"]


def test_usage_error_is_json(capsys):
    assert main(["frobnicate"]) == 2
    assert err_json(capsys)["error"] == "usage"


def test_train_evaluate_compare_and_replay(tmp_path, cfg_file, capsys):
    c = str(cfg_file)
    for mode in ("baseline", "hybrid"):
        assert main(["train", "--config", c, "--mode", mode, "--out", str(tmp_path / mode)]) == 0
    base = tmp_path / "baseline" / "checkpoint_baseline.json"
    hyb = tmp_path / "hybrid" / "checkpoint_hybrid.json"
    assert (tmp_path / "baseline" / "episodes_baseline.csv").is_file()

    assert main(["evaluate", "--config", c, "--checkpoint", str(hyb), "--out", str(tmp_path / "ev")]) == 0
    ev = json.loads((tmp_path / "ev" / "eval_hybrid.json").read_text())
    assert ev == json.loads((tmp_path / "hybrid" / "eval_hybrid.json").read_text())

    assert main(["compare", "--config", c, "--baseline", str(base), "--hybrid", str(hyb),
                 "--out", str(tmp_path / "cmp")]) == 0
    assert "Total Reward" in (tmp_path / "cmp" / "comparison.txt").read_text()

    # wrong-mode checkpoint is refused
    assert main(["compare", "--config", c, "--baseline", str(hyb), "--hybrid", str(hyb),
                 "--out", str(tmp_path / "bad")]) == 2
    capsys.readouterr()

    for run in ("baseline", "hybrid", "cmp"):
        assert main(["replay", str(tmp_path / run / "manifest.json"),
                     "--out", str(tmp_path / f"replay-{run}")]) == 0
        out = capsys.readouterr().out
        assert "differ" not in out and "match" in out


def test_replay_detects_tampering(tmp_path, cfg_file, capsys):
    assert main(["gen-trace", "--config", str(cfg_file), "--out", str(tmp_path / "g")]) == 0
    m = tmp_path / "g" / "manifest.json"
    d = json.loads(m.read_text())
    d["artifacts"]["trace_summary.json"] = "0" * 64
    m.write_text(json.dumps(d))
    assert main(["replay", str(m), "--out", str(tmp_path / "r")]) == 1
    assert err_json(capsys)["error"] == "replay-mismatch"


def test_json_artifacts_are_strict(tmp_path, cfg_file):
    assert main(["train", "--config", str(cfg_file), "--mode", "hybrid", "--no-figures",
                 "--out", str(tmp_path)]) == 0

    def bad_constant(name):
        raise AssertionError(f"non-standard JSON constant {name}")

    for f in tmp_path.glob("*.json"):
        json.loads(f.read_text(), parse_constant=bad_constant)
