import json

import pytest

from qact.cli import main
from qact.config import load_config
from qact.policy import QTable, init_qtable
from qact.sequences import SyntheticScript, dump_script, write_otb_sequence


@pytest.fixture
def script_file(tmp_path, short_script):
    p = tmp_path / "scripts" / "short.toml"
    p.parent.mkdir()
    p.write_text(dump_script(short_script))
    return p


@pytest.fixture
def otb_dir(tmp_path, short_seq):
    return write_otb_sequence(short_seq, tmp_path / "otb" / "short")


def test_track_writes_results_and_resolved_config(tmp_path, otb_dir):
    out = tmp_path / "run"
    assert main(["track", "--seq", str(otb_dir), "--mode", "active-fixed", "--delta", "0.25",
                 "--seed", "5", "--out", str(out), "--overlay"]) == 0
    rows = (out / "short" / "results.jsonl").read_text().splitlines()
    assert len(rows) == 24
    assert json.loads(rows[1])["delta"] == 0.25
    cfg = load_config(out / "config.resolved.toml")
    assert (cfg.mode, cfg.delta, cfg.seed) == ("active-fixed", 0.25, 5)
    summary = json.loads((out / "short" / "summary.json").read_text())
    assert summary["seed"] == 5 and summary["fps"] > 0
    assert len(list((out / "short" / "overlay").glob("*.png"))) == 24


def test_rerun_from_resolved_config_is_bit_exact(tmp_path, script_file):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["track", "--seq", str(script_file), "--delta", "0.4", "--seed", "2", "--out", str(a)]) == 0
    assert main(["track", "--seq", str(script_file), "--config", str(a / "config.resolved.toml"), "--out", str(b)]) == 0
    assert (a / "short" / "results.jsonl").read_bytes() == (b / "short" / "results.jsonl").read_bytes()


def test_qlearn_without_table_is_config_error(tmp_path, script_file):
    assert main(["track", "--seq", str(script_file), "--mode", "active-qlearn", "--out", str(tmp_path / "o")]) == 2


def test_bad_config_is_config_error(tmp_path, script_file):
    bad = tmp_path / "bad.toml"
    bad.write_text("[tracker]\nwindow = 0\n")
    assert main(["track", "--seq", str(script_file), "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text("[tracker]\nbogus = 1\n")
    assert main(["track", "--seq", str(script_file), "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_missing_ground_truth_is_data_error(tmp_path, otb_dir):
    (otb_dir / "groundtruth_rect.txt").unlink()
    assert main(["track", "--seq", str(otb_dir), "--out", str(tmp_path / "o")]) == 3


def test_missing_sequence_is_data_error(tmp_path):
    assert main(["track", "--seq", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 3


def test_eval_and_compare(tmp_path, script_file):
    a, b = tmp_path / "fixed", tmp_path / "single"
    main(["track", "--seq", str(script_file), "--out", str(a)])
    main(["track", "--seq", str(script_file), "--mode", "single", "--out", str(b)])
    rep = tmp_path / "rep"
    assert main(["eval", "--results", str(a), "--seq", str(script_file.parent), "--out", str(rep),
                 "--compare", str(b)]) == 0
    report = json.loads((rep / "report.json").read_text())
    assert [s["name"] for s in report["sequences"]] == ["short"]
    assert "ALL" in report and "single" in report["compare"]
    assert (rep / "success.svg").read_text().count("<polyline") == 2


def test_eval_errors(tmp_path, script_file):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["eval", "--results", str(empty), "--seq", str(script_file), "--out", str(tmp_path / "r")]) == 3
    runs = tmp_path / "runs"
    (runs / "unknown").mkdir(parents=True)
    (runs / "unknown" / "results.jsonl").write_text("")
    assert main(["eval", "--results", str(runs), "--seq", str(script_file), "--out", str(tmp_path / "r")]) == 3


@pytest.fixture
def tiny_env(tmp_path):
    p = tmp_path / "env.toml"
    p.write_text('[env]\nkind = "synthetic"\nlength = 6\nannotation_stride = 2\n'
                 "\n[features]\nn_samples = 27\n\n[svm]\nepochs = 2\n")
    return p


def test_train_policy_deterministic_and_resumable(tmp_path, tiny_env):
    def run(out, episodes, *extra):
        return main(["train-policy", "--config", str(tiny_env), "--episodes", str(episodes), "--seed", "7",
                     "--out", str(out), *extra])

    assert run(tmp_path / "a", 3) == 0
    assert run(tmp_path / "b", 3) == 0
    assert (tmp_path / "a" / "qtable.json").read_bytes() == (tmp_path / "b" / "qtable.json").read_bytes()
    assert len((tmp_path / "a" / "training.csv").read_text().splitlines()) == 4

    assert run(tmp_path / "c", 2, "--resume", str(tmp_path / "a" / "qtable.json")) == 0
    before = QTable.load(tmp_path / "a" / "qtable.json")
    after = QTable.load(tmp_path / "c" / "qtable.json")
    assert after.episodes == 5
    assert all((after.counts[s] >= before.counts[s]).all() for s in before.counts)
    assert run(tmp_path / "d", 5) == 0
    assert QTable.load(tmp_path / "d" / "qtable.json") == after


def test_train_zero_episodes_is_fresh_table(tmp_path, tiny_env):
    assert main(["train-policy", "--config", str(tiny_env), "--episodes", "0", "--seed", "3",
                 "--out", str(tmp_path / "z")]) == 0
    assert QTable.load(tmp_path / "z" / "qtable.json") == init_qtable(3)


def test_train_bad_env_is_config_error(tmp_path):
    p = tmp_path / "env.toml"
    p.write_text('[env]\nkind = "video"\n')
    assert main(["train-policy", "--config", str(p), "--episodes", "1", "--out", str(tmp_path / "o")]) == 2
