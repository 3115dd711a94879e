import fcntl
import json

import numpy as np
import pytest

from helpers import run_cli, write_spec

SPEC = dict(m=5, k=2, accuracy=[0.85, 0.7, 0.75, 0.65, 0.7], seed=1)


@pytest.fixture(scope="module")
def stream(tmp_path_factory):
    d = tmp_path_factory.mktemp("stream")
    spec = write_spec(d / "spec.json", **SPEC)
    path = d / "data.jsonl"
    assert run_cli("simulate", str(spec), "-n", "2000", "-o", str(path)).returncode == 0
    return path


def _lines(path):
    return path.read_text().splitlines(keepends=True)


def test_fit_stream_batches_and_metrics(stream, tmp_path):
    state = tmp_path / "s.json"
    proc = run_cli("fit-stream", str(stream), "--state", str(state), "--batch-size", "300")
    assert proc.returncode == 0, proc.stderr
    metrics = [json.loads(x) for x in proc.stdout.splitlines()]
    assert [m["batch"] for m in metrics] == list(range(7))
    assert [m["examples"] for m in metrics] == [300] * 6 + [200]
    assert all(0.5 < m["label_accuracy"] <= 1 for m in metrics)
    saved = json.loads(state.read_text())
    assert saved["batches_seen"] == 7 and saved["m"] == 5 and saved["version"] == 1


def test_fit_stream_reads_stdin(stream, tmp_path):
    state = tmp_path / "s.json"
    proc = run_cli("fit-stream", "--state", str(state), stdin=stream.read_text())
    assert proc.returncode == 0, proc.stderr
    assert json.loads(state.read_text())["batches_seen"] == 4


def test_empty_input_is_an_input_error(tmp_path):
    proc = run_cli("fit-stream", "--state", str(tmp_path / "s.json"), stdin="")
    assert proc.returncode == 2
    assert "no records" in proc.stderr


def test_rerun_is_byte_identical(stream, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for s in (a, b):
        assert run_cli("fit-stream", str(stream), "--state", str(s)).returncode == 0
    assert a.read_bytes() == b.read_bytes()


def test_resume_matches_uninterrupted_run(stream, tmp_path):
    lines = _lines(stream)
    first, second = tmp_path / "first.jsonl", tmp_path / "second.jsonl"
    first.write_text("".join(lines[:1000]))
    second.write_text("".join(lines[1000:]))
    whole, split = tmp_path / "whole.json", tmp_path / "split.json"
    assert run_cli("fit-stream", str(stream), "--state", str(whole)).returncode == 0
    assert run_cli("fit-stream", str(first), "--state", str(split)).returncode == 0
    assert run_cli("fit-stream", str(second), "--state", str(split)).returncode == 0
    assert whole.read_bytes() == split.read_bytes()


def test_newer_state_version_is_rejected(stream, tmp_path):
    state = tmp_path / "s.json"
    assert run_cli("fit-stream", str(stream), "--state", str(state)).returncode == 0
    d = json.loads(state.read_text())
    d["version"] = 99
    state.write_text(json.dumps(d))
    proc = run_cli("fit-stream", str(stream), "--state", str(state))
    assert proc.returncode == 4
    assert run_cli("label", str(stream), "--state", str(state)).returncode == 4


def test_corrupt_state_is_a_state_error(stream, tmp_path):
    state = tmp_path / "s.json"
    state.write_text("{not json")
    assert run_cli("label", str(stream), "--state", str(state)).returncode == 4


def test_malformed_line_reports_its_number(tmp_path):
    text = '{"id": "a", "labels": [1, 2, 0]}\n{"id": "b", "labels": [1, 2]}\n'
    proc = run_cli("fit-stream", "--state", str(tmp_path / "s.json"), stdin=text)
    assert proc.returncode == 2
    assert "line 2" in proc.stderr
    proc = run_cli("fit-stream", "--state", str(tmp_path / "s.json"),
                   stdin='{"id": "a", "labels": [1, 7, 0]}\n')
    assert proc.returncode == 2


def test_locked_state_is_refused(stream, tmp_path):
    state = tmp_path / "s.json"
    with open(str(state) + ".lock", "a") as fh:
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        proc = run_cli("fit-stream", str(stream), "--state", str(state))
    assert proc.returncode == 4
    assert "locked" in proc.stderr
    assert not state.exists()


@pytest.fixture(scope="module")
def fitted(stream, tmp_path_factory):
    state = tmp_path_factory.mktemp("fitted") / "s.json"
    assert run_cli("fit-stream", str(stream), "--state", str(state)).returncode == 0
    return state


def test_label_all_abstain_gives_prior(fitted):
    proc = run_cli("label", "--state", str(fitted), stdin='{"id": "x", "labels": [0,0,0,0,0]}\n')
    assert proc.returncode == 0, proc.stderr
    out = json.loads(proc.stdout)
    assert out == {"id": "x", "probs": [0.5, 0.5], "hard": 1, "abstained": True}


def test_label_outputs_every_record(stream, fitted):
    proc = run_cli("label", str(stream), "--state", str(fitted))
    assert proc.returncode == 0
    out = [json.loads(x) for x in proc.stdout.splitlines()]
    truth = [json.loads(x)["true_label"] for x in _lines(stream)]
    assert len(out) == 2000
    assert all(abs(sum(o["probs"]) - 1) < 1e-9 for o in out)
    assert np.mean([o["hard"] == t for o, t in zip(out, truth)]) > 0.8


def test_label_width_mismatch(fitted):
    proc = run_cli("label", "--state", str(fitted), stdin='{"id": "x", "labels": [1, 2]}\n')
    assert proc.returncode == 2


def test_label_missing_state(tmp_path):
    proc = run_cli("label", "--state", str(tmp_path / "nope.json"), stdin="")
    assert proc.returncode == 4


def test_simulate(tmp_path):
    spec = write_spec(tmp_path / "spec.json", m=3, k=3, accuracy=[1, 1, 1], coverage=[1, 1, 1])
    empty = tmp_path / "empty.jsonl"
    assert run_cli("simulate", str(spec), "-n", "0", "-o", str(empty)).returncode == 0
    assert empty.read_text() == ""
    a = run_cli("simulate", str(spec), "-n", "50", "--seed", "4").stdout
    b = run_cli("simulate", str(spec), "-n", "50", "--seed", "4").stdout
    c = run_cli("simulate", str(spec), "-n", "50", "--seed", "5").stdout
    assert a == b and a != c
    for line in a.splitlines():
        rec = json.loads(line)
        assert rec["labels"] == [rec["true_label"]] * 3
    bad = write_spec(tmp_path / "bad.json", m=3, k=2, accuracy=[1.5, 1, 1])
    assert run_cli("simulate", str(bad), "-n", "5").returncode == 2


def test_evaluate_requires_truth(tmp_path):
    data = tmp_path / "d.jsonl"
    data.write_text('{"id": "a", "labels": [1, 2, 1]}\n')
    proc = run_cli("evaluate", str(data), "--output-dir", str(tmp_path / "o"))
    assert proc.returncode == 2


def test_evaluate_perfect_sources(tmp_path):
    spec = write_spec(tmp_path / "spec.json", m=5, k=2, accuracy=[1] * 5, seed=2)
    data = tmp_path / "d.jsonl"
    assert run_cli("simulate", str(spec), "-n", "5000", "-o", str(data)).returncode == 0
    out = tmp_path / "o"
    proc = run_cli("evaluate", str(data), "--output-dir", str(out))
    assert proc.returncode == 0, proc.stderr
    summary = json.loads((out / "evaluate_incremental.json").read_text())
    assert summary["mean_accuracy"] == 1.0
    assert len(summary["tests"]) == 5
    rows = (out / "evaluate_incremental.csv").read_text().splitlines()
    assert rows[0] == "test,batch,start,end,accuracy" and len(rows) == 1 + 5 * 100


def test_config_file_and_flag_precedence(stream, tmp_path):
    cfg = tmp_path / "run.conf"
    cfg.write_text("# comment\nalpha = 0.2\nbatch_size = 1000\nthreshold = auto:0.3\n")
    s1, s2 = tmp_path / "s1.json", tmp_path / "s2.json"
    assert run_cli("fit-stream", str(stream), "--state", str(s1), "--config", str(cfg)).returncode == 0
    assert run_cli("fit-stream", str(stream), "--state", str(s2), "--config", str(cfg),
                   "--alpha", "0.3").returncode == 0
    d1, d2 = json.loads(s1.read_text()), json.loads(s2.read_text())
    assert d1["config"]["alpha"] == 0.2 and d2["config"]["alpha"] == 0.3
    assert d1["batches_seen"] == 2
    assert d1["config"]["threshold.mode"] == "max-fraction"
    assert d1["config"]["threshold.fraction"] == 0.3


def test_bad_config_is_an_input_error(stream, tmp_path):
    cfg = tmp_path / "run.conf"
    cfg.write_text("nonsense = 1\n")
    proc = run_cli("fit-stream", str(stream), "--state", str(tmp_path / "s.json"),
                   "--config", str(cfg))
    assert proc.returncode == 2
    assert run_cli("fit-stream", str(stream), "--state", str(tmp_path / "s.json"),
                   "--alpha", "2").returncode == 2
