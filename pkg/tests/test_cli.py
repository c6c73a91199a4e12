import json

import pytest

from calibadv.ingestion import SAMPLE_TRACES_PATH, read_calibrated_file, write_trace_file
from calibadv.main import EXIT_INVALID, EXIT_IO, EXIT_OK, main
from calibadv.reporting import read_mispenalty_table, read_report

from .builders import answer, group, rollout, search

SMALL_SIM = """\
seed: 11
n_questions: 3
hops: 1
distractors: 1
group_size: 3
questions_per_batch: 2
updates: 6
archive_every: 2
collapse_window: 3
"""


@pytest.fixture
def sim_config(tmp_path):
    p = tmp_path / "sim.yaml"
    p.write_text(SMALL_SIM, encoding="utf-8")
    return p


def test_calibrate_sample(tmp_path, capsys):
    out = tmp_path / "cal.jsonl"
    assert main(["calibrate", str(SAMPLE_TRACES_PATH), "--out", str(out)]) == EXIT_OK
    items = read_calibrated_file(out)
    assert [i.group.question_id for i in items] == ["q-capital", "q-author"]
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("q-capital\tG=3\t")


def test_disabling_every_stage_equals_baseline(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    flags = ["--no-soft-penalty", "--no-rebalance", "--no-decouple"]
    assert main(["calibrate", str(SAMPLE_TRACES_PATH), "--out", str(a), *flags]) == EXIT_OK
    assert main(["calibrate", str(SAMPLE_TRACES_PATH), "--out", str(b), "--pipeline", "baseline"]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("argv", [["--lambda", "0"], ["--correctness-threshold", "2"], ["--think-prefix-tokens", "-1"]])
def test_invalid_values_exit_one(tmp_path, argv):
    out = tmp_path / "cal.jsonl"
    assert main(["calibrate", str(SAMPLE_TRACES_PATH), "--out", str(out), *argv]) == EXIT_INVALID
    assert not out.exists()


@pytest.mark.parametrize("argv", [["--bogus-flag"], ["--rebalance-scope", "everything"]])
def test_bad_flags_exit_one(tmp_path, argv):
    with pytest.raises(SystemExit) as exc:
        main(["calibrate", str(SAMPLE_TRACES_PATH), "--out", str(tmp_path / "o.jsonl"), *argv])
    assert exc.value.code == EXIT_INVALID


def test_missing_input_exits_two(tmp_path):
    assert main(["calibrate", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o.jsonl")]) == EXIT_IO


def test_malformed_input_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n", encoding="utf-8")
    assert main(["calibrate", str(bad), "--out", str(tmp_path / "o.jsonl")]) == EXIT_INVALID
    assert "line 1" in capsys.readouterr().err


def test_analyze_sample(tmp_path, capsys):
    baseline = tmp_path / "baseline.jsonl"
    assert main(["calibrate", str(SAMPLE_TRACES_PATH), "--out", str(baseline), "--pipeline", "baseline"]) == EXIT_OK
    report = tmp_path / "report.csv"
    assert main(["analyze", str(SAMPLE_TRACES_PATH), str(baseline), "--out", str(report)]) == EXIT_OK

    table = read_mispenalty_table(tmp_path / "report_mispenalty.csv")
    assert [(b.step_index, b.sample_count) for b in table] == [(0, 3), (1, 1)]
    assert table[0].proportion == pytest.approx(1 / 3)
    assert table[1].proportion == 0.0
    records = read_report(report)
    assert len(records) == 1 and records[0].training_step == 0
    assert "step_index\tproportion\tcount" in capsys.readouterr().out


def test_analyze_reports_infinite_perplexity(tmp_path):
    lps = [-800.0, -800.0]
    traces = tmp_path / "unlikely.jsonl"
    write_trace_file([group("q", "x", [
        rollout("r0", [search(0, ["d1"], tokens=2, logprobs=lps), answer(1, tokens=2, logprobs=lps)], "x"),
        rollout("r1", [search(0, ["d2"], tokens=2, logprobs=lps), answer(1, tokens=2, logprobs=lps)], "y"),
    ])], traces)
    baseline = tmp_path / "baseline.jsonl"
    assert main(["calibrate", str(traces), "--out", str(baseline), "--pipeline", "baseline"]) == EXIT_OK
    report = tmp_path / "report.csv"
    assert main(["analyze", str(traces), str(baseline), "--out", str(report)]) == EXIT_OK
    [record] = read_report(report)
    assert record.perplexity == float("inf")
    assert record.high_ppl_ratio == 1.0


def test_analyze_missing_assignments_exits_two(tmp_path):
    code = main(["analyze", str(SAMPLE_TRACES_PATH), str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "r.csv")])
    assert code == EXIT_IO


def test_analyze_rejects_mismatched_files(tmp_path):
    # a trace file is not a calibrated file
    code = main(["analyze", str(SAMPLE_TRACES_PATH), str(SAMPLE_TRACES_PATH), "--out", str(tmp_path / "r.csv")])
    assert code == EXIT_INVALID


def test_simulate_is_reproducible(tmp_path, sim_config):
    a, b = tmp_path / "runs" / "a", tmp_path / "runs" / "b"
    assert main(["simulate", str(sim_config), "--out-dir", str(a)]) == EXIT_OK
    assert main(["simulate", str(sim_config), "--out-dir", str(b)]) == EXIT_OK
    assert (a / "telemetry.csv").read_bytes() == (b / "telemetry.csv").read_bytes()
    assert len((a / "telemetry.csv").read_text(encoding="utf-8").splitlines()) == 7
    for name in ("traces.jsonl", "assignments.jsonl", "policy_summary.json"):
        assert (a / name).exists()
    summary = json.loads((a / "policy_summary.json").read_text(encoding="utf-8"))
    assert summary["pipeline"] == "calibadv" and summary["seed"] == 11


@pytest.mark.parametrize("pipeline", ["baseline", "calibadv"])
def test_simulate_accepts_both_pipelines(tmp_path, sim_config, pipeline):
    out = tmp_path / pipeline
    argv = ["simulate", str(sim_config), "--out-dir", str(out), "--pipeline", pipeline, "--seed", "5"]
    assert main(argv) == EXIT_OK
    summary = json.loads((out / "policy_summary.json").read_text(encoding="utf-8"))
    assert summary["pipeline"] == pipeline and summary["seed"] == 5


def test_simulate_missing_config_exits_two(tmp_path):
    assert main(["simulate", str(tmp_path / "missing.yaml"), "--out-dir", str(tmp_path / "o")]) == EXIT_IO


def test_report_lists_recorded_runs(tmp_path, sim_config, capsys):
    db = f"sqlite:///{tmp_path / 'runs.db'}"
    for lam in ("0.5", "2"):
        argv = ["simulate", str(sim_config), "--out-dir", str(tmp_path / lam), "--lambda", lam, "--db", db]
        assert main(argv) == EXIT_OK
    capsys.readouterr()
    out = tmp_path / "ledger.csv"
    assert main(["report", "--db", db, "--out", str(out)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("run_id,pipeline,seed,lambda")
    assert [line.split(",")[3] for line in lines[1:]] == ["0.5", "2.0"]
    assert out.read_text(encoding="utf-8").splitlines() == lines


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "calibrate" in capsys.readouterr().out


def test_seed_is_a_simulate_flag(tmp_path, capsys):
    with pytest.raises(SystemExit):
        main(["simulate", "--help"])
    assert "--seed" in capsys.readouterr().out
    with pytest.raises(SystemExit):
        main(["calibrate", "--help"])
    assert "--seed" not in capsys.readouterr().out
    with pytest.raises(SystemExit) as exc:
        main(["calibrate", str(SAMPLE_TRACES_PATH), "--out", str(tmp_path / "o.jsonl"), "--seed", "3"])
    assert exc.value.code == EXIT_INVALID
