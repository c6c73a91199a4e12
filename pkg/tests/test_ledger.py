from calibadv.db import DATABASE_URL_ENV, DEFAULT_DATABASE_URL, database_url, make_session_factory
from calibadv.ledger import list_runs, record_run, run_telemetry
from calibadv.simulation import SimConfig, run_experiment


def _run(**overrides):
    params = dict(
        seed=2, n_questions=3, hops=1, distractors=1, group_size=3,
        questions_per_batch=2, updates=5, collapse_window=3,
    )
    config = SimConfig(**{**params, **overrides})
    return run_experiment(config)


def test_database_url_resolution(monkeypatch):
    monkeypatch.delenv(DATABASE_URL_ENV, raising=False)
    assert database_url() == DEFAULT_DATABASE_URL
    monkeypatch.setenv(DATABASE_URL_ENV, "sqlite:///env.db")
    assert database_url() == "sqlite:///env.db"
    assert database_url("sqlite:///arg.db") == "sqlite:///arg.db"


def test_runs_are_recorded_with_telemetry(tmp_path):
    factory = make_session_factory(f"sqlite:///{tmp_path / 'ledger.db'}")
    first = _run()
    second = _run(pipeline="baseline")
    id1 = record_run(factory, first)
    id2 = record_run(factory, second)

    rows = list_runs(factory)
    assert [r["run_id"] for r in rows] == [id1, id2]
    assert [r["pipeline"] for r in rows] == ["calibadv", "baseline"]
    assert rows[0]["final_success"] == first.final_success
    assert run_telemetry(factory, id1) == first.telemetry
    assert run_telemetry(factory, 999) == []


def test_mispenalty_buckets_survive_the_ledger(tmp_path):
    factory = make_session_factory(f"sqlite:///{tmp_path / 'ledger.db'}")
    result = _run(pipeline="baseline", updates=20)
    stored = run_telemetry(factory, record_run(factory, result))
    with_buckets = [i for i, rec in enumerate(result.telemetry) if rec.mispenalty_by_step]
    assert with_buckets
    for i in with_buckets:
        assert stored[i].mispenalty_by_step == result.telemetry[i].mispenalty_by_step
