import math

from calibadv.reporting import (
    MISPENALTY_COLUMNS,
    REPORT_COLUMNS,
    emit_report,
    read_mispenalty_table,
    read_report,
    write_mispenalty_table,
)
from calibadv.schemas import MispenaltyBucket, TelemetryRecord


def _record(step, nll, ratio=None, **extra):
    return TelemetryRecord(
        training_step=step,
        mean_token_nll=nll,
        perplexity=math.exp(nll),
        neg_pos_ratio=ratio,
        high_ppl_ratio=0.25,
        **extra,
    )


def test_empty_report_has_header_only(tmp_path):
    p = tmp_path / "report.csv"
    emit_report([], p)
    assert p.read_text(encoding="utf-8") == ",".join(REPORT_COLUMNS) + "\n"


def test_report_rows_parse_back(tmp_path):
    records = [
        _record(0, 0.1, 1.0, success_rate=0.5),
        _record(1, 0.7, None, policy_entropy=1.2345678901234567),
        _record(2, 1 / 3, 2.5, garbage_mass=0.0, final_neg_pos_ratio=1.0),
    ]
    p = tmp_path / "nested" / "report.csv"
    emit_report(records, p)
    lines = p.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 4
    assert lines[2].split(",")[REPORT_COLUMNS.index("neg_pos_ratio")] == ""
    assert read_report(p) == records


def test_mispenalty_table(tmp_path):
    buckets = [
        MispenaltyBucket(step_index=0, proportion=1 / 3, sample_count=3),
        MispenaltyBucket(step_index=1, proportion=0.0, sample_count=1),
    ]
    p = tmp_path / "mis.csv"
    write_mispenalty_table(buckets, p)
    assert p.read_text(encoding="utf-8").splitlines()[0] == ",".join(MISPENALTY_COLUMNS)
    assert read_mispenalty_table(p) == buckets
