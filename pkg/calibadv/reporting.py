# calibadv/reporting.py
from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from .schemas import MispenaltyBucket, TelemetryRecord

PathLike = Union[str, Path]

REPORT_COLUMNS = [
    "training_step",
    "mean_token_nll",
    "perplexity",
    "neg_pos_ratio",
    "high_ppl_ratio",
    "policy_entropy",
    "success_rate",
    "garbage_mass",
    "format_rate",
    "valid_search_steps",
    "final_neg_pos_ratio",
]
MISPENALTY_COLUMNS = ["step_index", "proportion", "count"]

_INT_COLUMNS = {"training_step"}


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _open_for_write(path: PathLike):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.open("w", newline="", encoding="utf-8")


def emit_report(records: Sequence[TelemetryRecord], path: PathLike) -> None:
    with _open_for_write(path) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS])


def read_report(path: PathLike) -> List[TelemetryRecord]:
    """Parse a report back; mis-penalization buckets are not part of it."""
    out: List[TelemetryRecord] = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            values: Dict[str, object] = {}
            for c in REPORT_COLUMNS:
                raw = (row.get(c) or "").strip()
                if not raw:
                    continue
                values[c] = int(raw) if c in _INT_COLUMNS else float(raw)
            out.append(TelemetryRecord(**values))
    return out


def write_mispenalty_table(buckets: Sequence[MispenaltyBucket], path: PathLike) -> None:
    with _open_for_write(path) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MISPENALTY_COLUMNS)
        for b in buckets:
            w.writerow([b.step_index, _fmt(b.proportion), b.sample_count])


def read_mispenalty_table(path: PathLike) -> List[MispenaltyBucket]:
    with open(path, newline="", encoding="utf-8") as f:
        return [
            MispenaltyBucket(
                step_index=int(row["step_index"]),
                proportion=float(row["proportion"]),
                sample_count=int(row["count"]),
            )
            for row in csv.DictReader(f)
        ]
