# calibadv/ingestion.py
"""
Line-delimited trace files: one rollout group per JSON line.

The calibrated-output format mirrors the trace format and adds, per step,
`advantage` and `mask_tokens`; per rollout, `reward`; per group,
`silver_docs` (sorted) and `silver_source_count`.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from pydantic import ValidationError

from .errors import AlignmentError, TraceParseError, TraceValidationError
from .parallel import ordered_map
from .schemas import (
    AdvantageAssignment,
    RewardBreakdown,
    RolloutGroup,
    SilverDocSet,
)

logger = logging.getLogger(__name__)

SAMPLE_TRACES_PATH = os.path.join(os.path.dirname(__file__), "sample_data", "sample_traces.jsonl")

PathLike = Union[str, Path]


@dataclass(frozen=True)
class CalibratedGroup:
    group: RolloutGroup
    assignment: AdvantageAssignment
    silver: SilverDocSet
    rewards: Tuple[RewardBreakdown, ...]


# ---------------------------
# Helpers
# ---------------------------

def _validation_error(exc: ValidationError, raw: Any, line_no: Optional[int]) -> TraceValidationError:
    err = exc.errors()[0]
    loc = tuple(err.get("loc", ()))
    rollout_id = None
    field = ".".join(str(p) for p in loc) or None
    if len(loc) >= 2 and loc[0] == "rollouts" and isinstance(loc[1], int):
        try:
            rollout_id = raw["rollouts"][loc[1]].get("rollout_id")
        except Exception:
            rollout_id = None
        field = ".".join(str(p) for p in loc[2:]) or "rollouts"
    return TraceValidationError(err.get("msg", str(exc)), line_no=line_no, rollout_id=rollout_id, field=field)


def _read_lines(path: PathLike) -> List[Tuple[int, str]]:
    with open(path, "r", encoding="utf-8") as f:
        return [(n, line) for n, line in enumerate(f, start=1) if line.strip()]


def _load_json_line(line_no: int, line: str) -> Dict[str, Any]:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as e:
        raise TraceParseError(line_no, f"malformed JSON ({e.msg} at column {e.colno})")
    if not isinstance(raw, dict):
        raise TraceParseError(line_no, f"expected a JSON object, got {type(raw).__name__}")
    return raw


def _validate_group(raw: Any, line_no: Optional[int]) -> RolloutGroup:
    try:
        return RolloutGroup.model_validate(raw)
    except ValidationError as e:
        raise _validation_error(e, raw, line_no)


def _dump_line(record: Dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, allow_nan=False)


def _write_lines(path: PathLike, lines: Iterable[str]) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line)
            f.write("\n")


# ---------------------------
# Trace files
# ---------------------------

def group_to_record(group: RolloutGroup) -> Dict[str, Any]:
    return group.model_dump(mode="json", exclude_none=True)


def parse_trace_file(path: PathLike, *, workers: Optional[int] = None) -> List[RolloutGroup]:
    lines = _read_lines(path)

    def parse(item: Tuple[int, str]) -> RolloutGroup:
        line_no, line = item
        return _validate_group(_load_json_line(line_no, line), line_no)

    groups = ordered_map(parse, lines, workers=workers)
    logger.info("parsed %d groups from %s", len(groups), path)
    return groups


def write_trace_file(groups: Sequence[Union[RolloutGroup, Dict[str, Any]]], path: PathLike) -> None:
    # Validate everything before the file is touched.
    validated = [g if isinstance(g, RolloutGroup) else _validate_group(g, None) for g in groups]
    _write_lines(path, (_dump_line(group_to_record(g)) for g in validated))
    logger.info("wrote %d groups to %s", len(validated), path)


# ---------------------------
# Calibrated files
# ---------------------------

def calibrated_to_record(item: CalibratedGroup) -> Dict[str, Any]:
    item.assignment.check_against(item.group)
    if len(item.rewards) != item.group.size:
        raise AlignmentError(f"group {item.group.question_id!r}: rewards do not match rollouts")

    record = group_to_record(item.group)
    for rollout_rec, reward, adv, mask in zip(
        record["rollouts"],
        item.rewards,
        item.assignment.per_rollout,
        item.assignment.loss_mask_token_counts,
    ):
        rollout_rec["reward"] = reward.model_dump(mode="json")
        for step_rec, a, m in zip(rollout_rec["steps"], adv, mask):
            step_rec["advantage"] = a
            step_rec["mask_tokens"] = m
    record["silver_docs"] = sorted(item.silver.docs)
    record["silver_source_count"] = item.silver.source_rollout_count
    return record


def _calibrated_from_record(raw: Dict[str, Any], line_no: int) -> CalibratedGroup:
    try:
        silver_docs = raw.pop("silver_docs")
        silver_count = raw.pop("silver_source_count")
        per_rollout: List[List[float]] = []
        masks: List[List[int]] = []
        rewards_raw: List[Any] = []
        for rollout in raw["rollouts"]:
            rewards_raw.append(rollout.pop("reward"))
            per_rollout.append([step.pop("advantage") for step in rollout["steps"]])
            masks.append([step.pop("mask_tokens") for step in rollout["steps"]])
    except (KeyError, TypeError, AttributeError) as e:
        raise TraceParseError(line_no, f"not a calibrated record (missing {e})")

    group = _validate_group(raw, line_no)
    try:
        assignment = AdvantageAssignment(per_rollout=per_rollout, loss_mask_token_counts=masks)
        silver = SilverDocSet(
            question_id=group.question_id,
            docs=frozenset(silver_docs),
            source_rollout_count=silver_count,
        )
        rewards = tuple(RewardBreakdown.model_validate(r) for r in rewards_raw)
    except ValidationError as e:
        raise TraceValidationError(e.errors()[0].get("msg", str(e)), line_no=line_no, field="calibration")
    try:
        assignment.check_against(group)
    except AlignmentError as e:
        raise TraceValidationError(str(e), line_no=line_no, field="mask_tokens")
    return CalibratedGroup(group=group, assignment=assignment, silver=silver, rewards=rewards)


def read_calibrated_file(path: PathLike, *, workers: Optional[int] = None) -> List[CalibratedGroup]:
    lines = _read_lines(path)

    def parse(item: Tuple[int, str]) -> CalibratedGroup:
        line_no, line = item
        return _calibrated_from_record(_load_json_line(line_no, line), line_no)

    return ordered_map(parse, lines, workers=workers)


def write_calibrated_file(items: Sequence[CalibratedGroup], path: PathLike) -> None:
    records = [calibrated_to_record(i) for i in items]
    _write_lines(path, (_dump_line(r) for r in records))
    logger.info("wrote %d calibrated groups to %s", len(records), path)
