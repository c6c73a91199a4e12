# calibadv/errors.py
from __future__ import annotations

from typing import Optional


class CalibAdvError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(CalibAdvError):
    pass


class AlignmentError(CalibAdvError):
    """Assignments, rewards or groups do not line up with each other."""


class TraceParseError(CalibAdvError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class TraceValidationError(CalibAdvError):
    def __init__(
        self,
        message: str,
        *,
        line_no: Optional[int] = None,
        rollout_id: Optional[str] = None,
        field: Optional[str] = None,
    ):
        self.line_no = line_no
        self.rollout_id = rollout_id
        self.field = field
        where = []
        if line_no is not None:
            where.append(f"line {line_no}")
        if rollout_id is not None:
            where.append(f"rollout {rollout_id!r}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class MissingLogprobsError(CalibAdvError):
    def __init__(self, rollout_id: str, step_index: int):
        self.rollout_id = rollout_id
        self.step_index = step_index
        super().__init__(
            f"rollout {rollout_id!r} step {step_index} has masked tokens but no token_logprobs"
        )
