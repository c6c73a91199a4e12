"""Advantage calibration, collapse diagnostics and a synthetic simulator for
multi-turn search-agent rollouts trained with GRPO."""

from .calibration import calibrate_group, decouple_think, rebalance_final, silver_documents, soft_penalize, step_correctness
from .errors import CalibAdvError
from .grpo import broadcast, group_relative_advantages
from .rewards import answer_f1, check_format, final_reward, normalize_words
from .schemas import (
    AdvantageAssignment,
    CalibrationConfig,
    RewardBreakdown,
    RolloutGroup,
    RolloutTrace,
    SilverDocSet,
    Step,
    StepKind,
    TelemetryRecord,
)

__version__ = "0.1.0"
