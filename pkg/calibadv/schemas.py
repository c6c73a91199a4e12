from __future__ import annotations

import math
from enum import Enum
from typing import Annotated, FrozenSet, List, Optional, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    StringConstraints,
    ValidationInfo,
    field_validator,
    model_validator,
)

from .errors import AlignmentError


DocumentId = Annotated[str, StringConstraints(min_length=1)]


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


# ---------------------------
# Rollout traces
# ---------------------------

class StepKind(str, Enum):
    INTERMEDIATE = "intermediate"
    FINAL_ANSWER = "final_answer"


class Step(_Frozen):
    index: int = Field(ge=0)
    kind: StepKind
    query_text: Optional[str] = Field(default=None, validate_default=True)
    retrieved_docs: Tuple[DocumentId, ...] = ()
    token_count: int = Field(ge=0)
    token_logprobs: Optional[Tuple[float, ...]] = None
    prefix_supplied: bool = False

    @field_validator("query_text")
    @classmethod
    def _query_only_on_search_turns(cls, v: Optional[str], info: ValidationInfo) -> Optional[str]:
        kind = info.data.get("kind")
        if kind is StepKind.FINAL_ANSWER and v is not None:
            raise ValueError("must be absent on a final_answer step")
        if kind is StepKind.INTERMEDIATE and v is None:
            raise ValueError("required on an intermediate step")
        return v

    @field_validator("retrieved_docs")
    @classmethod
    def _no_docs_on_answer(cls, v: Tuple[str, ...], info: ValidationInfo) -> Tuple[str, ...]:
        if info.data.get("kind") is StepKind.FINAL_ANSWER and v:
            raise ValueError("a final_answer step retrieves no documents")
        return v

    @field_validator("token_logprobs")
    @classmethod
    def _logprobs_match_tokens(
        cls, v: Optional[Tuple[float, ...]], info: ValidationInfo
    ) -> Optional[Tuple[float, ...]]:
        if v is None:
            return v
        count = info.data.get("token_count")
        if count is not None and len(v) != count:
            raise ValueError(f"length {len(v)} does not match token_count {count}")
        for lp in v:
            if not math.isfinite(lp) or lp > 0.0:
                raise ValueError(f"log-probability {lp!r} is not a finite value <= 0")
        return v

    @property
    def is_final(self) -> bool:
        return self.kind is StepKind.FINAL_ANSWER


class RolloutTrace(_Frozen):
    rollout_id: str
    steps: Tuple[Step, ...] = Field(min_length=1)
    answer_text: str = ""
    raw_response: Optional[str] = None

    @field_validator("steps")
    @classmethod
    def _steps_are_ordered(cls, v: Tuple[Step, ...]) -> Tuple[Step, ...]:
        for expected, step in enumerate(v):
            if step.index != expected:
                raise ValueError(f"step indices must be consecutive from 0, got {step.index} at position {expected}")
        finals = [s.index for s in v if s.is_final]
        if len(finals) > 1:
            raise ValueError("at most one final_answer step per rollout")
        if finals and finals[0] != len(v) - 1:
            raise ValueError("the final_answer step must be the last step")
        return v

    @field_validator("answer_text")
    @classmethod
    def _answer_needs_final_step(cls, v: str, info: ValidationInfo) -> str:
        steps = info.data.get("steps")
        if v and steps and not steps[-1].is_final:
            raise ValueError("answer_text is set but the rollout has no final_answer step")
        return v

    @property
    def final_step(self) -> Optional[Step]:
        last = self.steps[-1]
        return last if last.is_final else None

    @property
    def has_final_answer(self) -> bool:
        return self.steps[-1].is_final


class RolloutGroup(_Frozen):
    question_id: str
    question_text: str
    reference_answer: str
    rollouts: Tuple[RolloutTrace, ...] = Field(min_length=2)

    @field_validator("rollouts")
    @classmethod
    def _distinct_rollout_ids(cls, v: Tuple[RolloutTrace, ...]) -> Tuple[RolloutTrace, ...]:
        seen = set()
        for r in v:
            if r.rollout_id in seen:
                raise ValueError(f"duplicate rollout_id {r.rollout_id!r}")
            seen.add(r.rollout_id)
        return v

    @property
    def size(self) -> int:
        return len(self.rollouts)


# ---------------------------
# Rewards and advantages
# ---------------------------

class RewardBreakdown(_Frozen):
    r_answer: float = Field(ge=0.0, le=1.0)
    r_format: float
    r_final: float = Field(ge=0.0, le=1.0)

    @field_validator("r_format")
    @classmethod
    def _binary_format(cls, v: float) -> float:
        if v not in (0.0, 1.0):
            raise ValueError("r_format must be 0 or 1")
        return v

    @model_validator(mode="after")
    def _gate(self) -> "RewardBreakdown":
        if self.r_final != self.r_answer * self.r_format:
            raise ValueError("r_final must equal r_answer * r_format")
        return self

    @classmethod
    def gated(cls, r_answer: float, r_format: float) -> "RewardBreakdown":
        return cls(r_answer=r_answer, r_format=r_format, r_final=r_answer * r_format)


class AdvantageAssignment(_Frozen):
    """
    Per-rollout, per-step advantages plus the number of tokens of each step
    that receive them. Every calibration stage returns a new assignment.
    """

    per_rollout: Tuple[Tuple[float, ...], ...]
    loss_mask_token_counts: Tuple[Tuple[int, ...], ...]

    @model_validator(mode="after")
    def _aligned(self) -> "AdvantageAssignment":
        if len(self.per_rollout) != len(self.loss_mask_token_counts):
            raise ValueError("advantages and masks disagree on the number of rollouts")
        for i, (adv, mask) in enumerate(zip(self.per_rollout, self.loss_mask_token_counts)):
            if len(adv) != len(mask):
                raise ValueError(f"rollout {i}: {len(adv)} advantages but {len(mask)} mask counts")
            if any(m < 0 for m in mask):
                raise ValueError(f"rollout {i}: negative mask count")
        return self

    def check_against(self, group: RolloutGroup) -> None:
        if len(self.per_rollout) != group.size:
            raise AlignmentError(
                f"group {group.question_id!r}: assignment has {len(self.per_rollout)} rollouts, group has {group.size}"
            )
        for rollout, adv, mask in zip(group.rollouts, self.per_rollout, self.loss_mask_token_counts):
            if len(adv) != len(rollout.steps):
                raise AlignmentError(
                    f"rollout {rollout.rollout_id!r}: {len(adv)} advantages for {len(rollout.steps)} steps"
                )
            for step, m in zip(rollout.steps, mask):
                if m > step.token_count:
                    raise AlignmentError(
                        f"rollout {rollout.rollout_id!r} step {step.index}: mask {m} exceeds token_count {step.token_count}"
                    )

    def replace(
        self,
        *,
        per_rollout: Optional[List[List[float]]] = None,
        loss_mask_token_counts: Optional[List[List[int]]] = None,
    ) -> "AdvantageAssignment":
        return AdvantageAssignment(
            per_rollout=self.per_rollout if per_rollout is None else per_rollout,
            loss_mask_token_counts=(
                self.loss_mask_token_counts if loss_mask_token_counts is None else loss_mask_token_counts
            ),
        )


class SilverDocSet(_Frozen):
    question_id: str
    docs: FrozenSet[DocumentId] = frozenset()
    source_rollout_count: int = Field(ge=0)

    @model_validator(mode="after")
    def _docs_need_sources(self) -> "SilverDocSet":
        # A correct rollout may retrieve nothing, so count > 0 with no docs is legal.
        if self.docs and self.source_rollout_count == 0:
            raise ValueError("silver documents without any correct source rollout")
        return self


# ---------------------------
# Configuration
# ---------------------------

class RebalanceScope(str, Enum):
    FINAL_ANSWER = "final_answer"
    STEP_INDEX = "step_index"


class CalibrationConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    lambda_: float = Field(default=1.0, gt=0.0, alias="lambda")
    correctness_threshold: float = Field(default=0.5, gt=0.0, le=1.0)
    eps: float = Field(default=1e-6, gt=0.0)
    ppl_threshold: float = Field(default=50.0, gt=0.0)
    think_prefix_tokens: int = Field(default=2, ge=0)
    normalize_std: bool = True
    rebalance_scope: RebalanceScope = RebalanceScope.FINAL_ANSWER
    enable_soft_penalty: bool = True
    enable_rebalance: bool = True
    enable_decouple_think: bool = True

    def without_stages(self) -> "CalibrationConfig":
        return self.model_copy(
            update={
                "enable_soft_penalty": False,
                "enable_rebalance": False,
                "enable_decouple_think": False,
            }
        )


# ---------------------------
# Telemetry
# ---------------------------

class MispenaltyBucket(_Frozen):
    step_index: int = Field(ge=0)
    proportion: float = Field(ge=0.0, le=1.0)
    sample_count: int = Field(ge=1)


# exp() overflows a double past this point
_MAX_EXP_ARG = 709.0


def perplexity_from_nll(nll: float) -> float:
    return math.exp(nll) if nll < _MAX_EXP_ARG else math.inf


class TelemetryRecord(_Frozen):
    training_step: int = Field(ge=0)
    mean_token_nll: float = Field(ge=0.0)
    perplexity: float = Field(ge=1.0)
    neg_pos_ratio: Optional[float] = Field(default=None, ge=0.0)  # None = undefined
    high_ppl_ratio: float = Field(ge=0.0, le=1.0)
    mispenalty_by_step: Tuple[MispenaltyBucket, ...] = ()

    policy_entropy: Optional[float] = None
    success_rate: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    garbage_mass: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    format_rate: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    valid_search_steps: Optional[float] = Field(default=None, ge=0.0)
    final_neg_pos_ratio: Optional[float] = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def _ppl_is_exp_nll(self) -> "TelemetryRecord":
        expected = perplexity_from_nll(self.mean_token_nll)
        if not math.isclose(self.perplexity, expected, rel_tol=1e-9):
            raise ValueError(f"perplexity {self.perplexity} != exp(mean_token_nll) {expected}")
        return self
