# calibadv/analysis.py
"""
Collapse diagnostics over rollout batches.

- mispenalty_rate: share of negatively-advantaged search steps whose every
  retrieved document was also retrieved by a correct rollout
- perplexity family: computed over the masked (trained) tokens of a rollout
- neg/pos ratio: token-weighted negative vs positive advantage mass
"""

from __future__ import annotations

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .calibration import silver_documents
from .errors import AlignmentError, CalibAdvError, MissingLogprobsError
from .rewards import group_rewards
from .schemas import (
    AdvantageAssignment,
    CalibrationConfig,
    MispenaltyBucket,
    RewardBreakdown,
    RolloutGroup,
    RolloutTrace,
    TelemetryRecord,
    perplexity_from_nll,
)

logger = logging.getLogger(__name__)

DEFAULT_PPL_THRESHOLD = 50.0

Mask = Sequence[int]


def _check_aligned(groups: Sequence[RolloutGroup], assignments: Sequence[AdvantageAssignment]) -> None:
    if len(groups) != len(assignments):
        raise AlignmentError(f"{len(assignments)} assignments for {len(groups)} groups")
    for g, a in zip(groups, assignments):
        a.check_against(g)


# ---------------------------
# Mis-penalization
# ---------------------------

def mispenalty_rate(
    groups: Sequence[RolloutGroup],
    assignments: Sequence[AdvantageAssignment],
    config: CalibrationConfig,
    *,
    rewards: Optional[Sequence[Sequence[RewardBreakdown]]] = None,
) -> List[MispenaltyBucket]:
    """Expects the uncalibrated assignments; buckets are keyed by step index."""
    _check_aligned(groups, assignments)
    hits: Dict[int, int] = {}
    totals: Dict[int, int] = {}
    for gi, (group, assignment) in enumerate(zip(groups, assignments)):
        group_r = rewards[gi] if rewards is not None else group_rewards(group)
        silver = silver_documents(group, group_r, config.correctness_threshold)
        for rollout, adv in zip(group.rollouts, assignment.per_rollout):
            for step, a in zip(rollout.steps, adv):
                if step.is_final or a >= 0 or not step.retrieved_docs:
                    continue
                totals[step.index] = totals.get(step.index, 0) + 1
                if silver.docs.issuperset(step.retrieved_docs):
                    hits[step.index] = hits.get(step.index, 0) + 1
    return [
        MispenaltyBucket(step_index=k, proportion=hits.get(k, 0) / totals[k], sample_count=totals[k])
        for k in sorted(totals)
    ]


# ---------------------------
# Perplexity
# ---------------------------

def masked_logprobs(trace: RolloutTrace, mask: Mask) -> List[float]:
    """Log-probs of the trailing mask[s] tokens of every step."""
    if len(mask) != len(trace.steps):
        raise AlignmentError(f"rollout {trace.rollout_id!r}: mask has {len(mask)} entries for {len(trace.steps)} steps")
    out: List[float] = []
    for step, m in zip(trace.steps, mask):
        if m <= 0:
            continue
        if step.token_logprobs is None:
            raise MissingLogprobsError(trace.rollout_id, step.index)
        if m > step.token_count:
            raise AlignmentError(f"rollout {trace.rollout_id!r} step {step.index}: mask {m} exceeds token_count")
        out.extend(step.token_logprobs[step.token_count - m:])
    return out


def rollout_perplexity(trace: RolloutTrace, mask: Mask) -> float:
    lps = masked_logprobs(trace, mask)
    if not lps:
        raise CalibAdvError(f"rollout {trace.rollout_id!r} has no masked tokens; perplexity is undefined")
    return perplexity_from_nll(-math.fsum(lps) / len(lps))


def mean_token_nll(traces: Sequence[RolloutTrace], masks: Sequence[Mask]) -> float:
    if len(traces) != len(masks):
        raise AlignmentError(f"{len(masks)} masks for {len(traces)} traces")
    lps: List[float] = []
    for t, m in zip(traces, masks):
        lps.extend(masked_logprobs(t, m))
    if not lps:
        raise CalibAdvError("no masked tokens in batch")
    return max(0.0, -math.fsum(lps) / len(lps))


def high_ppl_ratio(
    traces: Sequence[RolloutTrace],
    masks: Sequence[Mask],
    threshold: float = DEFAULT_PPL_THRESHOLD,
) -> float:
    if not traces:
        raise CalibAdvError("high_ppl_ratio needs at least one trace")
    if len(traces) != len(masks):
        raise AlignmentError(f"{len(masks)} masks for {len(traces)} traces")
    above = sum(1 for t, m in zip(traces, masks) if rollout_perplexity(t, m) > threshold)
    return above / len(traces)


# ---------------------------
# Advantage balance
# ---------------------------

def advantage_mass(
    assignments: Sequence[AdvantageAssignment],
    *,
    groups: Optional[Sequence[RolloutGroup]] = None,
    final_only: bool = False,
) -> Tuple[float, float]:
    """Token-weighted (negative, positive) advantage magnitudes."""
    if final_only:
        if groups is None:
            raise CalibAdvError("final_only needs the groups to locate final_answer steps")
        _check_aligned(groups, assignments)
    neg: List[float] = []
    pos: List[float] = []
    for gi, assignment in enumerate(assignments):
        for ri, (adv, mask) in enumerate(zip(assignment.per_rollout, assignment.loss_mask_token_counts)):
            cells = range(len(adv))
            if final_only:
                rollout = groups[gi].rollouts[ri]
                cells = [len(adv) - 1] if rollout.has_final_answer else []
            for s in cells:
                w = adv[s] * mask[s]
                if adv[s] < 0:
                    neg.append(-w)
                elif adv[s] > 0:
                    pos.append(w)
    return math.fsum(neg), math.fsum(pos)


def neg_pos_ratio(assignments: Sequence[AdvantageAssignment]) -> Optional[float]:
    neg, pos = advantage_mass(assignments)
    if pos == 0.0:
        return None
    return neg / pos


def final_step_neg_pos_ratio(
    groups: Sequence[RolloutGroup],
    assignments: Sequence[AdvantageAssignment],
) -> Optional[float]:
    neg, pos = advantage_mass(assignments, groups=groups, final_only=True)
    if pos == 0.0:
        return None
    return neg / pos


# ---------------------------
# Batch telemetry
# ---------------------------

def summarize_batch(
    training_step: int,
    groups: Sequence[RolloutGroup],
    assignments: Sequence[AdvantageAssignment],
    config: CalibrationConfig,
    *,
    baseline_assignments: Optional[Sequence[AdvantageAssignment]] = None,
    rewards: Optional[Sequence[Sequence[RewardBreakdown]]] = None,
    policy_entropy: Optional[float] = None,
    garbage_mass: Optional[float] = None,
) -> TelemetryRecord:
    """
    One telemetry row for a batch. PPL uses the masks of `assignments`;
    mis-penalization uses `baseline_assignments` when given.
    """
    _check_aligned(groups, assignments)
    if rewards is None:
        rewards = [group_rewards(g) for g in groups]

    traces = [r for g in groups for r in g.rollouts]
    masks = [m for a in assignments for m in a.loss_mask_token_counts]
    nll = mean_token_nll(traces, masks)
    flat_rewards = [r for rs in rewards for r in rs]

    return TelemetryRecord(
        training_step=training_step,
        mean_token_nll=nll,
        perplexity=perplexity_from_nll(nll),
        neg_pos_ratio=neg_pos_ratio(assignments),
        high_ppl_ratio=high_ppl_ratio(traces, masks, config.ppl_threshold),
        mispenalty_by_step=tuple(
            mispenalty_rate(groups, baseline_assignments or assignments, config, rewards=rewards)
        ),
        policy_entropy=policy_entropy,
        success_rate=float(np.mean([r.r_final for r in flat_rewards])),
        garbage_mass=garbage_mass,
        format_rate=float(np.mean([r.r_format for r in flat_rewards])),
        valid_search_steps=float(
            np.mean([sum(1 for s in t.steps if not s.is_final and s.retrieved_docs) for t in traces])
        ),
        final_neg_pos_ratio=final_step_neg_pos_ratio(groups, assignments),
    )


def detect_collapse_point(
    records: Sequence[TelemetryRecord],
    *,
    window: int = 20,
    drop: float = 0.5,
) -> Optional[int]:
    """
    First training step whose trailing-window mean success rate has fallen by
    at least `drop` (relative) below the best such mean seen so far.
    """
    if window < 1 or not (0.0 < drop <= 1.0):
        raise CalibAdvError(f"invalid collapse detector settings window={window} drop={drop}")
    series = [(r.training_step, r.success_rate) for r in records if r.success_rate is not None]
    if len(series) < window:
        return None
    values = np.array([v for _, v in series], dtype=float)
    means = np.convolve(values, np.ones(window) / window, mode="valid")
    peak = 0.0
    for offset, m in enumerate(means):
        peak = max(peak, float(m))
        if peak > 0.0 and m <= peak * (1.0 - drop):
            return series[offset + window - 1][0]
    return None
