# calibadv/calibration.py
"""
Advantage calibration for multi-turn search rollouts.

Three stages run on top of the plain GRPO assignment, in this order:
  1) decouple_think  - the harness-supplied think prefix leaves the loss mask
  2) soft_penalize   - negative intermediate steps are scaled by (1 - c_s),
                       c_s being the share of the step's documents that some
                       correct rollout of the same question also retrieved
  3) rebalance_final - positive final-step advantages are rescaled so their
                       token-weighted mass is lambda times the negative mass
"""

from __future__ import annotations

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import AlignmentError, CalibAdvError
from .grpo import broadcast, group_relative_advantages
from .rewards import group_rewards
from .schemas import (
    AdvantageAssignment,
    CalibrationConfig,
    RebalanceScope,
    RewardBreakdown,
    RolloutGroup,
    SilverDocSet,
    Step,
)

logger = logging.getLogger(__name__)

DEFAULT_THINK_PREFIX_TOKENS = 2


# ---------------------------
# Silver documents
# ---------------------------

def silver_documents(
    group: RolloutGroup,
    rewards: Sequence[RewardBreakdown],
    threshold: float,
) -> SilverDocSet:
    if len(rewards) != group.size:
        raise AlignmentError(
            f"group {group.question_id!r}: {len(rewards)} rewards for {group.size} rollouts"
        )
    docs = set()
    sources = 0
    for rollout, reward in zip(group.rollouts, rewards):
        if reward.r_final < threshold:
            continue
        sources += 1
        for step in rollout.steps:
            docs.update(step.retrieved_docs)
    return SilverDocSet(question_id=group.question_id, docs=frozenset(docs), source_rollout_count=sources)


def step_correctness(step: Step, silver: SilverDocSet) -> float:
    if step.is_final:
        raise CalibAdvError(f"step {step.index}: correctness is undefined for a final_answer step")
    retrieved = set(step.retrieved_docs)
    if not retrieved:
        return 0.0
    return len(retrieved & silver.docs) / len(retrieved)


# ---------------------------
# Stages
# ---------------------------

def soft_penalize(advantage: float, c_s: float) -> float:
    if not (0.0 <= c_s <= 1.0):
        raise CalibAdvError(f"correctness score must lie in [0, 1], got {c_s!r}")
    if advantage < 0:
        return advantage * (1.0 - c_s)
    return advantage


def _rescale_positives(
    cells: List[Tuple[int, int]],
    advantages: List[List[float]],
    masks: Sequence[Sequence[int]],
    lambda_: float,
) -> Optional[float]:
    """Rebalance one set of (rollout, step) cells in place; returns the
    factor applied to positives, or None when nothing changed."""
    pos = math.fsum(advantages[i][s] * masks[i][s] for i, s in cells if advantages[i][s] > 0)
    neg = math.fsum(-advantages[i][s] * masks[i][s] for i, s in cells if advantages[i][s] < 0)
    if pos == 0.0 or neg == 0.0:
        return None
    factor = lambda_ * (neg / pos)
    for i, s in cells:
        if advantages[i][s] > 0:
            advantages[i][s] *= factor
    return factor


def rebalance_final(
    group_assignment: AdvantageAssignment,
    group: RolloutGroup,
    lambda_: float,
    *,
    scope: RebalanceScope = RebalanceScope.FINAL_ANSWER,
) -> AdvantageAssignment:
    if lambda_ <= 0:
        raise CalibAdvError(f"lambda must be > 0, got {lambda_}")
    group_assignment.check_against(group)

    buckets: Dict[int, List[Tuple[int, int]]] = {}
    for i, rollout in enumerate(group.rollouts):
        if scope is RebalanceScope.FINAL_ANSWER:
            if rollout.has_final_answer:
                buckets.setdefault(-1, []).append((i, len(rollout.steps) - 1))
        else:
            for s in range(len(rollout.steps)):
                buckets.setdefault(s, []).append((i, s))

    advantages = [list(a) for a in group_assignment.per_rollout]
    changed = False
    for key in sorted(buckets):
        factor = _rescale_positives(buckets[key], advantages, group_assignment.loss_mask_token_counts, lambda_)
        if factor is not None:
            changed = True
            logger.debug("group %s bucket %s: positives scaled by %.6g", group.question_id, key, factor)
    if not changed:
        return group_assignment
    return group_assignment.replace(per_rollout=advantages)


def decouple_think(
    assignment: AdvantageAssignment,
    group: RolloutGroup,
    *,
    prefix_tokens: int = DEFAULT_THINK_PREFIX_TOKENS,
) -> AdvantageAssignment:
    assignment.check_against(group)
    masks = []
    for rollout, mask in zip(group.rollouts, assignment.loss_mask_token_counts):
        masks.append([
            max(0, m - prefix_tokens) if step.prefix_supplied else m
            for step, m in zip(rollout.steps, mask)
        ])
    return assignment.replace(loss_mask_token_counts=masks)


def apply_soft_penalty(
    assignment: AdvantageAssignment,
    group: RolloutGroup,
    silver: SilverDocSet,
) -> AdvantageAssignment:
    assignment.check_against(group)
    advantages = []
    for rollout, adv in zip(group.rollouts, assignment.per_rollout):
        advantages.append([
            a if step.is_final else soft_penalize(a, step_correctness(step, silver))
            for step, a in zip(rollout.steps, adv)
        ])
    return assignment.replace(per_rollout=advantages)


# ---------------------------
# Pipeline
# ---------------------------

def calibrate_group(
    group: RolloutGroup,
    config: CalibrationConfig,
    *,
    rewards: Optional[Sequence[RewardBreakdown]] = None,
) -> Tuple[AdvantageAssignment, SilverDocSet, List[RewardBreakdown]]:
    rewards = list(rewards) if rewards is not None else group_rewards(group)
    if len(rewards) != group.size:
        raise AlignmentError(
            f"group {group.question_id!r}: {len(rewards)} rewards for {group.size} rollouts"
        )
    silver = silver_documents(group, rewards, config.correctness_threshold)

    advantages = group_relative_advantages(
        [r.r_final for r in rewards], config.eps, normalize_std=config.normalize_std
    )
    assignment = broadcast(group, advantages)

    if config.enable_decouple_think:
        assignment = decouple_think(assignment, group, prefix_tokens=config.think_prefix_tokens)
    if config.enable_soft_penalty:
        assignment = apply_soft_penalty(assignment, group, silver)
    if config.enable_rebalance:
        assignment = rebalance_final(assignment, group, config.lambda_, scope=config.rebalance_scope)
    return assignment, silver, rewards
