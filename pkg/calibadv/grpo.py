# calibadv/grpo.py
from __future__ import annotations

import math
from typing import List, Sequence

from .errors import AlignmentError, CalibAdvError
from .schemas import AdvantageAssignment, RolloutGroup


def group_relative_advantages(
    rewards: Sequence[float],
    eps: float,
    *,
    normalize_std: bool = True,
) -> List[float]:
    """
    Standard GRPO advantages: reward minus the group mean, divided by the
    population std plus eps. A constant group yields exact zeros.
    """
    g = len(rewards)
    if g < 2:
        raise CalibAdvError(f"group-relative advantages need at least 2 rewards, got {g}")
    if eps < 0:
        raise CalibAdvError(f"eps must be >= 0, got {eps}")

    values = [float(r) for r in rewards]
    if all(v == values[0] for v in values):
        return [0.0] * g

    mean = math.fsum(values) / g
    centered = [v - mean for v in values]
    if not normalize_std:
        return centered
    std = math.sqrt(math.fsum(c * c for c in centered) / g)
    return [c / (std + eps) for c in centered]


def broadcast(
    group: RolloutGroup,
    rollout_advantages: Sequence[float],
    *,
    think_prefix_tokens: int = 0,
) -> AdvantageAssignment:
    """Copy each rollout's advantage onto every one of its steps."""
    if len(rollout_advantages) != group.size:
        raise AlignmentError(
            f"group {group.question_id!r}: {len(rollout_advantages)} advantages for {group.size} rollouts"
        )
    per_rollout = []
    masks = []
    for rollout, adv in zip(group.rollouts, rollout_advantages):
        per_rollout.append([float(adv)] * len(rollout.steps))
        masks.append([
            max(0, s.token_count - think_prefix_tokens) if s.prefix_supplied else s.token_count
            for s in rollout.steps
        ])
    return AdvantageAssignment(per_rollout=per_rollout, loss_mask_token_counts=masks)
