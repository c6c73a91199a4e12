# calibadv/simulation/environment.py
from __future__ import annotations

import math
from typing import List, Optional, Tuple

import numpy as np

from ..schemas import RolloutGroup, RolloutTrace, Step, StepKind
from .config import CostModel
from .corpus import SyntheticCorpus
from .policy import (
    GARBAGE_QUERY,
    GARBLED_OPENER_QUERY,
    OPENER,
    OPENER_ACTIONS,
    Action,
    PolicyState,
    TabularPolicy,
)

_THOUGHT = "<think>I should look this up.</think>"
_FINAL_THOUGHT = "<think>I have enough to answer.</think>"


def _sample(policy: TabularPolicy, state: PolicyState, rng: np.random.Generator) -> Tuple[int, float]:
    lp = policy.log_probs(state)
    p = np.exp(lp)
    i = int(rng.choice(len(p), p=p / p.sum()))
    return i, float(lp[i])


def _token_logprobs(
    total: int,
    prefix: int,
    opener_lp: float,
    head_lp: Optional[float],
    filler_lp: float,
) -> Tuple[float, ...]:
    """
    Layout of one turn: `prefix` think-tag tokens sharing the opener's
    log-probability, then the action token (head_lp, omitted for a garbled
    turn), then filler tokens.
    """
    out: List[float] = [opener_lp / prefix] * prefix if prefix else []
    if head_lp is not None:
        out.append(head_lp)
    out.extend([filler_lp] * (total - len(out)))
    if not prefix and opener_lp and out:
        out[0] += opener_lp
    return tuple(min(0.0, v) for v in out)


def _distractors(
    pool: Tuple[str, ...], docs: Tuple[str, ...], k: int, rng: np.random.Generator
) -> Tuple[str, ...]:
    """Up to `k` of the question's distractor docs not already retrieved, in sampled order."""
    candidates = [d for d in pool if d not in docs]
    if not candidates:
        return ()
    picked = rng.choice(len(candidates), size=min(k, len(candidates)), replace=False)
    return tuple(candidates[int(i)] for i in picked)


def sample_rollout(
    policy: TabularPolicy,
    corpus: SyntheticCorpus,
    question_id: str,
    rollout_id: str,
    rng: np.random.Generator,
    *,
    prefix_supplied: bool = False,
    costs: CostModel = CostModel(),
    think_prefix_tokens: int = 2,
    distractors_per_query: int = 1,
) -> RolloutTrace:
    entity = policy.topic_entity(question_id)
    extra_pool = corpus.question(question_id).distractor_docs
    steps: List[Step] = []
    text: List[str] = []
    answer = ""
    prefix = think_prefix_tokens

    for turn in range(policy.max_turns(question_id)):
        opener_lp = 0.0
        garbled = False
        if not prefix_supplied:
            oi, opener_lp = _sample(policy, OPENER, rng)
            garbled = OPENER_ACTIONS[oi].kind == "garble"

        if garbled:
            lps = _token_logprobs(costs.garbage_tokens, prefix, opener_lp, None, costs.garbage_logprob)
            steps.append(Step(
                index=turn, kind=StepKind.INTERMEDIATE, query_text=GARBLED_OPENER_QUERY,
                token_count=len(lps), token_logprobs=lps, prefix_supplied=False,
            ))
            text.append(GARBLED_OPENER_QUERY)
            continue

        state = PolicyState(question_id, turn, entity)
        ai, action_lp = _sample(policy, state, rng)
        action = policy.actions[state][ai]

        if action.kind == "answer":
            lps = _token_logprobs(costs.answer_tokens, prefix, opener_lp, action_lp, costs.fluent_logprob)
            steps.append(Step(
                index=turn, kind=StepKind.FINAL_ANSWER,
                token_count=len(lps), token_logprobs=lps, prefix_supplied=prefix_supplied,
            ))
            text.append(f"{_FINAL_THOUGHT}<answer>{action.entity}</answer>")
            answer = action.entity
            break

        if action.kind == "garbage":
            lps = _token_logprobs(costs.garbage_tokens, prefix, opener_lp, action_lp, costs.garbage_logprob)
            steps.append(Step(
                index=turn, kind=StepKind.INTERMEDIATE, query_text=GARBAGE_QUERY,
                token_count=len(lps), token_logprobs=lps, prefix_supplied=prefix_supplied,
            ))
            text.append(f"{_THOUGHT}{GARBAGE_QUERY}")
            continue

        docs, nxt = policy.query_result(question_id, action.entity)
        if docs and distractors_per_query:
            docs = docs + _distractors(extra_pool, docs, distractors_per_query, rng)
        lps = _token_logprobs(costs.query_tokens, prefix, opener_lp, action_lp, costs.fluent_logprob)
        steps.append(Step(
            index=turn, kind=StepKind.INTERMEDIATE, query_text=action.entity, retrieved_docs=docs,
            token_count=len(lps), token_logprobs=lps, prefix_supplied=prefix_supplied,
        ))
        info = " ".join(corpus.documents[d].text for d in docs)
        text.append(f"{_THOUGHT}<search>{action.entity}</search><information>{info}</information>")
        if nxt is not None:
            entity = nxt

    return RolloutTrace(rollout_id=rollout_id, steps=steps, answer_text=answer, raw_response="".join(text))


def sample_group(
    policy: TabularPolicy,
    corpus: SyntheticCorpus,
    question_id: str,
    G: int,
    rng: np.random.Generator,
    *,
    prefix_supplied: bool = False,
    costs: CostModel = CostModel(),
    think_prefix_tokens: int = 2,
    distractors_per_query: int = 1,
) -> RolloutGroup:
    q = corpus.question(question_id)
    rollouts = [
        sample_rollout(
            policy, corpus, question_id, f"{question_id}/r{i}", rng,
            prefix_supplied=prefix_supplied, costs=costs, think_prefix_tokens=think_prefix_tokens,
            distractors_per_query=distractors_per_query,
        )
        for i in range(G)
    ]
    return RolloutGroup(
        question_id=question_id,
        question_text=q.text,
        reference_answer=q.answer,
        rollouts=rollouts,
    )


def success_path_logprob(policy: TabularPolicy, corpus: SyntheticCorpus, question_id: str, *, prefix_supplied: bool) -> float:
    """Log-probability of the only rewarded path: query each hop, then answer."""
    q = corpus.question(question_id)
    opener = 0.0 if prefix_supplied else float(policy.log_probs(OPENER)[0])
    total = 0.0
    for k, entity in enumerate(q.chain):
        state = PolicyState(question_id, k, entity)
        kind = "answer" if k == q.hops else "query"
        i = policy.action_index(state, Action(kind, entity))
        total += opener + float(policy.log_probs(state)[i])
    return total if math.isfinite(total) else -math.inf
