from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from calibadv.schemas import RolloutGroup, RolloutTrace, Step, StepKind


def search(
    index: int,
    docs: Sequence[str] = (),
    tokens: int = 5,
    *,
    query: Optional[str] = None,
    logprobs: Optional[Sequence[float]] = None,
    prefix: bool = False,
) -> Step:
    return Step(
        index=index,
        kind=StepKind.INTERMEDIATE,
        query_text=query if query is not None else f"query {index}",
        retrieved_docs=tuple(docs),
        token_count=tokens,
        token_logprobs=None if logprobs is None else tuple(logprobs),
        prefix_supplied=prefix,
    )


def answer(
    index: int,
    tokens: int = 4,
    *,
    logprobs: Optional[Sequence[float]] = None,
    prefix: bool = False,
) -> Step:
    return Step(
        index=index,
        kind=StepKind.FINAL_ANSWER,
        token_count=tokens,
        token_logprobs=None if logprobs is None else tuple(logprobs),
        prefix_supplied=prefix,
    )


def rollout(rid: str, steps: Sequence[Step], answer_text: str = "", raw: Optional[str] = None) -> RolloutTrace:
    return RolloutTrace(rollout_id=rid, steps=tuple(steps), answer_text=answer_text, raw_response=raw)


def group(qid: str, reference: str, rollouts: Sequence[RolloutTrace], text: str = "question?") -> RolloutGroup:
    return RolloutGroup(question_id=qid, question_text=text, reference_answer=reference, rollouts=tuple(rollouts))


ANSWERS = ("alpha", "beta", "alpha beta", "gamma delta", "Alpha!")


def random_group(
    rng: np.random.Generator,
    *,
    qid: str = "g",
    size: Optional[int] = None,
    with_logprobs: bool = False,
    doc_pool: int = 6,
    require_final: bool = False,
) -> RolloutGroup:
    g = size if size is not None else int(rng.integers(2, 7))
    rollouts = []
    for i in range(g):
        n_search = int(rng.integers(0, 4))
        has_final = require_final or n_search == 0 or rng.random() < 0.8
        steps = []
        for k in range(n_search):
            n_docs = int(rng.integers(0, 3))
            docs = [f"d{int(x)}" for x in rng.choice(doc_pool, size=n_docs, replace=False)]
            tokens = int(rng.integers(1, 12))
            lps = list(-rng.random(tokens) * 3.0) if with_logprobs else None
            steps.append(search(k, docs, tokens, logprobs=lps, prefix=bool(rng.random() < 0.5)))
        text = ""
        if has_final:
            tokens = int(rng.integers(1, 12))
            lps = list(-rng.random(tokens) * 3.0) if with_logprobs else None
            steps.append(answer(n_search, tokens, logprobs=lps, prefix=bool(rng.random() < 0.5)))
            text = ANSWERS[int(rng.integers(len(ANSWERS)))]
        rollouts.append(rollout(f"{qid}/r{i}", steps, text))
    return group(qid, "alpha", rollouts)
