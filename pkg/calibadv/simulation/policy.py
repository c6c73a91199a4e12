# calibadv/simulation/policy.py
"""
Tabular softmax policy over the synthetic search environment, plus the
score-function update that consumes (calibrated) advantage assignments.

States are (question_id, turn, held entity). Every turn also starts with the
think tag; when the harness does not supply it, the policy samples it from a
single shared OPENER state whose second action garbles the whole turn.

A shared `fluency` bias is subtracted from the garbage and garble logits of
every state. Tabular updates never touch it; batch_update moves it with the
batch's token-weighted advantage balance, so sustained negative dominance
lets garbage absorb probability mass everywhere at once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..analysis import advantage_mass
from ..errors import AlignmentError
from ..schemas import AdvantageAssignment, RolloutGroup, RolloutTrace
from .corpus import SyntheticCorpus

logger = logging.getLogger(__name__)

# query_text markers for turns that did not issue a real search
GARBAGE_QUERY = "@@ ## @@ ##"
GARBLED_OPENER_QUERY = "<think<think<think<think"


class PolicyState(NamedTuple):
    question_id: str
    turn: int
    entity: str


class Action(NamedTuple):
    kind: str  # garbage | query | answer | think | garble
    entity: str = ""


OPENER = PolicyState("", -1, "")
GARBAGE = Action("garbage")
THINK = Action("think")
GARBLE = Action("garble")
OPENER_ACTIONS: Tuple[Action, ...] = (THINK, GARBLE)


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted)))


class TabularPolicy:
    def __init__(
        self,
        corpus: SyntheticCorpus,
        *,
        temperature: float = 1.0,
        answer_bias_early: float = -4.0,
        garbage_logit: float = 0.0,
        opener_garble_logit: float = -2.0,
    ):
        if temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {temperature}")
        self.temperature = float(temperature)
        self.fluency = 0.0
        self.actions: Dict[PolicyState, Tuple[Action, ...]] = {}
        self.logits: Dict[PolicyState, np.ndarray] = {}
        self._index: Dict[PolicyState, Dict[Action, int]] = {}
        self._junk: Dict[PolicyState, int] = {}
        self._topic: Dict[str, str] = {}
        self._max_turns: Dict[str, int] = {}
        self._results: Dict[Tuple[str, str], Tuple[Tuple[str, ...], Optional[str]]] = {}

        self._add_state(OPENER, OPENER_ACTIONS, np.array([0.0, opener_garble_logit]))
        for q in corpus.questions:
            self._build_question(corpus, q.question_id, answer_bias_early, garbage_logit)

    # ---------------------------
    # Construction
    # ---------------------------

    def _add_state(self, state: PolicyState, actions: Tuple[Action, ...], logits: np.ndarray) -> None:
        self.actions[state] = actions
        self.logits[state] = logits.astype(float)
        self._index[state] = {a: i for i, a in enumerate(actions)}
        for junk in (GARBAGE, GARBLE):
            if junk in self._index[state]:
                self._junk[state] = self._index[state][junk]

    def _build_question(self, corpus: SyntheticCorpus, qid: str, answer_bias_early: float, garbage_logit: float) -> None:
        q = corpus.question(qid)
        max_turns = q.hops + 1
        self._topic[qid] = q.topic_entity
        self._max_turns[qid] = max_turns
        subjects = corpus.distractor_subjects(qid)

        frontier = [q.topic_entity]
        for turn in range(max_turns):
            reached: List[str] = []
            for entity in frontier:
                known = list(dict.fromkeys((q.topic_entity, entity) + subjects))
                actions = (GARBAGE,) + tuple(Action("query", e) for e in known) + tuple(Action("answer", e) for e in known)
                logits = np.zeros(len(actions))
                logits[0] = garbage_logit
                if turn < max_turns - 1:
                    logits[1 + len(known):] = answer_bias_early
                self._add_state(PolicyState(qid, turn, entity), actions, logits)

                for e in known:
                    key = (qid, e)
                    if key not in self._results:
                        self._results[key] = corpus.lookup(e)
                    nxt = self._results[key][1] or entity
                    if nxt not in reached:
                        reached.append(nxt)
                if entity not in reached:
                    reached.append(entity)
            frontier = reached

    # ---------------------------
    # Queries
    # ---------------------------

    def copy(self) -> "TabularPolicy":
        new = object.__new__(TabularPolicy)
        new.temperature = self.temperature
        new.fluency = self.fluency
        new.actions = self.actions
        new._index = self._index
        new._junk = self._junk
        new._topic = self._topic
        new._max_turns = self._max_turns
        new._results = self._results
        new.logits = {s: z.copy() for s, z in self.logits.items()}
        return new

    @property
    def states(self) -> List[PolicyState]:
        return list(self.actions)

    def topic_entity(self, question_id: str) -> str:
        return self._topic[question_id]

    def max_turns(self, question_id: str) -> int:
        return self._max_turns[question_id]

    def query_result(self, question_id: str, entity: str) -> Tuple[Tuple[str, ...], Optional[str]]:
        return self._results.get((question_id, entity), ((), None))

    def log_probs(self, state: PolicyState) -> np.ndarray:
        z = self.logits[state]
        if self.fluency:
            z = z.copy()
            z[self._junk[state]] -= self.fluency
        return log_softmax(z / self.temperature)

    def probs(self, state: PolicyState) -> np.ndarray:
        p = np.exp(self.log_probs(state))
        return p / p.sum()

    def prob(self, state: PolicyState, action: Action) -> float:
        i = self._index[state].get(action)
        return 0.0 if i is None else float(self.probs(state)[i])

    def action_index(self, state: PolicyState, action: Action) -> int:
        try:
            return self._index[state][action]
        except KeyError:
            raise AlignmentError(f"action {action} is not available in state {state}")

    def entropy(self, state: PolicyState) -> float:
        lp = self.log_probs(state)
        return float(-np.sum(np.exp(lp) * lp))

    def has_state(self, state: PolicyState) -> bool:
        return state in self.actions


# ---------------------------
# Trace decoding
# ---------------------------

@dataclass(frozen=True)
class DecodedStep:
    step_index: int
    state: PolicyState
    opener: Optional[Action]  # None when the harness supplied the think tag
    action: Optional[Action]  # None for a garbled turn


def decode_rollout(policy: TabularPolicy, question_id: str, rollout: RolloutTrace) -> Iterator[DecodedStep]:
    """Recover the (state, action) path a simulated rollout took."""
    entity = policy.topic_entity(question_id)
    for step in rollout.steps:
        state = PolicyState(question_id, step.index, entity)
        if not policy.has_state(state):
            raise AlignmentError(f"rollout {rollout.rollout_id!r} step {step.index}: unknown state {state}")
        garbled = not step.is_final and step.query_text == GARBLED_OPENER_QUERY
        opener = None if step.prefix_supplied else (GARBLE if garbled else THINK)

        if garbled:
            action = None
        elif step.is_final:
            action = Action("answer", rollout.answer_text)
        elif step.query_text == GARBAGE_QUERY:
            action = GARBAGE
        else:
            action = Action("query", step.query_text or "")
            nxt = policy.query_result(question_id, action.entity)[1]
            if nxt is not None:
                entity = nxt
        yield DecodedStep(step.index, state, opener, action)


# ---------------------------
# Updates
# ---------------------------

def _check_batch(groups: Sequence[RolloutGroup], assignments: Sequence[AdvantageAssignment]) -> None:
    if len(groups) != len(assignments):
        raise AlignmentError(f"{len(assignments)} assignments for {len(groups)} groups")
    for g, a in zip(groups, assignments):
        a.check_against(g)


def score_gradient(
    policy: TabularPolicy,
    groups: Sequence[RolloutGroup],
    assignments: Sequence[AdvantageAssignment],
) -> Dict[PolicyState, np.ndarray]:
    """
    Gradient of sum(A * log pi(a|s)) with respect to the logits, over every
    visited decision whose step has a non-zero loss mask.
    """
    _check_batch(groups, assignments)
    grads: Dict[PolicyState, np.ndarray] = {}

    def add(state: PolicyState, action: Action, weight: float) -> None:
        i = policy.action_index(state, action)
        g = -policy.probs(state)
        g[i] += 1.0
        acc = grads.setdefault(state, np.zeros_like(policy.logits[state]))
        acc += (weight / policy.temperature) * g

    for group, assignment in zip(groups, assignments):
        for rollout, adv, mask in zip(group.rollouts, assignment.per_rollout, assignment.loss_mask_token_counts):
            for d in decode_rollout(policy, group.question_id, rollout):
                a = adv[d.step_index]
                if mask[d.step_index] == 0 or a == 0.0:
                    continue
                if d.opener is not None:
                    add(OPENER, d.opener, a)
                if d.action is not None:
                    add(d.state, d.action, a)
    return grads


def surrogate_objective(
    policy: TabularPolicy,
    groups: Sequence[RolloutGroup],
    assignments: Sequence[AdvantageAssignment],
) -> float:
    """sum(A * log pi) over the same decisions score_gradient differentiates."""
    _check_batch(groups, assignments)
    total = 0.0
    for group, assignment in zip(groups, assignments):
        for rollout, adv, mask in zip(group.rollouts, assignment.per_rollout, assignment.loss_mask_token_counts):
            for d in decode_rollout(policy, group.question_id, rollout):
                a = adv[d.step_index]
                if mask[d.step_index] == 0:
                    continue
                if d.opener is not None:
                    total += a * policy.log_probs(OPENER)[policy.action_index(OPENER, d.opener)]
                if d.action is not None:
                    total += a * policy.log_probs(d.state)[policy.action_index(d.state, d.action)]
    return float(total)


def advantage_balance(assignments: Sequence[AdvantageAssignment]) -> float:
    """(pos - neg) / (pos + neg) over masked tokens; 0.0 when nothing is trained."""
    neg, pos = advantage_mass(assignments)
    total = neg + pos
    return 0.0 if total == 0.0 else (pos - neg) / total


def batch_update(
    policy: TabularPolicy,
    groups: Sequence[RolloutGroup],
    assignments: Sequence[AdvantageAssignment],
    lr: float,
    *,
    fluency_lr: float = 0.0,
) -> TabularPolicy:
    """
    One ascent step for a whole batch, every term taken at the pre-update
    policy. `fluency_lr` scales the shared fluency step.
    """
    if lr < 0 or fluency_lr < 0:
        raise ValueError(f"learning rates must be >= 0, got {lr}, {fluency_lr}")
    grads = score_gradient(policy, groups, assignments)
    new = policy.copy()
    if lr > 0.0:
        for state, g in grads.items():
            new.logits[state] += lr * g
    if fluency_lr > 0.0:
        new.fluency += fluency_lr * advantage_balance(assignments)
    return new


def policy_update(
    policy: TabularPolicy,
    group: RolloutGroup,
    assignment: AdvantageAssignment,
    lr: float,
) -> TabularPolicy:
    return batch_update(policy, [group], [assignment], lr)
