# calibadv/simulation/experiment.py
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from ..analysis import advantage_mass, detect_collapse_point, summarize_batch
from ..calibration import calibrate_group, silver_documents
from ..grpo import broadcast, group_relative_advantages
from ..ingestion import CalibratedGroup
from ..rewards import group_rewards
from ..schemas import TelemetryRecord
from .config import Pipeline, SimConfig, config_to_dict
from .corpus import SyntheticCorpus, generate_corpus
from .environment import sample_group, success_path_logprob
from .policy import GARBAGE, GARBLE, OPENER, PolicyState, TabularPolicy, batch_update

logger = logging.getLogger(__name__)


# ---------------------------
# Policy-level measurements
# ---------------------------

def _chain_states(corpus: SyntheticCorpus) -> List[PolicyState]:
    return [
        PolicyState(q.question_id, k, e)
        for q in corpus.questions
        for k, e in enumerate(q.chain)
    ]


def garbage_mass(policy: TabularPolicy, corpus: SyntheticCorpus, *, prefix_supplied: bool) -> float:
    """Mean probability, over on-chain states, that a turn comes out garbled or as garbage."""
    garble = 0.0 if prefix_supplied else policy.prob(OPENER, GARBLE)
    values = [
        garble + (1.0 - garble) * policy.prob(s, GARBAGE)
        for s in _chain_states(corpus)
    ]
    return float(np.mean(values))


def policy_entropy(policy: TabularPolicy, corpus: SyntheticCorpus) -> float:
    return float(np.mean([policy.entropy(s) for s in _chain_states(corpus)]))


def expected_success(policy: TabularPolicy, corpus: SyntheticCorpus, *, prefix_supplied: bool) -> float:
    """Exact probability of the rewarded path, averaged over questions."""
    return float(np.mean([
        math.exp(success_path_logprob(policy, corpus, q.question_id, prefix_supplied=prefix_supplied))
        for q in corpus.questions
    ]))


# ---------------------------
# Runs
# ---------------------------

@dataclass
class ExperimentResult:
    config: SimConfig
    corpus: SyntheticCorpus
    policy: TabularPolicy
    telemetry: List[TelemetryRecord]
    archive: List[Tuple[int, CalibratedGroup]] = field(default_factory=list)
    cumulative_negative: float = 0.0
    cumulative_positive: float = 0.0
    collapse_step: Optional[int] = None

    @property
    def cumulative_neg_pos_ratio(self) -> Optional[float]:
        if self.cumulative_positive == 0.0:
            return None
        return self.cumulative_negative / self.cumulative_positive

    @property
    def final_success(self) -> float:
        return expected_success(self.policy, self.corpus, prefix_supplied=self.config.prefix_supplied)

    @property
    def final_garbage_mass(self) -> float:
        return garbage_mass(self.policy, self.corpus, prefix_supplied=self.config.prefix_supplied)

    def policy_summary(self) -> Dict[str, Any]:
        supplied = self.config.prefix_supplied
        return {
            "pipeline": self.config.pipeline.value,
            "seed": self.config.seed,
            "updates": self.config.updates,
            "expected_success": self.final_success,
            "garbage_mass": self.final_garbage_mass,
            "policy_entropy": policy_entropy(self.policy, self.corpus),
            "opener_garble_prob": self.policy.prob(OPENER, GARBLE),
            "fluency": self.policy.fluency,
            "cumulative_neg_pos_ratio": self.cumulative_neg_pos_ratio,
            "collapse_step": self.collapse_step,
            "per_question_success": {
                q.question_id: math.exp(success_path_logprob(self.policy, self.corpus, q.question_id, prefix_supplied=supplied))
                for q in self.corpus.questions
            },
            "config": config_to_dict(self.config),
        }


def build_policy(config: SimConfig, corpus: SyntheticCorpus) -> TabularPolicy:
    return TabularPolicy(
        corpus,
        temperature=config.temperature,
        answer_bias_early=config.answer_bias_early,
        garbage_logit=config.garbage_logit,
        opener_garble_logit=config.opener_garble_logit,
    )


def run_experiment(config: SimConfig, *, progress: bool = False) -> ExperimentResult:
    corpus_seed, sample_seed = np.random.SeedSequence(config.seed).spawn(2)
    corpus = generate_corpus(corpus_seed, config.n_questions, config.hops, config.distractors)
    rng = np.random.default_rng(sample_seed)
    policy = build_policy(config, corpus)

    cal = config.calibration
    supplied = config.prefix_supplied
    n_batch = min(config.questions_per_batch, config.n_questions)
    qids = corpus.question_ids

    result = ExperimentResult(config=config, corpus=corpus, policy=policy, telemetry=[])
    logger.info(
        "run %s seed=%d updates=%d lambda=%g", config.pipeline.value, config.seed, config.updates, cal.lambda_
    )

    steps = range(config.updates)
    for t in tqdm(steps, desc=f"simulate[{config.pipeline.value}]", disable=not progress):
        picked = rng.choice(len(qids), size=n_batch, replace=False)
        groups = [
            sample_group(
                policy, corpus, qids[int(i)], config.group_size, rng,
                prefix_supplied=supplied, costs=config.costs, think_prefix_tokens=cal.think_prefix_tokens,
                distractors_per_query=config.distractors_per_query,
            )
            for i in picked
        ]
        rewards = [group_rewards(g) for g in groups]
        baseline = [
            broadcast(g, group_relative_advantages([r.r_final for r in rs], cal.eps, normalize_std=cal.normalize_std))
            for g, rs in zip(groups, rewards)
        ]
        if config.pipeline is Pipeline.CALIBADV:
            calibrated = [calibrate_group(g, cal, rewards=rs) for g, rs in zip(groups, rewards)]
            assignments = [c[0] for c in calibrated]
            silvers = [c[1] for c in calibrated]
        else:
            assignments = baseline
            silvers = [silver_documents(g, rs, cal.correctness_threshold) for g, rs in zip(groups, rewards)]

        record = summarize_batch(
            t, groups, assignments, cal,
            baseline_assignments=baseline,
            rewards=rewards,
            policy_entropy=policy_entropy(policy, corpus),
            garbage_mass=garbage_mass(policy, corpus, prefix_supplied=supplied),
        )
        result.telemetry.append(record)

        neg, pos = advantage_mass(assignments)
        result.cumulative_negative += neg
        result.cumulative_positive += pos

        if t % config.archive_every == 0 or t == config.updates - 1:
            for g, a, s, rs in zip(groups, assignments, silvers, rewards):
                result.archive.append((t, CalibratedGroup(group=g, assignment=a, silver=s, rewards=tuple(rs))))

        policy = batch_update(
            policy, groups, assignments, config.learning_rate,
            fluency_lr=config.learning_rate * config.fluency_coupling,
        )

    result.policy = policy
    result.collapse_step = detect_collapse_point(
        result.telemetry, window=config.collapse_window, drop=config.collapse_drop
    )
    logger.info(
        "run %s finished: success=%.3f garbage=%.3f collapse=%s",
        config.pipeline.value, result.final_success, result.final_garbage_mass, result.collapse_step,
    )
    return result
