import math

import numpy as np
import pytest

from calibadv.analysis import (
    detect_collapse_point,
    final_step_neg_pos_ratio,
    high_ppl_ratio,
    mean_token_nll,
    mispenalty_rate,
    neg_pos_ratio,
    rollout_perplexity,
    summarize_batch,
)
from calibadv.calibration import calibrate_group
from calibadv.errors import AlignmentError, CalibAdvError, MissingLogprobsError
from calibadv.ingestion import SAMPLE_TRACES_PATH, parse_trace_file
from calibadv.rewards import group_rewards
from calibadv.schemas import AdvantageAssignment, CalibrationConfig, TelemetryRecord

from .builders import answer, group, random_group, rollout, search


def _baseline(groups, config=None):
    config = (config or CalibrationConfig()).without_stages()
    return [calibrate_group(g, config)[0] for g in groups]


def _mispenalty_oracle(groups, threshold=0.5):
    counts = {}
    for g in groups:
        rewards = [r.r_final for r in group_rewards(g)]
        mean = math.fsum(rewards) / len(rewards)
        silver = set()
        for t, r in zip(g.rollouts, rewards):
            if r >= threshold:
                for s in t.steps:
                    silver.update(s.retrieved_docs)
        for t, r in zip(g.rollouts, rewards):
            # negative advantage iff below the group mean
            if not r < mean:
                continue
            for s in t.steps:
                if s.is_final or not s.retrieved_docs:
                    continue
                hit, total = counts.get(s.index, (0, 0))
                counts[s.index] = (hit + all(d in silver for d in s.retrieved_docs), total + 1)
    return {k: (h / n, n) for k, (h, n) in counts.items()}


def test_mispenalty_on_sample_file():
    groups = parse_trace_file(SAMPLE_TRACES_PATH)
    buckets = mispenalty_rate(groups, _baseline(groups), CalibrationConfig())
    assert [(b.step_index, b.sample_count) for b in buckets] == [(0, 3), (1, 1)]
    assert buckets[0].proportion == pytest.approx(1 / 3)
    assert buckets[1].proportion == 0.0


def test_mispenalty_matches_brute_force():
    rng = np.random.default_rng(21)
    for _ in range(100):
        groups = [random_group(rng, qid=f"g{i}", doc_pool=4) for i in range(int(rng.integers(1, 6)))]
        got = mispenalty_rate(groups, _baseline(groups), CalibrationConfig())
        expected = _mispenalty_oracle(groups)
        assert sorted(expected) == [b.step_index for b in got]
        for b in got:
            assert b.proportion == pytest.approx(expected[b.step_index][0])
            assert b.sample_count == expected[b.step_index][1]
            assert 0.0 <= b.proportion <= 1.0


def test_mispenalty_needs_aligned_inputs():
    groups = parse_trace_file(SAMPLE_TRACES_PATH)
    with pytest.raises(AlignmentError):
        mispenalty_rate(groups, _baseline(groups)[:1], CalibrationConfig())


def _lp_group(step_logprobs):
    rollouts = []
    for i, lps in enumerate(step_logprobs):
        rollouts.append(rollout(f"r{i}", [answer(0, tokens=len(lps), logprobs=lps)], "x" if i == 0 else "y"))
    return group("q", "x", rollouts)


def test_perplexity_constants():
    g = _lp_group([[0.0, 0.0, 0.0], [-math.log(2)] * 4])
    a = _baseline([g])[0]
    assert rollout_perplexity(g.rollouts[0], a.loss_mask_token_counts[0]) == 1.0
    assert rollout_perplexity(g.rollouts[1], a.loss_mask_token_counts[1]) == pytest.approx(2.0)
    assert mean_token_nll([g.rollouts[1]], [a.loss_mask_token_counts[1]]) == pytest.approx(math.log(2))


def test_perplexity_uses_trailing_masked_tokens():
    t = rollout("r", [answer(0, tokens=4, logprobs=[-9.0, -9.0, 0.0, 0.0])], "x")
    assert rollout_perplexity(t, [2]) == 1.0
    with pytest.raises(CalibAdvError):
        rollout_perplexity(t, [0])
    with pytest.raises(AlignmentError):
        rollout_perplexity(t, [5])


def test_missing_logprobs_is_reported():
    t = rollout("r7", [search(0, ["d"], tokens=3), answer(1, tokens=2, logprobs=[-0.1, -0.1])], "x")
    with pytest.raises(MissingLogprobsError) as exc:
        rollout_perplexity(t, [3, 2])
    assert exc.value.rollout_id == "r7"
    # an unmasked step without log-probs is fine
    assert rollout_perplexity(t, [0, 2]) == pytest.approx(math.exp(0.1))


def test_very_unlikely_tokens_give_infinite_perplexity():
    g = _lp_group([[-800.0, -800.0], [-800.0, -800.0]])
    a = _baseline([g])
    assert rollout_perplexity(g.rollouts[0], a[0].loss_mask_token_counts[0]) == math.inf
    rec = summarize_batch(0, [g], a, CalibrationConfig())
    assert rec.mean_token_nll == pytest.approx(800.0)
    assert rec.perplexity == math.inf
    assert rec.high_ppl_ratio == 1.0


def test_high_ppl_ratio_and_threshold_monotonicity():
    g = _lp_group([[0.0] * 3, [-math.log(10)] * 3, [-math.log(100)] * 3, [-math.log(1000)] * 3])
    masks = [[3]] * 4
    traces = list(g.rollouts)
    assert high_ppl_ratio(traces, masks, 50) == 0.5
    ratios = [high_ppl_ratio(traces, masks, th) for th in (0.5, 5, 50, 500, 5000)]
    assert ratios == sorted(ratios, reverse=True)
    with pytest.raises(CalibAdvError):
        high_ppl_ratio([], [], 50)


def test_neg_pos_ratio_examples():
    balanced = AdvantageAssignment(per_rollout=[[1.0], [-1.0]], loss_mask_token_counts=[[10], [10]])
    assert neg_pos_ratio([balanced]) == 1.0
    no_pos = AdvantageAssignment(per_rollout=[[-1.0], [0.0]], loss_mask_token_counts=[[10], [10]])
    assert neg_pos_ratio([no_pos]) is None
    masked = AdvantageAssignment(per_rollout=[[2.0], [-1.0]], loss_mask_token_counts=[[0], [3]])
    assert neg_pos_ratio([masked]) is None
    assert neg_pos_ratio([]) is None


def test_final_step_ratio_ignores_truncated_rollouts():
    g = group("q", "x", [
        rollout("a", [search(0, ["d"], tokens=2), answer(1, tokens=2)], "x"),
        rollout("b", [search(0, ["d"], tokens=8)]),
        rollout("c", [answer(0, tokens=4)], "y"),
    ])
    a = AdvantageAssignment(per_rollout=[[1.0, 1.0], [-5.0], [-1.0]], loss_mask_token_counts=[[2, 2], [8], [4]])
    assert final_step_neg_pos_ratio([g], [a]) == 2.0


def test_summarize_sample_batch():
    groups = parse_trace_file(SAMPLE_TRACES_PATH)
    config = CalibrationConfig()
    calibrated = [calibrate_group(g, config)[0] for g in groups]
    rec = summarize_batch(3, groups, calibrated, config, baseline_assignments=_baseline(groups))
    assert rec.training_step == 3
    assert rec.perplexity == pytest.approx(math.exp(rec.mean_token_nll))
    assert [b.sample_count for b in rec.mispenalty_by_step] == [3, 1]
    assert rec.success_rate == pytest.approx(2 / 5)
    assert 0.0 <= rec.format_rate <= 1.0
    assert rec.final_neg_pos_ratio is not None
    assert 0.0 <= rec.high_ppl_ratio <= 1.0


def _records(successes):
    return [
        TelemetryRecord(training_step=i, mean_token_nll=0.0, perplexity=1.0, high_ppl_ratio=0.0, success_rate=s)
        for i, s in enumerate(successes)
    ]


def test_detect_collapse_point():
    steady = _records([0.8] * 50)
    assert detect_collapse_point(steady, window=10) is None
    collapsing = _records([0.8] * 30 + [0.0] * 30)
    step = detect_collapse_point(collapsing, window=10, drop=0.55)
    # the trailing mean of 10 falls below 0.36 once six zeros are in the window
    assert step == 35
    assert detect_collapse_point(_records([0.5] * 5), window=10) is None
    with pytest.raises(CalibAdvError):
        detect_collapse_point(steady, window=0)
