import math

import numpy as np
import pytest

from calibadv.calibration import calibrate_group
from calibadv.errors import AlignmentError, CalibAdvError
from calibadv.grpo import broadcast, group_relative_advantages
from calibadv.schemas import CalibrationConfig

from .builders import answer, group, rollout, search


def test_zero_variance_gives_zeros():
    assert group_relative_advantages([1, 1, 1], 1e-6) == [0.0, 0.0, 0.0]


def test_two_and_four_element_examples():
    assert group_relative_advantages([1, 0], 0.0) == pytest.approx([1.0, -1.0])
    assert group_relative_advantages([0, 0, 1, 1], 0.0) == pytest.approx([-1, -1, 1, 1])


def test_needs_two_rewards():
    with pytest.raises(CalibAdvError):
        group_relative_advantages([1.0], 1e-6)


def test_random_vectors_sum_to_zero_with_unit_variance():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        g = int(rng.integers(2, 10))
        rewards = rng.random(g)
        if rng.random() < 0.3:
            rewards = np.round(rewards)
        adv = group_relative_advantages(list(rewards), 0.0)
        assert abs(math.fsum(adv)) < 1e-9
        if np.ptp(rewards) > 0:
            assert np.var(adv) == pytest.approx(1.0, abs=1e-9)


def test_unnormalized_variant_only_centres():
    assert group_relative_advantages([3.0, 1.0], 1e-6, normalize_std=False) == [1.0, -1.0]


def test_broadcast_copies_advantage_to_every_step():
    g = group("q", "x", [
        rollout("a", [search(0, ["d"]), search(1), answer(2)], "x"),
        rollout("b", [answer(0, tokens=3, prefix=True)], "y"),
    ])
    a = broadcast(g, [0.7, -0.2])
    assert a.per_rollout == ((0.7, 0.7, 0.7), (-0.2,))
    assert a.loss_mask_token_counts == ((5, 5, 4), (3,))


def test_broadcast_can_exclude_prefix_tokens():
    g = group("q", "x", [
        rollout("a", [search(0, tokens=10, prefix=True), answer(1, tokens=1, prefix=True)], "x"),
        rollout("b", [answer(0, tokens=3)], "y"),
    ])
    a = broadcast(g, [1.0, -1.0], think_prefix_tokens=2)
    assert a.loss_mask_token_counts == ((8, 0), (3,))


def test_prefix_tokens_are_removed_by_calibration_not_broadcast():
    g = group("q", "x", [
        rollout("a", [search(0, ["d"], tokens=10, prefix=True), answer(1, tokens=4, prefix=True)], "x"),
        rollout("b", [search(0, ["e"], tokens=6), answer(1, tokens=3)], "y"),
    ])
    assert broadcast(g, [1.0, -1.0]).loss_mask_token_counts == ((10, 4), (6, 3))
    config = CalibrationConfig(enable_soft_penalty=False, enable_rebalance=False)
    calibrated, _, _ = calibrate_group(g, config)
    assert calibrated.loss_mask_token_counts == ((8, 2), (6, 3))
    assert calibrated.loss_mask_token_counts == broadcast(g, [1.0, -1.0], think_prefix_tokens=2).loss_mask_token_counts


def test_broadcast_length_mismatch():
    g = group("q", "x", [rollout("a", [answer(0)], "x"), rollout("b", [answer(0)], "y")])
    with pytest.raises(AlignmentError):
        broadcast(g, [1.0])
