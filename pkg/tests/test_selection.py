import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uflsim.errors import ConfigError
from uflsim.rng import TAG_SELECT, substream
from uflsim.selection import (
    SelectionConfig,
    THETA_MAX,
    THETA_MIN,
    activate,
    candidate_gate,
    poc_select,
    random_select,
    self_select,
    sigmoid,
    update_threshold,
)


def ref_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestConfig:
    def test_paper_defaults_validate(self):
        cfg = SelectionConfig()
        assert cfg.candidate_pool_size / (cfg.activation_prob * cfg.num_clients) == 0.25

    def test_pool_larger_than_active_rejected(self):
        with pytest.raises(ConfigError):
            SelectionConfig(candidate_pool_size=900)

    def test_target_above_population_rejected(self):
        with pytest.raises(ConfigError):
            SelectionConfig(num_clients=10, target_participants=11,
                            candidate_pool_size=5)


class TestActivate:
    def test_probability_one_activates_everyone(self, rng):
        assert len(activate(137, 1.0, rng)) == 137

    def test_binomial_moments(self):
        counts = [
            len(activate(1000, 0.8, np.random.default_rng(seed)))
            for seed in range(100)
        ]
        # 3 sigma of the seed-averaged binomial mean
        sigma = math.sqrt(1000 * 0.8 * 0.2 / len(counts))
        assert abs(np.mean(counts) - 800) < 3 * sigma + 1

    def test_tiny_probability_usually_empty(self):
        empties = sum(
            len(activate(50, 1e-6, np.random.default_rng(seed))) == 0
            for seed in range(50)
        )
        assert empties == 50


class TestCandidateGate:
    def test_paper_gate_probability(self):
        # pool 200 of 0.8 * 1000 active means one candidate in four
        kept = [
            len(candidate_gate(np.arange(800), 200, 0.8, 1000,
                               np.random.default_rng(s)))
            for s in range(200)
        ]
        assert abs(np.mean(kept) - 200) < 3 * math.sqrt(200 * 0.75 / len(kept)) + 1

    def test_full_pool_keeps_all_actives(self, rng):
        active = np.arange(800)
        kept = candidate_gate(active, 800, 0.8, 1000, rng)
        assert np.array_equal(kept, active)

    def test_oversized_pool_rejected(self, rng):
        with pytest.raises(ConfigError):
            candidate_gate(np.arange(10), 900, 0.8, 1000, rng)

    def test_candidates_are_subset_of_active(self, rng):
        active = rng.choice(1000, 700, replace=False)
        kept = candidate_gate(active, 100, 0.8, 1000, rng)
        assert set(kept).issubset(set(active))


class TestSelfSelect:
    def test_loss_at_threshold_is_half(self):
        hits = sum(
            self_select(2.0, 2.0, 50.0, np.random.default_rng(seed))
            for seed in range(2000)
        )
        assert abs(hits / 2000 - 0.5) < 0.05

    def test_high_loss_joins_almost_surely(self):
        # sigmoid(50 * 0.1) = sigmoid(5) ~ 0.99331
        p = ref_sigmoid(5.0)
        assert p == pytest.approx(0.99331, abs=5e-6)
        hits = sum(
            self_select(2.42, 2.32, 50.0, np.random.default_rng(seed))
            for seed in range(3000)
        )
        assert abs(hits / 3000 - p) < 0.01

    def test_low_loss_rarely_joins(self):
        p = ref_sigmoid(-5.0)
        assert p == pytest.approx(0.00669, abs=5e-6)
        hits = sum(
            self_select(2.22, 2.32, 50.0, np.random.default_rng(seed))
            for seed in range(3000)
        )
        assert abs(hits / 3000 - p) < 0.01

    @given(x=st.floats(-700, 700))
    def test_sigmoid_symmetry(self, x):
        assert sigmoid(x) + sigmoid(-x) == pytest.approx(1.0, abs=1e-12)

    @given(x=st.floats(-1e6, 1e6))
    def test_sigmoid_never_overflows(self, x):
        assert 0.0 <= sigmoid(x) <= 1.0

    @given(
        losses=st.lists(st.floats(-5, 5), min_size=2, max_size=20, unique=True),
        theta=st.floats(-3, 3),
        steepness=st.floats(0.1, 100),
    )
    def test_probability_monotone_in_loss(self, losses, theta, steepness):
        probs = [sigmoid(steepness * (l - theta)) for l in sorted(losses)]
        assert all(a <= b for a, b in zip(probs, probs[1:]))


class TestUpdateThreshold:
    def test_on_target_leaves_threshold(self):
        assert update_threshold(2.32, 100, 100, 0.004) == 2.32

    def test_paper_constants_step(self):
        # 2.32 + 0.004 * (150 - 100) = 2.52
        assert update_threshold(2.32, 150, 100, 0.004) == pytest.approx(2.52)

    def test_under_target_decreases(self):
        assert update_threshold(2.32, 50, 100, 0.004) < 2.32

    def test_clamped_to_guard_band(self):
        assert update_threshold(9.9, 10_000_000, 100, 0.004) == THETA_MAX
        assert update_threshold(0.1, 0, 10_000_000, 0.004) == THETA_MIN


class TestPocSelect:
    def test_highest_losses_win(self):
        picked = poc_select([1, 2, 3], {1: 0.5, 2: 0.9, 3: 0.7}, 2)
        assert picked.tolist() == [2, 3]

    def test_fewer_candidates_than_target(self):
        picked = poc_select([4, 9], {4: 0.1, 9: 0.2}, 10)
        assert picked.tolist() == [4, 9]

    def test_ties_break_to_lower_id(self):
        picked = poc_select([5, 1, 3], {5: 1.0, 1: 1.0, 3: 1.0}, 2)
        assert picked.tolist() == [1, 3]

    def test_deterministic(self):
        losses = {i: float((i * 7919) % 13) for i in range(30)}
        a = poc_select(range(30), losses, 7)
        b = poc_select(list(range(30))[::-1], losses, 7)
        assert np.array_equal(a, b)


class TestRandomSelect:
    def test_expected_count_matches_target(self):
        counts = []
        for seed in range(150):
            r = np.random.default_rng(seed)
            active = activate(1000, 0.8, r)
            counts.append(len(random_select(active, 100, 0.8, 1000, r)))
        assert abs(np.mean(counts) - 100) < 3 * math.sqrt(100 / len(counts)) + 1

    def test_target_equals_active_population(self, rng):
        active = np.arange(800)
        assert np.array_equal(random_select(active, 800, 0.8, 1000, rng), active)

    def test_over_target_rejected(self, rng):
        with pytest.raises(ConfigError):
            random_select(np.arange(10), 900, 0.8, 1000, rng)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), strategy=st.sampled_from(["random", "poc", "self"]))
def test_nesting_invariant(seed, strategy):
    """selected <= candidates <= active <= everyone, for every strategy."""
    rng = np.random.default_rng(seed)
    k = 200
    active = activate(k, 0.8, rng)
    if strategy == "random":
        candidates = active
        selected = random_select(active, 20, 0.8, k, rng)
    else:
        candidates = candidate_gate(active, 40, 0.8, k, rng)
        losses = {int(c): float(rng.random()) for c in candidates}
        if strategy == "poc":
            selected = poc_select(candidates, losses, 20)
        else:
            selected = np.array([
                c for c in candidates
                if self_select(losses[int(c)], 0.5, 10.0, rng)
            ])
    assert set(selected).issubset(set(candidates))
    assert set(candidates).issubset(set(active))
    assert set(active).issubset(set(range(k)))


def test_threshold_controller_converges_with_stub_clients():
    """Closed loop against i.i.d. stub losses: the running participant
    count over rounds 100-300 lands within 15% of the target."""
    k, lam, target, pool = 1000, 0.8, 100, 200
    steepness, theta, step = 50.0, 2.32, 0.004
    master = 7
    counts = []
    loss_rng = np.random.default_rng(master)
    for t in range(1, 301):
        active = activate(k, lam, substream(master, 1, t))
        candidates = candidate_gate(active, pool, lam, k, substream(master, 2, t))
        selected = 0
        for cid in candidates:
            loss = loss_rng.normal(2.3, 0.25)
            if self_select(loss, theta, steepness, substream(master, TAG_SELECT, t, cid)):
                selected += 1
        theta = update_threshold(theta, selected, target, step)
        counts.append(selected)
    mean_after_burnin = np.mean(counts[99:300])
    assert abs(mean_after_burnin - target) <= 0.15 * target
