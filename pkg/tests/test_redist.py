import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from pubmech.evolve import GAConfig
from pubmech.priors import Prior
from pubmech.redist import (
    RedistributionFn,
    budget_violation,
    corner_profiles,
    expected_ratio_terms,
    feature_bounds,
    features,
    first_best,
    is_feasible,
    optimize_h,
    redist_outcome,
    worst_case_ratio,
)

unit = st.floats(0.0, 1.0, allow_nan=False)
profiles3 = st.lists(unit, min_size=3, max_size=3)


def irwin_hall_3(x):
    if x <= 1:
        return x * x / 2
    if x <= 2:
        return (-2 * x * x + 6 * x - 3) / 2
    return (3 - x) ** 2 / 2


class TestExamples:
    def test_first_best(self):
        assert first_best([0.2, 0.3]) == 1.0
        assert first_best([0.6, 0.7]) == pytest.approx(1.3)

    def test_large_constant_runs_a_deficit(self):
        out = redist_outcome([0.5, 0.5, 0.5], RedistributionFn.constant(2.0, 3))
        assert out.built
        assert out.welfare == pytest.approx(-1.5)
        assert out.ratio == pytest.approx(-1.0)
        assert out.budget_ok()

    def test_below_threshold(self):
        out = redist_outcome([0.1, 0.1, 0.1], RedistributionFn.constant(2 / 3, 3))
        assert not out.built
        assert out.welfare == pytest.approx(1.0)
        assert out.ratio == pytest.approx(1.0)
        assert out.utilities == pytest.approx((1 / 3,) * 3)

    def test_baseline_at_all_ones(self):
        out = redist_outcome([1.0, 1.0, 1.0], RedistributionFn.baseline(3))
        assert out.ratio == pytest.approx(1.0)

    def test_features(self):
        x = [0.2, 0.5, 0.1]
        assert features(x, "1") == pytest.approx((0.5, 0.3))
        assert features(x, "7") == pytest.approx((0.5, 0.3, 0.3))
        assert features(x, "8") == pytest.approx((0.5, 0.1, 0.3))
        assert features(x, "identity") == pytest.approx((0.5, 0.2, 0.1))
        assert features([0.4], "7") == pytest.approx((0.4, 0.0, 0.0))

    def test_bad_combo(self):
        with pytest.raises(ValueError):
            features([0.1, 0.2], "9")
        with pytest.raises(ValueError):
            feature_bounds(3, "2")

    def test_wrong_knot_count(self):
        with pytest.raises(ValueError):
            RedistributionFn("1", (0.0,) * 10, 3)

    def test_wrong_n(self):
        with pytest.raises(ValueError):
            redist_outcome([0.1, 0.2], RedistributionFn.baseline(3))

    def test_csv_round_trip(self):
        h = RedistributionFn.baseline(4, "8").shifted(0.01)
        back = RedistributionFn.from_csv(h.to_csv())
        assert back == h
        assert back([0.3, 0.2, 0.9]) == h([0.3, 0.2, 0.9])


class TestFeasibility:
    def test_constant_n_minus_1_worst_case(self):
        h = RedistributionFn.constant(2.0, 3)
        alpha, profile = worst_case_ratio(h, 3, budget=10, seed=0)
        assert alpha == pytest.approx(-3.0)
        assert sum(profile) <= 1.0 + 1e-12

    def test_small_constant_deficit_witness(self):
        h = RedistributionFn.constant(2 / 3, 3)
        slack, profile = budget_violation(h, 3, budget=10, seed=0)
        assert slack == pytest.approx(2 / 3 - 2)
        assert np.allclose(profile, 1.0)

    def test_baseline_is_feasible(self):
        for combo in ("1", "7", "8", "identity"):
            h = RedistributionFn.baseline(3, combo)
            rows = np.vstack([np.random.default_rng(1).random((20_000, 3)), corner_profiles(3)])
            assert is_feasible(h, rows).ok, combo

    def test_corner_scan_finds_hidden_pocket(self):
        b = RedistributionFn.baseline(3, "identity")
        p = np.array(b.params) + 0.01
        p[-1] -= 0.0102
        h = RedistributionFn("identity", tuple(p), 3)
        for seed in range(3):
            rows = np.random.default_rng(seed).random((100_000, 3))
            assert is_feasible(h, rows).ok
        slack, profile = budget_violation(h, 3, budget=5, seed=0)
        assert slack < 0
        assert np.allclose(profile, 1.0)

    def test_adversary_beats_its_random_pool(self):
        h = RedistributionFn.baseline(3)
        alpha, _ = worst_case_ratio(h, 3, budget=20, seed=3)
        pool = np.random.default_rng(3).random((5000, 3))
        assert alpha <= min(redist_outcome(p, h).ratio for p in pool) + 1e-9

    def test_corners(self):
        c = corner_profiles(2)
        assert c.shape == (9, 2)
        assert set(np.unique(c)) == {0.0, 0.5, 1.0}


class TestExpectation:
    def test_constant_matches_quadrature(self):
        mean, se = expected_ratio_terms(RedistributionFn.constant(2.0, 3), Prior.uniform(), 3, 200_000, seed=0)
        p_low = integrate.quad(irwin_hall_3, 0, 1)[0]
        tail = integrate.quad(lambda x: irwin_hall_3(x) / x, 1, 3, points=[2])[0]
        assert mean == pytest.approx(6 * (p_low + tail), abs=4 * se + 1e-12)

    def test_baseline_value(self):
        mean, se = expected_ratio_terms(RedistributionFn.baseline(3), Prior.uniform(), 3, 100_000)
        assert 2.0 <= mean <= 2.1
        assert se < 1e-3

    def test_zero_samples(self):
        with pytest.raises(ValueError):
            expected_ratio_terms(RedistributionFn.baseline(3), Prior.uniform(), 3, 0)


class TestOptimize:
    def test_no_rounds_returns_baseline(self):
        cfg = GAConfig(population=1, elite=1, rounds=0)
        h = optimize_h("expectation", Prior.uniform(), 3, cfg)
        assert h == RedistributionFn.baseline(3)

    def test_short_run_is_feasible(self):
        cfg = GAConfig(population=20, elite=5, rounds=10, fitness_profiles=500, heldout_profiles=2000)
        h = optimize_h("expectation", Prior.uniform(), 3, cfg)
        rows = np.vstack([np.random.default_rng(11).random((50_000, 3)), corner_profiles(3)])
        assert is_feasible(h, rows).ok

    def test_unknown_objective(self):
        with pytest.raises(ValueError):
            optimize_h("median", Prior.uniform(), 3)

    def test_too_many_features(self):
        with pytest.raises(ValueError):
            optimize_h("expectation", Prior.uniform(), 5, GAConfig(rounds=0), combo="identity")


h3 = RedistributionFn.baseline(3, "7").shifted(0.05)


class TestProperties:
    @given(profiles3, st.integers(0, 2), unit)
    def test_truthful_is_dominant(self, profile, i, lie):
        truth = redist_outcome(profile, h3).utility(i, profile[i])
        dev = list(profile)
        dev[i] = lie
        assert redist_outcome(dev, h3).utility(i, profile[i]) <= truth + 1e-12
        # own report never reaches h: the redistribution term is unchanged bit for bit
        own = h3.rows(np.array([profile]))[0, i]
        assert h3.rows(np.array([dev]))[0, i] == own

    @given(profiles3)
    def test_ratio_matches_budget_condition(self, profile):
        out = redist_outcome(profile, h3)
        feasible = is_feasible(h3, [profile], tolerance=1e-9).ok
        assert out.budget_ok(1e-9) == feasible

    @given(profiles3)
    def test_welfare_identity(self, profile):
        out = redist_outcome(profile, h3)
        assert out.welfare == pytest.approx(out.ratio * first_best(profile), abs=1e-9)

    @given(profiles3, st.permutations([0, 1, 2]))
    def test_permutation_invariance(self, profile, perm):
        a = redist_outcome(profile, h3)
        b = redist_outcome([profile[k] for k in perm], h3)
        assert a.ratio == pytest.approx(b.ratio, abs=1e-12)
        assert sorted(a.utilities) == pytest.approx(sorted(b.utilities), abs=1e-12)
