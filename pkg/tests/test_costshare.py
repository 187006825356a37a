import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pubmech.core import check_budget, check_ir, check_sp
from pubmech.costshare import (
    CostShareSpec,
    InvalidShares,
    InvalidSpec,
    batch_objectives,
    batch_outcomes,
    coalition_feasibility,
    conservative_equal_cost,
    largest_unanimous,
    scs_consumer_counts,
    serial_cost_sharing,
    unanimous,
    validate_spec,
)
from pubmech.priors import Prior

values = st.floats(0, 1, allow_nan=False)
profiles = st.lists(values, min_size=1, max_size=8)


def brute_k(v):
    """Largest k such that at least k values reach 1/k."""
    return max([k for k in range(1, len(v) + 1) if sum(x >= 1 / k for x in v) >= k], default=0)


class TestConservativeEqualCost:
    def test_both_accept(self):
        out = conservative_equal_cost([0.6, 0.7])
        assert out.built and out.payments == (0.5, 0.5)

    def test_one_rejects(self):
        assert not conservative_equal_cost([0.4, 0.9]).built

    def test_ties_accept(self):
        out = conservative_equal_cost([1 / 3] * 3)
        assert out.built and out.payments == pytest.approx((1 / 3,) * 3)


class TestUnanimous:
    @pytest.mark.parametrize("shares, v, built", [
        ((0.3, 0.7), (0.35, 0.65), False),
        ((0.3, 0.7), (0.3, 0.7), True),
        ((1.0, 0.0), (0.9, 0.0), False),
    ])
    def test_examples(self, shares, v, built):
        assert unanimous(v, shares).built is built

    def test_bad_shares(self):
        with pytest.raises(InvalidShares):
            unanimous((0.5, 0.5), (0.5, 0.4))


class TestFeasibility:
    @pytest.mark.parametrize("v, expected", [((0.6, 0.6, 0.1), (1, 2)), ((0.2, 0.3), (0, 0)), ((1.0,), (1, 1))])
    def test_examples(self, v, expected):
        assert coalition_feasibility(v) == expected

    @given(profiles)
    def test_matches_counting_definition(self, v):
        assert coalition_feasibility(v)[1] == brute_k(v)

    @given(st.lists(profiles.filter(lambda p: len(p) == 4), min_size=1, max_size=20))
    def test_vectorized(self, rows):
        arr = np.array(rows)
        assert scs_consumer_counts(arr).tolist() == [brute_k(r) for r in rows]


class TestSerialCostSharing:
    def test_two_of_three(self):
        out = serial_cost_sharing([0.6, 0.6, 0.1])
        assert out.consumers == {0, 1} and out.payments == (0.5, 0.5, 0.0)

    def test_not_built(self):
        assert not serial_cost_sharing([0.2, 0.3]).built

    def test_all_in(self):
        out = serial_cost_sharing([1.0, 1.0, 1.0])
        assert out.consumers == {0, 1, 2} and out.payments == pytest.approx((1 / 3,) * 3)

    def test_ties_at_threshold_all_join(self):
        # more than K values at 1/K would make K + 1 feasible, so ties never split
        assert serial_cost_sharing([0.6, 0.5, 0.5]).consumers == {0, 1, 2}
        assert serial_cost_sharing([0.5, 0.5, 0.2]).consumers == {0, 1}

    @given(profiles)
    def test_budget_and_rationality(self, v):
        out = serial_cost_sharing(v)
        assert out.budget_ok()
        assert all(out.utility(i, v[i]) >= -1e-12 for i in range(len(v)))

    @given(profiles, st.integers(0, 7), st.floats(0, 1))
    def test_raising_a_consumer_keeps_it(self, v, i, bump):
        i %= len(v)
        out = serial_cost_sharing(v)
        if i in out.consumers:
            higher = list(v)
            higher[i] = min(1.0, v[i] + bump)
            assert i in serial_cost_sharing(higher).consumers


class TestLargestUnanimous:
    def test_equal_share_matches_example(self):
        out = largest_unanimous([0.6, 0.6, 0.1], CostShareSpec.equal_share(3))
        assert out.consumers == {0, 1} and out.payments == (0.5, 0.5, 0.0)

    def test_dictator_grand_coalition(self):
        def fn(s):
            if 0 in s:
                return {i: float(i == 0) for i in s}
            return {i: 1.0 / len(s) for i in s}

        spec = CostShareSpec.from_function(3, fn)
        out = largest_unanimous([1.0, 0.0, 0.0], spec)
        assert out.built and out.consumers == {0, 1, 2} and out.payments == (1.0, 0.0, 0.0)

    def test_zero_values_not_built(self):
        assert not largest_unanimous([0.0] * 4, CostShareSpec.equal_share(4)).built

    @given(profiles)
    def test_equal_share_is_serial_cost_sharing(self, v):
        ref = serial_cost_sharing(v)
        got = largest_unanimous(v, CostShareSpec.equal_share(len(v)))
        assert got.consumers == ref.consumers
        assert got.payments == pytest.approx(ref.payments)

    def test_many_random_profiles(self):
        rng = np.random.default_rng(3)
        for n in (2, 5, 8):
            spec = CostShareSpec.equal_share(n)
            for v in rng.random((1500, n)):
                assert largest_unanimous(list(v), spec).consumers == serial_cost_sharing(list(v)).consumers

    def test_invalid_spec_refused(self):
        def fn(s):
            if s == frozenset({0, 1}):
                return {0: 0.2, 1: 0.8}
            return {i: 1.0 / len(s) for i in s}

        spec = CostShareSpec.from_function(3, fn)
        with pytest.raises(InvalidSpec):
            largest_unanimous([1, 1, 1], spec)

    @pytest.mark.parametrize("n", [2, 3, 5, 8])
    def test_properties(self, n):
        spec = CostShareSpec.equal_share(n)
        mech = lambda p: largest_unanimous(p, spec)  # noqa: E731
        u = Prior.uniform(0, 1)
        assert check_sp(mech, u, n, 2_000).ok
        assert check_ir(mech, u, n, 2_000).ok
        assert check_budget(mech, u, n, 2_000).ok


class TestValidateSpec:
    def test_serial_table_ok(self):
        assert validate_spec(CostShareSpec.equal_share(3)) == []

    def test_drop_listed(self):
        def fn(s):
            if s == frozenset({0, 1}):
                return {0: 0.2, 1: 0.8}
            return {i: 1.0 / len(s) for i in s}

        bad = validate_spec(CostShareSpec.from_function(3, fn))
        assert (frozenset({0, 1}), frozenset({0, 1, 2}), 0) in bad

    def test_single_agent(self):
        assert validate_spec(CostShareSpec(1, {frozenset({0}): {0: 1.0}})) == []

    @given(st.integers(2, 5), st.randoms(use_true_random=False))
    def test_single_removals_decide_validity(self, n, rnd):
        """Compared against the check over every nested pair."""
        def fn(s):
            w = [rnd.random() + 0.05 for _ in s]
            return {i: x / sum(w) for i, x in zip(sorted(s), w)}

        spec = CostShareSpec.from_function(n, fn)
        exhaustive = any(
            spec.table[small][i] < spec.table[big][i] - 1e-9
            for big in spec.table for small in spec.table if small < big for i in small
        )
        assert bool(validate_spec(spec)) == exhaustive

    def test_text_round_trip(self):
        spec = CostShareSpec.equal_share(4)
        again = CostShareSpec.from_text(spec.to_text())
        assert again.table == spec.table

    def test_too_many_agents(self):
        with pytest.raises(InvalidSpec):
            CostShareSpec.equal_share(13)


class TestBatch:
    @pytest.mark.parametrize("mech, scalar", [("cec", conservative_equal_cost), ("scs", serial_cost_sharing)])
    def test_matches_scalar(self, mech, scalar):
        v = np.random.default_rng(0).random((300, 4))
        mask, pay = batch_outcomes(v, mech)
        count, welfare = batch_objectives(v, mech)
        for row, m, p, c, w in zip(v, mask, pay, count, welfare):
            out = scalar(list(row))
            assert set(np.flatnonzero(m)) == out.consumers
            assert p == pytest.approx(out.payments)
            assert c == len(out.consumers)
            assert w == pytest.approx(sum(out.utility(i, row[i]) for i in range(4)))

    def test_unknown(self):
        with pytest.raises(ValueError):
            batch_outcomes(np.zeros((1, 2)), "vcg")
