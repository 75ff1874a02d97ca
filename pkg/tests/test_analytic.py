"""Closed-form level-crossing formulas: frozen oracles and properties."""

import math

import pytest
from hypothesis import given, strategies as st

from contestlab.analytic import (
    BoundBundle,
    ThresholdPair,
    bounds,
    exp_downcrossings,
    hit_prob,
    mod_geometric_pmf,
)

APPROX = dict(rel=1e-12, abs=1e-15)


def pairs(min_gap=1e-3):
    """Strategy for valid threshold pairs, bounded away from degeneracy."""
    return (
        st.tuples(
            st.floats(min_value=1e-3, max_value=0.998),
            st.floats(min_value=2e-3, max_value=0.999),
        )
        .filter(lambda ab: ab[1] - ab[0] >= min_gap)
        .map(lambda ab: ThresholdPair(ab[0], ab[1]))
    )


class TestHitProb:
    def test_interior_value(self):
        assert hit_prob(0.3, 0.2, 0.6) == pytest.approx(0.25, **APPROX)

    def test_absorbing_endpoints_exact(self):
        assert hit_prob(0.2, 0.2, 0.6) == 0.0
        assert hit_prob(0.6, 0.2, 0.6) == 1.0

    def test_unit_interval_identity(self):
        for x in (0.0, 0.25, 0.5, 0.875, 1.0):
            assert hit_prob(x, 0.0, 1.0) == x

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            hit_prob(0.1, 0.2, 0.6)
        with pytest.raises(ValueError):
            hit_prob(0.7, 0.2, 0.6)
        with pytest.raises(ValueError):
            hit_prob(0.5, 0.6, 0.2)
        with pytest.raises(ValueError):
            hit_prob(0.5, 0.5, 0.5)

    @given(
        st.floats(min_value=0.0, max_value=1.0),
        st.floats(min_value=0.0, max_value=0.49),
        st.floats(min_value=0.51, max_value=1.0),
    )
    def test_affine_in_x(self, t, a, b):
        # x = a + t (b - a) sweeps the whole domain; result must be affine in x
        x = a + t * (b - a)
        x = min(max(x, a), b)
        expected = (x - a) / (b - a)
        assert hit_prob(x, a, b) == pytest.approx(expected, abs=1e-12)


class TestExpDowncrossings:
    PAIR = ThresholdPair(0.1, 0.25)

    def test_below_band(self):
        assert exp_downcrossings(0.1, self.PAIR) == pytest.approx(0.5, **APPROX)

    def test_at_upper_threshold(self):
        assert exp_downcrossings(0.25, self.PAIR) == pytest.approx(1.25, **APPROX)

    def test_absorbed_at_one(self):
        assert exp_downcrossings(1.0, self.PAIR) == 0.0

    def test_rejects_x_outside_unit_interval(self):
        with pytest.raises(ValueError):
            exp_downcrossings(-0.01, self.PAIR)
        with pytest.raises(ValueError):
            exp_downcrossings(1.01, self.PAIR)

    @given(pairs())
    def test_continuous_at_b(self, pair):
        left = pair.b * (1.0 - pair.b) / (pair.b - pair.a)
        eps = 1e-9
        assert exp_downcrossings(pair.b, pair) == pytest.approx(left, **APPROX)
        assert exp_downcrossings(min(pair.b + eps, 1.0), pair) == pytest.approx(
            left, rel=1e-5
        )
        assert exp_downcrossings(max(pair.b - eps, 0.0), pair) == pytest.approx(
            left, rel=1e-5
        )


class TestModGeometric:
    PAIR = ThresholdPair(0.2, 0.5)

    def test_mass_at_zero(self):
        assert mod_geometric_pmf(0, self.PAIR) == pytest.approx(0.375, **APPROX)

    def test_mass_at_one(self):
        # rho = a(1-b)/(b(1-a)) = 0.25; (1-b)/(1-a) * (1-rho) = 0.625 * 0.75
        assert mod_geometric_pmf(1, self.PAIR) == pytest.approx(0.46875, **APPROX)

    def test_mean_matches_truncated_sum(self):
        rho = 0.25
        d_max = 1 + math.ceil(math.log(1e-16) / math.log(rho))
        mean = sum(d * mod_geometric_pmf(d, self.PAIR) for d in range(d_max + 1))
        assert mean == pytest.approx(5.0 / 6.0, abs=1e-12)

    def test_rejects_negative_d(self):
        with pytest.raises(ValueError):
            mod_geometric_pmf(-1, self.PAIR)

    @given(pairs())
    def test_pmf_sums_to_one(self, pair):
        rho = pair.a * (1.0 - pair.b) / (pair.b * (1.0 - pair.a))
        d_max = 1
        if rho > 0.0:
            d_max = max(1, math.ceil(math.log(1e-14) / math.log(rho)))
        total = sum(mod_geometric_pmf(d, pair) for d in range(d_max + 1))
        tail = mod_geometric_pmf(d_max, pair) * rho / (1.0 - rho) if rho < 1 else 0.0
        assert total + tail == pytest.approx(1.0, abs=1e-12)

    @given(pairs())
    def test_mean_identity(self, pair):
        rho = pair.a * (1.0 - pair.b) / (pair.b * (1.0 - pair.a))
        d_max = max(2, math.ceil(math.log(1e-18) / math.log(max(rho, 1e-12))))
        mean = sum(d * mod_geometric_pmf(d, pair) for d in range(d_max + 1))
        assert mean == pytest.approx(exp_downcrossings(pair.b, pair), abs=1e-10)

    @given(pairs(), st.integers(min_value=1, max_value=200))
    def test_tail_is_nonincreasing(self, pair, d):
        assert mod_geometric_pmf(d, pair) >= mod_geometric_pmf(d + 1, pair)


class TestBounds:
    def test_reference_pair(self):
        bb = bounds(ThresholdPair(0.1, 0.25))
        assert bb.mean_Nb == pytest.approx(4.0, **APPROX)
        assert bb.mean_Dab == pytest.approx(5.0, **APPROX)
        assert bb.var_cap_Nb == pytest.approx(12.0, **APPROX)
        assert bb.var_cap_Dab_conjectured == pytest.approx(30.0, **APPROX)

    def test_proved_cap_independent_recomputation(self):
        # beta = 5, mu = min((2-b)/b^2, 1/a^2) = min(28, 100) = 28
        beta = 5.0
        mu = 28.0
        expected = (math.sqrt(beta + 2 * beta**2 + mu) + math.sqrt(mu)) ** 2 - beta**2
        bb = bounds(ThresholdPair(0.1, 0.25))
        assert bb.var_cap_Dab_proved == pytest.approx(expected, **APPROX)
        assert bb.var_cap_Dab_proved == pytest.approx(182.4157, abs=5e-4)

    def test_stage_constant(self):
        # a/b = 0.5 -> 6*floor(1/0.5) - 1 = 11
        assert bounds(ThresholdPair(0.05, 0.1)).k_alpha == 11
        assert bounds(ThresholdPair(0.25, 0.5)).k_alpha == 11
        # a/b = 0.4 -> 6*floor(1/0.6) - 1 = 5
        assert bounds(ThresholdPair(0.1, 0.25)).k_alpha == 5

    @given(pairs())
    def test_all_entries_nonnegative(self, pair):
        bb = bounds(pair)
        for v in (
            bb.mean_Nb,
            bb.mean_Dab,
            bb.var_cap_Nb,
            bb.var_cap_Dab_conjectured,
            bb.var_cap_Dab_proved,
            bb.k_alpha,
        ):
            assert v >= 0

    @given(pairs())
    def test_conjectured_not_above_proved_on_grid(self, pair):
        # observed property over sampled pairs, not asserted as a theorem
        bb = bounds(pair)
        assert bb.var_cap_Dab_conjectured <= bb.var_cap_Dab_proved * (1 + 1e-12)

    def test_bundle_is_plain_dataclass(self):
        bb = bounds(ThresholdPair(0.1, 0.25))
        assert isinstance(bb, BoundBundle)


class TestThresholdPair:
    def test_rejects_degenerate(self):
        for a, b in [(0.0, 0.5), (0.5, 1.0), (0.5, 0.5), (0.6, 0.4), (-0.1, 0.5)]:
            with pytest.raises(ValueError):
                ThresholdPair(a, b)

    def test_accepts_interior(self):
        p = ThresholdPair(0.1, 0.25)
        assert (p.a, p.b) == (0.1, 0.25)
