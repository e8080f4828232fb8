import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ultrapsi.weights import (
    SaturationWarning, associated_function, associated_function_details, check_condition,
    check_index, check_lemma_tec, check_lemma_zkk, estimate_rho0, from_log_values, from_values,
    make_gevrey,
    parse_sequence, tec_sides, zkk_sides,
)


def brute_assoc(s, rho, P=400):
    # independent oracle: direct sup over p of p log rho - s log p!
    return max(0.0, max(p * math.log(rho) - s * math.lgamma(p + 1) for p in range(P + 1)))


class TestConstruction:
    def test_factorials(self):
        np.testing.assert_allclose(make_gevrey(1, 4).values, [1, 1, 2, 6, 24])

    def test_squared_factorials(self):
        np.testing.assert_allclose(make_gevrey(2, 3).values, [1, 1, 4, 36])

    def test_fractional_exponent(self):
        assert make_gevrey(1.5, 2).values[2] == pytest.approx(2 ** 1.5, rel=1e-14)

    @pytest.mark.parametrize("s,P", [(0, 10), (-1, 10), (2, 1)])
    def test_rejects_bad_arguments(self, s, P):
        with pytest.raises(ValueError):
            make_gevrey(s, P)

    def test_log_domain_beyond_overflow(self):
        seq = make_gevrey(3, 400)
        assert np.all(np.isfinite(seq.log_values))
        assert seq.log_values[400] == pytest.approx(3 * math.lgamma(401))

    def test_ratios(self):
        seq = make_gevrey(2, 10)
        assert seq.ratio(0) == 0.0
        assert seq.ratio(3) == pytest.approx(9.0)
        assert seq.is_normalized

    def test_parse(self):
        assert parse_sequence("gevrey:2", P=5).values[3] == pytest.approx(36)
        assert np.all(parse_sequence("one", P=5).values == 1)


class TestConditions:
    def test_m1_gevrey2(self):
        assert check_condition(make_gevrey(2, 101), "M1", range_=100).holds

    def test_m2_gevrey2_constants(self):
        r = check_condition(make_gevrey(2, 60), "M2", range_=50)
        assert r.holds
        assert r.constants["c0"] == pytest.approx(1.0)
        assert r.constants["H"] == pytest.approx(4.0)

    def test_m3prime_divergent(self):
        r = check_condition(from_values(np.ones(51)), "M3'", range_=50)
        assert not r.holds
        assert r.violating_index is not None
        assert any("divergent" in c for c in r.caveats)

    def test_m3_gevrey(self):
        assert check_condition(make_gevrey(2, 200), "M3").holds

    def test_violation_reproducible(self):
        # not log-convex at p = 3
        seq = from_values([1, 1, 2, 3, 24, 200])
        r = check_condition(seq, "M1")
        assert not r.holds
        assert check_index(seq, "M1", r.violating_index) is False

    def test_range_guard(self):
        with pytest.raises(ValueError):
            check_condition(make_gevrey(2, 10), "M1", range_=50)

    @pytest.mark.parametrize("s", [1.0, 1.5, 2.0, 3.0])
    def test_m4_implies_m1(self, s):
        seq = make_gevrey(s, 120)
        assert check_condition(seq, "M4").holds
        assert check_condition(seq, "M1").holds

    @pytest.mark.parametrize("s", [1.5, 2.0, 3.0])
    def test_m4_consequences(self, s):
        # p A_{p-1} <= A_p and A_p >= p!
        lv = make_gevrey(s, 150).log_values
        p = np.arange(1, 151)
        assert np.all(np.log(p) + lv[p - 1] <= lv[p] + 1e-10)
        assert np.all(lv >= np.array([math.lgamma(q + 1) for q in range(151)]) - 1e-10)


class TestAssociatedFunction:
    def test_vanishes_at_one(self):
        assert associated_function(make_gevrey(1, 200), 1.0) == 0.0

    def test_value_at_e(self):
        # oracle value 2 - log 2 (sup attained at p = 1 and p = 2)
        assert associated_function(make_gevrey(1, 200), math.e) == pytest.approx(
            brute_assoc(1, math.e), abs=1e-12)
        assert associated_function(make_gevrey(1, 200), math.e) == pytest.approx(
            2 - math.log(2), abs=1e-12)

    def test_small_rho_gevrey2(self):
        assert associated_function(make_gevrey(2, 200), 0.5) == 0.0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            associated_function(make_gevrey(2, 20), 0.0)

    def test_saturation_flagged(self):
        seq = make_gevrey(1, 10)
        with pytest.warns(SaturationWarning):
            associated_function(seq, 1e6)
        assert associated_function_details(seq, 1e6)[2]

    @given(st.floats(1e-3, 1e4), st.sampled_from([1.0, 1.5, 2.0, 3.0]))
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force(self, rho, s):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SaturationWarning)
            assert associated_function(make_gevrey(s, 400), rho) == pytest.approx(
                brute_assoc(s, rho), abs=1e-9)

    @given(st.floats(1e-2, 1e3), st.floats(1.0, 2.0))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_rho(self, rho, factor):
        seq = make_gevrey(2, 300)
        assert associated_function(seq, rho) <= associated_function(seq, rho * factor) + 1e-12

    def test_monotone_in_P(self):
        rho = 50.0
        vals = [associated_function(make_gevrey(1.5, P), rho, warn=False) for P in (3, 5, 10, 40)]
        assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_zero_below_one_for_sequences_above_one(self):
        seq = make_gevrey(2, 100)
        rho = np.linspace(0.01, 1.0, 50)
        assert np.all(associated_function(seq, rho) == 0.0)

    @pytest.mark.parametrize("s", [2.0, 3.0])
    def test_growth_rate(self, s):
        seq = make_gevrey(s, 2000)
        rho = np.logspace(1, 6, 26)
        ratio = associated_function(seq, rho) / rho ** (1 / s)
        assert np.all((ratio >= 0.1) & (ratio <= 10))


class TestLemmas:
    def test_tec_single_pair(self):
        lhs, rhs = tec_sides(make_gevrey(2, 5), 2, 3)
        assert lhs == pytest.approx(2.0)
        assert rhs == pytest.approx(math.sqrt(6))

    def test_tec_equality_gevrey1(self):
        r = check_lemma_tec(make_gevrey(1, 30), 30)
        assert r.holds

    def test_tec_gevrey3(self):
        assert check_lemma_tec(make_gevrey(3, 60), 60).holds

    def test_zkk_boundary_equality(self):
        # sides are returned in log form: log(2 M_1 M_1) and log(2 M_1)
        lhs, rhs = zkk_sides(make_gevrey(2, 5), (2, 0), (1, 0))
        assert math.exp(lhs) == pytest.approx(2.0)
        assert math.exp(rhs) == pytest.approx(2.0)

    @pytest.mark.parametrize("s", [1.0, 1.5, 2.7])
    def test_zkk_case2_equality_d1(self, s):
        seq = make_gevrey(s, 12)
        for n in range(2, 10):
            lhs, rhs = zkk_sides(seq, (n,), (1,))
            assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_zkk_gevrey15_d2(self):
        r = check_lemma_zkk(make_gevrey(1.5, 20), 2, 8)
        assert r.holds

    def test_zkk_size_guard(self):
        with pytest.raises(ValueError):
            check_lemma_zkk(make_gevrey(2, 40), 3, 30, cap=1000)

    @given(st.floats(1.0, 4.0))
    @settings(max_examples=15, deadline=None)
    def test_lemmas_hold_under_m4(self, s):
        seq = make_gevrey(s, 40)
        assert check_condition(seq, "M4").holds
        assert check_lemma_tec(seq, 40).holds
        assert check_lemma_zkk(seq, 2, 6).holds


class TestRho0:
    def test_gevrey_1_2(self):
        est = estimate_rho0(make_gevrey(1, 200), make_gevrey(2, 200))
        assert abs(est.rho - 0.5) <= 0.02

    def test_identity_embedding(self):
        seq = make_gevrey(2, 200)
        assert estimate_rho0(seq, seq).rho <= 1.0

    def test_gevrey_15_3(self):
        est = estimate_rho0(make_gevrey(1.5, 200), make_gevrey(3, 200))
        assert abs(est.rho - 0.5) <= 0.02

    def test_infeasible(self):
        with pytest.raises(ValueError):
            estimate_rho0(make_gevrey(3, 100), make_gevrey(1, 100))

    def test_m2_fails_for_superexponential(self):
        seq = from_log_values(np.r_[0.0, 0.0, np.arange(2, 80.0) ** 2 / 10])
        assert not check_condition(seq, "M2", range_=79).holds

    def test_report_fields(self):
        d = estimate_rho0(make_gevrey(1, 100), make_gevrey(2, 100)).to_dict()
        assert {"rho", "history", "extrapolated", "caveats"} <= set(d)
