import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ultrapsi.symbols import parse_symbol
from ultrapsi.symbols.classes import (
    BoxGrid, box_sweep, check_hypoelliptic, check_quotient_bound_p0, derivative_pairs,
    estimate_class_membership, geometric_scan, q_region,
)
from ultrapsi.weights import make_gevrey

G15, G2, G3 = make_gevrey(1.5, 200), make_gevrey(2, 200), make_gevrey(3, 200)
SYMBOLS = [
    ("angle()^2", G2, G15, 1.0),
    ("angle()^(-2)", G2, G15, 1.0),
    ("1 + x1^2 + k1^2", G2, G15, 1.0),
    ("exp(angle()^(1/3))", G3, G15, 0.5),
]


def grid(L, step=0.5, d=1):
    return BoxGrid.from_step(L, step, d)


class TestGrid:
    def test_refinement_is_superset(self):
        g = grid(4, 1.0)
        fine = {tuple(p) for p in np.vstack(g.refine().points()).T}
        assert {tuple(p) for p in np.vstack(g.points()).T} <= fine

    def test_derivative_pairs_count(self):
        # multi-indices of total order n in 2d variables
        assert len(list(derivative_pairs(2, 3))) == 20
        assert len(list(derivative_pairs(1, 3))) == 4

    def test_geometric_scan(self):
        s = geometric_scan(1e-2, 1e2)
        assert s.size == 33
        assert s[0] == pytest.approx(1e-2) and s[-1] == pytest.approx(1e2)

    def test_q_region(self):
        x = np.array([[0.0, 2.0, 0.0]])
        k = np.array([[0.0, 0.0, 1.0]])
        np.testing.assert_array_equal(q_region(x, k, 2.0), [False, True, False])

    def test_too_coarse(self):
        with pytest.raises(ValueError):
            BoxGrid(1.0, 2)


class TestMembership:
    def test_constant_symbol(self):
        r = estimate_class_membership(parse_symbol("1", 1), G2, G15, 1, 1, 1, 4, grid(5))
        assert r.sup == pytest.approx(1.0)
        assert r.argmax["alpha"] == (0,) and r.argmax["beta"] == (0,)
        assert r.per_order[1:] == [0.0] * 4

    def test_bracket_squared_finite(self):
        r = estimate_class_membership(parse_symbol("angle()^2", 1), G2, G2, 1, 1, 1, 3, grid(20))
        assert np.isfinite(r.sup) and r.verdict
        # third derivatives vanish identically
        assert r.per_order[3] == 0.0

    def test_exp_bracket_flagged(self):
        r = estimate_class_membership(parse_symbol("exp(angle())", 1), G2, G15, 1, 1, 1, 2, grid(20))
        assert not r.verdict
        assert "radial_growth" in r.flags

    def test_rho_range(self):
        with pytest.raises(ValueError):
            estimate_class_membership(parse_symbol("1", 1), G2, G15, 1.5, 1, 1, 1, grid(2))

    def test_singularity_aborts(self):
        from ultrapsi.symbols import SymbolEvaluationError
        with pytest.raises(SymbolEvaluationError):
            estimate_class_membership(parse_symbol("recip(x1)", 1), G2, G15, 1, 1, 1, 1, grid(2))

    @pytest.mark.parametrize("text", ["angle()^2", "1 + x1^2 + k1^2", "exp(angle()^(1/3))"])
    def test_refinement_monotone(self, text):
        a = parse_symbol(text, 1)
        g = grid(6, 1.0)
        coarse = estimate_class_membership(a, G3, G15, 0.5, 1, 1, 2, g)
        fine = estimate_class_membership(a, G3, G15, 0.5, 1, 1, 2, g.refine())
        assert fine.sup >= coarse.sup * (1 - 1e-12)
        assert all(f >= c * (1 - 1e-12) for f, c in zip(fine.per_order, coarse.per_order))

    @given(st.floats(0.1, 10), st.floats(1.0, 3.0))
    @settings(max_examples=15, deadline=None)
    def test_larger_h_smaller_sup(self, h, factor):
        a = parse_symbol("1 + x1^2 + k1^2", 1)
        lo = estimate_class_membership(a, G2, G15, 1, h, 1, 2, grid(4, 1.0))
        hi = estimate_class_membership(a, G2, G15, 1, h * factor, 1, 2, grid(4, 1.0))
        assert hi.sup <= lo.sup * (1 + 1e-12)


class TestHypoelliptic:
    def test_bracket_squared(self):
        r = check_hypoelliptic(parse_symbol("angle()^2", 1), G2, G15, 1, 2, 3, grid(20))
        assert r.verdict
        # |a| >= 1 >= e^{-M} gives any c <= 1; the fit reports the largest
        assert r.lower_bound["c"] >= 1.0

    def test_vanishing_symbol_witness(self):
        r = check_hypoelliptic(parse_symbol("k1^2", 1), G2, G15, 1, 2, 3, grid(20))
        assert not r.verdict_lower
        w = r.witness
        assert w["value"] == 0 and w["k"] == [0.0]
        assert 1 + w["x"][0] ** 2 >= 4

    def test_roumieu_also_fails_on_zero(self):
        r = check_hypoelliptic(parse_symbol("k1^2", 1), G2, G15, 1, 2, 3, grid(10), mode="roumieu")
        assert not r.verdict

    def test_exp_symbol(self):
        r = check_hypoelliptic(parse_symbol("exp(angle()^(1/3))", 1), G3, G15, 0.5, 2, 2, grid(30))
        assert r.verdict

    def test_exp_symbol_rho_one_fails(self):
        r = check_hypoelliptic(parse_symbol("exp(angle()^(1/3))", 1), G3, G15, 1.0, 2, 2, grid(30))
        assert not r.verdict_quotient
        assert r.quotient_bound["growing_orders"]

    def test_polynomial_growth_fails(self):
        r = check_hypoelliptic(parse_symbol("x1*k1", 1), G2, G15, 1, 2, 2, grid(20))
        assert not r.verdict

    def test_bad_inputs(self):
        a = parse_symbol("angle()^2", 1)
        with pytest.raises(ValueError):
            check_hypoelliptic(a, G2, G15, 1, 2, 0, grid(4))
        with pytest.raises(ValueError):
            check_hypoelliptic(a, G2, G15, 1, 2, 1, grid(4), mode="other")
        with pytest.raises(ValueError):
            check_hypoelliptic(a, G2, G15, 1, 100, 1, grid(4))

    @pytest.mark.parametrize("text,M,A,rho", SYMBOLS)
    def test_product_and_joint_weights_agree(self, text, M, A, rho):
        a = parse_symbol(text, 1)
        prod = check_hypoelliptic(a, M, A, rho, 2, 2, grid(20), weights="product")
        joint = check_hypoelliptic(a, M, A, rho, 2, 2, grid(20), weights="joint")
        assert prod.verdict_quotient == joint.verdict_quotient
        # A_a A_b <= A_{a+b} and A_{a+b} <= H^{a+b} A_a A_b with H = 2^s
        qp, qj = prod.quotient_bound["q_per_order"], joint.quotient_bound["q_per_order"]
        for n, (p, j) in enumerate(zip(qp, qj)):
            assert j <= p * (1 + 1e-12)
            assert p <= j * 2 ** (1.5 * n) * (1 + 1e-12)

    def test_two_dimensional(self):
        r = check_hypoelliptic(parse_symbol("angle()^2", 2), G2, G15, 1, 2, 2, grid(6, 1.0, d=2))
        assert r.verdict

    def test_box_sweep_stable(self):
        a = parse_symbol("angle()^(-2)", 1)

        def run(g):
            rep = check_hypoelliptic(a, G2, G15, 1, 2, 2, g)
            return {"C": rep.quotient_bound["C"]}

        res = box_sweep(run, [10, 20, 30], 0.5)
        assert res["stable"]
        assert set(res["rows"]) == {10.0, 20.0, 30.0}


class TestQuotientP0:
    def test_constant(self):
        r = check_quotient_bound_p0(parse_symbol("1", 1), G15, 1, 2, 3, grid(10))
        assert r.verdict
        assert r.constants["C_at_h1"] == pytest.approx(1.0)
        assert r.per_order[1:] == [0.0, 0.0, 0.0]

    def test_shubin(self):
        r = check_quotient_bound_p0(parse_symbol("1 + x1^2 + k1^2", 1), G15, 1, 2, 3, grid(20))
        assert r.verdict
        # |d(1/a)|/|1/a| = 2|x|/a and <w> 2|x|/<w>^2 <= 2
        assert r.per_order[1] <= 2.0

    def test_negative_order(self):
        r = check_quotient_bound_p0(parse_symbol("angle()^(-2)", 1), G15, 1, 2, 2, grid(20))
        assert r.verdict

    def test_zero_on_grid(self):
        with pytest.raises(ZeroDivisionError):
            check_quotient_bound_p0(parse_symbol("k1", 1), G15, 1, 2, 1, grid(10))

    def test_C_decreasing_in_h(self):
        r = check_quotient_bound_p0(parse_symbol("1 + x1^2 + k1^2", 1), G15, 1, 2, 3, grid(10))
        C = np.asarray(r.diagnostics["C_of_h"]["C"])
        assert np.all(np.diff(C) <= 1e-12 * C[:-1])
