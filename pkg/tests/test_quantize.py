import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ultrapsi.quantize import (
    AliasingError, GridFunction, HermiteBasis, InsufficientDynamicRange, RepresentationError,
    SymbolOverflowError, apply_operator, decay_fit, fourier_multiplier, gaussian,
    gaussian_mixture, gs_norm_estimate, spectral_solve,
)
from ultrapsi.symbols import parse_symbol
from ultrapsi.weights import make_gevrey


def rel(u, v):
    return np.linalg.norm((u - v).samples) / np.linalg.norm(v.samples)


@pytest.fixture(scope="module")
def g():
    return gaussian(1, 12, 256)


@pytest.fixture(scope="module")
def basis():
    return HermiteBasis(32, 12, 256)


class TestGrid:
    def test_dual_spacing(self, g):
        assert g.dxi == pytest.approx(math.pi / 12)
        assert np.max(np.abs(g.dual_axis)) == pytest.approx(math.pi * 256 / 24)

    def test_parseval(self):
        f = gaussian_mixture([(1, 0, 1), (0.5, 1.5, 0.8)])
        assert f.fourier_norm() == pytest.approx(f.norm(), rel=1e-10)

    def test_fourier_closed_form(self, g):
        xi = g.dual_axis
        want = math.sqrt(2 * math.pi) * np.exp(-xi ** 2 / 2)
        assert np.max(np.abs(g.fourier - want)) < 1e-12

    def test_shifted_fourier_phase(self):
        f = gaussian(1, 12, 256, center=1.0)
        xi = f.dual_axis
        want = math.sqrt(2 * math.pi) * np.exp(-xi ** 2 / 2 - 1j * xi)
        assert np.max(np.abs(f.fourier - want)) < 1e-12

    def test_round_trip_inverse(self, g):
        back = GridFunction.from_fourier(g.fourier, 1, g.L, g.N)
        assert rel(back, g) < 1e-14

    def test_validation(self):
        with pytest.raises(ValueError):
            GridFunction(1, 12.0, 100, np.zeros(100))
        with pytest.raises(ValueError):
            GridFunction(3, 12.0, 8, np.zeros((8, 8, 8)))
        with pytest.raises(ValueError):
            GridFunction(1, 12.0, 8, np.full(8, np.nan))

    def test_json_bit_exact(self, tmp_path):
        f = gaussian_mixture([(1, 0.3, 1.1), (0.2j, -2, 0.5)])
        f.dump(tmp_path / "f.json")
        back = GridFunction.load(tmp_path / "f.json")
        assert back.samples.tobytes() == f.samples.tobytes()
        assert (back.d, back.L, back.N) == (f.d, f.L, f.N)

    def test_aliasing_guard(self):
        narrow = gaussian(1, 12, 64, width=0.1)
        with pytest.raises(AliasingError):
            narrow.check_aliasing()
        with pytest.raises(AliasingError):
            apply_operator(parse_symbol("1", 1), narrow)


class TestApply:
    def test_identity(self, g):
        assert rel(apply_operator(parse_symbol("1", 1), g), g) < 1e-8

    def test_derivative(self, g):
        out = apply_operator(parse_symbol("k1", 1), g)
        want = g.like(1j * g.axis * g.samples)
        assert rel(out, want) < 1e-6

    def test_oscillator_ground_state(self, basis):
        h0 = basis.function(0)
        out = apply_operator(parse_symbol("1 + x1^2 + k1^2", 1), h0)
        assert rel(out, h0 * 2) < 1e-6

    def test_linear_in_symbol(self):
        f = gaussian_mixture([(1, 0, 1), (0.5, 1.5, 0.8)])
        a1, a2 = parse_symbol("x1*k1 + recip(1 + k1^2)", 1), parse_symbol("exp(-x1^2)*k1^2", 1)
        both = apply_operator(parse_symbol("x1*k1 + recip(1 + k1^2) + exp(-x1^2)*k1^2", 1), f)
        assert rel(both, apply_operator(a1, f) + apply_operator(a2, f)) < 1e-10

    @pytest.mark.parametrize("text", ["k1^2", "recip(1 + k1^2)", "exp(-anglek())"])
    def test_multiplier_path_agrees(self, text):
        f = gaussian_mixture([(1, 0, 1), (0.5, 1.5, 0.8)])
        a = parse_symbol(text, 1)
        assert rel(fourier_multiplier(a, f), apply_operator(a, f)) < 1e-10
        assert rel(apply_operator(a, f, method="auto"), apply_operator(a, f)) < 1e-10

    def test_callable_symbol(self, g):
        out = apply_operator(lambda x, k: 1 + x[0] ** 2 + k[0] ** 2, g)
        ref = apply_operator(parse_symbol("1 + x1^2 + k1^2", 1), g)
        assert rel(out, ref) < 1e-14

    def test_two_dimensional(self):
        f = gaussian(2, 8, 64)
        out = apply_operator(parse_symbol("1 + x1^2 + x2^2 + k1^2 + k2^2", 2), f,
                             method="direct")
        # ground state of the 2d oscillator: eigenvalue 3 for the unnormalized Gaussian
        assert rel(out, f * 3) < 1e-6

    def test_symbol_overflow(self, g):
        with pytest.raises(SymbolOverflowError):
            apply_operator(parse_symbol("exp(anglek())", 1), g)


class TestNorms:
    M = make_gevrey(2, 60)

    def test_zero(self):
        f = GridFunction(1, 12.0, 128, np.zeros(128))
        assert gs_norm_estimate(f, self.M, 0.5, 2).value == 0

    def test_gaussian_K0_brute_force(self, g):
        x = np.linspace(-12, 12, 20001)
        # independent oracle: M(r) = sup_p (p log r - 2 log p!)
        p = np.arange(61)
        lg = np.array([math.lgamma(q + 1) for q in p])
        with np.errstate(divide="ignore"):
            Mr = np.max(np.maximum(0, p[None] * np.log(0.5 * np.abs(x))[:, None] - 2 * lg[None]), axis=1)
        dense = float(np.max(np.exp(-x ** 2 / 2 + Mr)))
        est = gs_norm_estimate(g, self.M, 0.5, 0)
        assert est.value >= 1.0
        assert est.value == pytest.approx(dense, rel=1e-3)
        assert est.value <= dense * (1 + 1e-12)

    def test_report(self, g):
        est = gs_norm_estimate(g, self.M, 0.5, 2)
        assert est.K == 2
        assert len(est.alpha) == 1 and len(est.x) == 1

    @given(st.floats(0.05, 2.0), st.floats(1.0, 3.0), st.integers(0, 3), st.integers(0, 3))
    @settings(max_examples=25, deadline=None)
    def test_monotone_in_m_and_K(self, m, factor, K, dK):
        f = gaussian(1, 12, 128)
        lo = gs_norm_estimate(f, self.M, m, K).value
        assert gs_norm_estimate(f, self.M, m, K + dK).value >= lo * (1 - 1e-12)
        assert gs_norm_estimate(f, self.M, m * factor, K).value >= lo * (1 - 1e-12)

    def test_K_guard(self, g):
        with pytest.raises(ValueError):
            gs_norm_estimate(g, make_gevrey(2, 3), 1.0, 5)


class TestHermite:
    def test_gram(self, basis):
        assert np.max(np.abs(basis.gram() - np.eye(33))) < 1e-8

    def test_eigen_relation(self, basis):
        a = parse_symbol("1 + x1^2 + k1^2", 1)
        for n in range(17):
            h = basis.function(n)
            assert rel(apply_operator(a, h), h * (2 * n + 2)) < 1e-6

    def test_ground_state_closed_form(self, basis):
        x = basis.function(0).axis
        np.testing.assert_allclose(basis.function(0).samples.real,
                                   math.pi ** -0.25 * np.exp(-x ** 2 / 2), atol=1e-14)

    @pytest.mark.parametrize("n,lam", [(0, 2), (2, 6)])
    def test_solve_eigenfunctions(self, basis, n, lam):
        h = basis.function(n)
        assert rel(spectral_solve(h, basis), h * (1 / lam)) < 1e-12

    def test_solve_zero(self, basis):
        z = basis.function(0) * 0
        assert np.all(spectral_solve(z, basis).samples == 0)

    def test_solve_then_apply(self, basis):
        a = parse_symbol("1 + x1^2 + k1^2", 1)
        v = gaussian_mixture([(1, 0, 1), (0.5, 1.5, 0.8)])
        u = spectral_solve(v, basis)
        assert rel(apply_operator(a, u), v) < 1e-5

    def test_identity_on_span(self, basis):
        a = parse_symbol("1 + x1^2 + k1^2", 1)
        rng = np.random.default_rng(3)
        c = np.zeros(33, dtype=complex)
        c[:17] = rng.normal(size=17) + 1j * rng.normal(size=17)
        f = basis.synthesize(c)
        assert rel(spectral_solve(apply_operator(a, f), basis), f) < 1e-5

    def test_representation_deficit(self, basis):
        far = gaussian(1, 12, 256, center=7.0, width=0.4)
        with pytest.raises(RepresentationError) as info:
            spectral_solve(far, basis)
        assert 0 <= info.value.captured < 1 - 1e-8

    def test_grid_mismatch(self, basis):
        with pytest.raises(ValueError):
            basis.coefficients(gaussian(1, 12, 128))


class TestDecayFit:
    def test_gaussian_exponent(self, g):
        r = decay_fit(g)
        assert r.constants["s"] == pytest.approx(0.5, abs=0.05)
        assert r.constants["exponent"] == pytest.approx(2.0, abs=0.1)

    def test_stretched_sequence(self):
        n = np.arange(400)
        r = decay_fit(np.exp(-np.sqrt(n)))
        assert r.constants["gamma"] == pytest.approx(0.5, abs=0.05)
        assert r.constants["c"] == pytest.approx(1.0, rel=0.05)

    def test_white_noise(self):
        rng = np.random.default_rng(0)
        with pytest.raises(InsufficientDynamicRange):
            decay_fit(rng.normal(size=300))

    def test_noise_grid_function(self):
        rng = np.random.default_rng(1)
        f = GridFunction(1, 12.0, 256, rng.normal(size=256))
        with pytest.raises(InsufficientDynamicRange):
            decay_fit(f)
