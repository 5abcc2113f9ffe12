"""Checks for the special-function layer: Gaussian tail, dispersion,
generalized exponential integrals and the capacity series."""

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from rsma_fbl import special_functions as sf
from rsma_fbl.exceptions import DomainError, SingularParameterError


def expn_quadrature(n, x):
    val, _ = integrate.quad(lambda t: math.exp(-x * t) / t**n, 1.0, np.inf,
                            epsabs=1e-14)
    return val


class TestGaussianTail:
    def test_frozen_values(self):
        assert sf.gauss_q_inv(1e-6) == pytest.approx(4.753424308822899, abs=1e-12)
        assert sf.gauss_q(2.0) == pytest.approx(0.022750131948179195, rel=1e-12)
        assert sf.gauss_q(0.0) == pytest.approx(0.5, abs=1e-15)

    def test_round_trip(self):
        for beta in (1e-9, 1e-6, 1e-3, 0.05, 0.25, 0.499):
            assert sf.gauss_q(sf.gauss_q_inv(beta)) == pytest.approx(beta, rel=1e-8)

    def test_inverse_domain(self):
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(DomainError):
                sf.gauss_q_inv(bad)

    @given(st.floats(min_value=1e-9, max_value=0.499))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, beta):
        assert sf.gauss_q(sf.gauss_q_inv(beta)) == pytest.approx(beta, rel=1e-8)


class TestDispersion:
    def test_zero_sinr(self):
        assert sf.channel_dispersion(0.0) == 0.0

    def test_saturation(self):
        assert sf.channel_dispersion(1e9) == pytest.approx(sf.LOG2E_SQ, rel=1e-9)

    def test_monotone(self):
        xs = np.linspace(0.0, 50.0, 200)
        vals = [sf.channel_dispersion(x) for x in xs]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            sf.channel_dispersion(-0.5)


class TestExponentialIntegral:
    def test_against_quadrature(self):
        for n in (1, 2, 3, 5, 10):
            for x in (0.1, 0.5, 1.0, 2.0, 8.0):
                assert sf.exp_integral_generalized(n, x) == pytest.approx(
                    expn_quadrature(n, x), rel=1e-10)

    def test_frozen_values(self):
        assert sf.exp_integral_generalized(1, 1.0) == pytest.approx(
            0.21938393439551238, rel=1e-12)
        assert sf.exp_integral_generalized(3, 0.5) == pytest.approx(
            0.22160436427519084, rel=1e-12)
        assert sf.exp_integral_generalized(5, 2.0) == pytest.approx(
            0.021322400202323018, rel=1e-12)

    def test_recurrence(self):
        # n E_{n+1}(x) = exp(-x) - x E_n(x)
        for n in range(1, 8):
            for x in (0.2, 1.0, 3.0, 10.0):
                lhs = n * sf.exp_integral_generalized(n + 1, x)
                rhs = math.exp(-x) - x * sf.exp_integral_generalized(n, x)
                assert abs(lhs - rhs) < 1e-10

    def test_noninteger_order(self):
        assert sf.exp_integral_generalized(1.5, 1.0) == pytest.approx(
            float(mp.expint(1.5, 1.0)), rel=1e-10)

    def test_scaled_matches_plain(self):
        for n in (1, 3, 28):
            for x in (0.5, 5.0, 50.0):
                plain = sf.exp_integral_generalized(n, x)
                assert sf.exp_integral_scaled(n, x) == pytest.approx(
                    math.exp(x) * plain, rel=1e-9)

    def test_scaled_large_argument(self):
        # e^x E_n(x) -> 1/x as x grows; must not overflow
        for x in (700.0, 5000.0):
            val = sf.exp_integral_scaled(2, x)
            assert 0.0 < val < 1.0 / x
            assert val == pytest.approx(1.0 / (x + 2.0), rel=1e-2)

    @given(st.integers(min_value=1, max_value=12),
           st.floats(min_value=0.05, max_value=20.0))
    @settings(max_examples=60, deadline=None)
    def test_recurrence_property(self, n, x):
        lhs = n * sf.exp_integral_generalized(n + 1, x)
        rhs = math.exp(-x) - x * sf.exp_integral_generalized(n, x)
        assert abs(lhs - rhs) < 1e-9


class TestDigamma:
    def test_recurrence(self):
        for x in (0.3, 1.0, 2.5, 7.0):
            assert sf.digamma(x + 1.0) - sf.digamma(x) == pytest.approx(
                1.0 / x, abs=1e-10)

    def test_euler_mascheroni(self):
        assert sf.digamma(1.0) == pytest.approx(-0.5772156649015329, abs=1e-12)


class TestBesselJ0:
    def test_series_oracle(self):
        for x in np.linspace(0.0, 10.0, 41):
            series = sum((-1) ** m / (math.factorial(m) ** 2) * (x / 2) ** (2 * m)
                         for m in range(40))
            assert sf.bessel_j0(x) == pytest.approx(series, abs=1e-9)


class TestCapacitySeries:
    def test_capacity_vs_quadrature(self):
        # E[log2(1+Y)] where P(Y > y) = exp(-c1 y)/(c2 y + 1)^n
        for n, c1, c2 in [(3, 0.5, 0.3), (5, 1.2, 2.0), (28, 2.53e-6, 0.1507)]:
            oracle, _ = integrate.quad(
                lambda y: math.exp(-c1 * y) / (c2 * y + 1) ** n / (1 + y) / math.log(2),
                0.0, np.inf, epsabs=1e-13, limit=500)
            assert sf.capacity_from_series(n, c1, c2) == pytest.approx(oracle, rel=1e-8)

    def test_singular_scale_rejected(self):
        with pytest.raises(SingularParameterError):
            sf.psi_capacity_series(3, 0.5, 1.0 + 1e-9)

    def test_near_singular_is_finite(self):
        # severe cancellation region: c2 close to (but outside) the guard
        val = sf.capacity_from_series(20, 0.8, 1.0 + 5e-6)
        oracle, _ = integrate.quad(
            lambda y: math.exp(-0.8 * y) / ((1.0 + 5e-6) * y + 1) ** 20
            / (1 + y) / math.log(2),
            0.0, np.inf, epsabs=1e-13, limit=500)
        assert val == pytest.approx(oracle, rel=1e-6)


class TestTolerances:
    def test_defaults_valid(self):
        tol = sf.NumericTolerances()
        assert tol.quadrature_abs_tol > 0

    def test_invalid_rejected(self):
        with pytest.raises(DomainError):
            sf.NumericTolerances(quadrature_abs_tol=-1.0)
