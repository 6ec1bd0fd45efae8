import math

import numpy as np
import pytest

from skipfree.bernstein import BernsteinTriplet
from skipfree.families import beta33
from skipfree.kernels import (FactorialPoly, TruncationError, dilation_apply,
                              dilation_matrix, falling_factorial, iphi_apply_poly,
                              iphi_factors, log_falling_factorial, monomial_to_factorial,
                              factorial_to_monomial, poissonize, stirling1_table,
                              stirling2_table)


def test_falling_factorial():
    assert falling_factorial(5, 0) == 1
    assert falling_factorial(5, 2) == 20
    assert falling_factorial(3, 4) == 0
    assert math.exp(log_falling_factorial(np.array([10.0]), 3)[0]) == pytest.approx(720)


def test_dilation_identity():
    f = np.random.default_rng(1).standard_normal(30)
    np.testing.assert_array_equal(dilation_apply(f, 1.0), f)


@pytest.mark.parametrize("k", [0, 1, 3, 6])
@pytest.mark.parametrize("alpha", [0.2, 0.5, 0.93])
def test_dilation_eigen_on_factorial_basis(k, alpha):
    n = np.arange(60, dtype=float)
    p = FactorialPoly.basis(k)(n)
    out = dilation_apply(p, alpha)
    np.testing.assert_allclose(out, alpha**k * p, rtol=1e-11, atol=1e-12)


def test_dilation_alternating_sign():
    n = np.arange(40)
    f = (-1.0) ** n
    out = dilation_apply(f, 0.9)
    np.testing.assert_allclose(np.abs(out), 0.8 ** n, rtol=1e-10, atol=1e-15)


def test_dilation_is_stochastic():
    D = dilation_matrix(50, 0.37)
    np.testing.assert_allclose(D.sum(axis=1), 1.0, atol=1e-13)
    assert D.min() >= 0


def test_dilation_above_one_warns():
    with pytest.warns(RuntimeWarning):
        dilation_apply(np.ones(5), 1.2)


@pytest.mark.parametrize("k", [0, 1, 2, 5])
def test_poissonize_factorial_basis(k):
    for x in (0.0, 0.7, 4.0):
        assert poissonize(FactorialPoly.basis(k), x) == pytest.approx(x**k)
        vec = FactorialPoly.basis(k)(np.arange(200, dtype=float))
        assert poissonize(vec, x) == pytest.approx(x**k, rel=1e-12, abs=1e-14)


def test_poissonize_constant_and_delta():
    assert poissonize(np.ones(100), 3.3) == pytest.approx(1.0, rel=1e-14)
    d = np.zeros(50)
    d[0] = 1
    assert poissonize(d, 1.0) == pytest.approx(math.exp(-1), rel=1e-14)


def test_poissonize_too_short():
    with pytest.raises(TruncationError):
        poissonize(np.ones(5), 20.0)


def test_stirling_expansions():
    assert monomial_to_factorial([0, 1]) == pytest.approx((0, 1))
    assert monomial_to_factorial([0, 0, 1]) == pytest.approx((0, 1, 1))
    assert monomial_to_factorial([0, 0, 0, 1]) == pytest.approx((0, 1, 3, 1))
    S2 = stirling2_table(6)
    S1 = stirling1_table(6)
    assert S2[4][2] == 7 and S2[5][3] == 25
    assert abs(S1[4][2]) == 11


def test_stirling_roundtrip():
    c = (1.0, -2.0, 0.5, 3.0, 0.25)
    back = factorial_to_monomial(monomial_to_factorial(c))
    np.testing.assert_allclose(back, c, atol=1e-12)


def test_stirling_brute_force():
    # n^3 at n = 0..3 fixes the coefficients on p_1, p_2, p_3
    f = FactorialPoly(monomial_to_factorial([0, 0, 0, 1]))
    n = np.arange(10, dtype=float)
    np.testing.assert_allclose(f(n), n**3)


def test_iphi_constant_unchanged(linear):
    assert iphi_apply_poly(linear, FactorialPoly.basis(0)).coeffs == pytest.approx((1.0,))


def test_iphi_identity_for_pure_diffusion():
    np.testing.assert_allclose(iphi_factors(BernsteinTriplet(0.0, 0.7), 10), 1.0, rtol=1e-13)


def test_iphi_beta_family_k1():
    M = 2.0
    fac = iphi_factors(beta33(M), 1)
    assert fac[1] == pytest.approx(M * (1 + M), rel=1e-14)
