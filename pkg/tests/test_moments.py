import math

import numpy as np
import pytest

from skipfree.bernstein import bernstein_gamma_table
from skipfree.families import beta33, meixner31, perturbed32
from skipfree.kernels import falling_factorial
from skipfree.moments import (continuous_moments, gateway_moment_identity,
                              laguerre_moments, moment_monotone_in_t, raw_moment_ssm,
                              scaling_limit_check, selfsimilarity_identity, ssm_moments)

TRIPLETS = [meixner31(1.0, 2.0), perturbed32(3.0), beta33(2.0)]


@pytest.mark.parametrize("T", TRIPLETS)
def test_ssm_k1_and_t0(T):
    for n in (0, 4, 11):
        assert ssm_moments(T, 1, n, 0.8) == pytest.approx(n + T.phi(1.0) * 0.8, rel=1e-14)
        for k in range(5):
            assert ssm_moments(T, k, n, 0.0) == pytest.approx(falling_factorial(n, k))


def test_ssm_linear_example(linear):
    assert ssm_moments(linear, 2, 0, 1.0) == pytest.approx(2.0, rel=1e-15)


@pytest.mark.parametrize("T", TRIPLETS)
def test_continuous_moments(T):
    assert continuous_moments(T, 0, 2.3, 1.1) == 1.0
    assert continuous_moments(T, 1, 2.3, 1.1) == pytest.approx(2.3 + T.phi(1.0) * 1.1)
    W = bernstein_gamma_table(T, 4).values
    for k in range(5):
        assert continuous_moments(T, k, 0.0, 1.7) == pytest.approx(W[k] * 1.7**k, rel=1e-14)


@pytest.mark.parametrize("T", TRIPLETS)
def test_laguerre_limits(T):
    W = bernstein_gamma_table(T, 5).values
    for k in range(6):
        assert laguerre_moments(T, k, 3, math.inf) == pytest.approx(W[k], rel=1e-14)
        assert laguerre_moments(T, k, 3, 60.0) == pytest.approx(W[k], rel=1e-12)
        assert laguerre_moments(T, k, 7, 0.0) == pytest.approx(falling_factorial(7, k))


@pytest.mark.parametrize("T", TRIPLETS)
def test_laguerre_is_dilated_ssm(T):
    # K_t = Q_{e^t - 1} D_{e^-t} on p_k
    for k in range(5):
        for n in (0, 2, 9):
            for t in (0.1, 0.9, 2.5):
                lhs = laguerre_moments(T, k, n, t)
                rhs = math.exp(-k * t) * ssm_moments(T, k, n, math.expm1(t))
                assert lhs == pytest.approx(rhs, rel=1e-12)


def test_selfsimilarity_edges(linear):
    for k in range(4):
        l, r = selfsimilarity_identity(linear, k, 6, 1.3, 1.0)
        assert l == pytest.approx(r) == pytest.approx(ssm_moments(linear, k, 6, 1.3))
    l, r = selfsimilarity_identity(linear, 2, 6, 1.3, 0.0)
    assert l == 0 and r == 0


def test_selfsimilarity_linear_example(linear):
    l, r = selfsimilarity_identity(linear, 2, 3, 0.7, 0.5)
    assert l == pytest.approx(r, rel=1e-12)


@pytest.mark.parametrize("T", TRIPLETS)
def test_gateway_examples(T):
    for x in (0.0, 0.5, 6.0):
        l, r = gateway_moment_identity(T, 1, x, 0.9)
        assert l == pytest.approx(r, rel=1e-13)
        assert r == pytest.approx(x + T.phi(1.0) * 0.9, rel=1e-13)
    W = bernstein_gamma_table(T, 4).values
    for k in range(5):
        l, r = gateway_moment_identity(T, k, 0.0, 1.4)
        assert l == pytest.approx(W[k] * 1.4**k, rel=1e-13)
        assert r == pytest.approx(W[k] * 1.4**k, rel=1e-13)
        l, r = gateway_moment_identity(T, k, 2.5, 0.0)
        assert l == pytest.approx(2.5**k, rel=1e-12) and r == pytest.approx(2.5**k)


def test_raw_moment_from_stirling(linear):
    # E[X^2] = E[p_2] + E[p_1]
    assert raw_moment_ssm(linear, 2, 4, 0.5) == pytest.approx(
        ssm_moments(linear, 2, 4, 0.5) + ssm_moments(linear, 1, 4, 0.5))


def test_scaling_gaps(linear):
    grid = (10, 100, 1000)
    gaps = scaling_limit_check(linear, 2, 1.0, 1.0, grid)
    assert np.all(np.diff(gaps) < 0)
    for x in (1.0, 0.37, 2.71):
        g1 = scaling_limit_check(linear, 1, x, 1.0, grid)
        np.testing.assert_allclose(g1, [abs(math.floor(n * x) / n - x) for n in grid], atol=1e-10)
        assert np.all(g1 <= 1.0 / np.array(grid))


def test_scaling_check_rejects_bad_input(linear):
    with pytest.raises(ValueError):
        scaling_limit_check(linear, 0, 1.0, 1.0)


def test_monotone_in_t(perturbed):
    assert moment_monotone_in_t(perturbed, 3, 4, [0.0, 0.5, 1.0, 4.0])


def test_negative_arguments_rejected(linear):
    with pytest.raises(ValueError):
        ssm_moments(linear, 1, -1, 1.0)
    with pytest.raises(ValueError):
        selfsimilarity_identity(linear, 1, 2, 1.0, 1.5)
