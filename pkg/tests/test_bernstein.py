import math

import numpy as np
import pytest
from scipy import integrate
from scipy.optimize import brentq

from skipfree.bernstein import (Atoms, BernsteinTriplet, ExpDensity, InvalidTripletError,
                                TabulatedDensity, UnsupportedError, ZeroMeasure,
                                bernstein_gamma_table, d_phi, derived_constants,
                                levy_generator_integrals, m_phi, phi_beta,
                                phi_continuation, phi_eval, pibar0, sigma1, t_star)
from skipfree.families import beta33, perturbed32
from skipfree.reference import quadrature


def test_phi_linear(linear):
    assert phi_eval(linear, 2.0) == 2.0


@pytest.mark.parametrize("M", [1.5, 2.0, 3.5])
def test_phi_beta_family(M):
    assert phi_eval(beta33(M), 1.0) == pytest.approx(1 / (M * (1 + M)), rel=1e-14)


def test_phi_perturbed():
    assert phi_eval(perturbed32(3.0), 1.0) == pytest.approx(15 / 4, rel=1e-14)


def test_phi_rejects_negative(linear):
    with pytest.raises(ValueError):
        phi_eval(linear, -1.0)


def test_continuation_linear():
    T = BernsteinTriplet(0.7, 0.4)
    for u in (0.0, 0.5, 3.0):
        assert phi_continuation(T, u) == pytest.approx(0.7 - 0.4 * u)


def test_continuation_root_perturbed():
    M = 3.0
    T = perturbed32(M)
    assert abs(phi_continuation(T, M - 1)) < 1e-12
    # bisection oracle on the closed form
    root = brentq(lambda u: (-u + M + 1) * (-u + M - 1) / (-u + M), 0, M - 0.5)
    assert float(d_phi(T)) == pytest.approx(root, abs=1e-9)


def test_continuation_abscissa():
    T = BernsteinTriplet(0.0, 0.0, ExpDensity(2.0, 1.5))
    assert phi_continuation(T, 1.5) == -math.inf


def test_continuation_tabulated_unsupported():
    grid = np.linspace(0.01, 10, 200)
    T = BernsteinTriplet(0.0, 1.0, TabulatedDensity(tuple(grid), tuple(np.exp(-grid))))
    with pytest.raises(UnsupportedError):
        phi_continuation(T, 0.5)


def test_d_phi_examples(linear):
    assert float(d_phi(BernsteinTriplet(1.5, 0.5))) == pytest.approx(3.0)
    assert float(d_phi(linear)) == 0.0
    assert float(d_phi(perturbed32(3.0))) == pytest.approx(2.0, abs=1e-9)


def test_m_phi_examples(linear):
    assert m_phi(linear) == 0.0
    M = 3.0
    T = perturbed32(M)
    # Pibar(0) = int e^{-My} dy = 1/M by quadrature
    val, _ = quadrature(lambda y: math.exp(-M * y))
    assert pibar0(T) == pytest.approx(val, rel=1e-10)
    assert m_phi(T) == pytest.approx(M, rel=1e-14)
    assert m_phi(BernsteinTriplet(1.0, 0.0, ExpDensity(1.0, 1.0))) == math.inf


def test_sigma1_and_t_star():
    assert sigma1(BernsteinTriplet(1.0, 0.25)) == 0.25
    assert sigma1(beta33(2.0)) == 1.0
    assert t_star(BernsteinTriplet(1.0, 1.0)) == pytest.approx(0.5 * math.log(2))
    dc = derived_constants(perturbed32(3.0))
    assert dc.sigma1 == 1.0 and dc.d_phi == pytest.approx(2.0, abs=1e-9)


def test_gamma_table_linear(linear):
    np.testing.assert_allclose(bernstein_gamma_table(linear, 4).values, [1, 1, 2, 6, 24])


def test_gamma_table_beta_family():
    M = 2.0
    W = bernstein_gamma_table(beta33(M), 30)
    k = np.arange(31)
    ref = np.exp(math.lgamma(M + 1) + np.array([math.lgamma(j + 1) - math.lgamma(j + 1 + M)
                                                for j in k]) - k * math.log(M))
    np.testing.assert_allclose(W.values, ref, rtol=1e-13)


def test_gamma_table_perturbed_k1():
    M = 3.0
    W = bernstein_gamma_table(perturbed32(M), 1)
    # W(2) = phi(1) = (M+2)M/(M+1)
    assert W[1] == pytest.approx(M * (M + 2) / (M + 1), rel=1e-14)


def test_phi_beta_examples():
    T = BernsteinTriplet(1.0, 1.0)
    assert phi_beta(T, 1.0, 0.0) == 0.0
    assert phi_beta(T, 1.0, 1.0) == pytest.approx(2 * math.log(2), rel=1e-14)
    for s2, b in ((0.5, 2.0), (2.0, 0.3)):
        T = BernsteinTriplet(1.0, s2)
        assert phi_beta(T, b, 1.0) == pytest.approx(math.log1p(1 / s2) + math.log(b + 1))


def test_integrals_zero():
    low, up, diag = levy_generator_integrals(ZeroMeasure(), 4)
    assert not np.any(low) and up == 0 and diag == 0


def test_integrals_atom():
    _, up, _ = levy_generator_integrals(Atoms((1.0,), (1.0,)), 0)
    assert up == pytest.approx(math.exp(-1), rel=1e-14)


@pytest.mark.parametrize("n", [1, 4, 9])
def test_integrals_exp_beta_identity(n):
    M = 3.0
    low, _, _ = levy_generator_integrals(ExpDensity(M, M), n)
    for l in range(n):
        ref = M * math.exp(math.lgamma(l + M) + math.lgamma(n - l + 2) - math.lgamma(n + M + 2))
        assert low[l] == pytest.approx(ref, rel=1e-13)
        # quadrature oracle on int e^{-(l+M)y} (1-e^{-y})^{n-l+1} dy
        q, _ = quadrature(lambda y: M * math.exp(-(l + M) * y) * (-math.expm1(-y)) ** (n - l + 1))
        assert low[l] == pytest.approx(q, rel=1e-9)


def test_triplet_validation():
    with pytest.raises(InvalidTripletError):
        BernsteinTriplet(-1.0, 1.0)
    with pytest.raises(InvalidTripletError):
        BernsteinTriplet(0.0, 0.0, ZeroMeasure())
    with pytest.raises((InvalidTripletError, ValueError)):
        Atoms((-1.0,), (1.0,))


def test_triplet_roundtrip():
    T = BernsteinTriplet(0.5, 2.0, Atoms((1.0, 2.0), (0.5, 0.25)))
    assert BernsteinTriplet.from_dict(T.to_dict()) == T


def test_tabulated_matches_quadrature_of_interpolant():
    grid = np.array([0.2, 0.5, 1.0, 2.0, 3.5])
    dens = np.array([1.0, 0.8, 0.5, 0.3, 0.0])
    lev = TabulatedDensity(tuple(grid), tuple(dens))
    pdf = lambda y: np.interp(y, grid, dens)

    def quad(f):
        # piecewise oracle with the kinks as breakpoints
        return sum(integrate.quad(f, a, b, epsabs=0, epsrel=1e-13)[0]
                   for a, b in zip(grid[:-1], grid[1:]))

    n = 4
    low, up, diag = lev.integrals(n)
    for l in range(n):
        q = quad(lambda y: math.exp(-l * y) * (-math.expm1(-y)) ** (n - l + 1) * pdf(y))
        assert low[l] == pytest.approx(q, rel=1e-12)
    q = quad(lambda y: (math.expm1(-(n + 1) * y) + (n + 1) * y) * pdf(y))
    assert up == pytest.approx(q, rel=1e-12)


def test_tabulated_approximates_exponential():
    g = np.linspace(1e-4, 40, 4001)
    T = BernsteinTriplet(0.0, 1.0, TabulatedDensity(tuple(g), tuple(3 * np.exp(-3 * g))))
    E = BernsteinTriplet(0.0, 1.0, ExpDensity(3.0, 3.0))
    assert phi_eval(T, 1.5) == pytest.approx(phi_eval(E, 1.5), rel=1e-4)
