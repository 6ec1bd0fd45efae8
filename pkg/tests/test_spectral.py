import math

import numpy as np
import pytest

from skipfree.bernstein import BernsteinTriplet, UnsupportedError, phi_beta
from skipfree.families import beta33, meixner31, meixner_P, perturbed32
from skipfree.kernels import FactorialPoly
from skipfree.moments import laguerre_moments
from skipfree.spectral import (ThresholdError, biorthogonality_check,
                               biorthogonality_matrix, build_spectral_system, c_k,
                               coeigenfunction_V, eigen_residual, eigenfunction_P,
                               eigenpolynomial, entropy, entropy_decay_check,
                               envelope_K, heat_kernel, hypocoercive_constant,
                               semigroup_apply, subordinated_apply, tail_bound)


@pytest.fixture(scope="module")
def meixner_system():
    return build_spectral_system(meixner31(1.0, 1.0), 12, 400)


@pytest.fixture(scope="module")
def perturbed_system():
    return build_spectral_system(perturbed32(3.0), 12, 400)


def test_P0_is_one(meixner_system):
    np.testing.assert_allclose(meixner_system.P_table[0], 1.0, rtol=1e-15)
    assert eigenfunction_P(beta33(2.0), 0, 7) == pytest.approx(1.0)


def test_P_meixner_closed_form():
    s2, m = 1.0, 2.0
    T = meixner31(s2, m)
    for k in range(13):
        for n in range(13):
            ref = meixner_P(s2, m, k, n)
            assert abs(eigenfunction_P(T, k, n) - ref) <= 1e-10 * max(1.0, abs(ref))


def test_P1_two_term(perturbed):
    phi1 = perturbed.phi(1.0)
    for n in range(10):
        ref = (1 + 1 / 1.0) ** -0.5 * (1 - n / phi1)
        assert eigenfunction_P(perturbed, 1, n) == pytest.approx(ref, rel=1e-13, abs=1e-15)


def test_V0_and_V1_at_zero(meixner_system):
    S = meixner_system
    w = S.weights
    assert coeigenfunction_V(S.triplet, S.law, 0, 3) == pytest.approx(1.0, rel=1e-12)
    # k = 1: only r = 0 survives at n = 0; r = 0, 1 at n = 1
    ref0 = math.sqrt(2.0) * w[1] / w[0]
    ref1 = math.sqrt(2.0) * (2 * w[2] - w[1]) / w[1]
    assert coeigenfunction_V(S.triplet, S.law, 1, 0) == pytest.approx(ref0, rel=1e-12)
    assert coeigenfunction_V(S.triplet, S.law, 1, 1) == pytest.approx(ref1, rel=1e-12)


def test_self_adjoint_partner(meixner_system):
    S = meixner_system
    beta = 1.0
    V = S.V_table[:, :40]
    for k in range(8):
        np.testing.assert_allclose(V[k], c_k(beta, k) * S.P_table[k, :40],
                                   rtol=1e-9, atol=1e-12)


def test_biorthogonality(meixner_system, perturbed_system):
    assert abs(biorthogonality_check(meixner_system, 0, 0)) <= 1e-14
    assert np.max(np.abs(biorthogonality_matrix(meixner_system))) <= 1e-9
    assert np.max(np.abs(biorthogonality_matrix(perturbed_system, 10))) <= 1e-7


def test_eigen_residual(perturbed_system):
    for k in range(13):
        assert eigen_residual(perturbed_system, k) <= 1e-8


def test_eigenpolynomial_matches_table(perturbed_system):
    S = perturbed_system
    n = np.arange(25, dtype=float)
    for k in range(8):
        p = eigenpolynomial(S.triplet, k)(n)
        np.testing.assert_allclose(p, S.P_table[k, :25], rtol=1e-11, atol=1e-12)


def test_semigroup_on_eigenfunction(perturbed_system):
    S = perturbed_system
    for k in range(6):
        out = semigroup_apply(S, eigenpolynomial(S.triplet, k), 0.3)
        np.testing.assert_allclose(out[:30], math.exp(-0.3 * k) * S.P_table[k, :30],
                                   rtol=1e-10, atol=1e-12)


def test_semigroup_constant(meixner_system):
    S = meixner_system
    out = semigroup_apply(S, np.ones(S.N + 1), 1.0)
    np.testing.assert_allclose(out, 1.0, atol=1e-12)


def test_semigroup_matches_laguerre_moments(perturbed_system):
    S = perturbed_system
    for k in range(5):
        out = semigroup_apply(S, FactorialPoly.basis(k), 0.4)
        for n in (0, 3, 9):
            ref = laguerre_moments(S.triplet, k, n, 0.4)
            assert out[n] == pytest.approx(ref, rel=1e-10)


def test_vector_input_refused_below_threshold(meixner_system):
    with pytest.raises(ThresholdError):
        semigroup_apply(meixner_system, np.ones(401), 0.2)


def test_heat_kernel_long_time(meixner_system):
    S = meixner_system
    H = heat_kernel(S, 40.0, np.arange(5), np.arange(10))
    np.testing.assert_allclose(H, np.tile(S.weights[:10], (5, 1)), atol=1e-15)


def test_heat_kernel_row_sums():
    T = meixner31(1.0, 1.0)
    t = 1.0
    S = build_spectral_system(T, envelope_K(T, t), 60)
    H = heat_kernel(S, t, np.arange(20))
    np.testing.assert_allclose(H.sum(axis=1), 1.0, atol=1e-8)
    assert tail_bound(S, t) <= 1e-12


def test_subordinated_projector_and_constant():
    T = meixner31(1.0, 1.0)
    beta = 2.0
    S = build_spectral_system(T, 40, 60)
    for k in range(5):
        out = subordinated_apply(S, eigenpolynomial(T, k), 1.0, beta)
        np.testing.assert_allclose(out[:30], math.exp(-phi_beta(T, beta, k)) * S.P_table[k, :30],
                                   rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(subordinated_apply(S, np.ones(61), 1.0, beta), 1.0, atol=1e-12)
    f = np.exp(-np.arange(61.0))
    out = subordinated_apply(S, f, 60.0, beta)
    np.testing.assert_allclose(out, f @ S.weights, rtol=1e-12)


def test_subordinated_threshold():
    S = build_spectral_system(meixner31(1.0, 1.0), 10, 20)
    with pytest.raises(ThresholdError):
        subordinated_apply(S, np.ones(21), 0.4, 1.0)


def test_hypocoercive_constants():
    assert hypocoercive_constant(perturbed32(3.0)) == pytest.approx(math.sqrt(8 / 3), rel=1e-14)
    for m in (0.5, 2.0):
        assert hypocoercive_constant(BernsteinTriplet(m, 1.0)) == pytest.approx(math.sqrt(2))
    assert hypocoercive_constant(meixner31(0.3, 1.0)) >= 1
    with pytest.raises(UnsupportedError):
        hypocoercive_constant(beta33(2.0))


def test_entropy_basics(meixner_system):
    w = meixner_system.weights
    assert entropy(w, np.full(401, 3.0), "square") == pytest.approx(0.0, abs=1e-12)
    assert entropy(w, np.full(401, 3.0), "xlogx") == pytest.approx(0.0, abs=1e-12)
    f = np.exp(-0.1 * np.arange(401.0))
    var = f**2 @ w - (f @ w) ** 2
    assert entropy(w, f, "square") == pytest.approx(var, rel=1e-12)


def test_entropy_decay_bump():
    T = meixner31(1.0, 1.0)
    S = build_spectral_system(T, 60, 60)
    f = 1.0 + np.exp(-0.5 * (np.arange(61) - 2.0) ** 2)
    for Phi in ("square", "xlogx"):
        assert entropy_decay_check(S, f, 2.0, Phi).ok
    rep = entropy_decay_check(S, np.full(61, 2.0), 2.0, "square")
    assert np.all(np.abs(rep.margin) <= 1e-12)


def test_entropy_decay_needs_beta_above_m_phi():
    S = build_spectral_system(meixner31(1.0, 1.0), 20, 30)
    with pytest.raises(UnsupportedError):
        entropy_decay_check(S, np.ones(31), 0.5)


def test_csv_export(tmp_path, meixner_system):
    S = build_spectral_system(meixner31(1.0, 1.0), 3, 5)
    path = S.to_csv(tmp_path / "s.csv")
    assert path.read_text().splitlines()[0] == "k,n,P,V"
