import json
import math

import numpy as np
import pytest

from skipfree.bernstein import BernsteinTriplet, UnsupportedError
from skipfree.families import beta33, meixner31, meixner_invariant
from skipfree.generator import ChainKind
from skipfree.invariant import nphi_series
from skipfree.simulate import (RateTable, StateCapError, _alias, gillespie,
                               gof_chi2, laguerre_equilibration_test, make_rng,
                               mc_moment_check, paths_to_csv, sample_tau_beta,
                               selfsimilarity_mc_test, simulate_endpoints,
                               simulate_paths, tau_laplace, two_sample_chi2)


def test_zero_horizon(linear):
    p = gillespie(linear, ChainKind.SELF_SIMILAR, 4, 0.0, seed=1)
    assert p.endpoint == 4 and len(p.jump_times) == 0
    b = simulate_endpoints(linear, ChainKind.LAGUERRE, 4, 0.0, 100, seed=1)
    assert np.all(b.states == 4) and b.jumps == 0


def test_paths_are_valid_and_reproducible(perturbed):
    a = simulate_paths(perturbed, ChainKind.SELF_SIMILAR, 2, 3.0, 20, seed=9)
    b = simulate_paths(perturbed, ChainKind.SELF_SIMILAR, 2, 3.0, 20, seed=9)
    for p, q in zip(a, b):
        assert p.is_valid() and p.is_skip_free()
        np.testing.assert_array_equal(p.states, q.states)
        np.testing.assert_array_equal(p.jump_times, q.jump_times)


def test_batch_reproducible(linear):
    a = simulate_endpoints(linear, ChainKind.SELF_SIMILAR, 5, 1.0, 40_000, seed=3)
    b = simulate_endpoints(linear, ChainKind.SELF_SIMILAR, 5, 1.0, 40_000, seed=3)
    np.testing.assert_array_equal(a.states, b.states)
    assert a.non_skip_free == 0


def test_linear_mean(linear):
    rep = mc_moment_check(linear, ChainKind.SELF_SIMILAR, 5, 1.0, 100_000, seed=11, kmax=1)
    assert rep.passed
    assert rep.details["exact"][1] == pytest.approx(6.0)


def test_laguerre_mean_relaxes(linear):
    rep = mc_moment_check(linear, ChainKind.LAGUERRE, 6, 4.0, 50_000, seed=5, kmax=2)
    assert rep.passed
    assert abs(rep.details["exact"][1] - 1.0) < 0.2


def test_alias_sampler_distribution():
    p = np.array([0.1, 0.0, 0.6, 0.3])
    prob, alias = _alias(p)
    rng = make_rng(0, 0, 0)
    n = 200_000
    i = rng.integers(0, len(p), n)
    u = rng.random(n)
    draw = np.where(u < prob[i], i, alias[i])
    freq = np.bincount(draw, minlength=4) / n
    np.testing.assert_allclose(freq, p, atol=4e-3)
    assert freq[1] == 0


def test_state_cap(linear):
    with pytest.raises(StateCapError) as exc:
        gillespie(linear, ChainKind.SELF_SIMILAR, 50, 100.0, seed=0,
                  table=RateTable(linear, ChainKind.SELF_SIMILAR, state_cap=100))
    assert exc.value.partial is not None


def test_selfsimilarity_mc_and_fault(linear):
    ok = selfsimilarity_mc_test(linear, 5, 1.0, 0.5, 100_000, seed=2)
    assert ok.passed
    bad = selfsimilarity_mc_test(linear, 5, 1.0, 0.5, 100_000, seed=2, up_factor=1.1)
    assert not bad.passed
    d = json.loads(ok.to_json())
    assert d["seed"] == 2 and d["replicas"] == 100_000


def test_alpha_one_identical(linear):
    rep = selfsimilarity_mc_test(linear, 3, 0.8, 1.0, 20_000, seed=4)
    assert rep.p_value > 0.01


def test_equilibration_meixner():
    T = meixner31(1.0, 1.0)
    rep = laguerre_equilibration_test(T, 3, 15.0, 100_000, seed=8,
                                      target=meixner_invariant(1.0, 1.0, 200))
    assert rep.passed
    neg = laguerre_equilibration_test(T, 3, 0.0, 20_000, seed=8,
                                      target=meixner_invariant(1.0, 1.0, 200))
    assert not neg.passed


def test_equilibration_beta_family_series_target():
    T = beta33(2.0)
    rep = laguerre_equilibration_test(T, 0, 15.0, 100_000, seed=12, target=nphi_series(T, 200))
    assert rep.passed


def test_two_sample_and_gof_statistics():
    rng = np.random.default_rng(0)
    a = rng.poisson(3.0, 20_000)
    b = rng.poisson(3.0, 20_000)
    assert two_sample_chi2(a, b)[1] > 0.01
    assert two_sample_chi2(a, rng.poisson(3.3, 20_000))[1] < 1e-6
    from scipy.stats import poisson
    w = poisson.pmf(np.arange(60), 3.0)
    assert gof_chi2(a, w)[1] > 0.01


def test_tau_support_and_laplace():
    T = BernsteinTriplet(1.0, 1.0)
    tau = sample_tau_beta(T, 2.0, seed=1, size=400_000)
    assert tau.min() >= math.log(2)
    for u in (0.5, 1.0, 2.0):
        e = np.exp(-u * tau)
        z = (e.mean() - tau_laplace(T, 2.0, u)) / (e.std(ddof=1) / math.sqrt(len(e)))
        assert abs(z) <= 3
    assert tau_laplace(T, 2.0, 1.0) == pytest.approx(1 / (2 * 3))


def test_tau_median_grows_with_beta():
    T = BernsteinTriplet(1.0, 1.0)
    med = [np.median(sample_tau_beta(T, b, seed=3, size=50_000)) for b in (0.5, 1, 4, 16)]
    assert np.all(np.diff(med) > 0)


def test_tau_needs_diffusion():
    with pytest.raises(UnsupportedError):
        sample_tau_beta(beta33(2.0), 1.0, seed=0, size=10)


def test_paths_csv(tmp_path, linear):
    paths = simulate_paths(linear, ChainKind.SELF_SIMILAR, 1, 1.0, 3, seed=0)
    out = paths_to_csv(paths, tmp_path / "p.csv")
    header = out.read_text().splitlines()[0]
    assert "seed" in header and "state" in header
