"""Closed-form factorial moments and the moment-level identity checks.

Every moment here is a finite sum of nonnegative terms (Bernstein-gamma
ratios are positive), so plain double arithmetic is accurate to a few ulps;
the checks compare two such sums built along different routes.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .bernstein import BernsteinTriplet, bernstein_gamma_table
from .kernels import log_falling_factorial, poisson_truncation, stirling2_table


def _log_ratio(triplet: BernsteinTriplet, k: int) -> np.ndarray:
    """log[C(k,l) W(k+1)/W(l+1)] for l = 0..k."""
    W = bernstein_gamma_table(triplet, k).log_values
    l = np.arange(k + 1)
    return gammaln(k + 1) - gammaln(l + 1) - gammaln(k - l + 1) + W[k] - W[l]


def _combine(log_coef: np.ndarray, log_x: np.ndarray) -> float:
    tot = log_coef + log_x
    tot = tot[np.isfinite(tot)]
    if tot.size == 0:
        return 0.0
    top = tot.max()
    return float(math.exp(top) * math.fsum(np.exp(tot - top)))


def ssm_moments(triplet: BernsteinTriplet, k: int, n: int, t: float) -> float:
    """E[p_k(X(t, n))] = sum_l C(k,l) W(k+1)/W(l+1) p_l(n) t^{k-l}."""
    if k < 0 or n < 0 or t < 0:
        raise ValueError("k, n, t must be >= 0")
    l = np.arange(k + 1)
    return _combine(_log_ratio(triplet, k), _logp(n, k) + _log_pow(t, k - l))


def _log_pow(x: float, e: np.ndarray) -> np.ndarray:
    """log(x^e) with 0^0 = 1."""
    e = np.asarray(e, dtype=float)
    if x > 0:
        return e * math.log(x)
    return np.where(e == 0, 0.0, -np.inf)


def _logp(n, k: int) -> np.ndarray:
    """log p_l(n) for l = 0..k."""
    return np.array([log_falling_factorial(float(n), l) for l in range(k + 1)], dtype=float)


def continuous_moments(triplet: BernsteinTriplet, k: int, x: float, t: float) -> float:
    """E[X(t, x)^k] = sum_l C(k,l) W(k+1)/W(l+1) x^l t^{k-l}."""
    if k < 0 or x < 0 or t < 0:
        raise ValueError("k, x, t must be >= 0")
    l = np.arange(k + 1)
    return _combine(_log_ratio(triplet, k), _log_pow(x, l) + _log_pow(t, k - l))


def laguerre_moments(triplet: BernsteinTriplet, k: int, n: int, t: float) -> float:
    """E[p_k] of the Laguerre chain at time t (t = inf gives W(k+1))."""
    if k < 0 or n < 0 or t < 0:
        raise ValueError("k, n, t must be >= 0")
    if math.isinf(t):
        return float(math.exp(bernstein_gamma_table(triplet, k).log(k)))
    l = np.arange(k + 1)
    return _combine(_log_ratio(triplet, k),
                    _logp(n, k) - t * l + _log_pow(-math.expm1(-t), k - l))


def raw_moment_ssm(triplet: BernsteinTriplet, k: int, n: int, t: float) -> float:
    """E[X(t, n)^k] = sum_j S(k, j) E[p_j(X(t, n))]."""
    S = stirling2_table(k)[k]
    return math.fsum(S[j] * ssm_moments(triplet, j, n, t) for j in range(k + 1) if S[j])


def selfsimilarity_identity(triplet: BernsteinTriplet, k: int, n: int, t: float,
                            alpha: float) -> tuple[float, float]:
    """Both sides of the dilation identity on p_k.

    lhs = alpha^k E[p_k(X(t,n))]; rhs = sum_r C(n,r) a^r (1-a)^(n-r) E[p_k(X(a t, r))].
    """
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must be in [0, 1]")
    lhs = alpha**k * ssm_moments(triplet, k, n, t)
    if alpha in (0.0, 1.0):
        r = n if alpha == 1 else 0
        return lhs, ssm_moments(triplet, k, r, alpha * t)
    r = np.arange(n + 1)
    lw = (gammaln(n + 1) - gammaln(r + 1) - gammaln(n - r + 1)
          + r * math.log(alpha) + (n - r) * math.log1p(-alpha))
    vals = np.array([ssm_moments(triplet, k, int(j), alpha * t) for j in r])
    rhs = math.fsum(np.exp(lw) * vals)
    return lhs, rhs


def gateway_moment_identity(triplet: BernsteinTriplet, k: int, x: float, t: float,
                            rel: float = 1e-16) -> tuple[float, float]:
    """lhs = E over Pois(x) start of E[p_k(X(t, .))]; rhs = E[X(t, x)^k]."""
    rhs = continuous_moments(triplet, k, x, t)
    if x == 0:
        return ssm_moments(triplet, k, 0, t), rhs
    M = poisson_truncation(x)
    # the integrand grows like n^k, so widen past the probability tail
    while True:
        n = np.arange(M + 1)
        lw = -x + n * math.log(x) - gammaln(n + 1)
        vals = np.array([ssm_moments(triplet, k, int(j), t) for j in n])
        terms = np.exp(lw) * vals
        total = math.fsum(terms)
        if M > x and terms[-1] <= rel * total:
            return total, rhs
        M = int(M * 1.5) + 10


def scaling_limit_check(triplet: BernsteinTriplet, k: int, x: float, t: float,
                        n_grid: Sequence[int] = (10, 100, 1000, 10000)) -> np.ndarray:
    """|n^{-k} E[X(n t, floor(n x))^k] - E[X(t, x)^k]| for each n in the grid."""
    if k < 1 or x <= 0:
        raise ValueError("scaling check needs k >= 1 and x > 0")
    target = continuous_moments(triplet, k, x, t)
    gaps = []
    for n in n_grid:
        start = int(math.floor(n * x))
        m = raw_moment_ssm(triplet, k, start, n * t)
        gaps.append(abs(m / float(n) ** k - target))
    return np.array(gaps)


def moment_monotone_in_t(triplet: BernsteinTriplet, k: int, n: int,
                         t_grid: Sequence[float]) -> bool:
    vals = [ssm_moments(triplet, k, n, t) for t in sorted(t_grid)]
    return all(b >= a for a, b in zip(vals, vals[1:]))
