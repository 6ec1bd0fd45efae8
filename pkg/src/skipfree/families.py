"""Three explicit families with closed forms, and a golden-value harness.

* Meixner: phi(u) = s2 u + m (birth-death, self-adjoint).
* Perturbed Laguerre: phi(u) = (u+M+1)(u+M-1)/(u+M), i.e. s2 = 1,
  m = (M^2-1)/M and Pi(dy) = M e^{-My} dy.
* Beta: phi(u) = u / (M (u+M)), i.e. s2 = m = 0 and Pi(dy) = M e^{-My} dy.

Some commonly quoted closed forms disagree with the general machinery.  These
are kept as ``*_alt`` functions; the golden suite asserts the re-derived form
and reports the alternative one alongside.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import numpy as np
from scipy.special import gammaln

from .bernstein import (BernsteinTriplet, ExpDensity, UnsupportedError, ZeroMeasure,
                        bernstein_gamma_table, d_phi, m_phi)
from .generator import Boundary, build_lphi
from .invariant import nphi_series, nphi_solve
from .spectral import build_spectral_system, c_k, hypocoercive_constant, norms_P

GOLDEN_TOL = 1e-8


class Family(str, enum.Enum):
    MEIXNER31 = "Meixner31"
    PERTURBED32 = "Perturbed32"
    BETA33 = "Beta33"


def _nonpos_int(a) -> bool:
    return float(a) <= 0 and float(a) == math.floor(float(a))


def hypergeometric_terminating(upper: Sequence[float], lower: Sequence[float], x: float,
                               dps: int = 50) -> float:
    """pFq(upper; lower; x) for a series cut off by a nonpositive integer upper parameter.

    Summed exactly term by term in mpmath at ``dps`` digits.
    """
    stops = [int(-a) for a in upper if _nonpos_int(a)]
    if not stops:
        raise UnsupportedError("no nonpositive integer upper parameter: series does not terminate")
    R = min(stops)
    for b in lower:
        if _nonpos_int(b) and -float(b) < R:
            raise UnsupportedError(f"lower parameter {b} hits zero before termination")
    with mpmath.workdps(dps):
        term, total = mpmath.mpf(1), mpmath.mpf(1)
        up = [mpmath.mpf(a) for a in upper]
        lo = [mpmath.mpf(b) for b in lower]
        xm = mpmath.mpf(x)
        for r in range(R):
            num = mpmath.fprod(a + r for a in up)
            den = mpmath.fprod(b + r for b in lo) * (r + 1)
            term = term * num / den * xm
            total += term
        return float(total)


def hyp2f1(a, b, c, x) -> float:
    return hypergeometric_terminating([a, b], [c], x)


def hyp3f1(a, b, c, d, x) -> float:
    return hypergeometric_terminating([a, b, c], [d], x)


# -- triplets -------------------------------------------------------------------

def meixner31(sigma2: float = 1.0, m: float = 1.0) -> BernsteinTriplet:
    return BernsteinTriplet(m, sigma2, ZeroMeasure())


def perturbed32(M: float = 3.0) -> BernsteinTriplet:
    if M <= 1:
        raise ValueError("M must be > 1")
    return BernsteinTriplet((M * M - 1) / M, 1.0, ExpDensity(M, M))


def beta33(M: float = 2.0) -> BernsteinTriplet:
    if M <= 1:
        raise ValueError("M must be > 1")
    return BernsteinTriplet(0.0, 0.0, ExpDensity(M, M))


def family_triplet(family, **params) -> BernsteinTriplet:
    family = Family(family)
    return {Family.MEIXNER31: meixner31, Family.PERTURBED32: perturbed32,
            Family.BETA33: beta33}[family](**params)


# -- closed forms ---------------------------------------------------------------

def meixner_invariant(sigma2: float, m: float, N: int) -> np.ndarray:
    """Negative binomial C(n+beta, n) p^n (1-p)^(beta+1), beta = m/s2, p = s2/(1+s2)."""
    beta, p = m / sigma2, sigma2 / (1 + sigma2)
    n = np.arange(N + 1)
    return np.exp(gammaln(n + beta + 1) - gammaln(beta + 1) - gammaln(n + 1)
                  + n * math.log(p) + (beta + 1) * math.log1p(-p))


def meixner_invariant_alt(sigma2: float, m: float, N: int) -> np.ndarray:
    """Gamma(n+beta+1) / (Gamma(beta+1) n!) 2^{-n-beta-1}."""
    beta = m / sigma2
    n = np.arange(N + 1)
    return np.exp(gammaln(n + beta + 1) - gammaln(beta + 1) - gammaln(n + 1)
                  - (n + beta + 1) * math.log(2))


def meixner_P(sigma2: float, m: float, k: int, n: int) -> float:
    return (1 + 1 / sigma2) ** (-k / 2) * hyp2f1(-n, -k, m / sigma2 + 1, -1 / sigma2)


def perturbed_W(M: float, K: int) -> np.ndarray:
    """W(k+1) = prod_{r<=k} (r+M+1)(r+M-1)/(r+M)."""
    k = np.arange(K + 1)
    return np.exp(gammaln(k + M + 2) - gammaln(M + 2) + gammaln(k + M) - gammaln(M)
                  - gammaln(k + M + 1) + gammaln(M + 1))


def perturbed_invariant(M: float, N: int) -> np.ndarray:
    """(n+M+2) Gamma(n+M) / ((M+1) Gamma(M) n!) 2^{-(n+M+1)}.

    A mixture of two negative binomials at p = 1/2 (orders M+1 and M with
    weights M/(M+1) and 1/(M+1)); its factorial moments are W(k+1).
    """
    n = np.arange(N + 1)
    return (n + M + 2) * np.exp(gammaln(n + M) - gammaln(M) - gammaln(n + 1)
                                - (n + M + 1) * math.log(2)) / (M + 1)


def perturbed_invariant_alt(M: float, N: int) -> np.ndarray:
    n = np.arange(N + 1)
    return (n + M + 1) * np.exp(gammaln(n + M) - gammaln(M) - gammaln(n + 1)
                                - (n + M + 1) * math.log(2)) / (M + 1)


def perturbed_P(M: float, k: int, n: int) -> float:
    """2^{-k/2} [((M+1)/M) 2F1(-k,-n;M+1;-1) - (1/M) 2F1(-k,-n;M+2;-1)]."""
    return 2 ** (-k / 2) * ((M + 1) / M * hyp2f1(-k, -n, M + 1, -1)
                            - hyp2f1(-k, -n, M + 2, -1) / M)


def perturbed_P_alt(M: float, k: int, n: int) -> float:
    return 2 ** (-k / 2) * ((M + 1) * hyp2f1(-k, -n, M + 1, -1) - hyp2f1(-k, -n, M + 2, -1))


def beta_W(M: float, K: int) -> np.ndarray:
    """Gamma(M+1) Gamma(k+1) / (M^k Gamma(k+1+M))."""
    k = np.arange(K + 1)
    return np.exp(gammaln(M + 1) + gammaln(k + 1) - k * math.log(M) - gammaln(k + 1 + M))


def beta_invariant(M: float, N: int) -> np.ndarray:
    """Gamma(M+1) / (M^n Gamma(n+M+1)) 1F1(n+1; n+M+1; -1/M)."""
    out = []
    with mpmath.workdps(40):
        for n in range(N + 1):
            v = (mpmath.gamma(M + 1) / (mpmath.mpf(M) ** n * mpmath.gamma(n + M + 1))
                 * mpmath.hyp1f1(n + 1, n + M + 1, -1 / mpmath.mpf(M)))
            out.append(float(v))
    return np.array(out)


def beta_invariant_alt(M: float, N: int) -> np.ndarray:
    out = []
    with mpmath.workdps(40):
        for n in range(N + 1):
            v = (mpmath.gamma(M + 1) / (mpmath.mpf(M) ** n * mpmath.gamma(n + M + 1))
                 * mpmath.hyp1f1(n, n + M, 1 / mpmath.mpf(M)))
            out.append(float(v))
    return np.array(out)


def beta_P(M: float, k: int, n: int) -> float:
    return 2 ** (-k / 2) * hyp3f1(-k, -n, M + 1, 1, -M)


def beta_P_alt(M: float, k: int, n: int) -> float:
    return 2 ** (k / 2) * hyp3f1(-k, -n, M + 1, 1, -M)


# -- golden suite -----------------------------------------------------------------

@dataclass
class GoldenReport:
    family: str
    params: dict
    residuals: dict = field(default_factory=dict)
    alt: dict = field(default_factory=dict)
    tol: float = GOLDEN_TOL

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.residuals.values())

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.params, "tol": self.tol,
                "passed": self.passed, "residuals": self.residuals,
                "alt_form_residuals": self.alt}

    def to_json(self, path=None) -> str:
        s = json.dumps(self.to_dict(), indent=2, default=float)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s


def _rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def _scaled(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))


def _sup(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float))))


def golden_suite(family, params: dict | None = None, N: int = 200,
                 kmax: int = 12) -> GoldenReport:
    """Closed forms of a family against the generic machinery."""
    family = Family(family)
    params = dict(params or {})
    T = family_triplet(family, **params)
    rep = GoldenReport(family.value, params)
    W = bernstein_gamma_table(T, kmax).values
    law = nphi_solve(build_lphi(T, N, Boundary.REFLECTING))
    grid = [(k, n) for k in range(kmax + 1) for n in range(kmax + 1)]

    def p_generic(k, n):
        from .spectral import eigenfunction_P
        return eigenfunction_P(T, k, n)

    if family == Family.MEIXNER31:
        s2, m = T.sigma2, T.m
        beta = m / s2
        rep.residuals["invariant_vs_negative_binomial"] = _sup(
            law.weights, meixner_invariant(s2, m, N))
        rep.alt["invariant_alt"] = _sup(law.weights,
                                                meixner_invariant_alt(s2, m, N))
        rep.residuals["eigenfunction_2F1"] = max(
            _scaled(p_generic(k, n), meixner_P(s2, m, k, n)) for k, n in grid)
        S = build_spectral_system(T, kmax, N)
        rep.residuals["norm_identity"] = _rel(norms_P(S) ** 2,
                                              1 / c_k(beta, np.arange(kmax + 1)))
    elif family == Family.PERTURBED32:
        M = params.get("M", 3.0)
        rep.residuals["W_table"] = _rel(W, perturbed_W(M, kmax))
        rep.residuals["invariant_mixture"] = _sup(law.weights, perturbed_invariant(M, N))
        rep.alt["invariant_alt"] = _sup(law.weights,
                                                perturbed_invariant_alt(M, N))
        rep.residuals["eigenfunction_2F1"] = max(
            _scaled(p_generic(k, n), perturbed_P(M, k, n)) for k, n in grid)
        rep.alt["eigenfunction_alt"] = max(
            _scaled(p_generic(k, n), perturbed_P_alt(M, k, n)) for k, n in grid)
        d = d_phi(T)
        rep.residuals["d_phi"] = abs(float(d) - (M - 1))
        rep.residuals["m_phi"] = abs(m_phi(T) - M)
        rep.residuals["hypocoercive_constant"] = abs(
            hypocoercive_constant(T) - math.sqrt(2 * (M + 1) / M))
    else:
        M = params.get("M", 2.0)
        rep.residuals["W_table"] = _rel(W, beta_W(M, kmax))
        series = nphi_series(T, N)
        closed = beta_invariant(M, min(N, 60))
        rep.residuals["invariant_series_vs_1F1"] = _sup(series.weights[: len(closed)], closed)
        rep.residuals["invariant_solve_vs_series"] = _sup(law.weights, series.weights)
        rep.alt["invariant_alt"] = _sup(series.weights[: len(closed)],
                                                beta_invariant_alt(M, len(closed) - 1))
        rep.residuals["eigenfunction_3F1"] = max(
            _scaled(p_generic(k, n), beta_P(M, k, n)) for k, n in grid)
        rep.alt["eigenfunction_alt"] = max(
            _scaled(p_generic(k, n), beta_P_alt(M, k, n)) for k, n in grid)
    return rep
