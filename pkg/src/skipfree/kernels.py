"""Discrete dilation, Poissonization and the factorial polynomial basis.

Polynomials on the lattice are carried in the falling-factorial basis
``p_k(n) = n (n-1) ... (n-k+1)``.  The dilation, Poissonization and
intertwining kernels all act diagonally (or monomially) there, so no
high-degree monomial conversion is needed on the numerical paths.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .bernstein import BernsteinTriplet, bernstein_gamma_table, sigma1

STIRLING_DEGREE_CAP = 60
POISSON_TAIL_REL = 1e-14


class UnsupportedDegreeError(ValueError):
    pass


class TruncationError(RuntimeError):
    pass


def falling_factorial(n, k: int):
    """p_k(n) = Gamma(n+1) / Gamma(n+1-k); zero for integer n < k."""
    n = np.asarray(n, dtype=float)
    out = np.ones_like(n)
    for j in range(k):
        out = out * (n - j)
    out = np.where((n == np.floor(n)) & (n < k) & (n >= 0), 0.0, out)
    return out if out.ndim else float(out)


def log_falling_factorial(n: np.ndarray, k: int) -> np.ndarray:
    """log p_k(n) for integer n >= k (-inf where n < k)."""
    n = np.asarray(n, dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.where(n >= k, gammaln(n + 1) - gammaln(np.maximum(n + 1 - k, 1)),
                       -np.inf)
    return out


# -- dilation -----------------------------------------------------------------

def dilation_matrix(N: int, alpha: float) -> np.ndarray:
    """Matrix of D_alpha on [0..N]: D[n, r] = C(n,r) alpha^r (1-alpha)^(n-r)."""
    if alpha <= 0:
        if alpha == 0:
            D = np.zeros((N + 1, N + 1))
            D[:, 0] = 1.0
            return D
        raise ValueError("alpha must be >= 0")
    if alpha == 1:
        return np.eye(N + 1)
    n = np.arange(N + 1)[:, None]
    r = np.arange(N + 1)[None, :]
    beta = 1.0 - alpha
    mask = r <= n
    nn, rr = np.broadcast_arrays(n, r)
    logc = np.where(mask, gammaln(nn + 1) - gammaln(rr + 1)
                    - gammaln(np.maximum(nn - rr, 0) + 1), -np.inf)
    logw = logc + rr * math.log(alpha) + (nn - rr) * math.log(abs(beta))
    sign = np.where(beta < 0, (-1.0) ** (nn - rr), 1.0)
    with np.errstate(under="ignore"):
        return np.where(mask, sign * np.exp(logw), 0.0)


def dilation_apply(f: Sequence[float], alpha: float) -> np.ndarray:
    """Binomial transform (D_alpha f)(n) = sum_r C(n,r) a^r (1-a)^(n-r) f(r)."""
    f = np.asarray(f, dtype=float)
    if alpha > 1:
        warnings.warn(
            f"D_alpha with alpha={alpha} > 1 is not a Markov kernel; "
            f"output may grow like |2 alpha - 1|^n", RuntimeWarning, stacklevel=2)
    return dilation_matrix(len(f) - 1, alpha) @ f


# -- Poissonization -------------------------------------------------------------

def poisson_truncation(x: float, rel: float = POISSON_TAIL_REL) -> int:
    """Smallest M with the Chernoff bound on P(Pois(x) > M) below ``rel``."""
    if x == 0:
        return 0
    M = max(int(math.ceil(x)) + 1, 1)
    while True:
        a = M + 1
        # P(X >= a) <= exp(-x) (e x / a)^a for a > x
        log_tail = -x + a * (1 + math.log(x) - math.log(a))
        if log_tail < math.log(rel):
            return M
        M += max(1, int(math.sqrt(x)))


def poisson_weights(x: float, M: int) -> np.ndarray:
    n = np.arange(M + 1)
    if x == 0:
        w = np.zeros(M + 1)
        w[0] = 1.0
        return w
    return np.exp(-x + n * math.log(x) - gammaln(n + 1))


def poissonize(f, x: float, rel: float = POISSON_TAIL_REL) -> float:
    """Lambda f(x) = E[f(Pois(x))].

    ``f`` is a :class:`FactorialPoly` (exact: Lambda p_k(x) = x^k) or a vector
    of lattice values, in which case the Poisson series starts at the Chernoff
    cut-off for ``rel`` and is widened until its last terms fall below ``rel``
    times the sum; a vector too short for that is an error rather than a
    silent truncation.
    """
    if x < 0:
        raise ValueError("x must be >= 0")
    if isinstance(f, FactorialPoly):
        return float(sum(float(c) * x**k for k, c in enumerate(f.coeffs)))
    f = np.asarray(f, dtype=float)
    M = min(poisson_truncation(x, rel), len(f) - 1)
    # f may grow, so widen until the last terms are negligible against the sum
    while True:
        terms = poisson_weights(x, M) * f[: M + 1]
        total = math.fsum(terms)
        if M >= x and np.max(np.abs(terms[-5:])) <= rel * abs(total):
            return total
        if M == len(f) - 1:
            if not np.any(terms[-5:]) and M >= x:
                return total
            raise TruncationError(
                f"vector of length {len(f)} too short for Pois({x})")
        M = min(len(f) - 1, int(M * 1.5) + 10)


# -- Stirling numbers and the factorial basis ---------------------------------------

@lru_cache(maxsize=None)
def stirling2_table(K: int) -> tuple:
    """Rows S(k, 0..k) of Stirling numbers of the second kind, exact ints."""
    rows = [[1]]
    for k in range(1, K + 1):
        prev = rows[-1] + [0]
        row = [0] * (k + 1)
        for j in range(1, k + 1):
            row[j] = j * prev[j] + prev[j - 1]
        rows.append(row)
    return tuple(tuple(r) for r in rows)


@lru_cache(maxsize=None)
def stirling1_table(K: int) -> tuple:
    """Rows s(k, 0..k) of signed Stirling numbers of the first kind."""
    rows = [[1]]
    for k in range(1, K + 1):
        prev = rows[-1] + [0]
        row = [0] * (k + 1)
        for j in range(1, k + 1):
            row[j] = prev[j - 1] - (k - 1) * prev[j]
        rows.append(row)
    return tuple(tuple(r) for r in rows)


def _check_degree(deg: int):
    if deg > STIRLING_DEGREE_CAP:
        raise UnsupportedDegreeError(
            f"degree {deg} exceeds the exact Stirling cap {STIRLING_DEGREE_CAP}")


@dataclass(frozen=True)
class FactorialPoly:
    """f = sum_k coeffs[k] p_k."""

    coeffs: tuple

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(self.coeffs))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        out = np.zeros_like(n)
        for k, c in enumerate(self.coeffs):
            if c:
                out = out + float(c) * falling_factorial(n, k)
        return out if out.ndim else float(out)

    @classmethod
    def basis(cls, k: int) -> "FactorialPoly":
        return cls((0,) * k + (1,))

    @classmethod
    def from_monomial(cls, coeffs: Sequence) -> "FactorialPoly":
        return cls(monomial_to_factorial(coeffs))

    def to_monomial(self) -> tuple:
        return factorial_to_monomial(self.coeffs)


def monomial_to_factorial(coeffs: Sequence) -> tuple:
    """sum_k a_k n^k  ->  sum_j c_j p_j(n) via n^k = sum_j S(k,j) p_j(n)."""
    K = len(coeffs) - 1
    _check_degree(K)
    S = stirling2_table(K)
    out = [0] * (K + 1)
    for k, a in enumerate(coeffs):
        for j in range(k + 1):
            out[j] += a * S[k][j]
    return tuple(out)


def factorial_to_monomial(coeffs: Sequence) -> tuple:
    """sum_k c_k p_k(n)  ->  sum_j a_j n^j via p_k(n) = sum_j s(k,j) n^j."""
    K = len(coeffs) - 1
    _check_degree(K)
    s = stirling1_table(K)
    out = [0] * (K + 1)
    for k, c in enumerate(coeffs):
        for j in range(k + 1):
            out[j] += c * s[k][j]
    return tuple(out)


def stirling_convert(coeffs: Sequence, to: str = "factorial") -> tuple:
    if to == "factorial":
        return monomial_to_factorial(coeffs)
    if to == "monomial":
        return factorial_to_monomial(coeffs)
    raise ValueError("to must be 'factorial' or 'monomial'")


# -- intertwining kernel ------------------------------------------------------

def iphi_factors(triplet: BernsteinTriplet, K: int) -> np.ndarray:
    """sigma1^k k! / W(k+1) for k = 0..K."""
    W = bernstein_gamma_table(triplet, K)
    k = np.arange(K + 1)
    return np.exp(k * math.log(sigma1(triplet)) + gammaln(k + 1) - W.log_values)


def iphi_apply_poly(triplet: BernsteinTriplet, f: FactorialPoly) -> FactorialPoly:
    """Diagonal action of the intertwining kernel on the factorial basis."""
    fac = iphi_factors(triplet, f.degree)
    return FactorialPoly(tuple(float(c) * fac[k] for k, c in enumerate(f.coeffs)))
