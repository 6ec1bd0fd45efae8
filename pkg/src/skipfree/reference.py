"""Brute-force oracles: uniformization and adaptive quadrature.

Nothing here uses the closed forms of the other modules; these routines only
see a rate matrix or an integrand, so they can certify the analytic paths.
"""
from __future__ import annotations

import logging
import math
import warnings

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .bernstein import IntegrationError
from .generator import SkipFreeGenerator

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
TERM_BUDGET = 200_000


class BudgetError(RuntimeError):
    pass


def _poisson_window(lt: float, tol: float) -> tuple[int, np.ndarray]:
    """Number of terms J and Poisson(lt) weights w_0..w_J with tail <= tol."""
    if lt == 0:
        return 0, np.ones(1)
    # grow J until the remaining mass is below tol (mass computed in log space)
    J = int(lt + 10 * math.sqrt(lt) + 20)
    while True:
        j = np.arange(J + 1)
        w = np.exp(-lt + j * math.log(lt) - gammaln(j + 1))
        tail = 1.0 - math.fsum(w)
        last = w[-1] * lt / (J + 1 - lt) if J + 1 > lt else 1.0
        if max(tail, last) <= tol:
            return J, w
        J = int(J * 1.25) + 10
        if J > 10 * TERM_BUDGET:
            raise BudgetError("Poisson window did not close")


def _rate(g: SkipFreeGenerator, rate: float | None) -> float:
    lam = g.max_exit_rate if rate is None else rate
    return max(lam, 1e-300)


def uniformization_apply(g: SkipFreeGenerator, f: np.ndarray, t: float,
                         tol: float = DEFAULT_TOL, budget: int = TERM_BUDGET,
                         ) -> np.ndarray:
    """exp(t A) f for column vectors f (shape (N+1,) or (N+1, k))."""
    if t < 0:
        raise ValueError("t must be >= 0")
    f = np.asarray(f, dtype=float)
    if t == 0:
        return f.copy()
    lam = _rate(g, None)
    J, w = _poisson_window(lam * t, tol)
    if J > budget:
        raise BudgetError(f"uniformization needs {J} terms > budget {budget}")
    P = g.dense() / lam + np.eye(g.N + 1)
    v = f.copy()
    acc = w[0] * v
    for j in range(1, J + 1):
        v = P @ v
        acc += w[j] * v
    return acc


def uniformization_expm(g: SkipFreeGenerator, t: float, tol: float = DEFAULT_TOL,
                        rows=None, budget: int = TERM_BUDGET) -> np.ndarray:
    """Transition matrix exp(t A) restricted to ``rows`` (default all).

    Computed as the Poisson mixture sum_j e^{-lt}(lt)^j/j! P^j with
    P = I + A/l and l the largest exit rate.  Negative entries within ``tol``
    are clamped with a warning.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    rows = np.arange(g.N + 1) if rows is None else np.asarray(rows)
    E = np.zeros((len(rows), g.N + 1))
    E[np.arange(len(rows)), rows] = 1.0
    if t == 0:
        return E
    lam = _rate(g, None)
    J, w = _poisson_window(lam * t, tol)
    if J > budget:
        raise BudgetError(f"uniformization needs {J} terms > budget {budget}")
    P = g.dense() / lam + np.eye(g.N + 1)
    v = E
    acc = w[0] * v
    for j in range(1, J + 1):
        v = v @ P
        acc += w[j] * v
    lo = acc.min()
    if lo < -tol:
        logger.warning("uniformization produced %.2e < -tol", lo)
    if lo < 0 or acc.max() > 1:
        if lo < -tol or acc.max() > 1 + tol:
            warnings.warn("probabilities outside [-tol, 1+tol] clamped", RuntimeWarning)
        acc = np.clip(acc, 0.0, 1.0)
    return acc


def leaked_mass(P: np.ndarray) -> np.ndarray:
    return 1.0 - P.sum(axis=1)


def quadrature(func, a: float = 0.0, b: float = math.inf, epsabs: float = 1e-12,
               epsrel: float = 1e-10, limit: int = 500) -> tuple[float, float]:
    """Adaptive Gauss-Kronrod integral of ``func`` over [a, b] with error estimate.

    Semi-infinite ranges go through QUADPACK's interval transformation.
    Raises :class:`IntegrationError` when the subdivision limit is exhausted.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(func, a, b, epsabs=epsabs, epsrel=epsrel,
                                      limit=limit)
        except integrate.IntegrationWarning as exc:
            raise IntegrationError(str(exc)) from exc
    return val, err
