"""Invariant law of the skip-free Laguerre chain by two independent routes.

* ``nphi_solve`` -- stationarity of the truncated reflecting generator.  The
  chain is upward skip-free, so the balance of probability flux across each
  cut {0..j-1} | {j..N} gives an all-positive backward recurrence

      pi(j-1) L(j-1, j) = sum_{n >= j} pi(n) sum_{l < j} L(n, l),

  evaluated in log space (weights for N ~ 600 underflow double precision).
* ``nphi_series`` -- the alternating series over Bernstein-gamma values,
  valid for sigma2 < 1.  The series cancels catastrophically as n grows, so
  every entry whose double-precision condition number is too large is
  re-evaluated in mpmath at a working precision chosen from the observed
  cancellation.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import mpmath
import numpy as np
from scipy.special import gammaln, logsumexp

from .bernstein import (BernsteinTriplet, UnsupportedError, bernstein_gamma_table,
                        phi_eval, phi_mp)
from .generator import (Boundary, ChainKind, SkipFreeGenerator, build_lphi,
                        generator_row_mp)
from .kernels import log_falling_factorial

logger = logging.getLogger(__name__)

SOLVE_RESIDUAL_MAX = 1e-8
TAIL_TARGET = 1e-12
SERIES_COND_MAX = 1e6


class Method(str, enum.Enum):
    SERIES = "series"
    STATIONARY_SOLVE = "solve"
    CLOSED_FORM = "closed_form"


class NonConvergenceError(RuntimeError):
    pass


class SolveError(RuntimeError):
    pass


@dataclass
class InvariantLaw:
    log_weights: np.ndarray
    method: Method
    tail_mass_bound: float
    hp_weights: list | None = field(default=None, repr=False)
    certificates: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        with np.errstate(under="ignore"):
            return np.exp(self.log_weights)

    @property
    def N(self) -> int:
        return len(self.log_weights) - 1

    def check(self, tol: float = 1e-10) -> dict:
        total = float(np.sum(self.weights))
        return {
            "positive": bool(np.all(np.isfinite(self.log_weights))),
            "mass": total,
            "mass_ok": total + self.tail_mass_bound >= 1 - tol and total <= 1 + tol,
        }

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "weight", "log_weight"])
            for n, lw in enumerate(self.log_weights):
                w.writerow([n, f"{math.exp(lw):.17g}", f"{lw:.17g}"])
        meta = {"method": self.method.value, "N": self.N,
                "tail_mass_bound": self.tail_mass_bound,
                "certificates": self.certificates, **self.check()}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, default=float))
        return path


def _geometric_tail(log_w: np.ndarray, window: int = 10) -> float:
    """Tail mass beyond N from the geometric ratio of the last ``window`` weights."""
    if len(log_w) < 2:
        return math.inf
    tail = log_w[-min(window, len(log_w)):]
    ratios = np.diff(tail)
    if ratios.size == 0:
        return math.inf
    lr = float(np.max(ratios))
    if lr >= 0:
        return math.inf
    return math.exp(log_w[-1] + lr - math.log1p(-math.exp(lr)))


# -- stationary solve -------------------------------------------------------------

def nphi_solve(lphi: SkipFreeGenerator) -> InvariantLaw:
    """Stationary law of a truncated reflecting Laguerre generator."""
    if lphi.kind != ChainKind.LAGUERRE or lphi.boundary != Boundary.REFLECTING:
        raise ValueError("nphi_solve needs a Laguerre generator with reflecting boundary")
    N = lphi.N
    A = lphi.dense()
    # down[n, j] = sum_{l<j} A(n, l): rate from n into {0..j-1}
    down = np.cumsum(A, axis=1)
    up = np.array([A[j, j + 1] for j in range(N)])
    if np.any(up <= 0):
        raise SolveError("zero up-rate: truncated chain is reducible")
    log_pi = np.full(N + 1, -np.inf)
    log_pi[N] = 0.0
    with np.errstate(divide="ignore"):
        for j in range(N, 0, -1):
            flux = down[j:, j - 1]
            log_pi[j - 1] = logsumexp(log_pi[j:], b=flux) - math.log(up[j - 1])
    log_pi -= logsumexp(log_pi)
    law = InvariantLaw(log_pi, Method.STATIONARY_SOLVE, _geometric_tail(log_pi))
    resid = stationarity_residual(lphi, law)
    law.certificates["stationarity_residual"] = resid
    if resid > SOLVE_RESIDUAL_MAX:
        raise SolveError(f"stationarity residual {resid:.2e} > {SOLVE_RESIDUAL_MAX}")
    return law


def stationarity_residual(lphi: SkipFreeGenerator, law: InvariantLaw) -> float:
    """max_l |(pi L)(l)|."""
    return float(np.max(np.abs(lphi.rmatvec(law.weights))))


def auto_truncation(triplet: BernsteinTriplet, target: float = TAIL_TARGET,
                    start: int = 32, cap: int = 4000) -> int:
    """Smallest doubling N whose geometric tail estimate is below ``target``."""
    N = start
    while N <= cap:
        law = nphi_solve(build_lphi(triplet, N, Boundary.REFLECTING))
        if law.tail_mass_bound < target:
            return N
        N *= 2
    raise NonConvergenceError(f"tail estimate still above {target} at N={cap}")


def nphi_solve_hp(triplet: BernsteinTriplet, N: int, dps: int = 60) -> InvariantLaw:
    """The cut recurrence in mpmath arithmetic on a reflecting truncation of size N.

    Used where weights are needed to many more digits than double precision
    carries (co-eigenfunction sums); the truncation error is of the order of
    the tail mass beyond N relative to each weight.
    """
    with mpmath.workdps(dps):
        rows = [generator_row_mp(triplet, n, ChainKind.LAGUERRE) for n in range(N + 1)]
        up = [rows[j][j + 1] for j in range(N)]
        # cumulative down-rates, cum[n][j] = sum_{l<j} rows[n][l]
        pi = [mpmath.mpf(0)] * (N + 1)
        pi[N] = mpmath.mpf(1)
        cums = []
        for n in range(N + 1):
            c, acc = [], mpmath.mpf(0)
            for v in rows[n][: n + 1]:
                acc += v
                c.append(acc)
            cums.append(c)
        for j in range(N, 0, -1):
            flux = mpmath.fsum(pi[n] * cums[n][j - 1] for n in range(j, N + 1))
            pi[j - 1] = flux / up[j - 1]
            if pi[j - 1] > mpmath.mpf(10) ** 100:
                scale = pi[j - 1]
                pi = [p / scale for p in pi]
        total = mpmath.fsum(pi)
        pi = [p / total for p in pi]
        log_pi = np.array([float(mpmath.log(p)) for p in pi])
    return InvariantLaw(log_pi, Method.STATIONARY_SOLVE, _geometric_tail(log_pi),
                        hp_weights=pi)


# -- alternating series -----------------------------------------------------------

class _MpPhiCache:
    def __init__(self, triplet: BernsteinTriplet):
        self.triplet = triplet
        self.dps = None
        self.phi = []

    def get(self, k: int):
        if self.dps != mpmath.mp.dps:
            self.dps, self.phi = mpmath.mp.dps, [mpmath.mpf(0)]
        while len(self.phi) <= k:
            self.phi.append(phi_mp(self.triplet, len(self.phi)))
        return self.phi[k]


def _series_mp(cache: _MpPhiCache, n: int, rel: float, max_terms: int):
    """Return (sum, max |term|) of the alternating series at the current precision."""
    W = mpmath.mpf(1)
    for r in range(1, n + 1):
        W *= cache.get(r)
    t = W / mpmath.factorial(n)
    s, big = t, abs(t)
    for r in range(max_terms):
        t = -t * cache.get(n + r + 1) / (r + 1)
        s += t
        at = abs(t)
        if at > big:
            big = at
        ratio = cache.get(n + r + 2) / (r + 2)
        if ratio < 1 and at <= rel * abs(s):
            return s, big
    raise NonConvergenceError(f"series for n={n} did not converge in {max_terms} terms")


def _series_double(logW: np.ndarray, phis: np.ndarray, n: int, max_terms: int):
    """Return (log sum, condition number) of the alternating series in double.

    Terms are carried as sign and log-magnitude; magnitudes are rescaled by
    the largest one before the compensated sum so nothing underflows.
    """
    r = np.arange(max_terms)
    if n + max_terms >= len(logW):
        raise NonConvergenceError("Bernstein-gamma table too short")
    logt = logW[n + r] - gammaln(n + 1) - gammaln(r + 1)
    top = float(np.max(logt))
    terms = np.where(r % 2 == 0, 1.0, -1.0) * np.exp(logt - top)
    partial = np.cumsum(terms)
    # stop once the term ratio is < 1 and the term is < 1e-16 of the partial sum
    ratio_ok = phis[n + r + 1] / (r + 1) < 1
    stop = np.nonzero(ratio_ok & (np.abs(terms) < 1e-16 * np.abs(partial)))[0]
    if stop.size == 0:
        raise NonConvergenceError(f"series for n={n} shows no decay")
    terms = terms[: stop[0] + 1]
    s = math.fsum(terms)
    cond = float(np.sum(np.abs(terms))) / abs(s) if s != 0 else math.inf
    return (math.log(s) + top if s > 0 else math.nan), cond


def nphi_series(triplet: BernsteinTriplet, N: int, max_terms: int | None = None,
                extended: bool = True, max_dps: int = 5000) -> InvariantLaw:
    """n(n) = (1/n!) sum_r (-1)^r W(n+r+1) / r!  for n = 0..N (sigma2 < 1).

    Entries with a double-precision condition number above SERIES_COND_MAX (or
    a nonpositive double result) are recomputed in mpmath when ``extended``.
    """
    if triplet.sigma2 >= 1:
        raise UnsupportedError("series representation needs sigma2 < 1; use nphi_solve")
    if max_terms is None:
        s2 = triplet.sigma2
        max_terms = int(200 + 60 * N / max(1e-3, 1 - s2) + 40 / max(1e-3, 1 - s2) ** 2)
        max_terms = min(max_terms, 200_000)
    K = N + max_terms + 2
    logW = bernstein_gamma_table(triplet, K).log_values
    phis = np.array([0.0] + [phi_eval(triplet, r) for r in range(1, K + 1)])
    log_w = np.empty(N + 1)
    hp = [None] * (N + 1)
    cache = _MpPhiCache(triplet)
    n_extended = 0
    for n in range(N + 1):
        ls, cond = _series_double(logW, phis, n, max_terms)
        if math.isfinite(ls) and cond < SERIES_COND_MAX:
            log_w[n] = ls
            continue
        if not extended:
            raise NonConvergenceError(f"n={n}: series lost all precision in double")
        n_extended += 1
        dps = 40
        while True:
            with mpmath.workdps(dps):
                val, big = _series_mp(cache, n, mpmath.mpf(10) ** (-dps // 2),
                                      max_terms * 4)
                lost = float(mpmath.log10(big / abs(val))) if val != 0 else dps
                if val > 0 and dps - lost >= 25:
                    log_w[n] = float(mpmath.log(val))
                    hp[n] = +val
                    break
            dps = int(lost + 45)
            if dps > max_dps:
                raise NonConvergenceError(f"n={n}: needs more than {max_dps} digits")
    if n_extended:
        logger.info("series: %d of %d entries evaluated in extended precision",
                    n_extended, N + 1)
    law = InvariantLaw(log_w, Method.SERIES, _geometric_tail(log_w))
    law.certificates["extended_entries"] = n_extended
    return law


# -- moment certificate -----------------------------------------------------------

@dataclass
class MomentCertificate:
    residuals: np.ndarray
    inconclusive: np.ndarray

    def max_residual(self, conclusive_only: bool = True) -> float:
        r = self.residuals[~self.inconclusive] if conclusive_only else self.residuals
        return float(np.max(r)) if r.size else math.nan


def moment_certificate(law: InvariantLaw, triplet: BernsteinTriplet, K: int,
                       tail_rel: float = 1e-10) -> MomentCertificate:
    """|sum_n p_k(n) n(n) - W(k+1)| / W(k+1) for k = 0..K.

    A residual is flagged inconclusive when the geometric extrapolation of
    p_k(n) n(n) beyond N is not negligible against W(k+1).
    """
    W = bernstein_gamma_table(triplet, K)
    n = np.arange(law.N + 1, dtype=float)
    res = np.zeros(K + 1)
    flag = np.zeros(K + 1, dtype=bool)
    for k in range(K + 1):
        lt = log_falling_factorial(n, k) + law.log_weights
        total = logsumexp(lt[np.isfinite(lt)])
        res[k] = abs(math.expm1(total - W.log(k)))
        lw = law.log_weights
        if law.N >= k + 2:
            ratio = (lt[-1] - lt[-2])
            tail = math.inf if ratio >= 0 else lt[-1] + ratio - math.log1p(-math.exp(ratio))
            flag[k] = tail - W.log(k) > math.log(tail_rel)
        del lw
    return MomentCertificate(res, flag)


def invariant_law(triplet: BernsteinTriplet, N: int | None = None,
                  method: str = "solve") -> InvariantLaw:
    """Convenience front end used by the CLI."""
    if N is None:
        N = auto_truncation(triplet)
    if method == "series":
        return nphi_series(triplet, N)
    return nphi_solve(build_lphi(triplet, N, Boundary.REFLECTING))
