"""Eigenfunctions, co-eigenfunctions and spectral synthesis of the Laguerre chain.

Both the eigenfunctions P_k and the co-eigenfunctions V_k are alternating
sums whose terms exceed the result by many orders of magnitude once k or n
reaches a few dozen.  Tables are therefore built in mpmath at a working
precision chosen from the observed cancellation, and stored in double.  V_k is
kept multiplied by the invariant weight, VN_k(n) = V_k(n) n(n), which is what
every pairing and the heat kernel actually use.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import mpmath
import numpy as np
from scipy.special import gammaln

from .bernstein import (BernsteinTriplet, UnsupportedError, bernstein_gamma_table,
                        d_phi, m_phi, phi_beta, pibar0, sigma1, t_star, w_mp)
from .generator import Boundary, build_lphi
from .invariant import InvariantLaw, nphi_solve, nphi_solve_hp
from .kernels import FactorialPoly

logger = logging.getLogger(__name__)

ENVELOPE_EPS = 0.01
TAIL_TOL = 1e-12
DEFAULT_MARGIN = 0.05
GUARD_DIGITS = 30
LAW_PAD = 200


class ThresholdError(ValueError):
    """Spectral expansion requested below its convergence threshold."""


def c_k(a: float, k) -> np.ndarray:
    """c_k(a) = Gamma(a+k+1) / (Gamma(a+1) Gamma(k+1))."""
    k = np.asarray(k, dtype=float)
    return np.exp(gammaln(a + k + 1) - gammaln(a + 1) - gammaln(k + 1))


def envelope_K(triplet: BernsteinTriplet, t: float, tol: float = TAIL_TOL,
               eps: float = ENVELOPE_EPS) -> int:
    """Smallest K with sum_{k>K} e^{-kt}(1+s^-2)^{k/2} e^{eps k} below ``tol``."""
    rate = t - 0.5 * math.log1p(1.0 / triplet.sigma2) - eps
    if rate <= 0:
        raise ThresholdError(f"t={t} is not above the envelope threshold")
    # geometric tail q^{K+1}/(1-q) < tol
    q = math.exp(-rate)
    return max(1, int(math.ceil((math.log(tol) + math.log1p(-q)) / -rate)))


# -- mp kernels -----------------------------------------------------------------

def _p_row_mp(Wmp: list, K: int, n: int):
    """[(1+s1^-1)^{k/2} P_k(n) for k = 0..K] and the largest |term| seen."""
    R = min(n, K)
    a = [mpmath.mpf(1)]
    pr = mpmath.mpf(1)
    for r in range(1, R + 1):
        pr *= n - r + 1
        a.append(pr / Wmp[r])
    out, big = [], mpmath.mpf(0)
    for k in range(K + 1):
        s, binom = mpmath.mpf(0), mpmath.mpf(1)
        for r in range(min(k, R) + 1):
            term = binom * a[r]
            s += -term if r % 2 else term
            if term > big:
                big = term
            binom = binom * (k - r) / (r + 1)
        out.append(s)
    return out, big


def _vn_row_mp(nn: list, K: int, n: int):
    """[(1+s1^-1)^{-k/2} V_k(n) n(n) for k = 0..K] and the largest |term|."""
    out, big = [], mpmath.mpf(0)
    for k in range(K + 1):
        # c_r = (k+n-r)! / ((k-r)! (n-r)! r!), c_0 = C(k+n, n)
        c = mpmath.binomial(k + n, n)
        s = mpmath.mpf(0)
        for r in range(min(k, n) + 1):
            if r:
                c = c * (k - r + 1) * (n - r + 1) / ((k + n - r + 1) * r)
            term = c * nn[k + n - r]
            s += -term if r % 2 else term
            if term > big:
                big = term
        out.append(s)
    return out, big


def _lost_digits(vals, big, scale) -> float:
    """Digits lost to cancellation relative to ``scale``."""
    if big == 0:
        return 0.0
    return max(0.0, float(mpmath.log10(big / scale)))


# -- pointwise evaluators -----------------------------------------------------------

def eigenfunction_P(triplet: BernsteinTriplet, k: int, n: int,
                    dps: int | None = None) -> float:
    """P_k(n) = (1+s1^-1)^{-k/2} sum_r (-1)^r C(k,r) p_r(n) / W(r+1)."""
    if k < 0 or n < 0:
        raise ValueError("k, n must be >= 0")
    dps = dps or 50
    while True:
        with mpmath.workdps(dps):
            W = w_mp(triplet, min(k, n))
            row, big = _p_row_mp(W, k, n)
            s = row[k]
            # absolute accuracy: P_k(n) may vanish at lattice points
            lost = _lost_digits(row, big, max(abs(s), mpmath.mpf(1)))
            if dps - lost >= GUARD_DIGITS:
                fac = 1 + 1 / mpmath.mpf(sigma1(triplet))
                return float(s * fac ** (-mpmath.mpf(k) / 2))
        dps = int(lost) + GUARD_DIGITS + 10


def eigenpolynomial(triplet: BernsteinTriplet, k: int) -> FactorialPoly:
    """P_k in the factorial basis: (1+s1^-1)^{-k/2} sum_l (-1)^l C(k,l) p_l / W(l+1)."""
    W = bernstein_gamma_table(triplet, k).log_values
    l = np.arange(k + 1)
    lc = (gammaln(k + 1) - gammaln(l + 1) - gammaln(k - l + 1) - W
          - 0.5 * k * math.log1p(1 / sigma1(triplet)))
    return FactorialPoly(tuple(np.where(l % 2, -1.0, 1.0) * np.exp(lc)))


def coeigenfunction_V(triplet: BernsteinTriplet, law: InvariantLaw, k: int,
                      n: int) -> float:
    """V_k(n) from the finite sum over the invariant weights n(n..k+n)."""
    if k + n > law.N:
        raise IndexError(f"V_{k}({n}) needs n(k+n) with k+n={k + n} > N={law.N}")
    dps = 50
    while True:
        with mpmath.workdps(dps):
            nn = _mp_weights(law)
            row, big = _vn_row_mp(nn, k, n)
            s = row[k]
            lost = _lost_digits(row, big, nn[n])
            if dps - lost >= GUARD_DIGITS or law.hp_weights is None:
                fac = 1 + 1 / mpmath.mpf(sigma1(triplet))
                return float(s * fac ** (mpmath.mpf(k) / 2) / nn[n])
        dps = int(lost) + GUARD_DIGITS + 10


def _mp_weights(law: InvariantLaw) -> list:
    if law.hp_weights is not None:
        return [+w for w in law.hp_weights]
    return [mpmath.exp(mpmath.mpf(float(lw))) for lw in law.log_weights]


def _law_for(triplet: BernsteinTriplet, N_law: int, dps: int) -> InvariantLaw:
    try:
        return nphi_solve_hp(triplet, N_law, dps)
    except UnsupportedError:
        logger.warning("no extended-precision rates for this Levy measure; "
                       "using the double-precision invariant law")
        return nphi_solve(build_lphi(triplet, N_law, Boundary.REFLECTING))


# -- the system -----------------------------------------------------------------

@dataclass
class SpectralSystem:
    triplet: BernsteinTriplet
    K: int
    N: int
    P_table: np.ndarray
    VN_table: np.ndarray
    law: InvariantLaw
    t_star: float
    dps: int
    lost_digits: float
    meta: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return self.law.weights[: self.N + 1]

    @property
    def V_table(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.VN_table / self.weights[None, :]

    def to_csv(self, path) -> Path:
        path = Path(path)
        V = self.V_table
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "n", "P", "V"])
            for k in range(self.K + 1):
                for n in range(self.N + 1):
                    w.writerow([k, n, f"{self.P_table[k, n]:.17g}", f"{V[k, n]:.17g}"])
        meta = {"t_star": self.t_star, "K": self.K, "N": self.N,
                "triplet": self.triplet.to_dict(), "dps": self.dps,
                "lost_digits": self.lost_digits, **self.meta}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, default=float))
        return path


def build_spectral_system(triplet: BernsteinTriplet, K: int, N: int,
                          law: InvariantLaw | None = None, N_law: int | None = None,
                          dps: int = 50) -> SpectralSystem:
    """P_k(n), VN_k(n) for k <= K, n <= N, computed in extended precision.

    The invariant law is solved (in mpmath) on a reflecting truncation of size
    ``N_law`` (default N + K + 200) unless supplied; V needs n(0..N+K).
    """
    N_law = N_law or (N + K + LAW_PAD)
    fac = 1 + 1 / mpmath.mpf(sigma1(triplet))
    given = law is not None
    while True:
        if not given:
            law = _law_for(triplet, N_law, dps)
        if law.N < N + K:
            raise IndexError(f"law truncation {law.N} < N + K = {N + K}")
        with mpmath.workdps(dps):
            W = w_mp(triplet, min(K, N))
            nn = _mp_weights(law)
            P = np.empty((K + 1, N + 1))
            VN = np.empty((K + 1, N + 1))
            lost = 0.0
            ks = [mpmath.mpf(k) / 2 for k in range(K + 1)]
            dn = [fac ** (-h) for h in ks]
            up = [fac ** h for h in ks]
            for n in range(N + 1):
                prow, pbig = _p_row_mp(W, K, n)
                vrow, vbig = _vn_row_mp(nn, K, n)
                # P is bounded by n(n)^{-1/2}; VN by a modest multiple of n(n)
                lost = max(lost, _lost_digits(prow, pbig, mpmath.mpf(1)),
                           _lost_digits(vrow, vbig, nn[n]))
                for k in range(K + 1):
                    P[k, n] = float(prow[k] * dn[k])
                    VN[k, n] = float(vrow[k] * up[k])
        if dps - lost >= GUARD_DIGITS or (given and law.hp_weights is None):
            break
        dps = int(lost) + GUARD_DIGITS + 10
        logger.info("spectral tables: raising working precision to %d digits", dps)
        if given and law.hp_weights is not None:
            given = False
    return SpectralSystem(triplet, K, N, P, VN, law, t_star(triplet), dps, lost,
                          {"N_law": law.N})


# -- checks and synthesis ----------------------------------------------------------

def biorthogonality_check(system: SpectralSystem, k: int, l: int) -> float:
    """sum_n P_k(n) V_l(n) n(n) - 1_{k=l} over n <= N."""
    return float(np.dot(system.P_table[k], system.VN_table[l]) - (k == l))


def biorthogonality_matrix(system: SpectralSystem, kmax: int | None = None) -> np.ndarray:
    kmax = system.K if kmax is None else kmax
    G = system.P_table[: kmax + 1] @ system.VN_table[: kmax + 1].T
    return G - np.eye(kmax + 1)


def eigen_residual(system: SpectralSystem, k: int, N_gen: int | None = None) -> float:
    """max over interior n of |(L P_k)(n) + k P_k(n)| / max(1, |P_k(n)|)."""
    N = system.N if N_gen is None else min(N_gen, system.N)
    g = build_lphi(system.triplet, N, Boundary.SUB_STOCHASTIC)
    p = system.P_table[k, : N + 1]
    r = g.matvec(p) + k * p
    hi = max(0, N - k - 2)
    return float(np.max(np.abs(r[: hi + 1]) / np.maximum(1.0, np.abs(p[: hi + 1]))))


def norms_P(system: SpectralSystem) -> np.ndarray:
    """||P_k||_{l2(n)} over the truncation."""
    return np.sqrt(system.P_table**2 @ system.weights)


def bessel_bounds(system: SpectralSystem) -> dict:
    norms = norms_P(system)
    out = {"norms": norms, "bound_one": bool(np.all(norms <= 1 + 1e-12))}
    d = d_phi(system.triplet)
    if float(d) > 0 and not d.lower_bound_only:
        bnd = 1.0 / np.sqrt(c_k(float(d), np.arange(system.K + 1)))
        out["bound_dphi"] = bnd
        out["bound_dphi_ok"] = bool(np.all(norms <= bnd * (1 + 1e-12)))
    return out


def _check_threshold(system: SpectralSystem, t: float, margin: float):
    if system.triplet.sigma2 <= 0:
        raise UnsupportedError("spectral expansion needs sigma2 > 0")
    if t < system.t_star + margin:
        raise ThresholdError(
            f"t={t} < t_star + margin = {system.t_star + margin:.6f}; "
            "use skipfree.reference.uniformization_expm below the threshold")


def tail_bound(system: SpectralSystem, t: float, eps: float = ENVELOPE_EPS) -> float:
    """Envelope sum over k > K of e^{-kt}(1+s^-2)^{k/2} e^{eps k}."""
    rate = t - 0.5 * math.log1p(1.0 / system.triplet.sigma2) - eps
    if rate <= 0:
        return math.inf
    q = math.exp(-rate)
    return q ** (system.K + 1) / (1 - q)


def heat_kernel(system: SpectralSystem, t: float, n=None, l=None,
                margin: float = DEFAULT_MARGIN) -> np.ndarray:
    """K_t(n, l) = sum_{k<=K} e^{-kt} P_k(n) V_k(l) n(l)."""
    _check_threshold(system, t, margin)
    n = np.arange(system.N + 1) if n is None else np.atleast_1d(n)
    l = np.arange(system.N + 1) if l is None else np.atleast_1d(l)
    w = np.exp(-t * np.arange(system.K + 1))
    return (system.P_table[:, n].T * w) @ system.VN_table[:, l]


def _coefficients(system: SpectralSystem, f) -> np.ndarray:
    """<f, V_k>_n for k = 0..K.

    A FactorialPoly is expanded exactly in the P basis by binomial inversion;
    a vector on [0..N] is extended beyond N by its last value.
    """
    K = system.K
    if isinstance(f, FactorialPoly):
        s1 = sigma1(system.triplet)
        logW = [float(mpmath.log(w)) for w in w_mp(system.triplet, f.degree)]
        coef = np.zeros(K + 1)
        for r, a in enumerate(f.coeffs):
            if not a:
                continue
            if r > K:
                raise ValueError(f"degree {r} exceeds spectral index K={K}")
            # p_r = W(r+1) sum_k (-1)^k C(r,k) (1+s1^-1)^{k/2} P_k
            k = np.arange(r + 1)
            lc = (gammaln(r + 1) - gammaln(k + 1) - gammaln(r - k + 1)
                  + 0.5 * k * math.log1p(1 / s1) + logW[r])
            coef[: r + 1] += float(a) * np.where(k % 2, -1.0, 1.0) * np.exp(lc)
        return coef
    f = np.asarray(f, dtype=float)
    if f.shape != (system.N + 1,):
        raise ValueError(f"f must have length N+1 = {system.N + 1}")
    c = f[-1]
    coef = system.VN_table @ (f - c)
    coef[0] += c
    return coef


def semigroup_apply(system: SpectralSystem, f, t: float,
                    margin: float = DEFAULT_MARGIN) -> np.ndarray:
    """K_t f on [0..N] by spectral synthesis.

    Polynomial inputs (FactorialPoly) have finitely many coefficients, so the
    synthesis is exact for every t >= 0; vector inputs need t above threshold.
    """
    coef = _coefficients(system, f)
    if not isinstance(f, FactorialPoly):
        _check_threshold(system, t, margin)
    elif t < 0:
        raise ValueError("t must be >= 0")
    w = np.exp(-t * np.arange(system.K + 1))
    return (coef * w) @ system.P_table


def subordinated_apply(system: SpectralSystem, f, t: float, beta: float) -> np.ndarray:
    """Subordinated semigroup: weights e^{-t phi_beta(k)} in place of e^{-kt}."""
    if system.triplet.sigma2 <= 0:
        raise UnsupportedError("subordinated expansion needs sigma2 > 0")
    if beta <= 0:
        raise ValueError("beta must be > 0")
    if t <= 0.5:
        raise ThresholdError(f"subordinated expansion needs t > 1/2, got t={t}")
    coef = _coefficients(system, f)
    k = np.arange(system.K + 1)
    w = np.exp(-t * phi_beta(system.triplet, beta, k))
    return (coef * w) @ system.P_table


def subordinated_K(triplet: BernsteinTriplet, t: float, beta: float,
                   tol: float = TAIL_TOL, eps: float = ENVELOPE_EPS, cap: int = 2000) -> int:
    """Spectral cut-off for the subordinated semigroup from the same envelope."""
    half = 0.5 * math.log1p(1 / triplet.sigma2) + eps
    for K in range(1, cap):
        ks = np.arange(K + 1, K + 200)
        tail = np.exp(-t * phi_beta(triplet, beta, ks) + half * ks).sum()
        if tail < tol:
            return K
    raise ThresholdError("subordinated envelope does not decay")


# -- ergodicity constants ------------------------------------------------------------

def hypocoercive_constant(triplet: BernsteinTriplet) -> float:
    """sqrt((m_phi + 1)(1 + s2) / (s2 (d_phi + 1)))."""
    s2 = triplet.sigma2
    if s2 <= 0:
        raise UnsupportedError("hypocoercive constant needs sigma2 > 0")
    if not math.isfinite(pibar0(triplet)):
        raise UnsupportedError("hypocoercive constant needs a finite Pibar(0)")
    d = d_phi(triplet)
    if float(d) <= 0:
        raise UnsupportedError("hypocoercive constant needs d_phi > 0")
    return math.sqrt((m_phi(triplet) + 1) * (1 + s2) / (s2 * (float(d) + 1)))


def entropy(weights: np.ndarray, f: np.ndarray, Phi: Callable | str) -> float:
    """Ent_mu(f) = mu Phi(f) - Phi(mu f)."""
    Phi = _phi_fn(Phi)
    mean = float(weights @ f)
    return float(weights @ Phi(f)) - float(Phi(np.array(mean)))


def _phi_fn(Phi):
    if callable(Phi):
        return Phi
    if Phi == "square":
        return np.square
    if Phi == "xlogx":
        return lambda x: np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)
    raise ValueError(f"unknown entropy function {Phi!r}")


@dataclass
class EntropyReport:
    t_grid: np.ndarray
    ent0: float
    ent_t: np.ndarray
    bound: np.ndarray

    @property
    def margin(self) -> np.ndarray:
        return self.bound - self.ent_t

    @property
    def ok(self) -> bool:
        return bool(np.all(self.margin >= -1e-12 * max(1.0, self.ent0)))


def entropy_decay_check(system: SpectralSystem, f, beta: float, Phi="square",
                        t_grid=(0.75, 1.0, 1.5, 2.0, 3.0)) -> EntropyReport:
    """Both sides of Ent(K^beta_t f) <= e^{-phi_beta(1)(t-1)_+} Ent(f) on a grid."""
    tri = system.triplet
    if not math.isfinite(pibar0(tri)) or tri.sigma2 <= 0:
        raise UnsupportedError("entropy decay needs sigma2 > 0 and finite Pibar(0)")
    if beta <= m_phi(tri):
        raise UnsupportedError(f"entropy decay needs beta > m_phi = {m_phi(tri)}")
    f = np.asarray(f, dtype=float)
    if Phi == "xlogx" and np.any(f <= 0):
        raise ValueError("x log x entropy needs f > 0")
    w = system.weights
    e0 = entropy(w, f, Phi)
    rate = float(phi_beta(tri, beta, 1.0))
    t_grid = np.asarray(t_grid, dtype=float)
    ent = np.array([entropy(w, subordinated_apply(system, f, t, beta), Phi)
                    for t in t_grid])
    bound = np.exp(-rate * np.maximum(t_grid - 1, 0)) * e0
    return EntropyReport(t_grid, e0, ent, bound)


@dataclass
class HypocoerciveReport:
    constant: float
    t_grid: np.ndarray
    ratios: np.ndarray  # ||K_t f|| / ||f|| per (t, f), f centered
    seed: int

    @property
    def margin(self) -> np.ndarray:
        return self.constant * np.exp(-self.t_grid)[:, None] - self.ratios

    @property
    def ok(self) -> bool:
        return bool(np.all(self.margin >= -1e-9))


def hypocoercive_check(triplet: BernsteinTriplet, N: int = 400, n_funcs: int = 50,
                       dt: float = 0.25, t_max: float = 5.0, seed: int = 0,
                       ) -> HypocoerciveReport:
    """||K_t f||_n <= C e^{-t} ||f||_n for random centered f on the truncated chain.

    The semigroup is the uniformization oracle on the reflecting truncation
    of size N, whose own stationary law plays the role of n.
    """
    from .reference import uniformization_expm
    C = hypocoercive_constant(triplet)
    g = build_lphi(triplet, N, Boundary.REFLECTING)
    pi = nphi_solve(g).weights
    step = uniformization_expm(g, dt)
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((N + 1, n_funcs))
    F -= pi @ F
    norm0 = np.sqrt(pi @ F**2)
    steps = int(round(t_max / dt))
    t_grid = dt * np.arange(steps + 1)
    ratios = np.empty((steps + 1, n_funcs))
    G = F
    for j in range(steps + 1):
        if j:
            G = step @ G
        c = G - pi @ G
        ratios[j] = np.sqrt(pi @ c**2) / norm0
    return HypocoerciveReport(C, t_grid, ratios, seed)
