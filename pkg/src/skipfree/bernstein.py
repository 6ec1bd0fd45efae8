"""Bernstein triplets (m, sigma2, Pi) and the scalar quantities derived from them.

A Bernstein function is represented through its triplet

    phi(u) = m + sigma2 * u + int_0^inf (1 - exp(-u y)) Pibar(y) dy,

with ``Pibar(y) = Pi((y, inf))``.  Integrating by parts, the Levy part equals
``int (y - (1 - exp(-u y)) / u) Pi(dy)``, which is the form used for every
closed-form evaluation below.

Levy measures come in four machine-representable families: :class:`ZeroMeasure`,
:class:`ExpDensity`, :class:`Atoms` and :class:`TabulatedDensity`.  Each family
knows how to evaluate its Laplace part, its analytic continuation to the
negative half-line (when one exists in closed form) and the three integrals
that populate a generator row.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import numpy as np
from scipy import integrate
from scipy.special import gammaln

logger = logging.getLogger(__name__)

QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-10
GL_ORDER = 20  # Gauss-Legendre points per tabulated segment
D_PHI_TOL = 1e-12
D_PHI_BOUND = 1e6


class IntegrationError(RuntimeError):
    """Adaptive quadrature failed to reach the requested accuracy."""


class InvalidTripletError(ValueError):
    """The triplet does not define a usable Bernstein function."""


class UnsupportedError(ValueError):
    """The requested operation is not available for this input."""


# -- elementary helpers -------------------------------------------------------

def _g(x):
    """exp(-x) - 1 + x, accurate for small x (vectorised)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 0.1
    xs = x[small]
    # alternating series sum_{j>=2} (-x)^j / j!
    term = xs * xs / 2.0
    acc = term.copy()
    for j in range(3, 20):
        term = term * (-xs) / j
        acc += term
    out[small] = acc
    xl = x[~small]
    out[~small] = np.expm1(-xl) + xl
    return out if out.ndim else float(out)


def _h(x):
    """exp(x) - 1 - x, accurate for small x (vectorised)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 0.1
    xs = x[small]
    term = xs * xs / 2.0
    acc = term.copy()
    for j in range(3, 20):
        term = term * xs / j
        acc += term
    out[small] = acc
    xl = x[~small]
    with np.errstate(over="ignore"):
        out[~small] = np.expm1(xl) - xl
    return out if out.ndim else float(out)


def _quad(func, a, b, points=None):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(
                func, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=500,
                points=points,
            )
        except integrate.IntegrationWarning as exc:
            raise IntegrationError(str(exc)) from exc
    return val


# -- Levy measure families ----------------------------------------------------

class LevyMeasure:
    """Base class of the supported Levy measure families."""

    kind = "abstract"

    def first_moment(self) -> float:
        """int_0^inf Pibar(y) dy = int y Pi(dy)."""
        raise NotImplementedError

    def laplace_part(self, u: float) -> float:
        """int_0^inf (1 - exp(-u y)) Pibar(y) dy for u >= 0."""
        raise NotImplementedError

    def laplace_part_mp(self, u):
        raise UnsupportedError(f"{self.kind} measure has no high-precision form")

    @property
    def abscissa(self) -> float:
        """Smallest u > 0 with divergent continuation phi(-u); inf if none."""
        return math.inf

    def continuation(self, u: float) -> float:
        """Analytic continuation of the Laplace part to -u (u >= 0)."""
        raise UnsupportedError(f"{self.kind} measure has no analytic continuation")

    def integrals(self, n: int):
        """Return (I_low[0..n-1], I_up, I_diag) for generator row n."""
        raise NotImplementedError

    def integrals_mp(self, n: int):
        raise UnsupportedError(f"{self.kind} measure has no high-precision form")

    def integrand(self, n: int, l: int | None = None):
        """Density-free integrand y -> value used by the quadrature oracle."""
        if l is None:
            return lambda y: float(_g((n + 1) * y))
        return lambda y: math.exp(-l * y) * (-math.expm1(-y)) ** (n - l + 1)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroMeasure(LevyMeasure):
    kind = "zero"

    def first_moment(self):
        return 0.0

    def laplace_part(self, u):
        return 0.0

    def laplace_part_mp(self, u):
        return mpmath.mpf(0)

    def continuation(self, u):
        return 0.0

    def integrals(self, n):
        return np.zeros(n), 0.0, 0.0

    def integrals_mp(self, n):
        return [mpmath.mpf(0)] * n, mpmath.mpf(0), mpmath.mpf(0)

    def to_dict(self):
        return {"kind": "zero"}


@dataclass(frozen=True)
class ExpDensity(LevyMeasure):
    """Pi(dy) = c exp(-b y) dy."""

    c: float
    b: float
    kind = "exp"

    def __post_init__(self):
        if not (self.c > 0 and self.b > 0):
            raise InvalidTripletError("exp density needs c > 0 and b > 0")

    def first_moment(self):
        return self.c / self.b**2

    def laplace_part(self, u):
        c, b = self.c, self.b
        return c * u / (b * b * (b + u))

    def laplace_part_mp(self, u):
        c, b = mpmath.mpf(self.c), mpmath.mpf(self.b)
        u = mpmath.mpf(u)
        return c * u / (b * b * (b + u))

    @property
    def abscissa(self):
        return self.b

    def continuation(self, u):
        if u >= self.b:
            return -math.inf
        c, b = self.c, self.b
        return -c * u / (b * b * (b - u))

    def integrals(self, n):
        c, b = self.c, self.b
        l = np.arange(n)
        # Beta identity: int e^{-ay}(1-e^{-y})^j dy = B(a, j+1)
        low = c * np.exp(gammaln(l + b) + gammaln(n - l + 2) - gammaln(n + b + 2))
        up = c * (n + 1) ** 2 / (b * b * (b + n + 1))
        diag = c * (1.0 / ((b + n) * (b + n + 1)) - 1.0 / (b * b))
        return low, up, diag

    def integrals_mp(self, n):
        c, b = mpmath.mpf(self.c), mpmath.mpf(self.b)
        low = []
        if n > 0:
            # Gamma(l+b) Gamma(n-l+2) / Gamma(n+b+2), stepped in l
            v = c * mpmath.exp(mpmath.loggamma(b) + mpmath.loggamma(n + 2)
                               - mpmath.loggamma(n + b + 2))
            for l in range(n):
                low.append(v)
                v = v * (l + b) / (n - l + 1)
        up = c * (n + 1) ** 2 / (b * b * (b + n + 1))
        diag = c * (1 / ((b + n) * (b + n + 1)) - 1 / (b * b))
        return low, up, diag

    def to_dict(self):
        return {"kind": "exp", "c": self.c, "b": self.b}


@dataclass(frozen=True)
class Atoms(LevyMeasure):
    """Pi = sum_i w_i delta_{y_i}."""

    locations: tuple
    weights: tuple
    kind = "atoms"

    def __post_init__(self):
        object.__setattr__(self, "locations", tuple(float(y) for y in self.locations))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.locations) != len(self.weights):
            raise InvalidTripletError("atoms need matching locations and weights")
        if any(y <= 0 for y in self.locations) or any(w <= 0 for w in self.weights):
            raise InvalidTripletError("atom locations and weights must be > 0")

    @property
    def _yw(self):
        return np.array(self.locations), np.array(self.weights)

    def first_moment(self):
        y, w = self._yw
        return float(np.sum(w * y))

    def laplace_part(self, u):
        if u == 0:
            return 0.0
        y, w = self._yw
        return float(np.sum(w * _g(u * y)) / u)

    def laplace_part_mp(self, u):
        u = mpmath.mpf(u)
        if u == 0:
            return mpmath.mpf(0)
        return mpmath.fsum(
            mpmath.mpf(w) * (mpmath.exp(-u * y) - 1 + u * y)
            for y, w in zip(self.locations, self.weights)
        ) / u

    def continuation(self, u):
        if u == 0:
            return 0.0
        y, w = self._yw
        return float(-np.sum(w * _h(u * y)) / u)

    def integrals(self, n):
        y, w = self._yw
        l = np.arange(n)[:, None]
        one_m = -np.expm1(-y)[None, :]
        low = np.sum(w * np.exp(-l * y) * one_m ** (n - l + 1), axis=1)
        up = float(np.sum(w * _g((n + 1) * y)))
        # (1-e^{-y}) e^{-ny} - y  =  -g(y) + (1-e^{-y})(e^{-ny} - 1)
        diag = float(np.sum(w * (-_g(y) + (-np.expm1(-y)) * np.expm1(-n * y))))
        return low, up, diag

    def integrals_mp(self, n):
        ys = [mpmath.mpf(y) for y in self.locations]
        ws = [mpmath.mpf(w) for w in self.weights]
        low = [
            mpmath.fsum(w * mpmath.exp(-l * y) * (1 - mpmath.exp(-y)) ** (n - l + 1)
                        for y, w in zip(ys, ws))
            for l in range(n)
        ]
        up = mpmath.fsum(w * (mpmath.exp(-(n + 1) * y) - 1 + (n + 1) * y)
                         for y, w in zip(ys, ws))
        diag = mpmath.fsum(w * (mpmath.exp(-n * y) - mpmath.exp(-(n + 1) * y) - y)
                           for y, w in zip(ys, ws))
        return low, up, diag

    def to_dict(self):
        return {"kind": "atoms", "locations": list(self.locations),
                "weights": list(self.weights)}


@dataclass(frozen=True)
class TabulatedDensity(LevyMeasure):
    """Density samples on a positive grid, linearly interpolated, zero outside."""

    grid: tuple
    density: tuple
    kind = "tabulated"
    _arr: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        d = np.asarray(self.density, dtype=float)
        if g.ndim != 1 or g.shape != d.shape or len(g) < 2:
            raise InvalidTripletError("tabulated density needs matching 1-d arrays")
        if g[0] <= 0 or np.any(np.diff(g) <= 0):
            raise InvalidTripletError("tabulated grid must be positive and increasing")
        if np.any(d < 0):
            raise InvalidTripletError("tabulated density must be nonnegative")
        object.__setattr__(self, "grid", tuple(g))
        object.__setattr__(self, "density", tuple(d))
        object.__setattr__(self, "_arr", (g, d) + self._nodes(g, d))
        # (y ^ y^2) integrability holds on a compact positive grid; checked anyway
        total = self._integrate(lambda y: np.minimum(y, y * y))
        if not math.isfinite(total):
            raise InvalidTripletError("tabulated density violates int (y ^ y^2) Pi < inf")

    @staticmethod
    def _nodes(g, d):
        """Composite Gauss-Legendre nodes and weights (density folded in).

        The density is linear between grid points, so each segment carries a
        smooth integrand and a fixed rule per segment is accurate.
        """
        x, w = np.polynomial.legendre.leggauss(GL_ORDER)
        a, b = g[:-1, None], g[1:, None]
        y = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
        wy = 0.5 * (b - a) * w[None, :] * np.interp(y, g, d)
        return y.ravel(), wy.ravel()

    def _integrate(self, f):
        _, _, y, wy = self._arr
        return float(np.dot(wy, f(y)))

    def first_moment(self):
        return self._integrate(lambda y: y)

    def laplace_part(self, u):
        if u == 0:
            return 0.0
        return self._integrate(lambda y: _g(u * y) / u)

    def integrals(self, n):
        _, _, y, wy = self._arr
        l = np.arange(n)[:, None]
        low = (np.exp(-l * y) * (-np.expm1(-y)) ** (n - l + 1)) @ wy
        up = self._integrate(lambda y: _g((n + 1) * y))
        diag = self._integrate(
            lambda y: -_g(y) - np.expm1(-y) * np.expm1(-n * y))
        return low, up, diag

    def to_dict(self):
        return {"kind": "tabulated", "grid": list(self.grid),
                "density": list(self.density)}


def levy_from_dict(d: dict) -> LevyMeasure:
    kind = d.get("kind")
    if kind == "zero":
        return ZeroMeasure()
    if kind == "exp":
        return ExpDensity(float(d["c"]), float(d["b"]))
    if kind == "atoms":
        return Atoms(tuple(d["locations"]), tuple(d["weights"]))
    if kind == "tabulated":
        return TabulatedDensity(tuple(d["grid"]), tuple(d["density"]))
    raise InvalidTripletError(f"unknown levy kind {kind!r}")


# -- triplet -----------------------------------------------------------------

@dataclass(frozen=True)
class BernsteinTriplet:
    m: float
    sigma2: float
    levy: LevyMeasure = field(default_factory=ZeroMeasure)

    def __post_init__(self):
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if self.m < 0 or self.sigma2 < 0:
            raise InvalidTripletError("m and sigma2 must be nonnegative")
        if self.m == 0 and self.sigma2 == 0 and isinstance(self.levy, ZeroMeasure):
            raise InvalidTripletError("phi vanishes identically")

    def phi(self, u):
        return phi_eval(self, u)

    def to_dict(self) -> dict:
        return {"m": self.m, "sigma2": self.sigma2, "levy": self.levy.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "BernsteinTriplet":
        try:
            return cls(float(d["m"]), float(d["sigma2"]),
                       levy_from_dict(d.get("levy", {"kind": "zero"})))
        except KeyError as exc:
            raise InvalidTripletError(f"missing field {exc.args[0]!r}") from exc


def phi_eval(triplet: BernsteinTriplet, u: float) -> float:
    if u < 0:
        raise ValueError("phi_eval needs u >= 0; use phi_continuation for -u")
    return triplet.m + triplet.sigma2 * u + triplet.levy.laplace_part(u)


def phi_mp(triplet: BernsteinTriplet, u):
    """phi(u) in the current mpmath precision (closed-form families only)."""
    u = mpmath.mpf(u)
    return (mpmath.mpf(triplet.m) + mpmath.mpf(triplet.sigma2) * u
            + triplet.levy.laplace_part_mp(u))


def phi_continuation(triplet: BernsteinTriplet, u: float) -> float:
    """phi(-u) for u >= 0; -inf at and beyond the family's abscissa."""
    if u < 0:
        raise ValueError("phi_continuation needs u >= 0")
    part = triplet.levy.continuation(u)
    if part == -math.inf:
        return -math.inf
    return triplet.m - triplet.sigma2 * u + part


def sigma1(triplet: BernsteinTriplet) -> float:
    return triplet.sigma2 if triplet.sigma2 > 0 else 1.0


def pibar0(triplet: BernsteinTriplet) -> float:
    return triplet.levy.first_moment()


def m_phi(triplet: BernsteinTriplet) -> float:
    if triplet.sigma2 <= 0:
        return math.inf
    tail = pibar0(triplet)
    if not math.isfinite(tail):
        return math.inf
    return (triplet.m + tail) / triplet.sigma2


@dataclass(frozen=True)
class DPhi:
    value: float
    lower_bound_only: bool = False

    def __float__(self):
        return self.value


def d_phi(triplet: BernsteinTriplet, bound: float = D_PHI_BOUND,
          tol: float = D_PHI_TOL) -> DPhi:
    """Smallest u >= 0 where phi(-u) reaches 0 or -inf, by bisection.

    phi(-u) is nonincreasing in u, so the first crossing is bracketed by
    doubling and then bisected to ``tol``.
    """
    cont = lambda u: phi_continuation(triplet, u)
    if cont(0.0) <= 0:
        return DPhi(0.0)
    if isinstance(triplet.levy, ZeroMeasure) and triplet.sigma2 == 0:
        return DPhi(math.inf)
    hi_cap = min(triplet.levy.abscissa, bound)
    lo, hi = 0.0, min(1.0, hi_cap)
    while cont(hi) > 0:
        if hi >= hi_cap:
            if hi_cap == triplet.levy.abscissa:
                return DPhi(hi_cap)
            logger.warning("d_phi not bracketed below %g; reporting lower bound", bound)
            return DPhi(bound, lower_bound_only=True)
        lo, hi = hi, min(2 * hi, hi_cap)
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if cont(mid) > 0:
            lo = mid
        else:
            hi = mid
    if cont(hi) == -math.inf and hi >= triplet.levy.abscissa:
        return DPhi(triplet.levy.abscissa)
    return DPhi(hi)


def t_star(triplet: BernsteinTriplet) -> float:
    return 0.5 * math.log1p(1.0 / sigma1(triplet))


@dataclass(frozen=True)
class DerivedConstants:
    sigma1: float
    d_phi: float
    d_phi_lower_bound_only: bool
    m_phi: float
    pibar0: float
    t_star: float


def derived_constants(triplet: BernsteinTriplet) -> DerivedConstants:
    try:
        d = d_phi(triplet)
    except UnsupportedError:
        d = DPhi(math.nan)
    return DerivedConstants(
        sigma1=sigma1(triplet), d_phi=d.value,
        d_phi_lower_bound_only=d.lower_bound_only, m_phi=m_phi(triplet),
        pibar0=pibar0(triplet), t_star=t_star(triplet),
    )


@dataclass(frozen=True)
class BernsteinGammaTable:
    """W(1..K+1) stored as logarithms; ``values`` reconstructs them."""

    log_values: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    def __len__(self):
        return len(self.log_values)

    def __getitem__(self, k):
        """W(k+1)."""
        return math.exp(self.log_values[k])

    def log(self, k) -> float:
        """log W(k+1)."""
        return float(self.log_values[k])


def bernstein_gamma_table(triplet: BernsteinTriplet, K: int) -> BernsteinGammaTable:
    if K < 0:
        raise ValueError("K must be >= 0")
    phis = np.array([phi_eval(triplet, r) for r in range(1, K + 1)], dtype=float)
    if np.any(phis <= 0):
        bad = int(np.argmax(phis <= 0)) + 1
        raise InvalidTripletError(f"phi({bad}) <= 0; Bernstein-gamma values degenerate")
    return BernsteinGammaTable(np.concatenate([[0.0], np.cumsum(np.log(phis))]))


def w_mp(triplet: BernsteinTriplet, K: int) -> list:
    """[W(1), ..., W(K+1)] as mpmath numbers at the working precision."""
    out = [mpmath.mpf(1)]
    for r in range(1, K + 1):
        out.append(out[-1] * phi_mp(triplet, r))
    return out


def phi_beta(triplet: BernsteinTriplet, beta: float, u):
    """u log(1 + 1/sigma2) + log Gamma(u+beta+1) / (Gamma(1+beta) Gamma(u+1))."""
    if triplet.sigma2 <= 0:
        raise UnsupportedError("phi_beta needs sigma2 > 0")
    if beta <= 0:
        raise ValueError("beta must be > 0")
    u = np.asarray(u, dtype=float)
    out = (u * math.log1p(1.0 / triplet.sigma2) + gammaln(u + beta + 1)
           - gammaln(1 + beta) - gammaln(u + 1))
    return out if out.ndim else float(out)


def levy_generator_integrals(levy: LevyMeasure, n: int):
    """(I_low(n, 0..n-1), I_up(n), I_diag(n)) for the generator row n."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return levy.integrals(n)


def load_triplet(path) -> BernsteinTriplet:
    import json
    with open(path) as fh:
        return BernsteinTriplet.from_dict(json.load(fh))


def atoms(pairs: Sequence[tuple[float, float]]) -> Atoms:
    ys, ws = zip(*pairs)
    return Atoms(tuple(ys), tuple(ws))
