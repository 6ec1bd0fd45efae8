"""Truncated rate matrices of the self-similar and skip-free Laguerre chains.

Row ``n`` of either generator is supported on ``l = 0..n+1``.  The Levy part
of the off-diagonal rates comes from the three integrals of
:func:`skipfree.bernstein.levy_generator_integrals`; the diagonal Levy entry
uses its own closed form rather than minus the row sum, so the row-sum
residual reported by :func:`validate_generator` is a genuine consistency check.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import mpmath
import numpy as np
from scipy.special import gammaln

from .bernstein import BernsteinTriplet

logger = logging.getLogger(__name__)

NEG_RATE_TOL = 1e-12
DENSE_LIMIT = 2000


class ChainKind(str, enum.Enum):
    SELF_SIMILAR = "ssm"
    LAGUERRE = "laguerre"


class Boundary(str, enum.Enum):
    SUB_STOCHASTIC = "substochastic"
    REFLECTING = "reflecting"


class NegativeRateError(ValueError):
    pass


def generator_row(triplet: BernsteinTriplet, n: int,
                  kind: ChainKind = ChainKind.SELF_SIMILAR) -> np.ndarray:
    """Untruncated row n, entries for l = 0..n+1."""
    s2, m = triplet.sigma2, triplet.m
    low, up, diag = triplet.levy.integrals(n)
    row = np.zeros(n + 2)
    if n > 0:
        l = np.arange(n)
        # (1/(n+1)) C(n+1, l) I_low(n, l)
        binom = np.exp(gammaln(n + 2) - gammaln(l + 1) - gammaln(n + 2 - l))
        row[:n] = binom * low / (n + 1)
        row[n - 1] += s2 * n
    row[n + 1] = s2 * (n + 1) + m + up / (n + 1)
    row[n] = -2 * s2 * n - s2 - m + diag
    if kind == ChainKind.LAGUERRE and n > 0:
        row[n - 1] += n
        row[n] -= n
    return _clamp(row, n)


def generator_row_mp(triplet: BernsteinTriplet, n: int,
                     kind: ChainKind = ChainKind.LAGUERRE) -> list:
    """Row n in mpmath arithmetic (closed-form Levy families only)."""
    s2, m = mpmath.mpf(triplet.sigma2), mpmath.mpf(triplet.m)
    low, up, diag = triplet.levy.integrals_mp(n)
    row = [mpmath.mpf(0)] * (n + 2)
    binom = mpmath.mpf(1)
    for l in range(n):
        row[l] = binom * low[l] / (n + 1)
        binom = binom * (n + 1 - l) / (l + 1)
    if n > 0:
        row[n - 1] += s2 * n
    row[n + 1] = s2 * (n + 1) + m + up / (n + 1)
    row[n] = -2 * s2 * n - s2 - m + diag
    if kind == ChainKind.LAGUERRE and n > 0:
        row[n - 1] += n
        row[n] -= n
    return row


def _clamp(row: np.ndarray, n: int) -> np.ndarray:
    off = np.delete(row, n)
    worst = off.min() if off.size else 0.0
    if worst < -NEG_RATE_TOL:
        raise NegativeRateError(f"row {n}: off-diagonal rate {worst:.3e} < 0")
    if worst < 0:
        warnings.warn(f"row {n}: clamping roundoff-negative rate {worst:.1e}",
                      RuntimeWarning, stacklevel=3)
        mask = np.ones_like(row, dtype=bool)
        mask[n] = False
        row[mask] = np.maximum(row[mask], 0.0)
    return row


@dataclass
class SkipFreeGenerator:
    """Rows ``rows[n]`` hold entries for l = 0..min(n+1, N).

    ``leak[n]`` is the rate dropped out of [0..N] (nonzero only in row N under
    the sub-stochastic policy).  ``row_defect[n]`` is the untruncated row sum,
    which is zero up to roundoff for a correct generator.
    """

    kind: ChainKind
    N: int
    boundary: Boundary
    triplet: BernsteinTriplet
    rows: list
    leak: np.ndarray
    row_defect: np.ndarray
    _dense: np.ndarray | None = field(default=None, repr=False)

    def dense(self) -> np.ndarray:
        if self._dense is None:
            A = np.zeros((self.N + 1, self.N + 1))
            for n, r in enumerate(self.rows):
                A[n, : len(r)] = r
            self._dense = A
        return self._dense

    def entry(self, n: int, l: int) -> float:
        r = self.rows[n]
        return float(r[l]) if 0 <= l < len(r) else 0.0

    @property
    def max_exit_rate(self) -> float:
        return max(-r[n] for n, r in enumerate(self.rows))

    def matvec(self, f: np.ndarray) -> np.ndarray:
        """(A f)(n) = sum_l A(n, l) f(l)."""
        if self.N <= DENSE_LIMIT:
            return self.dense() @ f
        return np.array([r @ f[: len(r)] for r in self.rows])

    def rmatvec(self, p: np.ndarray) -> np.ndarray:
        """(p A)(l) = sum_n p(n) A(n, l)."""
        if self.N <= DENSE_LIMIT:
            return p @ self.dense()
        out = np.zeros(self.N + 1)
        for n, r in enumerate(self.rows):
            out[: len(r)] += p[n] * r
        return out

    def header(self) -> dict:
        return {"kind": self.kind.value, "N": self.N,
                "boundary": self.boundary.value, "triplet": self.triplet.to_dict()}

    def to_csv(self, path) -> Path:
        """Write ``path`` (n, l, rate) and a JSON header next to it."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "l", "rate"])
            for n, r in enumerate(self.rows):
                for l, v in enumerate(r):
                    if v != 0.0:
                        w.writerow([n, l, f"{v:.17g}"])
        path.with_suffix(".json").write_text(json.dumps(self.header(), indent=2))
        return path


def _build(triplet: BernsteinTriplet, N: int, boundary, kind) -> SkipFreeGenerator:
    if N < 1:
        raise ValueError("N must be >= 1")
    boundary = Boundary(boundary)
    rows, leak, defect = [], np.zeros(N + 1), np.zeros(N + 1)
    for n in range(N + 1):
        full = generator_row(triplet, n, kind)
        defect[n] = full.sum()
        if n < N:
            rows.append(full)
            continue
        last = full[: N + 1].copy()
        if boundary == Boundary.REFLECTING:
            last[N] += full[N + 1]
        else:
            leak[N] = full[N + 1]
        rows.append(last)
    return SkipFreeGenerator(kind, N, boundary, triplet, rows, leak, defect)


def build_gphi(triplet: BernsteinTriplet, N: int,
               boundary_policy=Boundary.SUB_STOCHASTIC) -> SkipFreeGenerator:
    return _build(triplet, N, boundary_policy, ChainKind.SELF_SIMILAR)


def build_lphi(triplet: BernsteinTriplet, N: int,
               boundary_policy=Boundary.SUB_STOCHASTIC) -> SkipFreeGenerator:
    return _build(triplet, N, boundary_policy, ChainKind.LAGUERRE)


def build_generator(triplet, kind, N, boundary_policy=Boundary.SUB_STOCHASTIC):
    return _build(triplet, N, boundary_policy, ChainKind(kind))


@dataclass
class GeneratorReport:
    skip_free: bool
    min_offdiagonal: float
    nonnegative: bool
    row_sums: np.ndarray
    max_interior_row_sum: float
    interior_ok: bool
    row_sum_tol: float

    @property
    def ok(self) -> bool:
        return self.skip_free and self.nonnegative and self.interior_ok

    def summary(self) -> dict:
        return {"skip_free": self.skip_free, "nonnegative": self.nonnegative,
                "min_offdiagonal": self.min_offdiagonal,
                "max_interior_row_sum": self.max_interior_row_sum,
                "interior_ok": self.interior_ok, "ok": self.ok}


def validate_generator(g: SkipFreeGenerator, row_sum_tol: float = 1e-10,
                       ) -> GeneratorReport:
    """Check skip-freeness, off-diagonal signs and interior row sums."""
    skip_free, min_off = True, np.inf
    sums = np.zeros(g.N + 1)
    for n, r in enumerate(g.rows):
        if len(r) > n + 2 and np.any(r[n + 2:] != 0):
            skip_free = False
        off = np.delete(r, n)
        if off.size:
            min_off = min(min_off, float(off.min()))
        sums[n] = r.sum()
    # rows whose up-jump target stays inside [0..N] must be conservative
    interior = sums[: g.N]
    if g.boundary == Boundary.REFLECTING:
        interior = sums
    max_int = float(np.max(np.abs(interior))) if interior.size else 0.0
    return GeneratorReport(
        skip_free=skip_free, min_offdiagonal=float(min_off),
        nonnegative=min_off >= -NEG_RATE_TOL, row_sums=sums,
        max_interior_row_sum=max_int, interior_ok=max_int <= row_sum_tol,
        row_sum_tol=row_sum_tol,
    )
