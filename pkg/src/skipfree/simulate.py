"""Exact simulation of the self-similar and Laguerre chains, and MC tests.

Rows are built lazily per visited state straight from the untruncated
generator row, turned into alias tables and memoized, so there is no global
truncation; only a hard cap on the visited state guards runaway paths.

Randomness is Philox keyed through a SeedSequence on (seed, stream, index):
single paths use index = replica, vectorized batches use index = block, with
a fixed block size so results never depend on how work is scheduled.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .bernstein import BernsteinTriplet, UnsupportedError
from .generator import ChainKind, generator_row
from .moments import laguerre_moments, ssm_moments

logger = logging.getLogger(__name__)

STATE_CAP = 1_000_000
DENSE_STATES = 2048
BLOCK = 1 << 14
LEVEL = 0.01
MIN_EXPECTED = 5.0

_STREAM_PATH, _STREAM_BATCH, _STREAM_TAU, _STREAM_THIN = 1, 2, 3, 4


class StateCapError(RuntimeError):
    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


def make_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), stream, int(index)])
    return np.random.Generator(np.random.Philox(ss))


def _alias(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias table for the probability vector p."""
    n = len(p)
    prob = np.zeros(n)
    alias = np.zeros(n, dtype=np.int64)
    scaled = p * n
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s, g = small.pop(), large.pop()
        prob[s], alias[s] = scaled[s], g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    for i in large + small:
        prob[i], alias[i] = 1.0, i
    return prob, alias


class RateTable:
    """Memoized exit rates and alias tables of the chain, grown on demand.

    Row n has n+1 targets: slot j < n is the jump to j, slot n the jump to
    n+1.  ``up_factor`` scales every up-rate (fault injection).
    """

    def __init__(self, triplet: BernsteinTriplet, kind: ChainKind,
                 up_factor: float = 1.0, state_cap: int = STATE_CAP):
        self.triplet, self.kind = triplet, ChainKind(kind)
        self.up_factor, self.state_cap = up_factor, state_cap
        self.size = 0
        self.q = np.zeros(0)
        self.prob = np.zeros((0, 0))
        self.alias = np.zeros((0, 0), dtype=np.int64)
        self._sparse: dict[int, tuple] = {}

    def _row(self, n: int):
        row = generator_row(self.triplet, n, self.kind)
        rates = np.concatenate([row[:n], [row[n + 1] * self.up_factor]])
        q = float(rates.sum())
        if q <= 0:
            return 0.0, np.ones(1), np.zeros(1, dtype=np.int64), n + 1
        prob, alias = _alias(rates / q)
        return q, prob, alias, n + 1

    def ensure(self, nmax: int):
        if nmax >= self.state_cap:
            raise StateCapError(f"state {nmax} reached the cap {self.state_cap}")
        if nmax < self.size:
            return
        if self.size < DENSE_STATES:
            self._grow(min(max(2 * self.size, nmax + 1, 16), DENSE_STATES))
        for n in range(self.size, nmax + 1):
            if n not in self._sparse:
                self._sparse[n] = self._row(n)

    def _grow(self, new: int):
        q = np.zeros(new)
        prob = np.zeros((new, new))
        alias = np.zeros((new, new), dtype=np.int64)
        q[: self.size] = self.q
        prob[: self.size, : self.size] = self.prob
        alias[: self.size, : self.size] = self.alias
        for n in range(self.size, new):
            qn, p, a, w = self._row(n)
            q[n], prob[n, :w], alias[n, :w] = qn, p, a
        self.size, self.q, self.prob, self.alias = new, q, prob, alias

    def rate(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states)
        self.ensure(int(states.max()))
        out = np.empty(states.shape)
        dense = states < self.size
        out[dense] = self.q[states[dense]]
        for i in np.nonzero(~dense)[0]:
            out[i] = self._sparse[int(states[i])][0]
        return out

    def sample(self, states: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Targets for ``states`` from uniforms u (slot) and v (alias coin)."""
        width = states + 1
        slot = np.minimum((u * width).astype(np.int64), states)
        out = np.empty_like(states)
        dense = states < self.size
        s, j = states[dense], slot[dense]
        keep = v[dense] < self.prob[s, j]
        out[dense] = np.where(keep, j, self.alias[s, j])
        for i in np.nonzero(~dense)[0]:
            _, p, a, _ = self._sparse[int(states[i])]
            out[i] = slot[i] if v[i] < p[slot[i]] else a[slot[i]]
        # slot n stands for the up-jump to n+1
        return np.where(out == states, states + 1, out)


# -- single paths -------------------------------------------------------------------

@dataclass
class PathSample:
    jump_times: np.ndarray
    states: np.ndarray
    seed: int
    chain_kind: ChainKind
    horizon: float
    replica: int = 0

    def is_skip_free(self) -> bool:
        d = np.diff(self.states)
        return bool(np.all((d == 1) | (d < 0)))

    def is_valid(self) -> bool:
        t = self.jump_times
        ok_t = bool(np.all(np.diff(t) > 0)) and (t.size == 0 or t[-1] <= self.horizon)
        return ok_t and len(self.states) == len(t) + 1 and self.is_skip_free()

    @property
    def endpoint(self) -> int:
        return int(self.states[-1])


def gillespie(triplet: BernsteinTriplet, kind, n0: int, horizon: float, seed: int,
              replica: int = 0, table: RateTable | None = None) -> PathSample:
    """One exact path on [0, horizon]."""
    if n0 < 0 or horizon < 0:
        raise ValueError("n0 and horizon must be >= 0")
    kind = ChainKind(kind)
    table = table or RateTable(triplet, kind)
    rng = make_rng(seed, _STREAM_PATH, replica)
    t, n = 0.0, int(n0)
    times, states = [], [n]
    try:
        while True:
            q = float(table.rate(np.array([n]))[0])
            if q <= 0:
                break
            t += rng.standard_exponential() / q
            if t > horizon:
                break
            u, v = rng.random(2)
            n = int(table.sample(np.array([n]), np.array([u]), np.array([v]))[0])
            times.append(t)
            states.append(n)
    except StateCapError as exc:
        exc.partial = PathSample(np.array(times), np.array(states, dtype=np.int64), seed,
                                 kind, horizon, replica)
        raise
    return PathSample(np.array(times), np.array(states, dtype=np.int64), seed, kind,
                      horizon, replica)


def simulate_paths(triplet, kind, n0, horizon, replicas, seed) -> list[PathSample]:
    table = RateTable(triplet, kind)
    return [gillespie(triplet, kind, n0, horizon, seed, r, table) for r in range(replicas)]


def paths_to_csv(paths: list[PathSample], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "replica", "jump_time", "state"])
        for p in paths:
            w.writerow([p.seed, p.replica, f"{0.0:.17g}", int(p.states[0])])
            for t, s in zip(p.jump_times, p.states[1:]):
                w.writerow([p.seed, p.replica, f"{t:.17g}", int(s)])
    return path


# -- vectorized endpoints -----------------------------------------------------------

@dataclass
class EndpointBatch:
    states: np.ndarray
    jumps: int
    non_skip_free: int
    max_state: int


def _run_block(table: RateTable, start: np.ndarray, horizon, rng) -> tuple:
    state = start.astype(np.int64).copy()
    clock = np.zeros(len(state))
    horizon = np.broadcast_to(np.asarray(horizon, dtype=float), state.shape)
    active = np.ones(len(state), dtype=bool)
    jumps = bad = 0
    while True:
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        s = state[idx]
        q = table.rate(s)
        e = rng.standard_exponential(idx.size)
        with np.errstate(divide="ignore"):
            clock[idx] += np.where(q > 0, e / np.where(q > 0, q, 1.0), np.inf)
        stop = clock[idx] > horizon[idx]
        active[idx[stop]] = False
        go = idx[~stop]
        if go.size == 0:
            continue
        u = rng.random(go.size)
        v = rng.random(go.size)
        old = state[go]
        new = table.sample(old, u, v)
        d = new - old
        bad += int(np.count_nonzero((d != 1) & (d >= 0)))
        jumps += go.size
        state[go] = new
    return state, jumps, bad


def simulate_endpoints(triplet: BernsteinTriplet, kind, n0, horizon, replicas: int,
                       seed: int, up_factor: float = 1.0,
                       state_cap: int = STATE_CAP) -> EndpointBatch:
    """Endpoints X(horizon) of ``replicas`` independent paths.

    ``n0`` and ``horizon`` may be scalars or per-replica arrays.
    """
    table = RateTable(triplet, kind, up_factor, state_cap)
    n0 = np.broadcast_to(np.asarray(n0, dtype=np.int64), (replicas,))
    hz = np.broadcast_to(np.asarray(horizon, dtype=float), (replicas,))
    out = np.empty(replicas, dtype=np.int64)
    jumps = bad = 0
    for b, lo in enumerate(range(0, replicas, BLOCK)):
        hi = min(lo + BLOCK, replicas)
        rng = make_rng(seed, _STREAM_BATCH, b)
        out[lo:hi], j, x = _run_block(table, n0[lo:hi], hz[lo:hi], rng)
        jumps += j
        bad += x
    return EndpointBatch(out, jumps, bad, int(out.max()) if replicas else 0)


def factorial_moment_estimates(samples: np.ndarray, kmax: int = 3):
    """Sample means and standard errors of p_k(X), k = 1..kmax."""
    x = samples.astype(float)
    means, ses = [], []
    pk = np.ones_like(x)
    for k in range(1, kmax + 1):
        pk = pk * (x - k + 1)
        means.append(float(pk.mean()))
        ses.append(float(pk.std(ddof=1) / math.sqrt(len(x))))
    return np.array(means), np.array(ses)


# -- tau_beta -------------------------------------------------------------------

def sample_tau_beta(triplet: BernsteinTriplet, beta: float, seed: int, size=None):
    """tau = log(1 + s^-2) - log B with B ~ Beta(1, beta)."""
    if triplet.sigma2 <= 0:
        raise UnsupportedError("tau_beta needs sigma2 > 0")
    if beta <= 0:
        raise ValueError("beta must be > 0")
    rng = make_rng(seed, _STREAM_TAU, 0)
    b = rng.beta(1.0, beta, size=size)
    return math.log1p(1.0 / triplet.sigma2) - np.log(b)


def tau_laplace(triplet: BernsteinTriplet, beta: float, u) -> np.ndarray:
    """E[exp(-u tau)] = (s2/(1+s2))^u Gamma(1+beta) Gamma(u+1) / Gamma(u+beta+1)."""
    from scipy.special import gammaln
    u = np.asarray(u, dtype=float)
    s2 = triplet.sigma2
    return np.exp(u * math.log(s2 / (1 + s2)) + gammaln(1 + beta) + gammaln(u + 1)
                  - gammaln(u + beta + 1))


# -- statistical tests ---------------------------------------------------------------

@dataclass
class TestReport:
    name: str
    passed: bool
    p_value: float
    z_scores: dict
    z_crit: float
    seed: int
    replicas: int
    details: dict = field(default_factory=dict)

    def to_json(self, path=None) -> str:
        d = asdict(self)
        s = json.dumps(d, indent=2, default=_jsonable)
        if path is not None:
            Path(path).write_text(s)
        return s


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    return str(o)


def _merge_groups(expected: np.ndarray, minimum: float = MIN_EXPECTED) -> list:
    """Consecutive index groups whose summed ``expected`` reaches ``minimum``."""
    groups, cur, acc = [], [], 0.0
    for i, e in enumerate(expected):
        cur.append(i)
        acc += e
        if acc >= minimum:
            groups.append(cur)
            cur, acc = [], 0.0
    if cur:
        if groups:
            groups[-1].extend(cur)
        else:
            groups.append(cur)
    return groups


def two_sample_chi2(a: np.ndarray, b: np.ndarray) -> tuple[float, float, int]:
    """Chi-square homogeneity test with adjacent bins merged to expected >= 5."""
    top = int(max(a.max(), b.max()))
    ca = np.bincount(a, minlength=top + 1).astype(float)
    cb = np.bincount(b, minlength=top + 1).astype(float)
    na, nb = ca.sum(), cb.sum()
    pooled = ca + cb
    groups = _merge_groups(pooled * min(na, nb) / (na + nb))
    if len(groups) < 2:
        return 0.0, 1.0, 0
    ta = np.array([ca[g].sum() for g in groups])
    tb = np.array([cb[g].sum() for g in groups])
    chi2, p, dof, _ = stats.chi2_contingency(np.vstack([ta, tb]), correction=False)
    return float(chi2), float(p), int(dof)


def gof_chi2(samples: np.ndarray, weights: np.ndarray) -> tuple[float, float, int]:
    """Chi-square goodness of fit against weights on [0..N] plus a tail bin."""
    R = len(samples)
    N = len(weights) - 1
    tail = max(0.0, 1.0 - float(weights.sum()))
    probs = np.concatenate([weights, [tail]])
    probs = probs / probs.sum()
    clipped = np.minimum(samples, N + 1)
    obs = np.bincount(clipped, minlength=N + 2).astype(float)
    groups = _merge_groups(probs * R)
    o = np.array([obs[g].sum() for g in groups])
    e = np.array([probs[g].sum() * R for g in groups])
    if len(groups) < 2:
        # everything in one cell: only a degenerate sample can fit
        return 0.0, 1.0, 0
    chi2, p = stats.chisquare(o, e)
    return float(chi2), float(p), len(groups) - 1


def _zcrit(m: int, level: float = LEVEL) -> float:
    return float(stats.norm.isf(level / (2 * max(m, 1))))


def selfsimilarity_mc_test(triplet: BernsteinTriplet, n: int, t: float, alpha: float,
                           replicas: int, seed: int, up_factor: float = 1.0,
                           kmax: int = 3) -> TestReport:
    """Simulate B(X(t, n), alpha) and X(alpha t, B(n, alpha)) and compare.

    Pass iff the two-sample chi-square p-value is >= 0.01 and every factorial
    moment z-score (each side against the closed form) is within the
    Bonferroni-adjusted critical value.
    """
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must be in [0, 1]")
    kind = ChainKind.SELF_SIMILAR
    thin = make_rng(seed, _STREAM_THIN, 0)
    left = simulate_endpoints(triplet, kind, n, t, replicas, seed, up_factor)
    lhs = thin.binomial(left.states, alpha)
    start = thin.binomial(n, alpha, size=replicas)
    right = simulate_endpoints(triplet, kind, start, alpha * t, replicas, seed + 1,
                               up_factor)
    rhs = right.states
    chi2, p, dof = two_sample_chi2(lhs, rhs)
    z = {}
    for name, sample in (("lhs", lhs), ("rhs", rhs)):
        means, ses = factorial_moment_estimates(sample, kmax)
        for k in range(1, kmax + 1):
            exact = alpha**k * ssm_moments(triplet, k, n, t)
            se = ses[k - 1]
            z[f"{name}_k{k}"] = (means[k - 1] - exact) / se if se > 0 else (
                0.0 if means[k - 1] == exact else math.inf)
    zc = _zcrit(len(z))
    passed = p >= LEVEL and all(abs(v) <= zc for v in z.values())
    return TestReport("selfsimilarity", passed, p, z, zc, seed, replicas,
                      {"chi2": chi2, "dof": dof, "n": n, "t": t, "alpha": alpha,
                       "up_factor": up_factor,
                       "non_skip_free_jumps": left.non_skip_free + right.non_skip_free})


def laguerre_equilibration_test(triplet: BernsteinTriplet, n0: int, t_large: float,
                                replicas: int, seed: int, target=None) -> TestReport:
    """Chi-square fit of Laguerre endpoints at t_large against the invariant law.

    ``target`` is an InvariantLaw or a weight vector; by default the law is
    computed by the stationary solve.
    """
    from .invariant import invariant_law, InvariantLaw
    if target is None:
        target = invariant_law(triplet)
    weights = target.weights if isinstance(target, InvariantLaw) else np.asarray(target)
    batch = simulate_endpoints(triplet, ChainKind.LAGUERRE, n0, t_large, replicas, seed)
    chi2, p, dof = gof_chi2(batch.states, weights)
    means, ses = factorial_moment_estimates(batch.states, 3)
    z = {}
    for k in range(1, 4):
        exact = laguerre_moments(triplet, k, n0, t_large)
        z[f"k{k}"] = (means[k - 1] - exact) / ses[k - 1] if ses[k - 1] > 0 else math.inf
    zc = _zcrit(len(z))
    passed = p >= LEVEL and all(abs(v) <= zc for v in z.values())
    return TestReport("laguerre_equilibration", passed, p, z, zc, seed, replicas,
                      {"chi2": chi2, "dof": dof, "n0": n0, "t": t_large,
                       "non_skip_free_jumps": batch.non_skip_free})


def mc_moment_check(triplet: BernsteinTriplet, kind, n0: int, t: float, replicas: int,
                    seed: int, kmax: int = 3, n_se: float = 3.0) -> TestReport:
    """Factorial moments of simulated endpoints against the closed forms."""
    kind = ChainKind(kind)
    batch = simulate_endpoints(triplet, kind, n0, t, replicas, seed)
    means, ses = factorial_moment_estimates(batch.states, kmax)
    ref = ssm_moments if kind == ChainKind.SELF_SIMILAR else laguerre_moments
    z, exact = {}, {}
    for k in range(1, kmax + 1):
        exact[k] = ref(triplet, k, n0, t)
        se = ses[k - 1]
        z[f"k{k}"] = (means[k - 1] - exact[k]) / se if se > 0 else (
            0.0 if means[k - 1] == exact[k] else math.inf)
    passed = all(abs(v) <= n_se for v in z.values())
    return TestReport("moments", passed, math.nan, z, n_se, seed, replicas,
                      {"means": means, "se": ses, "exact": exact, "n0": n0, "t": t,
                       "kind": kind.value, "non_skip_free_jumps": batch.non_skip_free})
