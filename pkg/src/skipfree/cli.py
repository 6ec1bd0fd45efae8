"""Command-line front end.

Exit codes: 0 all requested checks passed, 1 some check failed, 2 malformed
config or arguments, 3 numerical refusal (threshold, cap, budget).
A JSON report is written to ``<out>.json`` in every case where ``--out`` is
known, including failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .bernstein import (BernsteinTriplet, IntegrationError, InvalidTripletError,
                        UnsupportedError, derived_constants, levy_from_dict, m_phi,
                        pibar0)
from .families import Family, family_triplet, golden_suite
from .generator import Boundary, ChainKind, build_generator, validate_generator
from .invariant import (NonConvergenceError, SolveError, auto_truncation,
                        invariant_law, moment_certificate, nphi_series,
                        stationarity_residual)
from .kernels import FactorialPoly, TruncationError, UnsupportedDegreeError
from .moments import (gateway_moment_identity, scaling_limit_check,
                      selfsimilarity_identity)
from .reference import BudgetError, uniformization_apply
from .simulate import (StateCapError, factorial_moment_estimates, mc_moment_check,
                       paths_to_csv, selfsimilarity_mc_test, simulate_endpoints,
                       simulate_paths)
from .spectral import (ThresholdError, bessel_bounds, biorthogonality_matrix,
                       build_spectral_system, eigen_residual, entropy_decay_check,
                       envelope_K, hypocoercive_check, semigroup_apply,
                       subordinated_K, subordinated_apply, tail_bound)

log = logging.getLogger("skipfree")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_REFUSED = 0, 1, 2, 3
REFUSALS = (ThresholdError, UnsupportedError, StateCapError, BudgetError,
            NonConvergenceError, SolveError, TruncationError, UnsupportedDegreeError,
            IntegrationError)
SUITES = ("selfsim", "gateway", "scaling", "spectral", "ergodic", "golden")


class ConfigError(ValueError):
    def __init__(self, where: str, msg: str):
        super().__init__(f"{where}: {msg}")
        self.where = where


# -- config -------------------------------------------------------------------

def load_config(path) -> tuple[BernsteinTriplet, str | None, dict]:
    """Triplet JSON, or a family preset ``{"family": ..., "params": {...}}``."""
    path = str(path)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(path, "file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None
    if not isinstance(raw, dict):
        raise ConfigError(path, "top level must be an object")
    family = raw.get("family")
    params = raw.get("params", {}) or {}
    if family is not None:
        try:
            fam = Family(family)
        except ValueError:
            raise ConfigError(f"{path}: family",
                              f"unknown family {family!r}; one of "
                              f"{[f.value for f in Family]}") from None
        if not isinstance(params, dict):
            raise ConfigError(f"{path}: params", "must be an object")
        try:
            return family_triplet(fam, **params), fam.value, params
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: params", str(exc)) from None
    for key in ("m", "sigma2"):
        if key not in raw:
            raise ConfigError(f"{path}: {key}", "missing field")
        if not isinstance(raw[key], (int, float)) or isinstance(raw[key], bool):
            raise ConfigError(f"{path}: {key}", f"expected a number, got {raw[key]!r}")
    levy = raw.get("levy", {"kind": "zero"})
    if not isinstance(levy, dict):
        raise ConfigError(f"{path}: levy", "must be an object")
    try:
        measure = levy_from_dict(levy)
    except KeyError as exc:
        raise ConfigError(f"{path}: levy.{exc.args[0]}", "missing field") from None
    except (InvalidTripletError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: levy", str(exc)) from None
    try:
        return BernsteinTriplet(raw["m"], raw["sigma2"], measure), None, {}
    except (InvalidTripletError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: triplet", str(exc)) from None


def parse_f(spec: str, N: int):
    """``identity | delta:<n> | pk:<k> | coeffs:<path>``.

    ``coeffs`` reads coefficients c_0, c_1, ... of f = sum_k c_k p_k (comma or
    whitespace separated); polynomial inputs are propagated exactly.
    """
    if spec == "identity":
        return FactorialPoly([0.0, 1.0])
    kind, _, arg = spec.partition(":")
    try:
        if kind == "delta":
            n = int(arg)
            if not 0 <= n <= N:
                raise ConfigError("--f", f"delta index {n} outside [0, {N}]")
            f = np.zeros(N + 1)
            f[n] = 1.0
            return f
        if kind == "pk":
            return FactorialPoly.basis(int(arg))
        if kind == "coeffs":
            text = Path(arg).read_text().replace(",", " ").split()
            return FactorialPoly([float(v) for v in text])
    except FileNotFoundError:
        raise ConfigError("--f", f"file not found: {arg}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("--f", f"cannot parse {spec!r}: {exc}") from None
    raise ConfigError("--f", f"unknown function spec {spec!r}")


def _values(f, N: int) -> np.ndarray:
    if isinstance(f, FactorialPoly):
        return f(np.arange(N + 1, dtype=float))
    return np.asarray(f, dtype=float)


# -- output -------------------------------------------------------------------

def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return o if math.isfinite(o) else repr(o)
    return o


def _json_path(out) -> Path:
    p = Path(out)
    return p if p.suffix == ".json" else p.with_suffix(".json")


def write_report(out, report: dict) -> Path:
    path = _json_path(out)
    existing = {}
    if path.exists():
        # library exporters may already have written a header next to the CSV
        try:
            existing = json.loads(path.read_text())
        except json.JSONDecodeError:
            existing = {}
    existing.update(_jsonable(report))
    path.write_text(json.dumps(existing, indent=2))
    return path


def _write_table(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else
                              (str(v) if isinstance(v, (int, np.integer)) else f"{v:.17g}")
                              for v in row) + "\n")
    return path


def _csv_path(out) -> Path:
    p = Path(out)
    return p if p.suffix == ".csv" else p.with_suffix(".csv")


# -- subcommands ----------------------------------------------------------------

def cmd_gen(args, triplet, ctx) -> dict:
    g = build_generator(triplet, ChainKind(args.kind), args.n, Boundary(args.boundary))
    g.to_csv(_csv_path(args.out))
    rep = validate_generator(g)
    return {"passed": rep.ok, "generator": g.header(), "validation": rep.summary(),
            "row_sums": rep.row_sums}


def cmd_invariant(args, triplet, ctx) -> dict:
    N = args.n or auto_truncation(triplet)
    out = {"N": N}
    checks = {}
    laws = {}
    if args.method in ("solve", "both"):
        from .generator import build_lphi
        g = build_lphi(triplet, N, Boundary.REFLECTING)
        law = invariant_law(triplet, N, "solve")
        laws["solve"] = law
        res = stationarity_residual(g, law)
        out["stationarity_residual"] = res
        checks["stationarity"] = res <= 1e-10
    if args.method in ("series", "both"):
        laws["series"] = nphi_series(triplet, N)
    if args.method == "both":
        diff = float(np.max(np.abs(laws["solve"].weights - laws["series"].weights)))
        out["solve_vs_series_sup"] = diff
        checks["agreement"] = diff <= args.agree_tol
    primary = laws.get("solve") or laws["series"]
    cert = moment_certificate(primary, triplet, args.kmax)
    out["moment_residuals"] = cert.residuals
    out["moment_inconclusive"] = cert.inconclusive
    conclusive = cert.residuals[~cert.inconclusive]
    checks["moments"] = bool(np.all(conclusive <= 1e-7))
    checks.update({f"mass_{k}": v["mass_ok"] for k, v in
                   ((k, law.check()) for k, law in laws.items())})
    primary.certificates.update({"moment_residuals": cert.residuals.tolist()})
    primary.to_csv(_csv_path(args.out))
    if args.method == "both":
        laws["series"].to_csv(_csv_path(args.out).with_name(
            _csv_path(args.out).stem + "_series.csv"))
    out["tail_mass_bound"] = primary.tail_mass_bound
    out["method"] = primary.method.value
    out["checks"] = checks
    out["passed"] = all(checks.values())
    return out


def cmd_spectrum(args, triplet, ctx) -> dict:
    S = build_spectral_system(triplet, args.kmax, args.n)
    S.to_csv(_csv_path(args.out))
    B = biorthogonality_matrix(S)
    bpath = _csv_path(args.out).with_name(_csv_path(args.out).stem + "_biorth.csv")
    _write_table(bpath, ["k"] + [f"l{l}" for l in range(S.K + 1)],
                 ([k] + list(B[k]) for k in range(S.K + 1)))
    eig = [eigen_residual(S, k) for k in range(S.K + 1)]
    out = {"t_star": S.t_star, "K": S.K, "N": S.N, "dps": S.dps,
           "biorthogonality_max": float(np.max(np.abs(B))),
           "eigen_residuals": eig, "biorthogonality_csv": str(bpath),
           # the biorthogonality sums stop at N; this mass is what they miss
           "law_mass_beyond_N": float(max(0.0, 1.0 - S.weights.sum()))}
    checks = {"biorthogonality": out["biorthogonality_max"] <= 1e-7,
              "eigen": max(eig) <= 1e-8}
    if triplet.sigma2 > 0:
        bb = bessel_bounds(S)
        out["bessel"] = bb
        checks["bessel"] = _bessel_ok(bb)
    out["checks"] = checks
    out["passed"] = all(checks.values())
    return out


def _bessel_ok(bb: dict) -> bool:
    return bool(bb["bound_one"] and bb.get("bound_dphi_ok", True))


def _law_N(triplet, tail: float = 1e-16) -> int:
    law = invariant_law(triplet, None, "solve")
    w = law.weights
    tails = np.cumsum(w[::-1])[::-1]
    idx = np.nonzero(tails < tail)[0]
    return int(idx[0]) if idx.size else law.N


def cmd_evolve(args, triplet, ctx) -> dict:
    N = args.n
    f = parse_f(args.f, N)
    fv = _values(f, N)
    out = {"t": args.t, "beta": args.beta, "f": args.f, "N": N}
    if args.t == 0 and args.beta is None:
        res = fv.copy()
        out["method"] = "identity"
    elif args.beta is not None:
        K = subordinated_K(triplet, args.t, args.beta)
        if isinstance(f, FactorialPoly):
            K = max(K, f.degree)
        S = build_spectral_system(triplet, K, N)
        res = subordinated_apply(S, f, args.t, args.beta)
        out.update(method="subordinated_spectral", K=K)
    else:
        poly = isinstance(f, FactorialPoly)
        try:
            K = f.degree if poly else envelope_K(triplet, args.t)
            S = build_spectral_system(triplet, max(K, 1), N)
            res = semigroup_apply(S, f, args.t)
            out.update(method="spectral", K=S.K,
                       tail_bound=0.0 if poly else tail_bound(S, args.t))
        except ThresholdError:
            if args.fallback != "uniformization":
                raise
            from .generator import build_lphi
            Nt = max(4 * N, N + 200)
            g = build_lphi(triplet, Nt, Boundary.REFLECTING)
            big = np.concatenate([fv, np.full(Nt - N, fv[-1])]) if not poly else \
                _values(f, Nt)
            res = uniformization_apply(g, big, args.t)[: N + 1]
            out.update(method="uniformization", truncation=Nt)
    _write_table(_csv_path(args.out), ["n", "f", "Kf"],
                 ([n, fv[n], res[n]] for n in range(N + 1)))
    out["passed"] = bool(np.all(np.isfinite(res)))
    return out


def cmd_simulate(args, triplet, ctx) -> dict:
    kind = ChainKind(args.kind)
    batch = simulate_endpoints(triplet, kind, args.n0, args.t, args.replicas, args.seed)
    means, ses = factorial_moment_estimates(batch.states, args.kmax)
    rep = mc_moment_check(triplet, kind, args.n0, args.t, args.replicas, args.seed,
                          args.kmax)
    n_paths = min(args.paths, args.replicas)
    paths = simulate_paths(triplet, kind, args.n0, args.t, n_paths, args.seed)
    paths_to_csv(paths, _csv_path(args.out))
    skip_free = all(p.is_skip_free() for p in paths) and batch.non_skip_free == 0
    hist = np.bincount(batch.states)
    hpath = _csv_path(args.out).with_name(_csv_path(args.out).stem + "_endpoints.csv")
    _write_table(hpath, ["n", "count"], ([n, int(c)] for n, c in enumerate(hist)))
    checks = {"skip_free": skip_free, "moments": rep.passed}
    return {"seed": args.seed, "replicas": args.replicas, "kind": kind.value,
            "n0": args.n0, "t": args.t, "paths_exported": n_paths,
            "factorial_moments": means, "standard_errors": ses,
            "exact": rep.details["exact"], "z_scores": rep.z_scores,
            "jumps": batch.jumps, "max_state": batch.max_state,
            "endpoints_csv": str(hpath), "checks": checks,
            "passed": all(checks.values())}


# -- verify -----------------------------------------------------------------

def _suite_selfsim(triplet, args, rng) -> dict:
    worst = 0.0
    for _ in range(args.sweep):
        k = int(rng.integers(0, 6))
        n = int(rng.integers(0, 30))
        t = float(rng.uniform(0, 3))
        a = float(rng.uniform(0, 1))
        lhs, rhs = selfsimilarity_identity(triplet, k, n, t, a)
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    mc = selfsimilarity_mc_test(triplet, 5, 1.0, 0.5, args.replicas, args.seed)
    fault = selfsimilarity_mc_test(triplet, 5, 1.0, 0.5, args.replicas, args.seed,
                                   up_factor=1.1)
    checks = {"exact_sweep": worst <= 1e-11, "mc": mc.passed,
              "fault_detected": not fault.passed}
    return {"worst_relative": worst, "mc": json.loads(mc.to_json()),
            "fault": json.loads(fault.to_json()), "checks": checks}


def _suite_gateway(triplet, args, rng) -> dict:
    worst = 0.0
    cases = [(k, 0.0, float(rng.uniform(0.1, 3))) for k in range(4)]
    cases += [(int(rng.integers(0, 5)), float(rng.uniform(0, 8)),
               float(rng.uniform(0, 3))) for _ in range(args.sweep // 4)]
    for k, x, t in cases:
        lhs, rhs = gateway_moment_identity(triplet, k, x, t)
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    return {"worst_relative": worst, "cases": len(cases),
            "checks": {"exact_sweep": worst <= 1e-11}}


def _suite_scaling(triplet, args, rng) -> dict:
    grid = (10, 100, 1000, 10000)
    g2 = scaling_limit_check(triplet, 2, 1.0, 1.0, grid)
    g1 = scaling_limit_check(triplet, 1, 1.0, 1.0, grid)
    dec = bool(np.all(np.diff(g2) < 0))
    k1 = bool(np.all(g1 <= 1 / np.array(grid, float) * (1 + 1e-12)))
    return {"gaps_k2": g2, "gaps_k1": g1,
            "checks": {"decreasing": dec, "k1_within_1_over_n": k1}}


def _suite_spectral(triplet, args, rng) -> dict:
    K = 12
    S = build_spectral_system(triplet, K, args.n_spectral)
    B = biorthogonality_matrix(S)
    eig = [eigen_residual(S, k) for k in range(K + 1)]
    out = {"biorthogonality_max": float(np.max(np.abs(B))), "eigen_residuals": eig}
    checks = {"biorthogonality": out["biorthogonality_max"] <= 1e-7,
              "eigen": max(eig) <= 1e-8}
    if triplet.sigma2 > 0:
        bb = bessel_bounds(S)
        out["bessel"] = bb
        checks["bessel"] = _bessel_ok(bb)
    out["checks"] = checks
    return out


def _suite_ergodic(triplet, args, rng) -> dict:
    out, checks = {}, {}
    try:
        hc = hypocoercive_check(triplet, N=400, n_funcs=50, seed=args.seed)
        out["hypocoercive"] = {"constant": hc.constant, "min_margin": float(hc.margin.min()),
                               "seed": hc.seed}
        checks["hypocoercive"] = hc.ok
    except UnsupportedError as exc:
        out["hypocoercive"] = {"skipped": str(exc)}
    if triplet.sigma2 > 0 and math.isfinite(pibar0(triplet)):
        beta = m_phi(triplet) + 1.0
        t_grid = (0.75, 1.0, 1.5, 2.0, 3.0)
        K = subordinated_K(triplet, min(t_grid), beta)
        N = min(max(_law_N(triplet), 30), 150)
        S = build_spectral_system(triplet, K, N)
        f = 1.0 + np.exp(-0.5 * (np.arange(N + 1) - 2.0) ** 2)
        for Phi in ("square", "xlogx"):
            er = entropy_decay_check(S, f, beta, Phi, t_grid)
            out[f"entropy_{Phi}"] = {"beta": beta, "K": K, "N": N,
                                     "min_margin": float(er.margin.min())}
            checks[f"entropy_{Phi}"] = er.ok
    else:
        out["entropy"] = {"skipped": "needs sigma2 > 0 and finite Pibar(0)"}
    out["checks"] = checks
    return out


def _suite_golden(triplet, args, rng, family=None, params=None) -> dict:
    if family is None:
        return {"skipped": "config is not a family preset", "checks": {}}
    rep = golden_suite(family, params)
    return {**rep.to_dict(), "checks": {"golden": rep.passed}}


def cmd_verify(args, triplet, ctx) -> dict:
    suites = SUITES if args.suite == "all" else (args.suite,)
    rng = np.random.default_rng(args.seed)
    report = {"seed": args.seed, "suites": {}}
    ok = True
    for name in suites:
        t0 = time.perf_counter()
        fn = globals()[f"_suite_{name}"]
        kw = {"family": ctx["family"], "params": ctx["params"]} if name == "golden" else {}
        try:
            res = fn(triplet, args, rng, **kw)
        except REFUSALS as exc:
            res = {"refused": f"{type(exc).__name__}: {exc}", "checks": {"refused": False}}
        res["seconds"] = time.perf_counter() - t0
        res["passed"] = all(res.get("checks", {}).values())
        ok &= res["passed"]
        report["suites"][name] = res
        log.info("suite %s: %s", name, "pass" if res["passed"] else "FAIL")
    report["passed"] = ok
    return report


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skipfree",
                                description="Skip-free Markov chains from Bernstein triplets.")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("SKIPFREE_THREADS", "1")),
                   help="worker threads (env SKIPFREE_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("gen", help="generator matrix as CSV")
    common(sp)
    sp.add_argument("--kind", choices=[k.value for k in ChainKind], required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--boundary", choices=[b.value for b in Boundary],
                    default=Boundary.SUB_STOCHASTIC.value)

    sp = sub.add_parser("invariant", help="invariant law with certificates")
    common(sp)
    sp.add_argument("--method", choices=["series", "solve", "both"], default="solve")
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--kmax", type=int, default=10)
    sp.add_argument("--agree-tol", type=float, default=1e-8)

    sp = sub.add_parser("spectrum", help="eigenfunction tables")
    common(sp)
    sp.add_argument("--kmax", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)

    sp = sub.add_parser("evolve", help="apply the semigroup to a function")
    common(sp)
    sp.add_argument("--t", type=float, required=True)
    sp.add_argument("--beta", type=float, default=None)
    sp.add_argument("--f", required=True,
                    help="identity | delta:<n> | pk:<k> | coeffs:<path>")
    sp.add_argument("--n", type=int, default=40)
    sp.add_argument("--fallback", choices=["none", "uniformization"], default="none",
                    help="below the spectral threshold, use the uniformization oracle")

    sp = sub.add_parser("simulate", help="exact path simulation")
    common(sp)
    sp.add_argument("--kind", choices=[k.value for k in ChainKind], required=True)
    sp.add_argument("--n0", type=int, required=True)
    sp.add_argument("--t", type=float, required=True)
    sp.add_argument("--replicas", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--paths", type=int, default=100, help="full paths exported to CSV")
    sp.add_argument("--kmax", type=int, default=3)

    sp = sub.add_parser("verify", help="run verification suites")
    common(sp)
    sp.add_argument("--suite", choices=SUITES + ("all",), default="all")
    sp.add_argument("--seed", type=int, default=20240101)
    sp.add_argument("--replicas", type=int, default=100_000)
    sp.add_argument("--sweep", type=int, default=200)
    sp.add_argument("--n-spectral", type=int, default=400)
    return p


COMMANDS = {"gen": cmd_gen, "invariant": cmd_invariant, "spectrum": cmd_spectrum,
            "evolve": cmd_evolve, "simulate": cmd_simulate, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    base = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
            "threads": args.threads}
    stale = _json_path(args.out)
    if stale.exists():
        stale.unlink()
    try:
        triplet, family, params = load_config(args.config)
        base.update(triplet=triplet.to_dict(), family=family, params=params,
                    constants={k: float(v) for k, v in
                               vars(derived_constants(triplet)).items()})
        ctx = {"family": family, "params": params}
        report = COMMANDS[args.command](args, triplet, ctx)
    except ConfigError as exc:
        write_report(args.out, {**base, "passed": False, "error": "config",
                                "location": exc.where, "message": str(exc)})
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except REFUSALS as exc:
        msg = f"{type(exc).__name__}: {exc}"
        write_report(args.out, {**base, "passed": False, "error": "refused",
                                "message": msg})
        print(f"refused: {msg}", file=sys.stderr)
        return EXIT_REFUSED
    report = {**base, **report}
    path = write_report(args.out, report)
    print(f"{args.command}: {'pass' if report['passed'] else 'FAIL'} -> {path}")
    return EXIT_OK if report["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
