"""Desk-scale invariant suites bundled by the ``validate`` command.

Each suite returns ``(passed, detail)``. Sizes are reduced so the whole
registry finishes in a few minutes on one core.
"""
from __future__ import annotations

import time
from functools import lru_cache

import numpy as np

from . import initial
from .diagnostics import bv_checks, edi_report, flow_interchange_check, young_gap
from .energy import (check_mccann, construct_superlinear, decompose_truncated, entropy, power,
                     qlaplacian)
from .jko import SchemeConfig, epsilon_continuation, jko_step, run_scheme
from .measure import (DiscreteMeasure, QuantileRep, monotone_coupling_cost, wasserstein_lp_oracle,
                      wasserstein_p)
from .reference import FDConfig, compare, cosine_mode, fd_solve

SMALL_M = 128
SMALL_T = 0.02
TAU = 2e-3


@lru_cache(maxsize=None)
def _heat_run(tau=TAU, ic="bump"):
    rho0 = (initial.bump(0, 1, SMALL_M, 0.5, 0.1, 1.0) if ic == "bump"
            else initial.smoothed_indicator(0, 1, SMALL_M))
    return run_scheme(rho0, SchemeConfig(2.0, tau, SMALL_T, SMALL_M), entropy())


@lru_cache(maxsize=None)
def _heat_report(tau=TAU):
    return edi_report(_heat_run(tau))


def _random_quantiles(rng, m):
    x = np.sort(rng.uniform(0, 1, m + 1))
    x[0], x[-1] = min(x[0], 0.0), max(x[-1], 1.0)
    return QuantileRep(0.0, 1.0, x)


def suite_transport_exactness(wp=None):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(25):
        k, l_ = rng.integers(1, 5, 2)
        mu = DiscreteMeasure(rng.uniform(0, 1, k), rng.dirichlet(np.ones(k)))
        nu = DiscreteMeasure(rng.uniform(0, 1, l_), rng.dirichlet(np.ones(l_)))
        p = float(rng.choice([1.5, 2.0, 3.0]))
        worst = max(worst, abs(wasserstein_lp_oracle(mu, nu, p) - monotone_coupling_cost(mu, nu, p)))
    return worst <= 1e-12, f"max deviation {worst:.2e}"


def suite_metric_axioms(wp=None):
    wp = wasserstein_p if wp is None else wp
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        X, Y, Z = (_random_quantiles(rng, 16) for _ in range(3))
        p = float(rng.uniform(1.1, 4.0))
        worst = max(worst, abs(wp(X, X, p)), abs(wp(X, Y, p) - wp(Y, X, p)),
                    wp(X, Z, p) - wp(X, Y, p) - wp(Y, Z, p))
    return worst <= 1e-12, f"worst violation {worst:.2e}"


def suite_mccann_catalog(wp=None):
    cases = [(power(2), 2, True), (entropy(), 3, True), (power(0.3), 1, True),
             (power(0.3), 2, False), (entropy(), 1, True)]
    bad = [f"{e.name} d={d}" for e, d, want in cases if bool(check_mccann(e, d)) != want]
    return not bad, "all documented outcomes" if not bad else f"unexpected: {bad}"


def suite_decomposition(wp=None):
    dec = decompose_truncated(power(2), 0.5, 2.0, 2)
    z = np.geomspace(0.05, 20, 60)
    err = float(np.max(np.abs(dec.f1(z) - dec.f2(z) - dec.f_tilde(z))))
    ok = err <= 1e-8 and bool(check_mccann(dec.f1, 2)) and bool(check_mccann(dec.f2, 2))
    return ok, f"reconstruction error {err:.2e}"


def suite_superlinear(wp=None):
    res = construct_superlinear(lambda z: np.maximum(z - 1.0, 0.0) ** 2, d=1)
    z = np.geomspace(1e-3, 1e6, 256)
    bounded = bool(np.all(res.Phi(z) <= res.C * (np.maximum(z - 1.0, 0.0) ** 2 + 1.0) * (1 + 1e-6)))
    ok = res.superlinear and bool(res.mccann) and bounded and np.isfinite(res.C)
    return ok, f"C={res.C:.4g}"


def suite_energy_monotone(wp=None):
    tr = _heat_run()
    F = tr.energies()
    budget = float(tr.transport_terms().sum())
    ok = bool(np.all(np.diff(F) <= 1e-9 * (1 + abs(F[0])))) and budget <= F[0] - F[-1] + 1e-8
    return ok, f"energy drop {F[0] - F[-1]:.3e}, transport {budget:.3e}"


def suite_edi_precursor(wp=None):
    rep = _heat_report()
    return rep.precursor_min >= -rep.tol, f"min residual {rep.precursor_min:.2e}"


def suite_edi_global(wp=None):
    rep = _heat_report()
    return rep.global_residual >= -rep.tol, f"residual {rep.global_residual:.3e}"


def suite_young(wp=None):
    g1 = young_gap(_heat_run(TAU))
    g2 = young_gap(_heat_run(2 * TAU))
    ok = g1["gap"] >= -1e-12 and g1["gap"] < g2["gap"] and g1["law_residual"] < g2["law_residual"]
    return ok, f"gap {g2['gap']:.2e} -> {g1['gap']:.2e}"


def suite_flow_interchange(wp=None):
    tr = _heat_run()
    r1, r2 = flow_interchange_check(tr, 1.0), flow_interchange_check(tr, 2.0)
    ok = r1["monotone"] and r2["monotone"] and r2["budget_ok"]
    return ok, f"budget slack {r2['budget_slack']:.3e}"


def suite_bv(wp=None):
    tr = _heat_run(TAU, "indicator")
    rep = bv_checks(tr)
    ok = rep["monotone"] and rep["decay_slope"] >= rep["slope_floor"]
    return ok, f"max TV increase {rep['max_increase']:.2e}, decay slope {rep['decay_slope']:.3f}"


def suite_continuation(wp=None):
    X = QuantileRep(0, 1, _heat_run().steps[0].X)
    res = epsilon_continuation(X, entropy(), 2.0, TAU, (1e-1, 1e-2, 1e-3, 1e-4))
    dists = [d for _, d in res.continuation[1:4]]
    direct = jko_step(X, entropy(), 2.0, TAU)
    last = jko_step(X, entropy(), 2.0, TAU, 1e-4, start=res.next)
    ok = bool(np.all(np.diff(dists) < 0)) and wasserstein_p(last.next, direct.next, 2.0) <= 1e-3
    return ok, "distances " + ", ".join(f"{d:.2e}" for d in dists)


def suite_heat_oracle(wp=None):
    rho0 = initial.cosine(0, 1, SMALL_M, 0.1)
    snaps = fd_solve(rho0, entropy(), 2.0, FDConfig(SMALL_M, SMALL_T, snapshot_times=(0.01, 0.02)))
    rel = max(abs(cosine_mode(r) / (0.1 * np.exp(-np.pi**2 * t)) - 1) for t, r in snaps)
    tr = run_scheme(rho0, SchemeConfig(2.0, TAU, SMALL_T, SMALL_M), entropy())
    err = compare(tr, snaps)["worst"]["L1"]
    return rel <= 1e-3 and err <= 0.05, f"mode error {rel:.2e}, L1 {err:.2e}"


def suite_doubly_nonlinear(wp=None):
    rho0 = initial.bump(0, 1, 64, 0.5, 0.1, 1.0)
    tr = run_scheme(rho0, SchemeConfig(3.0, TAU, 0.01, 64), qlaplacian(3))
    snaps = fd_solve(rho0, qlaplacian(3), 3.0, FDConfig(64, 0.01, snapshot_times=(0.01,)))
    err = compare(tr, snaps)["worst"]["L1"]
    return err <= 0.1, f"L1 {err:.2e}"


SUITES = {
    "transport exactness (LP oracle)": suite_transport_exactness,
    "W_p metric axioms": suite_metric_axioms,
    "McCann catalog outcomes": suite_mccann_catalog,
    "truncation decomposition": suite_decomposition,
    "superlinear construction": suite_superlinear,
    "energy monotone and transport budget": suite_energy_monotone,
    "EDI precursor per step": suite_edi_precursor,
    "EDI global residual": suite_edi_global,
    "Young gap and velocity law": suite_young,
    "flow interchange and L^beta budget": suite_flow_interchange,
    "BV monotone and decay rate": suite_bv,
    "entropic continuation": suite_continuation,
    "heat oracle cross-check": suite_heat_oracle,
    "doubly nonlinear oracle cross-check": suite_doubly_nonlinear,
}


def run_suites(wp=None, names=None):
    """Run every registered suite; failures and exceptions become report entries."""
    rows = []
    for name, fn in SUITES.items():
        if names is not None and name not in names:
            continue
        start = time.perf_counter()
        try:
            ok, detail = fn(wp=wp)
        except Exception as exc:  # a crashing suite is a failing suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        rows.append((name, bool(ok), detail, time.perf_counter() - start))
    return rows
