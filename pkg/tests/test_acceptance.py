"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line (visible with ``pytest -s`` or in
the captured output of a failure) before asserting.
"""
import math
import time

import numpy as np
import pytest

from pjko import initial
from pjko.diagnostics import (bv_checks, edi_report, flow_interchange_check, ledger_tol,
                              young_gap)
from pjko.energy import (check_mccann, construct_superlinear, decompose_truncated, entropy,
                         exponents, power, qlaplacian)
from pjko.jko import epsilon_continuation, jko_step
from pjko.measure import (DiscreteMeasure, QuantileRep, density_to_quantile,
                          monotone_coupling_cost, quantile_to_density, wasserstein_lp_oracle,
                          wasserstein_p)
from pjko.reference import compare, cosine_mode

from conftest import M, TAU, TAU_SWEEP


def verdict(number, title, ok, detail, capsys=None):
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    else:
        print(line)
    assert ok, line


def test_criterion_01_heat_cross_validation(heat_run, capsys):
    err = compare(heat_run.traj, heat_run.snaps)["worst"]["L1"]
    mode = max(abs(cosine_mode(rho) / (0.1 * math.exp(-math.pi**2 * t)) - 1.0)
               for t, rho in heat_run.snaps)
    ok = err <= 0.05 and mode <= 1e-3 and heat_run.secs <= 120
    verdict(1, "heat cross-validation", ok,
            f"max L1 {err:.2e} (<= 0.05), mode rel err {mode:.2e} (<= 1e-3), {heat_run.secs:.1f}s",
            capsys)


def _interior_snapshots(traj, snaps):
    """Snapshots taken while both the oracle and the scheme keep the support off the walls."""
    keep = []
    for t, rho in snaps:
        X = traj.steps[int(round(t / traj.config.tau))]
        if rho.values[0] == 0 and rho.values[-1] == 0 and X.X[0] > X.a and X.X[-1] < X.b:
            keep.append((t, rho))
    return keep


def test_criterion_02_porous_cross_validation(porous_run, capsys):
    snaps = _interior_snapshots(porous_run.traj, porous_run.snaps)
    err = compare(porous_run.traj, snaps)["worst"]["L1"] if snaps else math.inf
    ok = bool(snaps) and err <= 0.08 and porous_run.secs <= 120
    verdict(2, "porous medium cross-validation", ok,
            f"max L1 {err:.2e} (<= 0.08) over {len(snaps)} snapshots up to t={snaps[-1][0] if snaps else 0}, "
            f"{porous_run.secs:.1f}s", capsys)


def test_criterion_03_doubly_nonlinear(doubly_nonlinear_run, capsys):
    run = doubly_nonlinear_run
    err = compare(run.traj, run.snaps)["worst"]["L1"]
    mass = max(abs(float(np.sum(quantile_to_density(X, M).values)) / M - 1.0) for X in run.traj.steps)
    monotone = all(np.all(np.diff(X.X) > 0) for X in run.traj.steps)
    fd_nonneg = all(np.all(rho.values >= 0) for _, rho in run.snaps)
    ok = err <= 0.1 and mass <= 1e-12 and monotone and fd_nonneg and run.secs <= 300
    verdict(3, "doubly nonlinear p=3", ok,
            f"max L1 {err:.2e} (<= 0.1), mass drift {mass:.1e}, monotone {monotone}, "
            f"oracle nonnegative {fd_nonneg}, {run.secs:.1f}s", capsys)


def test_criterion_04_edi_ledger(heat_run, porous_run, doubly_nonlinear_run, heat_tau_sweep, capsys):
    worst = []
    ok = True
    for name, run in (("heat", heat_run), ("porous", porous_run), ("p=3", doubly_nonlinear_run)):
        rep = edi_report(run.traj)
        bound = -1e-7 * (1.0 + abs(rep.initial_energy))
        ok &= rep.precursor_min >= bound and rep.global_residual >= bound
        worst.append(f"{name} min step {rep.precursor_min:.1e} global {rep.global_residual:.2e}")
    residuals = [edi_report(heat_tau_sweep[tau]).global_residual for tau in TAU_SWEEP]
    trend = all(b < a for a, b in zip(residuals, residuals[1:]))
    verdict(4, "EDI ledger", ok and trend,
            "; ".join(worst) + "; tau sweep " + " > ".join(f"{r:.4e}" for r in residuals), capsys)


def test_criterion_05_young_gap(bump_tau_sweep, capsys):
    res = [young_gap(bump_tau_sweep[tau]) for tau in TAU_SWEEP]
    gaps = [r["gap"] for r in res]
    laws = [r["law_residual"] for r in res]
    tol = ledger_tol(1.0)
    ok = (min(gaps) >= -tol and all(b < a for a, b in zip(gaps, gaps[1:]))
          and all(b < a for a, b in zip(laws, laws[1:])))
    verdict(5, "chain-rule Young gap", ok,
            "gap " + " > ".join(f"{g:.3e}" for g in gaps)
            + "; law residual " + " > ".join(f"{v:.3e}" for v in laws), capsys)


def test_criterion_06_flow_interchange(heat_run, porous_run, doubly_nonlinear_run, indicator_run,
                                       capsys):
    runs = {"heat": (heat_run, entropy()), "porous": (porous_run, power(2)),
            "p=3": (doubly_nonlinear_run, qlaplacian(3)), "indicator": (indicator_run, entropy())}
    ok = True
    notes = []
    for name, (run, energy) in runs.items():
        r1, r2 = flow_interchange_check(run.traj, 1.0), flow_interchange_check(run.traj, 2.0)
        ok &= r1["monotone"] and r2["monotone"] and r2["budget_ok"]
        alpha = exponents(energy, run.traj.config.p, 1).alpha
        notes.append(f"{name} alpha={alpha:g} beta=2 slack {r2['budget_slack']:.2e}")
    verdict(6, "flow interchange", ok, "; ".join(notes), capsys)


def test_criterion_07_bv(heat_run, porous_run, doubly_nonlinear_run, indicator_run, capsys):
    increases = {}
    for name, run in (("heat", heat_run), ("porous", porous_run), ("p=3", doubly_nonlinear_run),
                      ("indicator", indicator_run)):
        increases[name] = bv_checks(run.traj)["max_increase"]
    rep = bv_checks(indicator_run.traj)
    ok = (all(v <= 1e-7 for v in increases.values()) and math.isfinite(rep["C_tilde"])
          and rep["decay_slope"] >= rep["slope_floor"])
    verdict(7, "BV suite", ok,
            ", ".join(f"{k} max dTV {v:.1e}" for k, v in increases.items())
            + f"; sup TV t^(1/q) {rep['C_tilde']:.3f}; decay slope {rep['decay_slope']:.3f}"
            f" (>= {rep['slope_floor']:.3f})", capsys)


def _random_atoms(rng):
    k = int(rng.integers(1, 6))
    return DiscreteMeasure(rng.uniform(-1, 1, k), rng.dirichlet(np.ones(k)))


def test_criterion_08_transport_exactness(capsys):
    rng = np.random.default_rng(2024)
    lp_worst = 0.0
    for _ in range(100):
        mu, nu = _random_atoms(rng), _random_atoms(rng)
        p = float(rng.uniform(1.1, 4.0))
        lp_worst = max(lp_worst, abs(wasserstein_lp_oracle(mu, nu, p) - monotone_coupling_cost(mu, nu, p)))
    axiom_worst = 0.0
    for _ in range(100):
        reps = []
        for _ in range(3):
            x = np.sort(rng.uniform(0, 1, 33))
            reps.append(QuantileRep(0.0, 1.0, x))
        X, Y, Z = reps
        p = float(rng.uniform(1.1, 4.0))
        axiom_worst = max(axiom_worst, wasserstein_p(X, X, p), abs(wasserstein_p(X, Y, p) - wasserstein_p(Y, X, p)),
                          wasserstein_p(X, Z, p) - wasserstein_p(X, Y, p) - wasserstein_p(Y, Z, p))
    ok = lp_worst <= 1e-12 and axiom_worst <= 1e-12
    verdict(8, "transport kernel exactness", ok,
            f"LP deviation {lp_worst:.1e}, metric axiom violation {axiom_worst:.1e}", capsys)


def test_criterion_09_convex_analysis(capsys):
    passes = [(power(2), 2), (entropy(), 1), (entropy(), 2), (entropy(), 3), (entropy(), 5),
              (power(2), 1), (power(0.3), 1), (power(1.5), 1), (power(4), 1)]
    mccann_ok = all(bool(check_mccann(e, d)) for e, d in passes) and not bool(check_mccann(power(0.3), 2))
    dec = decompose_truncated(power(2), 0.5, 2.0, 2)
    z = np.geomspace(1e-4, 1e4, 256)
    tilde = dec.f_tilde(z)
    recon = float(np.max(np.abs(dec.f1(z) - dec.f2(z) - tilde)))
    dec_ok = (recon <= 1e-8 * (1.0 + float(np.max(np.abs(tilde))))
              and bool(check_mccann(dec.f1, 2)) and bool(check_mccann(dec.f2, 2)))
    phi = lambda x: np.maximum(x - 1.0, 0.0) ** 2
    sup = construct_superlinear(phi, d=1)
    zz = np.geomspace(1e-3, 1e6, 512)
    ratio = sup.Phi(zz) / zz
    sup_ok = (bool(np.all(sup.Phi(zz) <= sup.C * (phi(zz) + 1.0) * (1 + 1e-6)))
              and bool(np.all(np.diff(ratio[zz > 10]) > 0)) and ratio[-1] > ratio[np.searchsorted(zz, 1e3)]
              and bool(check_mccann(sup.Phi, 1)) and math.isfinite(sup.C))
    verdict(9, "convex-analysis kernel", mccann_ok and dec_ok and sup_ok,
            f"McCann catalog {mccann_ok}, reconstruction {recon:.1e}, superlinear C={sup.C:.4g} ok {sup_ok}",
            capsys)


def test_criterion_10_epsilon_continuation(capsys):
    X = density_to_quantile(initial.bump(0, 1, M), M)
    res = epsilon_continuation(X, entropy(), 2.0, TAU, (1e-1, 1e-2, 1e-3, 1e-4))
    dists = [d for eps, d in res.continuation if eps > 0 and not math.isnan(d)]
    direct = jko_step(X, entropy(), 2.0, TAU)
    limit = wasserstein_p(res.next, direct.next, 2.0)
    last = jko_step(X, entropy(), 2.0, TAU, 1e-4)
    smallest = wasserstein_p(last.next, direct.next, 2.0)
    ok = all(b < a for a, b in zip(dists, dists[1:])) and limit <= 1e-6 and smallest <= 1e-6 and len(dists) == 3
    verdict(10, "epsilon continuation", ok,
            "distances " + " > ".join(f"{d:.2e}" for d in dists)
            + f"; limit vs direct {limit:.1e}; eps=1e-4 vs direct {smallest:.1e} (<= 1e-6)", capsys)
