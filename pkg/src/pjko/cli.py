"""Command line front end: ``run``, ``sweep``, ``validate`` and ``report``.

Exit codes are 0 when every enabled check passes, 1 when a check fails and
2 for configuration or I/O problems. ``PJKO_OUTPUT_ROOT`` overrides the
directory that relative output paths are resolved against.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .config import config_dict, load_config
from .diagnostics import (bv_checks, edi_report, flow_interchange_check, ledger_tol,
                          tv_trajectory, young_gap)
from .energy import check_mccann, exponents
from .errors import ConfigError, PJKOError
from .initial import make_initial
from .jko import SchemeConfig, jko_step, run_scheme
from .measure import (density_to_quantile, quantile_to_density, renyi, wasserstein_p,
                      write_snapshot)
from .reference import FDConfig, compare, fd_solve

OUTPUT_ENV = "PJKO_OUTPUT_ROOT"
DIAG_COLUMNS = ("step", "t", "energy", "transport_term", "slope_term", "kinetic_term",
                "edi_precursor_residual", "tv", "renyi_beta", "lalpha", "young_gap_term")


def resolve_output(path):
    root = os.environ.get(OUTPUT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _num(x):
    return f"{float(x):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else _num(v) for v in row) + "\n")


def _scheme_config(cfg):
    return SchemeConfig(p=cfg.p, tau=cfg.tau, T=cfg.T, m=cfg.m, eps_schedule=cfg.eps_schedule,
                        inner_tol=cfg.inner_tol, inner_max_iter=cfg.inner_max_iter)


def _plain_rows(traj, spec, cfg):
    """Ledger rows without the interpolation terms (used when EDI is off or the run aborted)."""
    ex = exponents(spec, cfg.p, 1)
    F = traj.energies()
    tv = tv_trajectory(traj, cfg.n)
    rows = []
    for k in range(1, len(traj.steps)):
        X = traj.steps[k]
        rows.append([k, k * cfg.tau, F[k], traj.results[k - 1].transport_term, math.nan,
                     traj.results[k - 1].transport_term, math.nan, tv[k],
                     renyi(X, ex.beta) if np.isfinite(ex.beta) else math.nan,
                     renyi(X, ex.alpha) if cfg.lalpha and np.isfinite(ex.alpha) else math.nan,
                     math.nan])
    return rows


def execute_run(cfg, quiet=True):
    """Run one configuration and write its ledger, snapshots and manifest.

    Returns ``(manifest, trajectory)``; the trajectory is ``None`` when the
    solver failed before producing one.
    """
    start = time.perf_counter()
    spec = cfg.energy_spec()
    out = resolve_output(cfg.output)
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    ex = exponents(spec, cfg.p, cfg.d)
    try:
        mc = check_mccann(spec, cfg.d)
        mccann = {"passed": bool(mc), "reason": mc.reason}
    except PJKOError as exc:
        mccann = {"passed": False, "reason": str(exc)}
    tol = ledger_tol(1.0, cfg.inner_tol)
    manifest = {
        "tool": "pjko", "version": __version__, "config": config_dict(cfg),
        "exponents": {"q": ex.q, "alpha": ex.alpha, "beta": ex.beta, "theta": ex.theta,
                      "branch": ex.branch},
        "mccann": mccann,
        "tolerances": {"inner_tol": cfg.inner_tol, "ledger_tol_unit": tol,
                       "energy_monotone_rel": 1e-9, "budget_abs": 1e-8, "young_gap": tol,
                       "flow_interchange_rel": 1e-7, "bv_step": 1e-7,
                       "oracle_l1_max": cfg.oracle_l1_max},
        "checks": {}, "failures": [], "status": 0,
    }
    traj = None
    rows = []
    try:
        rho0 = make_initial(cfg.initial, cfg.a, cfg.b, cfg.n)
        traj = run_scheme(rho0, _scheme_config(cfg), spec)
        checks = manifest["checks"]
        if not traj.complete:
            manifest["failures"].append(f"solver aborted: {traj.reason}")
            rows = _plain_rows(traj, spec, cfg)
        else:
            F = traj.energies()
            scale_tol = ledger_tol(F[0], cfg.inner_tol)
            manifest["tolerances"]["ledger_tol"] = scale_tol
            checks["energy_monotone"] = bool(np.all(np.diff(F) <= 1e-9 * (1 + abs(F[0]))))
            budget = float(traj.transport_terms().sum())
            checks["transport_budget"] = bool(budget <= F[0] - F[-1] + 1e-8)
            if cfg.edi:
                rep = edi_report(traj, tv_grid=cfg.n)
                checks["edi_global"] = bool(rep.global_residual >= -rep.tol)
                checks["edi_precursor"] = bool(rep.precursor_min >= -rep.tol)
                manifest["edi_global_residual"] = rep.global_residual
                manifest["young_gap"] = rep.young_gap
                manifest["law_residual"] = rep.law_residual
                rows = [[r.k, r.t, r.energy, r.transport_term, r.slope_term, r.kinetic_term,
                         r.edi_precursor_residual, r.tv, r.renyi,
                         r.lalpha if cfg.lalpha else math.nan,
                         r.young_gap_term if cfg.young else math.nan] for r in rep.ledger]
            else:
                rows = _plain_rows(traj, spec, cfg)
                if cfg.young:
                    yg = young_gap(traj)
                    manifest["young_gap"] = yg["gap"]
                    manifest["law_residual"] = yg["law_residual"]
                    for row, g in zip(rows, yg["per_step"]):
                        row[10] = g
            if cfg.young:
                checks["young_nonnegative"] = bool(manifest["young_gap"] >= -scale_tol)
            for beta in cfg.flow_interchange:
                fi = flow_interchange_check(traj, beta)
                checks[f"flow_interchange_beta_{beta:g}"] = fi["monotone"]
                if "budget_ok" in fi:
                    checks[f"lbeta_budget_beta_{beta:g}"] = fi["budget_ok"]
            if cfg.bv:
                bv = bv_checks(traj, tv=tv_trajectory(traj, cfg.n))
                checks["bv_monotone"] = bv["monotone"]
                manifest["bv"] = {"C_tilde": bv["C_tilde"], "decay_slope": bv["decay_slope"]}
            if cfg.oracle:
                times = cfg.snapshot_times or (cfg.T,)
                snaps = fd_solve(rho0, spec, cfg.p, FDConfig(cfg.n, cfg.T, cfg.cfl_safety, times))
                cmp_ = compare(traj, snaps)
                manifest["oracle"] = cmp_["worst"]
                if cfg.oracle_l1_max > 0:
                    checks["oracle_l1"] = bool(cmp_["worst"]["L1"] <= cfg.oracle_l1_max)
        manifest["failures"] += [name for name, ok in checks.items() if not ok]
        for t in cfg.snapshot_times:
            k = min(int(round(t / cfg.tau)), len(traj.steps) - 1)
            write_snapshot(os.path.join(out, f"density_{t:.6g}.csv"),
                           quantile_to_density(traj.steps[k], cfg.n))
    except ConfigError:
        raise
    except PJKOError as exc:
        manifest["failures"].append(f"{type(exc).__name__}: {exc}")
    _write_csv(os.path.join(out, "diagnostics.csv"), DIAG_COLUMNS, rows)
    manifest["status"] = 1 if manifest["failures"] else 0
    manifest["wall_clock_s"] = time.perf_counter() - start
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    if not quiet:
        print(f"{cfg.output}: status {manifest['status']}"
              + (f" ({'; '.join(manifest['failures'])})" if manifest["failures"] else ""))
    return manifest, traj


def execute_sweep(base, axis, values, quiet=True):
    """Run ``base`` along one refinement axis and check the expected trends."""
    values = [float(v) for v in values]
    if len(values) < 2:
        raise ConfigError("a sweep needs at least two values")
    diffs = np.diff(values)
    if not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ConfigError("sweep values must be monotone")
    out = resolve_output(base.output)
    os.makedirs(out, exist_ok=True)
    legs = []
    if axis == "eps":
        rho0 = make_initial(base.initial, base.a, base.b, base.n)
        X0 = density_to_quantile(rho0, base.m)
        prev = None
        for e in values:
            entry = {"value": e, "status": "ok"}
            try:
                res = jko_step(X0, base.energy_spec(), base.p, base.tau, e, start=prev,
                               inner_tol=base.inner_tol, inner_max_iter=base.inner_max_iter)
                entry["dist_prev_wp"] = math.nan if prev is None else wasserstein_p(prev, res.next, base.p)
                entry["min_density"] = float(res.next.cell_density.min())
                prev = res.next
            except PJKOError as exc:
                entry["status"] = f"{type(exc).__name__}: {exc}"
            legs.append(entry)
        d = [leg.get("dist_prev_wp", math.nan) for leg in legs[1:]]
        trends = {"eps_distance_decreasing": bool(np.all(np.diff(d) < 0))}
    elif axis in ("tau", "grid"):
        trajs = []
        for v in values:
            if axis == "tau":
                cfg = base.with_(tau=v, output=os.path.join(base.output, f"tau_{v:g}"))
            else:
                cfg = base.with_(m=int(v), n=int(v), output=os.path.join(base.output, f"grid_{int(v)}"),
                                 oracle=True, snapshot_times=base.snapshot_times or (base.T,))
            entry = {"value": v, "status": "ok"}
            try:
                man, traj = execute_run(cfg)
                entry["status"] = "ok" if man["status"] == 0 else "; ".join(man["failures"])
                entry["edi_residual"] = man.get("edi_global_residual", math.nan)
                entry["young_gap"] = man.get("young_gap", math.nan)
                entry["law_residual"] = man.get("law_residual", math.nan)
                entry["oracle_l1"] = man.get("oracle", {}).get("L1", math.nan)
            except PJKOError as exc:
                traj = None
                entry["status"] = f"{type(exc).__name__}: {exc}"
            if traj is not None and trajs and trajs[-1] is not None:
                last, cur = trajs[-1].steps[-1], traj.steps[-1]
                n = max(base.n, cur.m, last.m)
                entry["dist_prev_l1"] = float(np.sum(np.abs(quantile_to_density(cur, n).values
                                                            - quantile_to_density(last, n).values)) / n)
                if cur.m == last.m:
                    entry["dist_prev_wp"] = wasserstein_p(cur, last, base.p)
            trajs.append(traj)
            legs.append(entry)
        if axis == "tau":
            order = np.argsort(values)
            gaps = np.array([legs[i].get("young_gap", math.nan) for i in order])
            res_ = np.array([legs[i].get("edi_residual", math.nan) for i in order])
            trends = {"young_gap_decreasing_with_tau": bool(np.all(np.diff(gaps) > 0)),
                      "edi_residual_decreasing_with_tau": bool(np.all(np.diff(res_) >= 0))}
        else:
            order = np.argsort(values)
            l1 = np.array([legs[i].get("oracle_l1", math.nan) for i in order])
            trends = {"oracle_l1_decreasing_with_grid": bool(np.all(np.diff(l1) < 0))}
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; use tau, eps or grid")
    cols = ["value", "status", "edi_residual", "young_gap", "law_residual", "oracle_l1",
            "dist_prev_wp", "dist_prev_l1", "min_density"]
    _write_csv(os.path.join(out, "sweep.csv"), cols,
               [[leg.get(c, math.nan) if c != "status" else leg["status"] for c in cols] for leg in legs])
    failed = [leg for leg in legs if leg["status"] != "ok"]
    report = {"axis": axis, "legs": legs, "trends": trends,
              "status": 0 if all(trends.values()) and not failed else 1}
    if not quiet:
        for name, ok in trends.items():
            print(f"{name:40s} {'PASS' if ok else 'FAIL'}")
    return report


def validate(wp=None, stream=None):
    from .suites import run_suites
    stream = sys.stdout if stream is None else stream
    rows = run_suites(wp=wp)
    width = max(len(r[0]) for r in rows)
    for name, ok, detail, secs in rows:
        stream.write(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {secs:7.2f}s  {detail}\n")
    return 0 if all(r[1] for r in rows) else 1, rows


def report(directory, stream=None):
    stream = sys.stdout if stream is None else stream
    path = os.path.join(directory, "diagnostics.csv")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    cols = ("step", "t", "energy", "slope_term", "kinetic_term", "edi_precursor_residual", "tv",
            "young_gap_term")
    stream.write("".join(f"{c[:14]:>15s}" for c in cols) + "\n")
    for r in rows:
        stream.write("".join(f"{float(r[c]):>15.6g}" for c in cols) + "\n")
    if rows:
        diss = sum(float(r["slope_term"]) + float(r["kinetic_term"]) for r in rows)
        stream.write(f"steps {len(rows)}  total dissipation {diss:.6g}  "
                     f"final energy {float(rows[-1]['energy']):.6g}\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="pjko", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    run_p = sub.add_parser("run", help="run one configuration")
    run_p.add_argument("config")
    sweep_p = sub.add_parser("sweep", help="refinement sweep along one axis")
    sweep_p.add_argument("config")
    sweep_p.add_argument("--axis", required=True, choices=("tau", "eps", "grid"))
    sweep_p.add_argument("--values", required=True)
    sub.add_parser("validate", help="run the invariant suites")
    rep_p = sub.add_parser("report", help="summarise a diagnostics.csv")
    rep_p.add_argument("directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            manifest, _ = execute_run(load_config(args.config), quiet=False)
            return manifest["status"]
        if args.verb == "sweep":
            try:
                values = [float(v) for v in args.values.split(",") if v.strip()]
            except ValueError:
                raise ConfigError(f"bad --values {args.values!r}") from None
            return execute_sweep(load_config(args.config), args.axis, values, quiet=False)["status"]
        if args.verb == "validate":
            return validate()[0]
        if args.verb == "report":
            return report(args.directory)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
