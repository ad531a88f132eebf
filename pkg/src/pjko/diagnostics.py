"""Numerical ledgers for the dissipation structure of a computed trajectory.

Slopes, velocities and gradients are evaluated in mass coordinates whenever a
quantile state is available: for a density with quantile function ``X`` one
has ``grad L_f(rho) / rho = d/ds L_f(rho(X(s)))``, so the slope functional is
``(1/q) int_0^1 |d/ds L_f|^q ds`` and the discrete optimality condition of a
step bounds it by the transport cost exactly (a convexity argument). The
density-grid version :func:`slope_term` is kept for densities given on a grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .energy import (EnergySpec, as_derived, conjugate, decompose_truncated, exponents,
                     reg_h_prime)
from .errors import DomainError, IncompleteTrajectory, RangeError
from .jko import _with_entropy, degiorgi_step, self_barrier
from .measure import (QuantileRep, energy_functional, quantile_to_density, renyi, tv_norm,
                      wasserstein_pp)

GAUSS_POINTS = 8
EXCLUDE_REL = 1e-12


def gauss_unit(n=GAUSS_POINTS):
    """Gauss-Legendre nodes and weights on ``(0, 1)``."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def ledger_tol(scale, inner_tol=1e-9):
    return max(1e-7, 10.0 * inner_tol) * (1.0 + abs(scale))


def bp_value(t, x, p):
    """``|x|**p / (p t**(p-1))`` for ``t > 0``; ``0`` at the origin; ``+inf`` otherwise."""
    x = abs(x)
    if t > 0:
        return x**p / (p * t ** (p - 1.0))
    if t == 0 and x == 0:
        return 0.0
    return math.inf


# ---------------------------------------------------------------------------
# Slopes
# ---------------------------------------------------------------------------


def _grid_gradient(vals, dx, mask):
    """Central differences inside ``mask``, second-order one-sided at its edges."""
    n = vals.size
    grad = np.zeros(n)
    for i in np.flatnonzero(mask):
        left = i - 1 >= 0 and mask[i - 1]
        right = i + 1 < n and mask[i + 1]
        if left and right:
            grad[i] = (vals[i + 1] - vals[i - 1]) / (2 * dx)
        elif right and i + 2 < n and mask[i + 2]:
            grad[i] = (-3 * vals[i] + 4 * vals[i + 1] - vals[i + 2]) / (2 * dx)
        elif left and i - 2 >= 0 and mask[i - 2]:
            grad[i] = (3 * vals[i] - 4 * vals[i - 1] + vals[i - 2]) / (2 * dx)
        elif right:
            grad[i] = (vals[i + 1] - vals[i]) / dx
        elif left:
            grad[i] = (vals[i] - vals[i - 1]) / dx
    return grad


def slope_term(rho, energy, q, via="Lf"):
    """``(1/q) int |grad L_f(rho) / rho|**q rho dx`` on a density grid.

    ``via="fprime"`` differentiates ``f'(rho)`` instead of ``L_f(rho)``; the two
    agree up to the stencil error since ``grad L_f(rho) = rho grad f'(rho)``.
    """
    der = as_derived(energy)
    vals = rho.values
    mask = vals > EXCLUDE_REL * vals.max()
    if not np.all(mask):
        with np.errstate(all="ignore"):
            edge = der.Lf(np.array([1e-300, 1e-200]))
        if not np.all(np.isfinite(edge)) or abs(edge[1] - edge[0]) > 1.0:
            raise DomainError("pressure is unbounded at zero density; slope undefined")
    safe = np.where(mask, vals, 1.0)
    if via == "Lf":
        a = _grid_gradient(der.Lf(safe), rho.dx, mask) / safe
    elif via == "fprime":
        a = _grid_gradient(der.fp(safe), rho.dx, mask)
    else:
        raise ValueError(f"unknown evaluation {via!r}")
    return float(np.sum(np.where(mask, np.abs(a) ** q * vals, 0.0)) * rho.dx / q)


def mass_gradient(Xr, der):
    """``d/ds L_f(rho)`` on the interior nodes of a quantile state."""
    rho = Xr.cell_density
    return Xr.m * np.diff(der.Lf(rho))


def slope_quantile(Xr, energy, q):
    """Slope functional in mass coordinates, ``(1/q)(1/m) sum |m dL_f|**q`` over interior nodes."""
    der = as_derived(energy)
    g = mass_gradient(Xr, der)
    return float(np.sum(np.abs(g) ** q) / (q * Xr.m))


def _cell_pressure_gradient(Xr, der):
    L = der.Lf(Xr.cell_density)
    m = Xr.m
    a = np.empty(m)
    a[1:-1] = m * (L[2:] - L[:-2]) / 2.0
    a[0] = m * (L[1] - L[0])
    a[-1] = m * (L[-1] - L[-2])
    return a


# ---------------------------------------------------------------------------
# Ledgers
# ---------------------------------------------------------------------------


@dataclass
class StepLedger:
    k: int
    t: float
    energy: float
    transport_term: float
    slope_term: float
    kinetic_term: float
    edi_precursor_residual: float
    tv: float
    renyi: float
    lalpha: float
    young_gap_term: float

    def as_row(self):
        return asdict(self)


@dataclass
class RunReport:
    ledger: list
    initial_energy: float
    final_energy: float
    global_residual: float
    young_gap: float
    law_residual: float
    tol: float
    precursor_min: float
    tv_decay_slope: float = math.nan
    oracle_errors: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.global_residual >= -self.tol and self.precursor_min >= -self.tol

    def recomputed_residual(self):
        drop = self.initial_energy - self.final_energy
        return drop - sum(r.slope_term + r.kinetic_term for r in self.ledger)


def _require_complete(traj):
    if not traj.complete or len(traj.steps) != traj.config.n_steps + 1:
        raise IncompleteTrajectory(traj.reason or "trajectory has missing steps")


def _step_energy(traj):
    """The energy actually minimized at each step (entropic shift included when used)."""
    cfg = traj.config
    eps = cfg.eps_schedule[-1] if cfg.eps_schedule and not self_barrier(traj.energy) else 0.0
    return _with_entropy(traj.energy, eps), eps


def step_precursor(traj, k, der=None, eps=0.0, nodes=GAUSS_POINTS):
    """Variational-interpolation terms of the step ``k -> k+1``.

    Returns the integral ``(1/q) int_0^1 W_p^p(rho_s, rho_k) / (s (s tau)^(p-1)) ds``
    and the time-integrated slope ``tau int_0^1 slope(rho_s) ds``.
    """
    cfg = traj.config
    p, q, tau = cfg.p, cfg.q, cfg.tau
    if der is None:
        der, eps = _step_energy(traj)
    s_nodes, w = gauss_unit(nodes)
    prev = traj.steps[k]
    prec = slope = 0.0
    for s, ws in zip(s_nodes, w):
        hat = degiorgi_step(prev, traj.energy, p, tau, s, eps, inner_tol=cfg.inner_tol,
                            inner_max_iter=cfg.inner_max_iter).next
        wp = wasserstein_pp(hat, prev, p)
        prec += ws * wp / (q * s * (s * tau) ** (p - 1.0))
        slope += ws * tau * slope_quantile(hat, der, q)
    return prec, slope


def _young_step(Xk, Xn, der, p, tau, nodes=GAUSS_POINTS):
    q = conjugate(p)
    v = (Xn.midpoints - Xk.midpoints) / tau
    lam, w = gauss_unit(nodes)
    gap = law = 0.0
    for l_, wl in zip(lam, w):
        Xl = QuantileRep(Xk.a, Xk.b, (1.0 - l_) * Xk.X + l_ * Xn.X)
        a = _cell_pressure_gradient(Xl, der)
        integrand = a * v + np.abs(a) ** q / q + np.abs(v) ** p / p
        gap += wl * tau * float(np.mean(integrand))
        law += wl * tau * float(np.mean(np.abs(v + np.sign(a) * np.abs(a) ** (q - 1.0)) ** p))
    return gap, law


def young_gap(traj, energy=None, nodes=GAUSS_POINTS):
    """Chain-rule Young gap and velocity-law residual, summed over steps.

    Along each geodesic segment the pressure gradient ``a = grad L_f / rho`` is
    paired with the constant step velocity in mass coordinates.
    """
    _require_complete(traj)
    der = _step_energy(traj)[0] if energy is None else as_derived(energy)
    p, tau = traj.config.p, traj.config.tau
    per = [_young_step(traj.steps[k], traj.steps[k + 1], der, p, tau, nodes)
           for k in range(len(traj.steps) - 1)]
    gaps = np.array([g for g, _ in per])
    laws = np.array([l_ for _, l_ in per])
    return {"gap": float(gaps.sum()), "law_residual": float(laws.sum()),
            "per_step": gaps, "law_per_step": laws}


def young_integrand(a, w, p):
    """Cellwise ``a w + |a|^q / q + |w|^p / p`` (nonnegative by Young's inequality)."""
    q = conjugate(p)
    return a * w + np.abs(a) ** q / q + np.abs(w) ** p / p


def tv_trajectory(traj, n=None):
    n = traj.config.m if n is None else n
    return np.array([tv_norm(quantile_to_density(X, n)) for X in traj.steps])


def edi_report(traj, energy=None, tv_grid=None):
    """Per-step ledger and the global dissipation residual of a completed run."""
    _require_complete(traj)
    cfg = traj.config
    der, eps = _step_energy(traj)
    if energy is not None:
        der = as_derived(energy) if eps == 0 else der
    p, q, tau = cfg.p, cfg.q, cfg.tau
    spec = der.spec if der.spec is not None else None
    ex = exponents(spec, p, 1) if spec is not None else None
    F = np.array([energy_functional(X, der) for X in traj.steps])
    tv = tv_trajectory(traj, tv_grid)
    young = young_gap(traj, der)
    rows = []
    for k in range(len(traj.steps) - 1):
        prec, slope = step_precursor(traj, k, der, eps)
        Xn = traj.steps[k + 1]
        kinetic = wasserstein_pp(Xn, traj.steps[k], p) / (p * tau ** (p - 1.0))
        rows.append(StepLedger(
            k=k + 1, t=(k + 1) * tau, energy=float(F[k + 1]),
            transport_term=float(traj.results[k].transport_term), slope_term=slope,
            kinetic_term=kinetic, edi_precursor_residual=float(F[k] - F[k + 1] - prec - kinetic),
            tv=float(tv[k + 1]),
            renyi=renyi(Xn, ex.beta) if ex and np.isfinite(ex.beta) else math.nan,
            lalpha=renyi(Xn, ex.alpha) if ex and np.isfinite(ex.alpha) else math.nan,
            young_gap_term=float(young["per_step"][k])))
    residual = float(F[0] - F[-1] - sum(r.slope_term + r.kinetic_term for r in rows))
    tol = ledger_tol(F[0], cfg.inner_tol)
    return RunReport(ledger=rows, initial_energy=float(F[0]), final_energy=float(F[-1]),
                     global_residual=residual, young_gap=young["gap"],
                     law_residual=young["law_residual"], tol=tol,
                     precursor_min=min((r.edi_precursor_residual for r in rows), default=0.0),
                     tv_decay_slope=bv_checks(traj, tv=tv)["decay_slope"])


# ---------------------------------------------------------------------------
# Flow interchange and regularity budgets
# ---------------------------------------------------------------------------


def _h_dissipation(Xr, h, q):
    """``int |grad h(rho)|**q dx`` from node differences of the quantile state."""
    rho = Xr.cell_density
    hv = h(rho)
    dx = np.diff(Xr.midpoints)
    return float(np.sum(np.abs(np.diff(hv)) ** q / dx ** (q - 1.0)))


def flow_interchange_check(traj, beta, tol=1e-7):
    """Monotonicity of ``int rho**beta`` (entropy at ``beta = 1``) and the matching budget."""
    if beta < 0:
        raise RangeError(f"beta must be nonnegative, got {beta}")
    cfg = traj.config
    q, tau = cfg.q, cfg.tau
    vals = np.array([renyi(X, beta) for X in traj.steps])
    scale = 1.0 + abs(vals[0])
    increments = np.diff(vals)
    report = {"beta": beta, "values": vals, "max_increase": float(increments.max(initial=-np.inf)),
              "monotone": bool(np.all(increments <= tol * scale))}
    if beta > 1:
        der = _step_energy(traj)[0]
        h = reg_h_prime(der, cfg.p, d=1, alpha=beta)
        diss = sum(tau * _h_dissipation(X, h, q) for X in traj.steps[1:])
        lhs = vals[0] / (beta - 1.0)
        rhs = diss + vals[-1] / (beta - 1.0)
        report.update(dissipation=float(diss), budget_slack=float(lhs - rhs),
                      budget_ok=bool(lhs - rhs >= -tol * scale))
    return report


def holder_check(traj, pairs=None):
    """``W_p(rho_s, rho_t) <= C (t - s)**(1/q)`` with ``C`` from the transport budget."""
    cfg = traj.config
    p, q, tau = cfg.p, cfg.q, cfg.tau
    budget = float(np.sum(traj.transport_terms()))
    C = (p * budget) ** (1.0 / p)
    n = len(traj.steps)
    if pairs is None:
        idx = np.unique(np.linspace(0, n - 1, 6).astype(int))
        pairs = [(i, j) for i in idx for j in idx if j > i]
    worst = 0.0
    for i, j in pairs:
        w = wasserstein_pp(traj.steps[i], traj.steps[j], p) ** (1.0 / p)
        worst = max(worst, w / (C * ((j - i) * tau) ** (1.0 / q)) if C > 0 else (0.0 if w == 0 else math.inf))
    return {"C": C, "worst_ratio": worst, "ok": worst <= 1.0 + 1e-9}


def bv_checks(traj, tol=1e-7, tv=None):
    """Step monotonicity of the total variation and its short-time decay rate."""
    tv = tv_trajectory(traj) if tv is None else np.asarray(tv)
    cfg = traj.config
    q, tau = cfg.q, cfg.tau
    t = np.arange(tv.size) * tau
    inc = np.diff(tv)
    weighted = tv[1:] * t[1:] ** (1.0 / q)
    first = (t > 0) & (t <= 10 * tau + 1e-12 * tau)
    slope = math.nan
    if np.count_nonzero(first) >= 2 and np.all(tv[first] > 0):
        slope = float(np.polyfit(np.log(t[first]), np.log(tv[first]), 1)[0])
    return {"tv": tv, "monotone": bool(np.all(inc <= tol)), "max_increase": float(inc.max(initial=-np.inf)),
            "C_tilde": float(weighted.max(initial=0.0)), "decay_slope": slope,
            "slope_floor": -1.0 / q - 0.15}


def step2_bound_check(rho, energy, p, d, z0, z1, rel_tol=1e-6):
    """Cellwise bound on the pressure of the concave part of a truncated energy.

    With ``K = C2 / C_theta**(1/p)`` one has
    ``|L(r) - L(s)| <= K max(r, s)**(1/p) |h(r) - h(s)|`` for the pressure ``L``
    of the second part and the regularity function ``h``; the check applies it
    to the central neighbours of every interior cell.
    """
    spec = energy if isinstance(energy, EnergySpec) else as_derived(energy).spec
    if spec is None:
        raise DomainError("the bound needs the lower-bound constant of a catalog energy")
    dec = decompose_truncated(energy, z0, z1, d)
    h = reg_h_prime(energy, p, d)
    q = conjugate(p)
    K = dec.C2 / spec.theta_constant ** (1.0 / p)
    vals = rho.values
    if np.any(vals <= 0):
        raise DomainError("bound check needs a positive density")
    L = np.asarray(dec.f2.Lf(vals), dtype=float)
    hv = np.asarray(h(vals), dtype=float)
    lhs = np.abs(L[2:] - L[:-2])
    big = np.maximum(vals[2:], vals[:-2])
    rhs = K * big ** (1.0 / p) * np.abs(hv[2:] - hv[:-2])
    ok = lhs <= rhs * (1 + rel_tol) + 1e-300
    dx = rho.dx
    grad_L = lhs / (2 * dx)
    grad_h = np.abs(hv[2:] - hv[:-2]) / (2 * dx)
    left = float(np.sum(grad_L**q / vals[1:-1] ** (q - 1.0)) * dx)
    right = float(np.sum(grad_h**q) * dx) * K**q
    return {"cellwise_ok": bool(np.all(ok)), "worst_ratio": float(np.max(lhs / np.maximum(rhs, 1e-300), initial=0.0)),
            "K": K, "integral_lhs": left, "integral_rhs": right}
