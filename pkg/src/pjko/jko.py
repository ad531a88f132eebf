"""Minimizing-movement steps for ``W_p``-gradient flows of internal energies in 1D.

One step solves, over nondecreasing quantile vectors ``X`` with
``a <= X_0`` and ``X_m <= b``,

    J(X) = (1/m) sum G(m dX_i) + f(0) |(a, b) minus support|
           + 1/(p tau**(p-1)) * (1/m) sum |Xbar_i - Pbar_i|**p

where ``G(v) = v f(1/v)`` and ``P`` is the previous iterate. ``J`` is strictly
convex in the gaps, so a damped Newton iteration with a tridiagonal Hessian
finds the minimizer; the endpoints carry a two-sided active set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, solveh_banded

from .energy import DerivedEnergy, EnergySpec, as_derived, derive, regularize_entropy
from .errors import (ConfigError, LineSearchStall, MaxIterations, PreconditionError,
                     RangeError)
from .measure import GridDensity, QuantileRep, density_to_quantile, wasserstein_p, wasserstein_pp

ARMIJO = 1e-4
FRACTION_TO_BOUNDARY = 0.995
ROUNDOFF_ULPS = 16


@dataclass(frozen=True)
class SchemeConfig:
    p: float
    tau: float
    T: float
    m: int = 256
    eps_schedule: tuple = ()
    inner_tol: float = 1e-9
    inner_max_iter: int = 200

    def __post_init__(self):
        object.__setattr__(self, "eps_schedule", tuple(float(e) for e in self.eps_schedule))
        if not self.p > 1:
            raise ConfigError(f"p must exceed 1, got {self.p}")
        if not (self.tau > 0 and self.T > 0):
            raise ConfigError("tau and T must be positive")
        if self.tau > self.T * (1 + 1e-12):
            raise ConfigError(f"tau={self.tau} exceeds the horizon T={self.T}")
        if int(self.m) < 2:
            raise ConfigError("need at least two quantile cells")
        eps = np.asarray(self.eps_schedule)
        if eps.size and (np.any(eps <= 0) or np.any(np.diff(eps) >= 0)):
            raise ConfigError("eps_schedule must be positive and strictly decreasing")
        if not self.inner_tol > 0 or self.inner_max_iter < 1:
            raise ConfigError("inner_tol and inner_max_iter must be positive")

    @property
    def n_steps(self):
        return int(math.ceil(self.T / self.tau - 1e-9))

    @property
    def q(self):
        return self.p / (self.p - 1.0)


@dataclass
class StepResult:
    next: QuantileRep
    objective: float
    transport_term: float
    kkt_residual: float
    multiplier: float
    iterations: int
    start_objective: float = math.nan
    eps: float = 0.0
    flagged: bool = False
    active: tuple = (False, False)
    continuation: list = field(default_factory=list)


@dataclass
class Trajectory:
    steps: list
    results: list
    config: SchemeConfig
    energy: object = None
    complete: bool = True
    reason: str = ""

    @property
    def times(self):
        return np.arange(len(self.steps)) * self.config.tau

    def energies(self, energy=None):
        from .measure import energy_functional
        e = self.energy if energy is None else energy
        return np.array([energy_functional(X, e) for X in self.steps])

    def transport_terms(self):
        return np.array([r.transport_term for r in self.results])


# ---------------------------------------------------------------------------
# Energy plumbing
# ---------------------------------------------------------------------------


def _with_entropy(energy, eps):
    if eps <= 0:
        return as_derived(energy)
    if isinstance(energy, EnergySpec):
        return derive(regularize_entropy(energy, eps), check=False)
    if isinstance(energy, DerivedEnergy) and energy.spec is not None:
        return derive(regularize_entropy(energy.spec, eps), check=False)
    base = as_derived(energy)
    return DerivedEnergy(lambda z: base.f_raw(z) + eps * z * np.log(z),
                         lambda z: base.fp_raw(z) + eps * (np.log(z) + 1.0),
                         lambda z: base.fpp_raw(z) + eps / z,
                         name=f"{base.name}+{eps:g}*entropy", f_at_zero=base.f_at_zero)


def self_barrier(energy):
    """True when ``L_f(z) -> +inf`` as ``z -> inf``, so ``G(0+)`` blocks collapsing gaps."""
    der = as_derived(energy)
    spec = der.spec
    if spec is not None and spec.kind != "tabulated":
        if spec.eps > 0 or spec.kind in ("entropy", "log"):
            return True
        return spec.m > 0
    z = np.array([1e4, 1e6, 1e8])
    L = der.Lf(z)
    return bool(np.all(np.diff(L) > 0) and L[-1] > L[0] + 1.0)


# ---------------------------------------------------------------------------
# Objective pieces
# ---------------------------------------------------------------------------


class _Objective:
    def __init__(self, prev, der, p, tau_eff):
        self.prev = prev
        self.der = der
        self.p = float(p)
        self.c = 1.0 / (self.p * tau_eff ** (self.p - 1.0))
        self.m = prev.m
        self.a, self.b = prev.a, prev.b
        self.Pbar = prev.midpoints
        f0 = der.f_at_zero
        self.pinned = not np.isfinite(f0)
        self.f0 = 0.0 if self.pinned else float(f0)
        span = self.b - self.a
        self.u_floor = 1e-9 * span

    def transport(self, X):
        u = 0.5 * (X[1:] + X[:-1]) - self.Pbar
        return self.c * float(np.mean(np.abs(u) ** self.p))

    def value(self, X):
        v = self.m * np.diff(X)
        outside = (X[0] - self.a) + (self.b - X[-1])
        return float(np.mean(self.der.G(v))) + self.f0 * outside + self.transport(X)

    def gradient(self, X):
        m, p = self.m, self.p
        v = m * np.diff(X)
        Gp = self.der.Gp(v)
        u = 0.5 * (X[1:] + X[:-1]) - self.Pbar
        psi = np.sign(u) * np.abs(u) ** (p - 1.0)
        g = np.zeros(m + 1)
        g[:-1] -= Gp
        g[1:] += Gp
        t = self.c * p / (2.0 * m) * psi
        g[:-1] += t
        g[1:] += t
        g[0] += self.f0
        g[-1] -= self.f0
        return g

    def hessian_bands(self, X):
        """Diagonal and super-diagonal of the tridiagonal Hessian."""
        m, p = self.m, self.p
        v = m * np.diff(X)
        k = m * self.der.Gpp(v)
        u = 0.5 * (X[1:] + X[:-1]) - self.Pbar
        au = np.maximum(np.abs(u), self.u_floor) if p < 2 else np.abs(u)
        t = self.c * p * (p - 1.0) / (4.0 * m) * au ** (p - 2.0)
        diag = np.zeros(m + 1)
        diag[:-1] += k + t
        diag[1:] += k + t
        off = -k + t
        return diag, off


def _kkt(g, X, obj, active0, active1):
    m = obj.m
    lo = 1 if (obj.pinned or active0) else 0
    hi = m if (obj.pinned or active1) else m + 1
    res = float(np.max(np.abs(g[lo:hi]))) if hi > lo else 0.0
    if active0 and not obj.pinned:
        res = max(res, max(0.0, -g[0]))
    if active1 and not obj.pinned:
        res = max(res, max(0.0, g[-1]))
    return m * res


def _newton_direction(diag, off, g, lo, hi):
    d_sub = diag[lo:hi].copy()
    o_sub = off[lo:hi - 1].copy()
    rhs = -g[lo:hi]
    scale = max(float(np.max(np.abs(d_sub))), 1e-300)
    for ridge in (0.0, 1e-14, 1e-11, 1e-8):
        ab = np.zeros((2, hi - lo))
        ab[0, 1:] = o_sub
        ab[1] = d_sub + ridge * scale
        try:
            d = solveh_banded(ab, rhs)
        except (LinAlgError, ValueError):
            continue
        if np.all(np.isfinite(d)) and float(d @ rhs) > 0:
            return d
    return rhs / np.maximum(d_sub, 1e-300 + 1e-12 * scale)


def _keep_released_ends_inside(X, d, diag, off, g, obj, lo, hi):
    """Projected variant of the Newton step for endpoints released from the wall.

    A released endpoint has a gradient pointing inward, yet the coupled Newton
    step may still push it outward, which leaves no feasible step length. Such
    an endpoint is then moved along its scaled gradient while the remaining
    block takes its own Newton step; the combination is still a descent direction.
    """
    left = lo == 0 and X[0] <= obj.a and d[0] < 0
    right = hi == obj.m + 1 and X[-1] >= obj.b and d[-1] > 0
    if not (left or right):
        return d
    lo2, hi2 = lo + int(left), hi - int(right)
    inner = _newton_direction(diag, off, g, lo2, hi2)
    out = np.empty(hi - lo)
    out[lo2 - lo:hi2 - lo] = inner
    if left:
        out[0] = -g[0] / max(diag[0], 1e-300)
    if right:
        out[-1] = -g[-1] / max(diag[-1], 1e-300)
    return out


def _max_feasible_step(X, d, obj, lo, hi):
    full = np.zeros_like(X)
    full[lo:hi] = d
    gaps = np.diff(X)
    dg = np.diff(full)
    shrink = dg < 0
    alpha = 1.0
    if np.any(shrink):
        alpha = min(alpha, FRACTION_TO_BOUNDARY * float(np.min(-gaps[shrink] / dg[shrink])))
    hit0 = hit1 = False
    if full[0] < 0:
        lim = (obj.a - X[0]) / full[0]
        if lim <= alpha:
            alpha, hit0 = lim, True
    if full[-1] > 0:
        lim = (obj.b - X[-1]) / full[-1]
        if lim <= alpha:
            alpha, hit1, hit0 = lim, True, False
    return full, max(alpha, 0.0), hit0, hit1


def _roundoff_floor(X, diag, off, m):
    """KKT residual produced by perturbing ``X`` at the level of its last bits."""
    row = np.abs(diag) + np.pad(np.abs(off), (0, 1)) + np.pad(np.abs(off), (1, 0))
    return m * ROUNDOFF_ULPS * np.finfo(float).eps * float(np.max(np.abs(X))) * float(np.max(row))


def _minimize(obj, X, tol, max_iter):
    m = obj.m
    X = X.copy()
    if obj.pinned:
        X[0], X[-1] = obj.a, obj.b
    span = obj.b - obj.a
    active0 = obj.pinned or X[0] <= obj.a + 1e-15 * span
    active1 = obj.pinned or X[-1] >= obj.b - 1e-15 * span
    if not obj.pinned:
        X[0] = obj.a if active0 else X[0]
        X[-1] = obj.b if active1 else X[-1]
    J = obj.value(X)
    best = (X.copy(), J, math.inf)
    it = 0
    kkt = math.inf
    while True:
        g = obj.gradient(X)
        if not obj.pinned:
            if active0 and g[0] < 0:
                active0 = False
            if active1 and g[-1] > 0:
                active1 = False
        kkt = _kkt(g, X, obj, active0, active1)
        if kkt < best[2]:
            best = (X.copy(), J, kkt)
        diag, off = obj.hessian_bands(X)
        if kkt <= max(tol, _roundoff_floor(X, diag, off, m)):
            break
        if it >= max_iter:
            raise MaxIterations(f"inner solver stopped at KKT residual {kkt:.3g}",
                                result=(best[0], best[1], best[2], it, (active0, active1)))
        it += 1
        lo = 1 if active0 else 0
        hi = m if active1 else m + 1
        d = _newton_direction(diag, off, g, lo, hi)
        d = _keep_released_ends_inside(X, d, diag, off, g, obj, lo, hi)
        full, alpha, hit0, hit1 = _max_feasible_step(X, d, obj, lo, hi)
        slope = float(g @ full)
        allowance = 64 * np.finfo(float).eps * (abs(J) + 1.0)
        accepted = False
        alpha_max = alpha
        while alpha > 1e-14:
            Xn = X + alpha * full
            at_limit = alpha == alpha_max
            if hit0 and at_limit:
                Xn[0] = obj.a
            if hit1 and at_limit:
                Xn[-1] = obj.b
            if np.all(np.diff(Xn) > 0):
                Jn = obj.value(Xn)
                if np.isfinite(Jn) and Jn <= J + ARMIJO * alpha * slope + allowance:
                    accepted = True
                    break
            alpha *= 0.5
        hit0 = hit0 and accepted and alpha == alpha_max
        hit1 = hit1 and accepted and alpha == alpha_max
        if not accepted:
            if best[2] <= max(tol, 1e3 * tol):
                X, J, kkt = best
                break
            raise LineSearchStall(f"no feasible descent step (KKT residual {kkt:.3g})")
        if hit0:
            active0 = True
        if hit1:
            active1 = True
        X, J = Xn, Jn
    return X, J, kkt, it, (bool(active0), bool(active1))


def _multiplier(obj, X):
    """Mass-weighted mean of ``f'(rho) + phi / (p tau**(p-1))``."""
    p = obj.p
    xbar = 0.5 * (X[1:] + X[:-1])
    u = xbar - obj.Pbar
    dphi = p * np.sign(u) * np.abs(u) ** (p - 1.0)
    phi = np.concatenate(([0.0], np.cumsum(0.5 * (dphi[1:] + dphi[:-1]) * np.diff(xbar))))
    rho = 1.0 / (obj.m * np.diff(X))
    return float(np.mean(obj.der.fp(rho) + obj.c * phi))


# ---------------------------------------------------------------------------
# Public steps
# ---------------------------------------------------------------------------


def jko_step(prev, energy, p, tau_eff, eps=0.0, *, start=None, inner_tol=1e-9,
             inner_max_iter=200):
    """One minimizing-movement step from ``prev`` with step ``tau_eff``."""
    if not prev.strictly_monotone():
        raise PreconditionError("previous iterate must have strictly increasing quantiles")
    if not tau_eff > 0:
        raise PreconditionError("step size must be positive")
    der = _with_entropy(energy, eps)
    if eps <= 0 and not self_barrier(der):
        raise PreconditionError(f"{der.name} does not block vanishing gaps; use eps > 0")
    obj = _Objective(prev, der, p, tau_eff)
    if obj.pinned and (prev.X[0] > prev.a or prev.X[-1] < prev.b):
        raise PreconditionError("energy is infinite outside the support of the previous iterate")
    J0 = obj.value(prev.X)
    X0 = prev.X if start is None else np.asarray(start.X if isinstance(start, QuantileRep) else start, float)
    flagged = False
    try:
        X, J, kkt, it, active = _minimize(obj, X0, inner_tol, inner_max_iter)
    except MaxIterations as exc:
        X, J, kkt, it, active = exc.result
        flagged = True
        res = StepResult(QuantileRep(prev.a, prev.b, X), J, obj.transport(X), kkt,
                         _multiplier(obj, X), it, J0, eps, True, active)
        raise MaxIterations(str(exc), result=res) from None
    if J > J0 + 64 * np.finfo(float).eps * (abs(J0) + 1.0):
        raise LineSearchStall(f"descent certificate failed: J={J!r} above J(prev)={J0!r}")
    return StepResult(QuantileRep(prev.a, prev.b, X), J, obj.transport(X), kkt,
                      _multiplier(obj, X), it, J0, eps, flagged, active)


def epsilon_continuation(prev, energy, p, tau_eff, eps_schedule, *, inner_tol=1e-9,
                         inner_max_iter=200):
    """Solve along a decreasing entropic schedule, warm-starting each level.

    The record in ``continuation`` lists ``(eps, W_p to the previous level)``.
    When the unregularized energy blocks vanishing gaps, a final ``eps = 0``
    solve is appended.
    """
    schedule = [float(e) for e in eps_schedule]
    if any(e <= 0 for e in schedule) or np.any(np.diff(schedule) >= 0):
        raise PreconditionError("eps schedule must be positive and decreasing")
    if not schedule and not self_barrier(energy):
        raise PreconditionError("an energy that does not block vanishing gaps needs a nonempty schedule")
    levels = schedule + ([0.0] if self_barrier(energy) else [])
    record = []
    start = None
    res = None
    for e in levels:
        res = jko_step(prev, energy, p, tau_eff, e, start=start, inner_tol=inner_tol,
                       inner_max_iter=inner_max_iter)
        dist = math.nan if start is None else wasserstein_p(start, res.next, p)
        record.append((e, dist))
        start = res.next
    res.continuation = record
    return res


def _advance(prev, energy, config, tau_eff, start=None):
    if config.eps_schedule:
        return epsilon_continuation(prev, energy, config.p, tau_eff, config.eps_schedule,
                                    inner_tol=config.inner_tol,
                                    inner_max_iter=config.inner_max_iter)
    return jko_step(prev, energy, config.p, tau_eff, 0.0, start=start,
                    inner_tol=config.inner_tol, inner_max_iter=config.inner_max_iter)


def run_scheme(rho0, config, energy):
    """Iterate the scheme from ``rho0`` for ``ceil(T / tau)`` steps."""
    der = as_derived(energy)
    X = rho0 if isinstance(rho0, QuantileRep) else density_to_quantile(rho0, config.m)
    if not X.strictly_monotone():
        raise PreconditionError("initial quantiles are not strictly increasing")
    from .measure import energy_functional
    if not np.isfinite(energy_functional(X, der)):
        raise PreconditionError("initial energy is not finite")
    traj = Trajectory([X], [], config, der)
    misses = 0
    for _ in range(config.n_steps):
        try:
            res = _advance(traj.steps[-1], der, config, config.tau)
            misses = 0
        except MaxIterations as exc:
            misses += 1
            res = exc.result
            if misses >= 2 or res is None:
                traj.complete = False
                traj.reason = str(exc)
                return traj
        traj.steps.append(res.next)
        traj.results.append(res)
    return traj


def degiorgi_step(prev, energy, p, tau, s, eps=0.0, **kwargs):
    """Minimizer with the fractional step ``s * tau``; ``s = 1`` is the scheme step."""
    if not 0 < s <= 1:
        raise RangeError(f"interpolation parameter must lie in (0, 1], got {s}")
    return jko_step(prev, energy, p, s * tau, eps, **kwargs)


def _locate(traj, t):
    tau = traj.config.tau
    n = len(traj.steps) - 1
    t_end = n * tau
    if not (-1e-12 * tau <= t <= t_end + 1e-12 * tau):
        raise RangeError(f"time {t} outside [0, {t_end}]")
    if t <= 0:
        return 0, 0.0
    k = min(int(math.ceil(t / tau - 1e-9)) - 1, n - 1)
    k = max(k, 0)
    lam = min(max((t - k * tau) / tau, 0.0), 1.0)
    return k, lam


def interpolants(traj, t, kind="geodesic"):
    """Piecewise constant, quantile-linear or variational interpolation at time ``t``."""
    k, lam = _locate(traj, t)
    if kind == "constant":
        return traj.steps[0] if t <= 0 else traj.steps[k + 1]
    if kind == "geodesic":
        Xk, Xn = traj.steps[k], traj.steps[k + 1]
        if lam == 0.0:
            return Xk
        if lam == 1.0:
            return Xn
        return QuantileRep(Xk.a, Xk.b, (1.0 - lam) * Xk.X + lam * Xn.X)
    if kind == "degiorgi":
        if lam == 0.0:
            return traj.steps[k]
        cfg = traj.config
        eps = cfg.eps_schedule[-1] if cfg.eps_schedule and not self_barrier(traj.energy) else 0.0
        return degiorgi_step(traj.steps[k], traj.energy, cfg.p, cfg.tau, lam, eps,
                             inner_tol=cfg.inner_tol, inner_max_iter=cfg.inner_max_iter).next
    raise ConfigError(f"unknown interpolant kind {kind!r}")


def velocity(traj, k):
    """Forward displacement rate of the cell midpoints, ``(Xbar^{k+1} - Xbar^k) / tau``."""
    if not 0 <= k < len(traj.steps) - 1:
        raise RangeError(f"step index {k} outside [0, {len(traj.steps) - 2}]")
    return (traj.steps[k + 1].midpoints - traj.steps[k].midpoints) / traj.config.tau


def kinetic_term(traj, k):
    v = velocity(traj, k)
    return float(np.mean(np.abs(v) ** traj.config.p)) * traj.config.tau ** traj.config.p
