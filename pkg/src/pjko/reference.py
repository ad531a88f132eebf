"""Explicit finite-volume solver for ``rho_t = (|H(rho)_x|^(q-2) H(rho)_x)_x``.

No-flux boundaries, face fluxes from differences of ``H(rho)`` and a
forward-Euler update with a linearised stability bound. This module only
uses the energy catalog to build ``H``; it never touches the transport solver.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .energy import as_derived, conjugate, flux_h_prime
from .errors import ConfigError, DomainError, MismatchError, StiffnessError
from .measure import GridDensity, density_to_quantile, quantile_to_density, wasserstein_p

MIN_DT = 1e-12
DELTA_ABS = 1e-12
DELTA_REL = 1e-3


@dataclass(frozen=True)
class FDConfig:
    n: int
    T: float
    cfl_safety: float = 0.45
    snapshot_times: tuple = ()

    def __post_init__(self):
        times = tuple(sorted(float(t) for t in self.snapshot_times))
        object.__setattr__(self, "snapshot_times", times)
        if self.n < 3:
            raise ConfigError("need at least three cells")
        if not 0 < self.cfl_safety < 1:
            raise ConfigError("cfl_safety must lie in (0, 1)")
        if not self.T > 0:
            raise ConfigError("horizon must be positive")
        if times and (times[0] < 0 or times[-1] > self.T * (1 + 1e-12)):
            raise ConfigError("snapshot times must lie in [0, T]")


class _Flux:
    """``H`` and ``H'`` on arrays; tabulated when no closed form exists."""

    def __init__(self, energy, p, top):
        self.H = flux_h_prime(energy, p)
        self.closed = self.H.closed is not None
        if not self.closed:
            grid = np.concatenate(([0.0], np.geomspace(1e-8, max(top, 1.0) * 4.0, 400)))
            vals = np.concatenate(([0.0], self.H.quadrature(grid[1:])))
            self._table = PchipInterpolator(grid, vals, extrapolate=True)

    def value(self, rho):
        pos = rho > 0
        out = np.zeros_like(rho)
        if self.closed:
            out[pos] = self.H(rho[pos])
        else:
            out[pos] = self._table(rho[pos])
        return out

    def slope(self, rho):
        pos = rho > 0
        out = np.zeros_like(rho)
        with np.errstate(all="ignore"):
            out[pos] = self.H.prime(rho[pos])
        return np.where(np.isfinite(out), out, 0.0)


def fd_solve(rho0, energy, p, config):
    """Snapshots ``[(t, GridDensity)]`` at ``config.snapshot_times`` (always including ``T``)."""
    if rho0.n != config.n:
        raise MismatchError(f"initial grid has {rho0.n} cells, config asks for {config.n}")
    der = as_derived(energy)
    q = conjugate(p)
    rho = rho0.values.astype(float).copy()
    dx = rho0.dx
    flux = _Flux(der, p, float(rho.max()))
    Hv = flux.value(rho)
    if not np.all(np.isfinite(Hv)):
        raise DomainError("flux nonlinearity not evaluable on the initial density")
    targets = list(config.snapshot_times)
    if not targets or targets[-1] < config.T:
        targets.append(config.T)
    out = []
    t = 0.0
    ti = 0
    while ti < len(targets) and targets[ti] <= 0:
        out.append((0.0, GridDensity(rho0.a, rho0.b, rho.copy())))
        ti += 1
    while ti < len(targets):
        Hv = flux.value(rho)
        D = np.diff(Hv) / dx
        absD = np.abs(D)
        delta = max(DELTA_ABS, DELTA_REL * float(absD.max(initial=0.0))) if q < 2 else DELTA_ABS
        Fc = np.sign(D) * absD ** (q - 1.0)
        slope = flux.slope(rho)
        kappa = (q - 1.0) * np.maximum(absD, delta) ** (q - 2.0) * np.maximum(slope[1:], slope[:-1])
        # a vanishing flux leaves rho unchanged, so no stability restriction applies
        kmax = float(kappa.max(initial=0.0)) if absD.max(initial=0.0) > 0 else 0.0
        dt = targets[ti] - t if kmax <= 0 else min(config.cfl_safety * dx * dx / (2.0 * kmax), targets[ti] - t)
        if dt < MIN_DT and targets[ti] - t > MIN_DT:
            raise StiffnessError(f"time step {dt:.3g} underflows at t={t:.6g}")
        # flux-limited update: no cell sends more than it holds
        face = np.concatenate(([0.0], Fc, [0.0]))
        # a positive face value moves mass from the right cell into the left one
        out_right = np.maximum(-face[1:], 0.0)
        out_left = np.maximum(face[:-1], 0.0)
        sent = dt * (out_right + out_left) / dx
        ratio = np.where(sent > rho, rho / np.where(sent > 0, sent, 1.0), 1.0)
        lim = np.ones_like(face)
        inner = face[1:-1]
        donor = np.where(inner > 0, ratio[1:], ratio[:-1])
        lim[1:-1] = donor
        face = face * lim
        rho = rho + dt * (face[1:] - face[:-1]) / dx
        rho = np.maximum(rho, 0.0)
        t += dt
        while ti < len(targets) and t >= targets[ti] - 1e-14:
            out.append((targets[ti], GridDensity(rho0.a, rho0.b, rho / (rho.sum() * dx))))
            ti += 1
    return out


def cosine_mode(rho):
    """Coefficient ``2 int rho cos(pi (x - a)/(b - a)) dx / (b - a)`` of the first cosine mode."""
    x = (rho.x - rho.a) / (rho.b - rho.a)
    return float(2.0 * np.sum(rho.values * np.cos(np.pi * x)) * rho.dx / (rho.b - rho.a))


def compare(traj, snapshots, norms=("L1", "Wp")):
    """Distances between the piecewise-constant scheme output and oracle snapshots."""
    tau = traj.config.tau
    rows = []
    for t, fd in snapshots:
        X0 = traj.steps[0]
        if fd.a != X0.a or fd.b != X0.b:
            raise MismatchError("scheme and oracle live on different intervals")
        k = int(round(t / tau))
        if k > len(traj.steps) - 1 or abs(k * tau - t) > 0.5 * tau + 1e-12:
            raise MismatchError(f"no scheme step within tau/2 of t={t}")
        Xk = traj.steps[k]
        row = {"t": t, "k": k}
        if "L1" in norms:
            dens = quantile_to_density(Xk, fd.n)
            row["L1"] = float(np.sum(np.abs(dens.values - fd.values)) * fd.dx)
        if "Wp" in norms:
            row["Wp"] = wasserstein_p(Xk, density_to_quantile(fd, Xk.m), traj.config.p)
        rows.append(row)
    worst = {nm: max((r[nm] for r in rows), default=0.0) for nm in norms}
    return {"rows": rows, "worst": worst}
