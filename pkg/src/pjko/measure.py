"""One-dimensional probability measures on an interval ``(a, b)``.

Two representations are used side by side. :class:`GridDensity` stores cell
averages on a uniform spatial grid; :class:`QuantileRep` stores the quantile
function at ``s = i/m`` so that every mass cell carries exactly ``1/m``. In
quantile form optimal transport is explicit: the monotone rearrangement
couples equal mass labels.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import product

import numpy as np

from .energy import as_derived
from .errors import DomainError, ShapeMismatch, SizeError

MASS_TOL = 1e-10


@dataclass(frozen=True)
class GridDensity:
    a: float
    b: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if not self.b > self.a:
            raise DomainError("interval must satisfy a < b")
        if vals.ndim != 1 or vals.size < 1:
            raise DomainError("density values must be a nonempty vector")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise DomainError("density values must be finite and nonnegative")
        if abs(vals.sum() * self.dx - 1.0) > MASS_TOL:
            raise DomainError(f"density mass {vals.sum() * self.dx!r} differs from 1")

    @classmethod
    def normalized(cls, a, b, values):
        vals = np.asarray(values, dtype=float)
        return cls(a, b, vals / (vals.sum() * (b - a) / vals.size))

    @classmethod
    def from_function(cls, a, b, n, fun):
        x = a + (np.arange(n) + 0.5) * (b - a) / n
        return cls.normalized(a, b, fun(x))

    @property
    def n(self):
        return self.values.size

    @property
    def dx(self):
        return (self.b - self.a) / self.values.size

    @property
    def x(self):
        return self.a + (np.arange(self.n) + 0.5) * self.dx

    @property
    def edges(self):
        return np.linspace(self.a, self.b, self.n + 1)

    def mass(self):
        return float(self.values.sum() * self.dx)


@dataclass(frozen=True)
class QuantileRep:
    a: float
    b: float
    X: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        object.__setattr__(self, "X", X)
        if X.ndim != 1 or X.size < 3:
            raise DomainError("quantile vector needs at least two mass cells")
        span = self.b - self.a
        if X[0] < self.a - 1e-12 * span or X[-1] > self.b + 1e-12 * span:
            raise DomainError("quantiles leave the interval")
        if np.any(np.diff(X) < 0):
            raise DomainError("quantiles must be nondecreasing")

    @property
    def m(self):
        return self.X.size - 1

    @property
    def gaps(self):
        return np.diff(self.X)

    @property
    def midpoints(self):
        return 0.5 * (self.X[1:] + self.X[:-1])

    @property
    def cell_density(self):
        """Density value on each mass cell, ``1 / (m * gap)``."""
        return 1.0 / (self.m * self.gaps)

    def strictly_monotone(self):
        return bool(np.all(self.gaps > 0))


@dataclass(frozen=True)
class DiscreteMeasure:
    locations: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        mass = np.asarray(self.masses, dtype=float)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "masses", mass)
        if loc.shape != mass.shape or loc.ndim != 1:
            raise ShapeMismatch("atoms need matching location and mass vectors")
        if np.any(mass <= 0) or abs(mass.sum() - 1.0) > 1e-12:
            raise DomainError("atom masses must be positive and sum to 1")


def uniform_quantiles(a, b, m):
    return QuantileRep(a, b, np.linspace(a, b, m + 1))


def density_to_quantile(rho, m):
    """Invert the piecewise-linear CDF of ``rho`` at ``s = i/m`` (left-continuous inverse)."""
    if m < 2:
        raise DomainError("need at least two mass cells")
    edges = rho.edges
    cdf = np.concatenate(([0.0], np.cumsum(rho.values)))
    cdf /= cdf[-1]
    targets = np.arange(1, m) / m
    j = np.searchsorted(cdf, targets, side="left")
    lo = cdf[j - 1]
    X = np.empty(m + 1)
    X[1:-1] = edges[j - 1] + (targets - lo) / (cdf[j] - lo) * rho.dx
    X[0] = edges[np.flatnonzero(cdf > 0)[0] - 1]
    X[-1] = edges[np.searchsorted(cdf, 1.0, side="left")]
    X[1:-1] = np.clip(X[1:-1], X[0], X[-1])
    return QuantileRep(rho.a, rho.b, X)


def quantile_to_density(Xr, n):
    """Histogram of the equal-mass cells onto ``n`` uniform cells by exact overlap."""
    edges = np.linspace(Xr.a, Xr.b, n + 1)
    s = np.linspace(0.0, 1.0, Xr.m + 1)
    X = Xr.X
    keep = np.concatenate(([True], np.diff(X) > 0))
    cdf = np.interp(edges, X[keep], s[keep], left=0.0, right=1.0)
    dx = (Xr.b - Xr.a) / n
    vals = np.diff(cdf) / dx
    total = vals.sum() * dx
    if abs(total - 1.0) > MASS_TOL:
        raise DomainError(f"histogram lost mass ({total!r})")
    return GridDensity(Xr.a, Xr.b, vals / total)


def _check_pair(Xr, Yr):
    if Xr.m != Yr.m or Xr.a != Yr.a or Xr.b != Yr.b:
        raise ShapeMismatch("quantile representations differ in size or interval")


def wasserstein_pp(Xr, Yr, p):
    """``W_p**p`` between two quantile representations (cell-midpoint quadrature)."""
    _check_pair(Xr, Yr)
    return float(np.mean(np.abs(Xr.midpoints - Yr.midpoints) ** p))


def wasserstein_p(Xr, Yr, p):
    return wasserstein_pp(Xr, Yr, p) ** (1.0 / p)


def _enumerate_vertex_costs(a, b, cost):
    """Minimum of ``<cost, plan>`` over every vertex of the transportation polytope.

    Each basic plan is reachable by repeatedly saturating one cell of the
    remaining rows and columns and deleting whichever marginal is exhausted;
    the search explores every such choice with memoisation on the residual state.
    """
    k, l = len(a), len(b)
    memo = {}

    def rec(rows, cols, ra, rb):
        key = (rows, cols, tuple([round(v, 13) for v in ra]), tuple([round(v, 13) for v in rb]))
        hit = memo.get(key)
        if hit is not None:
            return hit
        row_ids = [i for i in range(k) if rows >> i & 1]
        col_ids = [j for j in range(l) if cols >> j & 1]
        if len(row_ids) == 1:
            i = row_ids[0]
            best = sum(cost[i][j] * rb[j] for j in col_ids)
        elif len(col_ids) == 1:
            j = col_ids[0]
            best = sum(cost[i][j] * ra[i] for i in row_ids)
        else:
            best = np.inf
            for i in row_ids:
                for j in col_ids:
                    x = min(ra[i], rb[j])
                    ra2, rb2 = list(ra), list(rb)
                    if ra[i] <= rb[j]:
                        ra2[i] = 0.0
                        rb2[j] -= x
                        sub = rec(rows & ~(1 << i), cols, tuple(ra2), tuple(rb2))
                    else:
                        ra2[i] -= x
                        rb2[j] = 0.0
                        sub = rec(rows, cols & ~(1 << j), tuple(ra2), tuple(rb2))
                    best = min(best, cost[i][j] * x + sub)
        memo[key] = best
        return best

    return rec((1 << k) - 1, (1 << l) - 1, tuple(a), tuple(b))


MAX_ORACLE_ATOMS = 8


def wasserstein_lp_oracle(mu, nu, p):
    """Exact discrete ``W_p`` by exhaustive search over basic transport plans."""
    if len(mu.masses) > MAX_ORACLE_ATOMS or len(nu.masses) > MAX_ORACLE_ATOMS:
        raise SizeError(f"oracle limited to {MAX_ORACLE_ATOMS} atoms per measure")
    cost = (np.abs(mu.locations[:, None] - nu.locations[None, :]) ** p).tolist()
    best = _enumerate_vertex_costs([float(w) for w in mu.masses], [float(w) for w in nu.masses], cost)
    return max(best, 0.0) ** (1.0 / p)


def monotone_coupling_cost(mu, nu, p):
    """``W_p`` of two atomic measures through the sorted (north-west corner) coupling."""
    ia, ib = np.argsort(mu.locations), np.argsort(nu.locations)
    xa, ma = mu.locations[ia], mu.masses[ia]
    xb, mb = nu.locations[ib], nu.masses[ib]
    ca = np.concatenate(([0.0], np.cumsum(ma)))
    cb = np.concatenate(([0.0], np.cumsum(mb)))
    ca[-1] = cb[-1] = 1.0
    breaks = np.union1d(ca, cb)
    mids = 0.5 * (breaks[1:] + breaks[:-1])
    w = np.diff(breaks)
    qa = xa[np.searchsorted(ca, mids, side="right") - 1]
    qb = xb[np.searchsorted(cb, mids, side="right") - 1]
    return float(np.sum(w * np.abs(qa - qb) ** p)) ** (1.0 / p)


def tv_norm(rho):
    """Discrete total variation ``sum |rho_{i+1} - rho_i|`` on the density grid."""
    return float(np.sum(np.abs(np.diff(rho.values))))


def energy_density_form(rho, energy):
    der = as_derived(energy)
    vals = rho.values
    pos = vals > 0
    if not np.all(pos):
        if not np.isfinite(der.f_at_zero):
            raise DomainError("energy is infinite on zero-density cells")
    out = np.full(vals.shape, float(der.f_at_zero) if np.isfinite(der.f_at_zero) else 0.0)
    out[pos] = der.f(vals[pos])
    return float(out.sum() * rho.dx)


def energy_quantile_form(Xr, energy):
    der = as_derived(energy)
    v = Xr.m * Xr.gaps
    if np.any(v <= 0):
        raise DomainError("zero quantile gap: density not finite")
    return float(np.mean(der.G(v)))


def energy_functional(state, energy):
    """``int f(rho) dx`` for a :class:`GridDensity` or a :class:`QuantileRep`.

    On quantile form the integral of ``f(rho)`` over the support is evaluated;
    cells outside the support contribute ``f(0) * |outside|``.
    """
    if isinstance(state, GridDensity):
        return energy_density_form(state, energy)
    val = energy_quantile_form(state, energy)
    der = as_derived(energy)
    outside = (state.X[0] - state.a) + (state.b - state.X[-1])
    if outside > 0:
        if not np.isfinite(der.f_at_zero):
            raise DomainError("energy is infinite outside the support")
        val += der.f_at_zero * outside
    return val


def renyi(values_or_rep, beta):
    """``int rho**beta dx`` (``int rho log rho dx`` at ``beta == 1``)."""
    if isinstance(values_or_rep, QuantileRep):
        rho = values_or_rep.cell_density
        w = np.full(rho.shape, 1.0 / values_or_rep.m)
        if beta == 1.0:
            return float(np.sum(w * np.log(rho)))
        return float(np.sum(w * rho ** (beta - 1.0)))
    g = values_or_rep
    vals = g.values
    if beta == 1.0:
        pos = vals > 0
        return float(np.sum(vals[pos] * np.log(vals[pos])) * g.dx)
    return float(np.sum(vals**beta) * g.dx)


def write_snapshot(path, rho):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("x,rho\n")
        for x, r in zip(rho.x, rho.values):
            fh.write(f"{x:.17g},{r:.17g}\n")


def read_snapshot(path, a=None, b=None):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(float(r["x"]), float(r["rho"])) for r in csv.DictReader(fh)]
    x = np.array([r[0] for r in rows])
    vals = np.array([r[1] for r in rows])
    dx = x[1] - x[0] if x.size > 1 else 1.0
    a = x[0] - dx / 2 if a is None else a
    b = x[-1] + dx / 2 if b is None else b
    return GridDensity.normalized(a, b, vals)
