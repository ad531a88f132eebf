"""Convex internal energies and the scalar convex analysis built on them.

An energy is described by an immutable :class:`EnergySpec` (catalog entry plus
metadata) and evaluated through a :class:`DerivedEnergy`, which bundles the
vectorised maps ``f, f', f''``, the pressure ``L_f(z) = z f'(z) - f(z)`` and the
quantile-coordinate integrand ``G(v) = v f(1/v)`` used by the solver.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .errors import (
    ConfigError,
    DivergenceError,
    DomainError,
    NonConvexEnergy,
    PreconditionError,
)

PROBE_LO = 1e-4
PROBE_HI = 1e4
PROBE_POINTS = 256
SHAPE_TOL = 1e-10

CATALOG_KEYS = ("entropy", "power:m=<real>", "qlaplacian:p=<real>", "tabulated:<path>")


def probe_grid(lo=PROBE_LO, hi=PROBE_HI, n=PROBE_POINTS):
    """Geometric sample points used for every sampled shape check."""
    return np.geomspace(lo, hi, n)


def _positive(z):
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise DomainError("energy maps are defined on (0, inf) only")
    return z


def _first_convexity_violation(x, y, tol=SHAPE_TOL):
    """Index of the first sample where the slope sequence decreases, or None."""
    k = np.diff(y) / np.diff(x)
    dk = np.diff(k)
    bad = dk < -tol * (1.0 + np.abs(k[:-1]) + np.abs(k[1:]))
    idx = np.flatnonzero(bad)
    return None if idx.size == 0 else int(idx[0]) + 1


def _first_increase(x, y, tol=SHAPE_TOL):
    k = np.diff(y) / np.diff(x)
    bad = k > tol * (1.0 + np.abs(y[:-1]) / np.diff(x))
    idx = np.flatnonzero(bad)
    return None if idx.size == 0 else int(idx[0])


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergySpec:
    """Catalog entry for a convex energy density ``f`` on ``[0, inf)``.

    ``kind`` is one of ``"entropy"`` (``z log z``), ``"power"``
    (``z**m / (m - 1)``), ``"log"`` (``-log z``) or ``"tabulated"``. ``scale``
    multiplies the whole density and ``eps`` adds ``eps * z log z``.
    """

    kind: str
    name: str
    m: Optional[float] = None
    scale: float = 1.0
    eps: float = 0.0
    table: Optional[tuple] = None
    theta: float = 1.0
    theta_constant: float = 1.0
    theta_threshold: float = 1.0
    growth_slope: float = math.inf
    f_at_zero: float = 0.0

    @property
    def superlinear(self):
        return self.growth_slope == math.inf


def entropy(scale=1.0):
    return EnergySpec(kind="entropy", name="entropy", scale=scale, theta=1.0,
                      theta_constant=scale, theta_threshold=1.0,
                      growth_slope=math.inf, f_at_zero=0.0)


def power(m, scale=1.0):
    """``f(z) = scale * z**m / (m - 1)``, so ``f'' = scale * m * z**(m - 2)``."""
    m = float(m)
    if m in (0.0, 1.0):
        raise ConfigError(f"power exponent must differ from 0 and 1, got {m}")
    if scale * m <= 0:
        raise NonConvexEnergy(f"power:m={m} with scale={scale} is not convex")
    return EnergySpec(kind="power", name=f"power:m={m:g}", m=m, scale=scale,
                      theta=2.0 - m, theta_constant=scale * m, theta_threshold=1.0,
                      growth_slope=math.inf if m > 1 else 0.0,
                      f_at_zero=0.0 if m > 0 else math.inf)


def log_energy(scale=1.0):
    """``f(z) = -scale * log z``; ``f'' = scale / z**2``."""
    return EnergySpec(kind="log", name="log", scale=scale, theta=2.0,
                      theta_constant=scale, theta_threshold=1.0,
                      growth_slope=0.0, f_at_zero=math.inf)


def qlaplacian(p):
    """Energy with ``f''(z) = z**(1 - p)``, whose flux for exponent ``p`` is the identity."""
    p = float(p)
    if p <= 1:
        raise ConfigError(f"qlaplacian needs p > 1, got {p}")
    if p == 2.0:
        spec = entropy()
    elif p == 3.0:
        spec = log_energy()
    else:
        m = 3.0 - p
        spec = power(m, scale=1.0 / m)
    return replace(spec, name=f"qlaplacian:p={p:g}")


def tabulated(z, f, fp, fpp, name="tabulated"):
    z = np.asarray(z, dtype=float)
    fpp = np.asarray(fpp, dtype=float)
    if z.ndim != 1 or z.size < 2 or np.any(np.diff(z) <= 0) or z[0] <= 0:
        raise ConfigError("tabulated nodes must be increasing positive reals")
    if np.any(fpp <= 0):
        raise NonConvexEnergy("tabulated f'' must be positive at every node")
    table = (tuple(z), tuple(np.asarray(f, float)), tuple(np.asarray(fp, float)), tuple(fpp))
    spec = EnergySpec(kind="tabulated", name=name, table=table, theta=0.0,
                      theta_constant=float(fpp[-1]), theta_threshold=float(z[-1]),
                      growth_slope=math.inf)
    return replace(spec, f_at_zero=float(derive(spec, check=False).f(np.array([1e-300]))[0]))


def load_tabulated(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != ["z", "f", "fp", "fpp"]:
            raise ConfigError(f"{path}: expected CSV header z,f,fp,fpp")
        rows = [[float(r[k]) for k in ("z", "f", "fp", "fpp")] for r in reader]
    arr = np.array(rows)
    return tabulated(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], name=f"tabulated:{path}")


_POWER_RE = re.compile(r"^power:m=(.+)$")
_QLAP_RE = re.compile(r"^qlaplacian:p=(.+)$")


def parse_energy(key):
    """Resolve a catalog key such as ``"power:m=2"`` to an :class:`EnergySpec`."""
    key = key.strip()
    try:
        if key == "entropy":
            return entropy()
        if key == "log":
            return log_energy()
        if mt := _POWER_RE.match(key):
            m = float(mt.group(1))
            if m <= 0:
                raise ConfigError(f"power exponent must be positive, got {m}")
            return power(m)
        if mt := _QLAP_RE.match(key):
            return qlaplacian(float(mt.group(1)))
        if key.startswith("tabulated:"):
            return load_tabulated(key[len("tabulated:"):])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot parse energy key {key!r}: {exc}") from exc
    raise ConfigError(f"unknown energy key {key!r}; catalog: {', '.join(CATALOG_KEYS)}")


def regularize_entropy(spec, eps):
    """Spec of ``f + eps * z log z``."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    if spec.theta <= 1.0:
        theta, c = spec.theta, spec.theta_constant
    else:
        theta, c = 1.0, eps
    return replace(spec, eps=spec.eps + eps, name=f"{spec.name}+{eps:g}*entropy",
                   growth_slope=math.inf, theta=theta, theta_constant=c,
                   theta_threshold=max(spec.theta_threshold, 1.0))


# ---------------------------------------------------------------------------
# Derived maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerivedEnergy:
    """Vectorised maps of one energy density.

    ``fpp_power`` is ``(c, k)`` when ``f''(z) = c z**k`` exactly; closed forms
    for the flux and regularity functions use it.
    """

    f_raw: Callable
    fp_raw: Callable
    fpp_raw: Callable
    name: str = "f"
    f_at_zero: float = 0.0
    fpp_power: Optional[tuple] = None
    spec: Optional[EnergySpec] = field(default=None, compare=False)

    def f(self, z):
        return self.f_raw(_positive(z))

    def fp(self, z):
        return self.fp_raw(_positive(z))

    def fpp(self, z):
        return self.fpp_raw(_positive(z))

    def Lf(self, z):
        z = _positive(z)
        return z * self.fp_raw(z) - self.f_raw(z)

    def G(self, v):
        v = _positive(v)
        return v * self.f_raw(1.0 / v)

    def Gp(self, v):
        """``G'(v) = -L_f(1/v)``."""
        z = 1.0 / _positive(v)
        return self.f_raw(z) - z * self.fp_raw(z)

    def Gpp(self, v):
        """``G''(v) = f''(1/v) / v**3``."""
        v = _positive(v)
        return self.fpp_raw(1.0 / v) / v**3

    def scaled(self, c):
        """The energy ``c * f``."""
        fpp_power = None if self.fpp_power is None else (c * self.fpp_power[0], self.fpp_power[1])
        return DerivedEnergy(lambda z: c * self.f_raw(z), lambda z: c * self.fp_raw(z),
                             lambda z: c * self.fpp_raw(z), name=f"{c:g}*{self.name}",
                             f_at_zero=c * self.f_at_zero, fpp_power=fpp_power)


def _xlogx(z):
    return z * np.log(z)


def _base_maps(spec):
    s = spec.scale
    if spec.kind == "entropy":
        return (lambda z: s * _xlogx(z), lambda z: s * (np.log(z) + 1.0),
                lambda z: s / z, (s, -1.0))
    if spec.kind == "power":
        m = spec.m
        return (lambda z: s * z**m / (m - 1.0), lambda z: s * m * z**(m - 1.0) / (m - 1.0),
                lambda z: s * m * z**(m - 2.0), (s * m, m - 2.0))
    if spec.kind == "log":
        return (lambda z: -s * np.log(z), lambda z: -s / z, lambda z: s / z**2, (s, -2.0))
    if spec.kind == "tabulated":
        return _tabulated_maps(spec) + (None,)
    raise ConfigError(f"unknown energy kind {spec.kind!r}")


def _tabulated_maps(spec):
    z, f, fp, fpp = (np.asarray(c, dtype=float) for c in spec.table)
    s = spec.scale
    p2 = PchipInterpolator(z, fpp, extrapolate=False)
    p1 = p2.antiderivative()
    p0 = p1.antiderivative()
    z0, zn = z[0], z[-1]
    f0, fp0, fpp0 = f[0], fp[0], fpp[0]
    fpn = fp0 + float(p1(zn))
    fn = f0 + fp0 * (zn - z0) + float(p0(zn))
    fppn = fpp[-1]

    def fpp_map(x):
        x = np.asarray(x, dtype=float)
        out = np.where(x < z0, fpp0, fppn)
        mid = (x >= z0) & (x <= zn)
        out = np.array(out, dtype=float)
        out[mid] = p2(x[mid])
        return s * out

    def fp_map(x):
        x = np.asarray(x, dtype=float)
        out = np.where(x < z0, fp0 + fpp0 * (x - z0), fpn + fppn * (x - zn))
        out = np.array(out, dtype=float)
        mid = (x >= z0) & (x <= zn)
        out[mid] = fp0 + p1(x[mid])
        return s * out

    def f_map(x):
        x = np.asarray(x, dtype=float)
        lo = f0 + fp0 * (x - z0) + 0.5 * fpp0 * (x - z0) ** 2
        hi = fn + fpn * (x - zn) + 0.5 * fppn * (x - zn) ** 2
        out = np.array(np.where(x < z0, lo, hi), dtype=float)
        mid = (x >= z0) & (x <= zn)
        out[mid] = f0 + fp0 * (x[mid] - z0) + p0(x[mid])
        return s * out

    return f_map, fp_map, fpp_map


def check_spec(spec, grid=None):
    """Sampled checks of convexity, ``f'' > 0`` and the declared lower bound on ``f''``."""
    d = derive(spec, check=False)
    z = probe_grid() if grid is None else np.asarray(grid, dtype=float)
    fz = d.f(z)
    bad = _first_convexity_violation(z, fz)
    if bad is not None:
        raise NonConvexEnergy(f"{spec.name}: sampled convexity fails near z={z[bad]:.6g}")
    fpp = d.fpp(z)
    if np.any(~(fpp > 0)):
        raise NonConvexEnergy(f"{spec.name}: f'' not positive at z={z[np.argmin(fpp)]:.6g}")
    if spec.theta < math.inf:
        tail = z >= spec.theta_threshold
        lower = spec.theta_constant * z[tail] ** (-spec.theta)
        if np.any(fpp[tail] < lower * (1 - 1e-12)):
            raise NonConvexEnergy(f"{spec.name}: declared bound f'' >= C z^-theta fails")
    return True


def derive(spec, check=True):
    """Package ``f, f', f'', L_f, G`` for ``spec`` (including its entropic shift)."""
    if check:
        check_spec(spec)
    f, fp, fpp, fpp_power = _base_maps(spec)
    eps = spec.eps
    if eps > 0:
        f0, fp0, fpp0 = f, fp, fpp
        f = lambda z: f0(z) + eps * _xlogx(z)  # noqa: E731
        fp = lambda z: fp0(z) + eps * (np.log(z) + 1.0)  # noqa: E731
        fpp = lambda z: fpp0(z) + eps / z  # noqa: E731
        if spec.kind == "entropy":
            fpp_power = (fpp_power[0] + eps, -1.0)
        else:
            fpp_power = None
    return DerivedEnergy(f, fp, fpp, name=spec.name, f_at_zero=spec.f_at_zero,
                         fpp_power=fpp_power, spec=spec)


def as_derived(energy):
    return derive(energy) if isinstance(energy, EnergySpec) else energy


# ---------------------------------------------------------------------------
# McCann transform
# ---------------------------------------------------------------------------


def _function_and_zero(energy):
    if isinstance(energy, EnergySpec):
        energy = derive(energy, check=False)
    if isinstance(energy, DerivedEnergy):
        return energy.f, energy.f_at_zero
    f0 = getattr(energy, "f_at_zero", None)
    if f0 is None:
        f0 = float(energy(np.array([1e-300]))[0])
    return energy, f0


def mccann_transform(energy, d):
    """``s -> s**d f(s**-d)``."""
    if d < 1 or int(d) != d:
        raise DomainError("dimension must be a positive integer")
    f, _ = _function_and_zero(energy)

    def transform(s):
        s = _positive(s)
        return s**d * f(s ** (-float(d)))

    return transform


def inverse_mccann(g, d):
    """``z -> g(z**(-1/d)) z``."""

    def inverse(z):
        z = _positive(z)
        return g(z ** (-1.0 / d)) * z

    return inverse


@dataclass(frozen=True)
class McCannResult:
    passed: bool
    witness: Optional[float] = None
    reason: str = ""

    def __bool__(self):
        return self.passed


def check_mccann(energy, d, probe=None, tol=SHAPE_TOL):
    """Sampled McCann condition: ``f(0) = 0`` and the transform is convex, non-increasing."""
    s = probe_grid() if probe is None else np.asarray(probe, dtype=float)
    if s.size < 64 or s.max() / s.min() < 1e4:
        raise DomainError("McCann probe grid needs >= 64 points over >= 4 decades")
    _, f0 = _function_and_zero(energy)
    if not (f0 == 0):
        raise DomainError(f"McCann condition requires f(0) = 0, got {f0}")
    g = mccann_transform(energy, d)(s)
    bad = _first_convexity_violation(s, g, tol)
    if bad is not None:
        return McCannResult(False, float(s[bad]), "transform not convex")
    bad = _first_increase(s, g, tol)
    if bad is not None:
        return McCannResult(False, float(s[bad]), "transform increasing")
    return McCannResult(True)


# ---------------------------------------------------------------------------
# Exponent calculus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentSet:
    p: float
    q: float
    d: int
    theta: float
    alpha: float
    beta: float
    branch: str


def conjugate(p):
    if not p > 1:
        raise DomainError(f"exponent p must exceed 1, got {p}")
    return p / (p - 1.0)


def exponents(spec, p, d=1):
    """Integrability exponent alpha and BV exponent beta of ``spec`` at ``(p, d)``."""
    q = conjugate(p)
    theta = spec.theta if isinstance(spec, EnergySpec) else float(spec)
    if theta == math.inf:
        alpha = beta = math.inf
        branch = "bounded"
    else:
        alpha = 2.0 - q * (1.0 + 1.0 / d) + theta * (q - 1.0)
        beta = max(1.0 - 1.0 / d, theta / p + 1.0 / q)
        if abs(alpha - 1.0) < 1e-12:
            alpha, branch = 1.0, "entropy"
        elif alpha < 1.0:
            branch = "void"
        else:
            branch = "power"
    return ExponentSet(p=p, q=q, d=d, theta=theta, alpha=alpha, beta=beta, branch=branch)


class _Antiderivative:
    """Increasing scalar map given by its derivative, with an optional closed form."""

    def __init__(self, deriv, closed=None, anchor=1.0, label="h"):
        self.deriv = deriv
        self.closed = closed
        self.anchor = anchor
        self.label = label

    def prime(self, z):
        return self.deriv(_positive(z))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.closed is not None:
            return self.closed(_positive(z))
        return self.quadrature(z)

    def quadrature(self, z):
        z = _positive(np.atleast_1d(np.asarray(z, dtype=float)))
        out = np.empty_like(z)
        for i, zi in enumerate(z):
            out[i] = self._integral(self.anchor, zi)
        return out

    def _integral(self, lo, hi):
        if lo == hi:
            return 0.0
        with np.errstate(all="ignore"):
            val, err, *rest = integrate.quad(lambda t: float(self.deriv(np.array(t))), min(lo, hi),
                                             max(lo, hi), limit=200, full_output=1)
        if not np.isfinite(val) or (len(rest) > 1 and abs(err) > 1e-6 * (1 + abs(val))):
            raise DivergenceError(f"{self.label}: integral over [{lo}, {hi}] does not converge")
        return val if hi > lo else -val


def _power_antiderivative(c, e, anchor):
    """Closed form of ``int_anchor^z c t**e dt``; anchor 0 requires ``e > -1``."""
    if anchor == 0.0:
        if e <= -1.0:
            return None
        return lambda z: c * z ** (e + 1.0) / (e + 1.0)
    if abs(e + 1.0) < 1e-14:
        return lambda z: c * np.log(z / anchor)
    return lambda z: c * (z ** (e + 1.0) - anchor ** (e + 1.0)) / (e + 1.0)


def reg_h_prime(energy, p, d=1, alpha=None):
    """Regularity function ``h`` with ``h'(z) = z**((alpha-1)/q) f''(z)**(1/p)`` and ``h(1) = 0``.

    ``alpha`` defaults to the integrability exponent of the energy.
    """
    q = conjugate(p)
    der = as_derived(energy)
    if alpha is None:
        spec = der.spec if isinstance(energy, DerivedEnergy) else energy
        if spec is None:
            raise DomainError("alpha must be given for an energy without catalog metadata")
        alpha = exponents(spec, p, d).alpha
    if not np.isfinite(alpha):
        raise DomainError("the regularity function needs a finite alpha")
    a = (alpha - 1.0) / q

    def hp(z):
        return z**a * der.fpp_raw(z) ** (1.0 / p)

    closed = None
    if der.fpp_power is not None:
        c, k = der.fpp_power
        closed = _power_antiderivative(c ** (1.0 / p), a + k / p, 1.0)
    h = _Antiderivative(hp, closed, anchor=1.0, label="h")
    h.alpha = alpha
    return h


def flux_h_prime(energy, p):
    """Flux nonlinearity ``H`` with ``H'(s) = s**(p-1) f''(s)`` and ``H(0+) = 0``."""
    der = as_derived(energy)
    conjugate(p)

    def Hp(s):
        return s ** (p - 1.0) * der.fpp_raw(s)

    closed = None
    if der.fpp_power is not None:
        c, k = der.fpp_power
        closed = _power_antiderivative(c, p - 1.0 + k, 0.0)
        if closed is None:
            raise DivergenceError("flux H is not integrable at 0 for this energy and p")
    H = _Antiderivative(Hp, closed, anchor=0.0, label="H")
    return H


# ---------------------------------------------------------------------------
# Superlinear McCann-admissible majorant
# ---------------------------------------------------------------------------


def _lower_hull(x, y):
    """Vertices of the lower convex hull of points sorted by ``x`` (monotone chain)."""
    hull = []
    for i in range(len(x)):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            cross = (x[i1] - x[i0]) * (y[i] - y[i0]) - (y[i1] - y[i0]) * (x[i] - x[i0])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.array(hull)


class SuperlinearMajorant:
    """``Phi(z) = z g(z**(-1/d))`` with ``g`` a smoothed convex decreasing hull."""

    def __init__(self, knots, kinks, widths, floor, d):
        self.knots = knots
        self.kinks = kinks
        self.widths = widths
        self.floor = floor
        self.d = d
        self.f_at_zero = 0.0

    def transformed(self, s):
        s = np.asarray(s, dtype=float)[..., None]
        x = (self.knots - s) / self.widths
        return self.floor + np.sum(self.kinks * self.widths * np.logaddexp(0.0, x), axis=-1)

    def __call__(self, z):
        z = _positive(z)
        return z * self.transformed(z ** (-1.0 / self.d))


@dataclass
class SuperlinearResult:
    Phi: SuperlinearMajorant
    C: float
    superlinear: bool
    mccann: McCannResult


def construct_superlinear(phi, d=1, z_range=(1e-3, 1e6), n=2000, smoothing=0.25):
    """Smooth strictly convex superlinear ``Phi`` obeying McCann's condition with ``Phi <= C (phi + 1)``."""
    zlo, zhi = z_range
    z_probe = np.geomspace(zlo, zhi, 256)
    vals = np.asarray(phi(z_probe), dtype=float)
    if _first_convexity_violation(z_probe, vals, 1e-8) is not None:
        raise PreconditionError("phi is not convex on the probe range")
    ratio = vals / z_probe
    tail = ratio[-64:]
    if np.any(np.diff(tail) <= 0) or tail[-1] <= 10 * max(tail[0], 1e-300):
        raise PreconditionError("phi is not eventually superlinear on the probe range")

    s = np.geomspace((100 * zhi) ** (-1.0 / d), (zlo / 100) ** (-1.0 / d), n)
    ms = s**d * np.asarray(phi(s ** (-float(d))), dtype=float)
    hull = _lower_hull(s, ms)
    hs, hv = s[hull], ms[hull]
    stop = int(np.argmin(hv))
    hs, hv = hs[: stop + 1], hv[: stop + 1]
    slopes = np.diff(hv) / np.diff(hs)
    slopes = np.append(slopes, 0.0)
    kinks = np.diff(slopes)
    knots = hs[1:]
    gaps_left = np.diff(hs)
    gaps_right = np.append(np.diff(hs)[1:], np.inf)
    widths = smoothing * np.minimum(gaps_left, gaps_right)
    keep = kinks > 0
    Phi = SuperlinearMajorant(knots[keep], kinks[keep], widths[keep], float(hv[-1]), d)

    z_dense = np.geomspace(zlo, zhi, 8192)
    C = max(float(np.max(Phi(chunk) / (np.asarray(phi(chunk), dtype=float) + 1.0)))
            for chunk in np.array_split(z_dense, 8))
    r = Phi(z_probe) / z_probe
    superlinear = bool(np.all(np.diff(r) >= -1e-12 * np.abs(r[1:])) and r[-1] > 10 * max(r[len(r) // 2], 1e-300))
    mc = check_mccann(Phi, d, probe=(z_probe ** (-1.0 / d))[::-1])
    return SuperlinearResult(Phi=Phi, C=C, superlinear=superlinear, mccann=mc)


# ---------------------------------------------------------------------------
# Truncation and McCann decomposition
# ---------------------------------------------------------------------------


class _TransformedEnergy:
    """Energy given through its McCann transform ``g``: ``f(z) = z g(z**(-1/d))``."""

    def __init__(self, g, gp, gpp, d, name):
        self.g, self.gp, self.gpp, self.d, self.name = g, gp, gpp, d, name
        self.f_at_zero = 0.0

    def __call__(self, z):
        return self.f(z)

    def f(self, z):
        z = _positive(z)
        return z * self.g(z ** (-1.0 / self.d))

    def Lf(self, z):
        z = _positive(z)
        s = z ** (-1.0 / self.d)
        return -self.gp(s) / (self.d * s ** (self.d - 1.0))

    def fp(self, z):
        z = _positive(z)
        return (self.Lf(z) + self.f(z)) / z

    def fpp(self, z):
        z = _positive(z)
        d = self.d
        s = z ** (-1.0 / d)
        return (self.gpp(s) + d * (d - 1.0) * s ** (d - 2.0) * self.Lf(z)) / (d * d * s**-2.0 * z)


@dataclass
class Decomposition:
    f_tilde: Callable
    f1: _TransformedEnergy
    f2: _TransformedEnergy
    z0: float
    z1: float
    d: int
    a0: float
    a1: float
    b0: float
    b1: float
    C2: float
    Lf_tilde: Callable


def decompose_truncated(energy, z0, z1, d):
    """Linearly truncate ``f`` outside ``[z0, z1]`` and split it as ``f1 - f2`` with both McCann.

    ``f1`` and ``f2`` are produced independently by double integration of the
    positive and negative parts of the second derivative of the transformed
    truncation, so ``f1 - f2`` reproducing the truncation is a genuine check.
    """
    der = as_derived(energy)
    if not 0 < z0 < z1:
        raise PreconditionError("need 0 < z0 < z1")
    zz = np.geomspace(z0, z1, 64)
    with np.errstate(all="ignore"):
        fpp_vals = der.fpp(zz)
    if not np.all(np.isfinite(fpp_vals)) or np.any(fpp_vals <= 0):
        raise PreconditionError("f'' is not evaluable and positive on [z0, z1]")
    d = int(d)
    a0 = float(der.fp(np.array(z0)))
    a1 = float(der.fp(np.array(z1)))
    b0 = float(der.Lf(np.array(z0)))
    b1 = b0 - float(der.Lf(np.array(z1)))
    s0, s1 = z0 ** (-1.0 / d), z1 ** (-1.0 / d)

    def f_tilde(z):
        z = _positive(z)
        mid = der.f(np.clip(z, z0, z1)) + b0
        return np.where(z <= z0, a0 * z, np.where(z >= z1, a1 * z + b1, mid))

    def Lf_tilde(z):
        z = _positive(z)
        return np.where(z <= z0, 0.0, np.where(z >= z1, -b1, der.Lf(np.clip(z, z0, z1)) - b0))

    def second(r):
        """Second derivative of the transformed truncation at a scalar ``r``."""
        if r >= s0:
            return 0.0
        if r <= s1:
            return b1 * d * (d - 1.0) * r ** (d - 2.0)
        z = r ** (-float(d))
        zarr = np.array(z)
        return float(d * d * r**-2.0 * z * der.fpp(zarr)
                     - d * (d - 1.0) * r ** (d - 2.0) * (der.Lf(zarr) - b0))

    def neg(r):
        return max(-second(r), 0.0)

    def pos(r):
        return max(second(r), 0.0)

    def make(part, const, name):
        def _quad(fun, lo):
            if lo >= s0:
                return 0.0
            pts = [s1] if lo < s1 < s0 else None
            val, _ = integrate.quad(fun, lo, s0, points=pts, limit=400, epsabs=1e-14, epsrel=1e-12)
            return val

        @np.vectorize
        def g(s):
            return const + _quad(lambda r: (r - s) * part(r), s)

        @np.vectorize
        def gp(s):
            return -_quad(part, s)

        @np.vectorize
        def gpp(s):
            return part(s)

        return _TransformedEnergy(g, gp, gpp, d, name)

    f2 = make(neg, 0.0, "f2")
    f1 = make(pos, a0, "f1")
    zs = np.geomspace(z0, max(z1 * 4, z0 * 8), 96)
    ratio = f2.fpp(zs) * zs ** (1.0 + 1.0 / d)
    C2 = float(max(np.max(ratio), 0.0))
    return Decomposition(f_tilde=f_tilde, f1=f1, f2=f2, z0=z0, z1=z1, d=d, a0=a0, a1=a1,
                         b0=b0, b1=b1, C2=C2, Lf_tilde=Lf_tilde)
