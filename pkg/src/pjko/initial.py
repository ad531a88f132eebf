"""Initial densities on ``(a, b)`` and a small parser for their text form."""
from __future__ import annotations

import os
import re

import numpy as np

from .errors import ConfigError
from .measure import GridDensity, read_snapshot


def uniform(a, b, n):
    return GridDensity(a, b, np.full(n, 1.0 / (b - a)))


def cosine(a, b, n, amplitude=0.1):
    """``1 + amplitude cos(pi (x - a)/(b - a))``, normalised."""
    return GridDensity.from_function(
        a, b, n, lambda x: 1.0 + amplitude * np.cos(np.pi * (x - a) / (b - a)))


def bump(a, b, n, center=0.5, width=0.1, height=1.0):
    """Gaussian bump over a unit baseline, normalised; everywhere positive."""
    return GridDensity.from_function(
        a, b, n, lambda x: 1.0 + height * np.exp(-(((x - center) / width) ** 2)))


def compact_bump(a, b, n, center=0.5, width=0.2):
    """Parabolic cap ``(1 - ((x - c)/w)^2)_+``, normalised (zero outside ``|x - c| < w``)."""
    return GridDensity.from_function(
        a, b, n, lambda x: np.maximum(0.0, 1.0 - ((x - center) / width) ** 2))


def _cubic_ramp(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def smoothed_indicator(a, b, n, left=0.3, right=0.7, smoothing=0.02, floor=0.2):
    """Indicator of ``[left, right]`` with cubic ramps of width ``smoothing`` over a positive floor."""
    def prof(x):
        up = _cubic_ramp((x - (left - smoothing / 2)) / smoothing)
        down = 1.0 - _cubic_ramp((x - (right - smoothing / 2)) / smoothing)
        return floor + np.minimum(up, down)
    return GridDensity.from_function(a, b, n, prof)


BUILDERS = {
    "uniform": uniform,
    "cosine": cosine,
    "bump": bump,
    "compact_bump": compact_bump,
    "smoothed_indicator": smoothed_indicator,
}

_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def make_initial(text, a, b, n):
    """Build a density from ``name(arg, ...)`` or a snapshot CSV path."""
    match = _CALL.match(text)
    if match and match.group(1) in BUILDERS:
        args = match.group(2)
        vals = [float(v) for v in args.split(",")] if args and args.strip() else []
        try:
            return BUILDERS[match.group(1)](a, b, n, *vals)
        except TypeError as exc:
            raise ConfigError(f"bad arguments for initial condition {text!r}: {exc}") from None
    if os.path.exists(text):
        rho = read_snapshot(text, a, b)
        if rho.n != n:
            vals = np.interp(np.linspace(a, b, n + 1)[:-1] + (b - a) / (2 * n), rho.x, rho.values)
            rho = GridDensity.normalized(a, b, vals)
        return rho
    raise ConfigError(f"unknown initial condition {text!r}; choose one of {sorted(BUILDERS)} or a CSV path")
