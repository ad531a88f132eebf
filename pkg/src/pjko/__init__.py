"""Minimizing-movement solver for doubly nonlinear diffusion on an interval.

Modules: :mod:`energy` (convex energy catalog and scalar analysis),
:mod:`measure` (1D densities, quantiles and transport), :mod:`jko` (the
scheme), :mod:`diagnostics` (dissipation ledgers), :mod:`reference`
(finite-volume cross-check) and :mod:`cli`.
"""

__version__ = "0.1.0"

from .energy import entropy, log_energy, parse_energy, power, qlaplacian  # noqa: E402
from .jko import SchemeConfig, jko_step, run_scheme  # noqa: E402
from .measure import GridDensity, QuantileRep, density_to_quantile, quantile_to_density  # noqa: E402

__all__ = ["entropy", "log_energy", "parse_energy", "power", "qlaplacian", "SchemeConfig",
           "jko_step", "run_scheme", "GridDensity", "QuantileRep", "density_to_quantile",
           "quantile_to_density", "__version__"]
