"""Shared, cached runs used by several test modules."""
import time

import pytest

from pjko import initial
from pjko.energy import entropy, power, qlaplacian
from pjko.jko import SchemeConfig, run_scheme
from pjko.reference import FDConfig, fd_solve

M = 256
T = 0.05
TAU = 1e-3
TAU_SWEEP = (4e-3, 2e-3, 1e-3)
SNAPSHOTS = (0.01, 0.02, 0.03, 0.04, 0.05)


class Timed:
    """A scheme trajectory with its oracle snapshots and the wall-clock spent."""

    def __init__(self, traj, snaps, secs):
        self.traj, self.snaps, self.secs = traj, snaps, secs


def _timed(rho0, energy, p, tau=TAU, snaps=SNAPSHOTS, horizon=T):
    start = time.perf_counter()
    traj = run_scheme(rho0, SchemeConfig(p, tau, horizon, M), energy)
    fd = fd_solve(rho0, energy, p, FDConfig(M, horizon, snapshot_times=snaps)) if snaps else None
    return Timed(traj, fd, time.perf_counter() - start)


@pytest.fixture(scope="session")
def heat_run():
    return _timed(initial.cosine(0, 1, M, 0.1), entropy(), 2.0)


@pytest.fixture(scope="session")
def porous_run():
    snaps = tuple(round(0.002 * k, 6) for k in range(1, 26))
    return _timed(initial.compact_bump(0, 1, M, 0.5, 0.2), power(2), 2.0, snaps=snaps)


@pytest.fixture(scope="session")
def doubly_nonlinear_run():
    return _timed(initial.bump(0, 1, M), qlaplacian(3), 3.0)


@pytest.fixture(scope="session")
def indicator_run():
    return _timed(initial.smoothed_indicator(0, 1, M), entropy(), 2.0, snaps=())


@pytest.fixture(scope="session")
def heat_tau_sweep():
    rho0 = initial.cosine(0, 1, M, 0.1)
    return {tau: run_scheme(rho0, SchemeConfig(2.0, tau, T, M), entropy()) for tau in TAU_SWEEP}


@pytest.fixture(scope="session")
def bump_tau_sweep():
    rho0 = initial.bump(0, 1, M)
    return {tau: run_scheme(rho0, SchemeConfig(2.0, tau, T, M), entropy()) for tau in TAU_SWEEP}
