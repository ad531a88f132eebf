import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from pjko import initial
from pjko.diagnostics import (bp_value, bv_checks, edi_report, flow_interchange_check, holder_check,
                              slope_quantile, slope_term, step2_bound_check, young_gap,
                              young_integrand)
from pjko.energy import as_derived, conjugate, entropy, log_energy, power, qlaplacian
from pjko.errors import DomainError, IncompleteTrajectory
from pjko.jko import SchemeConfig, Trajectory, run_scheme
from pjko.measure import GridDensity, density_to_quantile

M = 128


@pytest.fixture(scope="module")
def bump_run():
    return run_scheme(initial.bump(0, 1, M), SchemeConfig(2.0, 2e-3, 0.02, M), entropy())


@pytest.fixture(scope="module")
def uniform_run():
    return run_scheme(initial.uniform(0, 1, 32), SchemeConfig(2.0, 1e-2, 0.05, 32), entropy())


# --- slope -------------------------------------------------------------------

def test_slope_of_uniform_is_zero():
    assert slope_term(initial.uniform(0, 1, 64), entropy(), 2.0) == 0.0


def test_slope_equals_half_fisher_information():
    amp = 0.1

    def fisher_integrand(x):
        rho = 1 + amp * math.cos(math.pi * x)
        return (amp * math.pi * math.sin(math.pi * x)) ** 2 / rho

    oracle = 0.5 * quad(fisher_integrand, 0, 1, epsabs=1e-14, epsrel=1e-13)[0]
    rho = GridDensity(0, 1, 1 + amp * np.cos(np.pi * (np.arange(4096) + 0.5) / 4096))
    assert slope_term(rho, entropy(), 2.0) == pytest.approx(oracle, abs=1e-5)
    # closed form: int_0^1 sin^2(pi x) / (1 + a cos(pi x)) dx = (1 - sqrt(1 - a^2)) / a^2
    assert oracle == pytest.approx(0.5 * math.pi**2 * (1 - math.sqrt(1 - amp**2)), rel=1e-12)


@pytest.mark.parametrize("spec,q", [(entropy(), 2.0), (power(2), 2.0), (qlaplacian(3), 1.5),
                                    (power(0.5), 3.0)], ids=["entropy", "square", "log", "sqrt"])
def test_slope_dual_evaluation_agrees_under_refinement(spec, q):
    """Both stencils approximate the same integral; on a fine grid they agree closely."""
    rho = initial.bump(0, 1, 20000)
    a = slope_term(rho, spec, q, via="Lf")
    b = slope_term(rho, spec, q, via="fprime")
    assert abs(a - b) <= 1e-8 * (1 + a)


@pytest.mark.parametrize("c", [0.5, 2.0, 7.0])
@pytest.mark.parametrize("q", [1.5, 2.0, 3.0])
def test_slope_scales_with_energy(c, q):
    rho = initial.bump(0, 1, 200)
    der = as_derived(power(2))
    base = slope_term(rho, der, q)
    assert slope_term(rho, der.scaled(c), q) == pytest.approx(c**q * base, rel=1e-12)


def test_slope_undefined_when_pressure_blows_up_at_zero():
    with pytest.raises(DomainError):
        slope_term(initial.compact_bump(0, 1, 64), log_energy(), 1.5)


def test_slope_excludes_empty_cells():
    rho = initial.compact_bump(0, 1, 400)
    val = slope_term(rho, power(2), 2.0)
    assert math.isfinite(val) and val > 0


def test_mass_coordinate_slope_matches_grid_slope():
    rho = initial.bump(0, 1, 16384)
    X = density_to_quantile(rho, 1024)
    assert slope_quantile(X, entropy(), 2.0) == pytest.approx(slope_term(rho, entropy(), 2.0), rel=1e-4)


# --- B_p ----------------------------------------------------------------------

@pytest.mark.parametrize("t,x,p,expected", [(1, 2, 2, 2.0), (0, 0, 3, 0.0), (-1, 1, 2, math.inf),
                                            (0, 1, 2, math.inf), (2, -2, 3, 8 / 12)])
def test_bp_value_cases(t, x, p, expected):
    assert bp_value(t, x, p) == pytest.approx(expected)


def test_bp_value_is_jointly_convex():
    rng = np.random.default_rng(17)
    for _ in range(1000):
        p = float(rng.uniform(1.1, 5.0))
        t1, t2 = rng.uniform(1e-3, 3.0, 2)
        x1, x2 = rng.uniform(-3, 3, 2)
        mid = bp_value(0.5 * (t1 + t2), 0.5 * (x1 + x2), p)
        assert mid <= 0.5 * (bp_value(t1, x1, p) + bp_value(t2, x2, p)) * (1 + 1e-12) + 1e-15


# --- Young ----------------------------------------------------------------------

@settings(max_examples=200)
@given(st.lists(st.floats(-50, 50), min_size=8, max_size=8),
       st.lists(st.floats(-50, 50), min_size=8, max_size=8), st.floats(1.1, 6.0))
def test_young_integrand_nonnegative(a, w, p):
    vals = young_integrand(np.array(a), np.array(w), p)
    scale = 1 + np.abs(np.array(a)) ** conjugate(p) + np.abs(np.array(w)) ** p
    assert np.all(vals >= -1e-12 * scale)


@settings(max_examples=100)
@given(st.lists(st.floats(-20, 20), min_size=8, max_size=8), st.floats(1.1, 6.0))
def test_young_equality_case(a, p):
    a = np.array(a)
    q = conjugate(p)
    w = -np.sign(a) * np.abs(a) ** (q - 1)
    vals = young_integrand(a, w, p)
    assert np.all(np.abs(vals) <= 1e-12 * (1 + np.abs(a) ** q))


def test_young_gap_of_stationary_run_is_zero(uniform_run):
    g = young_gap(uniform_run)
    assert g["gap"] == 0.0 and g["law_residual"] == 0.0


@pytest.mark.parametrize("spec,p", [(entropy(), 2.0), (power(2), 2.0), (qlaplacian(3), 3.0)],
                         ids=["entropy", "square", "log"])
def test_young_gap_and_law_vanish_together(spec, p):
    ratios = []
    for tau in (4e-3, 2e-3):
        traj = run_scheme(initial.bump(0, 1, 64), SchemeConfig(p, tau, 0.02, 64), spec)
        g = young_gap(traj)
        assert g["gap"] >= -1e-12
        ratios.append(g["law_residual"] / g["gap"])
    assert max(ratios) / min(ratios) <= 3.0


def test_young_gap_shrinks_with_step(bump_run):
    coarse = run_scheme(initial.bump(0, 1, M), SchemeConfig(2.0, 4e-3, 0.02, M), entropy())
    assert young_gap(bump_run)["gap"] < young_gap(coarse)["gap"]


# --- EDI ledger -------------------------------------------------------------------

def test_stationary_residual_is_zero(uniform_run):
    rep = edi_report(uniform_run)
    assert rep.global_residual == pytest.approx(0.0, abs=1e-15)
    assert rep.ok


def test_heat_bump_ledger(bump_run):
    rep = edi_report(bump_run)
    drop = rep.initial_energy - rep.final_energy
    assert -1e-7 <= rep.global_residual <= 0.05 * drop
    assert rep.recomputed_residual() == pytest.approx(rep.global_residual, abs=1e-12)
    assert len(rep.ledger) == len(bump_run.steps) - 1
    assert all(r.slope_term >= 0 and r.kinetic_term >= 0 for r in rep.ledger)
    assert rep.precursor_min >= -rep.tol


def test_slope_term_bounded_by_precursor_metric_bound(bump_run):
    """Slope from the discrete optimality condition never exceeds the metric bound (Jensen)."""
    X0 = bump_run.steps[0]
    from pjko.jko import degiorgi_step
    from pjko.measure import wasserstein_pp
    for s in (0.1, 0.5, 1.0):
        hat = degiorgi_step(X0, entropy(), 2.0, 2e-3, s).next
        bound = 0.5 * wasserstein_pp(hat, X0, 2.0) / (s * 2e-3) ** 2
        assert slope_quantile(hat, entropy(), 2.0) <= bound * (1 + 1e-6)


def test_incomplete_trajectory_is_refused(bump_run):
    broken = Trajectory(bump_run.steps[:3], bump_run.results[:2], bump_run.config, entropy(),
                        complete=False, reason="stopped")
    with pytest.raises(IncompleteTrajectory):
        edi_report(broken)
    with pytest.raises(IncompleteTrajectory):
        young_gap(broken)


# --- flow interchange -------------------------------------------------------------------

def test_flow_interchange_uniform(uniform_run):
    rep = flow_interchange_check(uniform_run, 2.0)
    assert np.allclose(rep["values"], rep["values"][0], rtol=1e-14)
    assert rep["dissipation"] == pytest.approx(0.0, abs=1e-20)


def test_square_integral_strictly_decreasing(bump_run):
    rep = flow_interchange_check(bump_run, 2.0)
    assert np.all(np.diff(rep["values"]) < 0)
    assert rep["budget_ok"] and rep["budget_slack"] >= 0


def test_entropy_branch_monotone(bump_run):
    rep = flow_interchange_check(bump_run, 1.0)
    assert rep["monotone"] and "budget_ok" not in rep


def test_holder_estimate(bump_run):
    rep = holder_check(bump_run)
    assert rep["ok"] and rep["C"] > 0


# --- BV ------------------------------------------------------------------------------

def test_total_variation_of_uniform_run(uniform_run):
    assert np.all(bv_checks(uniform_run)["tv"] == 0)


def test_indicator_total_variation_strictly_decreasing():
    traj = run_scheme(initial.smoothed_indicator(0, 1, M), SchemeConfig(2.0, 1e-3, 0.02, M), entropy())
    rep = bv_checks(traj)
    assert np.all(np.diff(rep["tv"]) < 0)
    weighted = rep["tv"][1:] * (np.arange(1, len(rep["tv"])) * 1e-3) ** 0.5
    assert np.max(weighted) == pytest.approx(rep["C_tilde"]) and math.isfinite(rep["C_tilde"])


# --- truncated energy bound ---------------------------------------------------------------

def test_bound_check_constant_density():
    rep = step2_bound_check(initial.uniform(0, 1, 50), power(2), 2.0, 2, 0.5, 2.0)
    assert rep["integral_lhs"] == 0.0 and rep["integral_rhs"] == 0.0 and rep["cellwise_ok"]


def test_bound_check_trivial_in_one_dimension():
    rep = step2_bound_check(initial.bump(0, 1, 200), power(2), 2.0, 1, 0.5, 2.0)
    assert rep["integral_lhs"] <= 1e-12 and rep["cellwise_ok"]


def test_bound_check_square_in_two_dimensions():
    rep = step2_bound_check(initial.bump(0, 1, 400, 0.5, 0.1, 3.0), power(2), 2.0, 2, 0.5, 2.0)
    assert rep["cellwise_ok"] and rep["worst_ratio"] <= 1.0 + 1e-6
    assert rep["integral_lhs"] > 0
