import math
import warnings

import mpmath as mp
import numpy as np
import pytest

from oracles import picard_oracle, sticky_exact
from stickylab.model import HTable, build_model
from stickylab.volterra import (
    NonConvergenceError,
    SolveOptions,
    batch_residuals,
    char_fn,
    gaussian_source,
    kernel_weights,
    occupation_functional,
    residual,
    residuals,
    segment_m0,
    segment_m1,
    solve_h,
    sqrt_quadratic_row,
    sqrt_weights,
)

STICKY = dict(x=0, T=1, alpha="0", rho="1")


@pytest.fixture(scope="module")
def sticky_h():
    m = build_model(STICKY)
    return m, solve_h(m)


@pytest.fixture(scope="module")
def skew_h():
    m = build_model(dict(x=0, T=1, alpha="0.25", rho="1/(1+u)"))
    return m, solve_h(m)


def test_segment_moments():
    assert segment_m0(1.0, 4.0) == 1.0
    assert segment_m1(1.0, 4.0) == 2.0
    assert kernel_weights(0.01, 5).first_segment_coeff == pytest.approx(20.0, rel=1e-15)


def test_segment_moments_are_positive():
    w = kernel_weights(0.1, 50)
    assert np.all(w.m0[1:] > 0) and np.all(w.m1 > 0)
    with pytest.raises(ValueError):
        kernel_weights(0.0, 3)


def test_gaussian_source():
    assert gaussian_source(0.0, 1.0) == pytest.approx(0.3989422804, abs=1e-10)
    assert gaussian_source(0.0, 4.0) == pytest.approx(0.1994711402, abs=1e-10)
    assert gaussian_source(1.0, 1e-6) == 0.0


def _singular_integral(f, n):
    # int_0^n (f(n-s) - f(n)) s^(-3/2) ds at 30 digits
    mp.mp.dps = 30
    return float(mp.quad(lambda s: (f(n - s) - f(n)) * s ** mp.mpf(-1.5), [0] + list(range(1, n + 1))))


@pytest.mark.parametrize("n", [1, 2, 3, 7, 40])
@pytest.mark.parametrize("name", ["sqrt", "linear"])
def test_sqrt_quadratic_rows_are_exact(name, n):
    f = mp.sqrt if name == "sqrt" else (lambda t: t)
    row = sqrt_quadratic_row(n)
    h = np.array([float(f(j)) for j in range(row.size)])
    assert row @ h == pytest.approx(_singular_integral(f, n), abs=5e-14 * max(n, 1))
    assert abs(row.sum()) < 1e-14 * n


@pytest.mark.parametrize("n", [1, 2, 5, 40])
def test_sqrt_linear_rows_are_exact_for_sqrt(n):
    c, S = sqrt_weights(1.0, n)
    h = np.sqrt(np.arange(n + 1.0))
    assert c @ h[:n] - S * h[n] == pytest.approx(_singular_integral(mp.sqrt, n), abs=5e-14 * n)


def test_sticky_residuals_and_shape(sticky_h):
    m, h = sticky_h
    assert np.max(np.abs(h.residuals)) < 1e-12
    assert h.values[0] == 1.0
    assert np.all(np.diff(h.values) < 0)
    assert 0 < h.values[-1] < 1
    assert not h.flags.any()


def test_sticky_matches_closed_form(sticky_h):
    _, h = sticky_h
    assert np.max(np.abs(h.values - sticky_exact(h.times))) < 2e-5


def test_oracle_matches_closed_form():
    t, h = picard_oracle(0, lambda t: 0 * t, lambda u: 1 + 0 * u, T=0.5, dt=2e-4)
    assert np.max(np.abs(h - sticky_exact(t))) < 1e-4


@pytest.mark.parametrize("scheme, bound", [("sqrt-quadratic", 2e-5), ("sqrt-linear", 1e-3), ("linear", 2e-2)])
def test_schemes(scheme, bound):
    m = build_model(STICKY)
    h = solve_h(m, SolveOptions(scheme=scheme))
    assert h.meta["scheme"] == scheme
    assert np.max(np.abs(h.values - sticky_exact(h.times))) < bound
    assert np.max(np.abs(h.residuals)) < 1e-12


def test_off_boundary_start_is_near_zero_at_first_node():
    m = build_model(dict(x=1, T=0.1, alpha="0.25", rho="1/(1+u)"))
    for dt in (1e-3, 5e-4):
        h = solve_h(m, SolveOptions(dt=dt))
        assert h.values[0] == 0.0 and h.values[1] < 1e-8
        assert np.max(np.abs(h.residuals)) < 1e-12


def test_off_boundary_start_matches_oracle():
    m = build_model(dict(x=1, T=1, alpha="0.25", rho="1/(1+u)"))
    h = solve_h(m)
    t, ho = picard_oracle(1.0, lambda t: 0.25 + 0 * t, lambda u: 1 / (1 + u), dt=2e-4)
    assert np.max(np.abs(h.values - ho[::5])) < 1e-6


@pytest.mark.parametrize(
    "cfg",
    [
        dict(x=0.5, T=1, alpha="0.5*min(1, t)", rho="1-u/2"),
        dict(x=0, T=1, alpha="0.4", rho="0.1"),
        dict(x=-0.3, T=2, alpha="0", rho="exp(-u)"),
        dict(x=0, T=1, alpha="0.49", rho="0.01+u"),
    ],
)
def test_other_models_solve_cleanly(cfg):
    m = build_model(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        h = solve_h(m, SolveOptions(dt=5e-3))
    assert np.max(np.abs(h.residuals)) < 1e-12
    assert not h.flags.any()


def test_residual_reacts_to_perturbation(skew_h):
    m, h = skew_h
    n = 100
    assert abs(residual(m, h, n)) < 1e-12
    bumped = h.values.copy()
    bumped[n] += 0.1
    r = residuals(m, HTable(dt=h.dt, values=bumped, residuals=h.residuals))
    assert abs(r[n]) > 1e-3
    with pytest.raises(IndexError):
        residual(m, h, 0)


def test_oracle_residual_on_solver_grid(skew_h):
    m, h = skew_h
    _, ho = picard_oracle(0, lambda t: 0.25 + 0 * t, lambda u: 1 / (1 + u))
    r = batch_residuals(m, h.dt, ho[::10])
    assert np.max(np.abs(r[1:])) <= math.sqrt(h.dt)


def test_weak_uniqueness_of_picard(skew_h):
    m, h = skew_h
    lo = solve_h(m, init=0.0)
    hi = solve_h(m, init=1.0)
    assert np.max(np.abs(lo.values - hi.values)) < 1e-8
    assert np.max(np.abs(lo.values - h.values)) < 1e-8


def test_non_convergence_is_reported():
    m = build_model(dict(x=0, T=1, alpha="0.25", rho="1/(1+u)"))
    with pytest.raises(NonConvergenceError):
        solve_h(m, SolveOptions(max_picard=1), init=0.0)


def test_options_are_validated():
    with pytest.raises(ValueError):
        SolveOptions(dt=0)
    with pytest.raises(ValueError):
        SolveOptions(scheme="cubic")


def test_psi_source_enters_the_equation():
    m = build_model(STICKY)
    psi = np.full(1001, 0.05)
    h = solve_h(m, SolveOptions(psi_source=psi))
    base = solve_h(m)
    assert np.all(h.values[1:] < base.values[1:])
    assert np.max(np.abs(residuals(m, h, psi=psi))) < 1e-12
    assert np.max(np.abs(residuals(m, h))[1:]) > 0.04


def test_char_fn_at_zero_is_mass_off_boundary(skew_h):
    m, h = skew_h
    for t in (0.1, 0.5, 1.0):
        assert char_fn(m, h, 0.0, t) == pytest.approx(1 - h.values[h.index_of(t)], abs=1e-15)


def test_char_fn_conjugate_symmetry_and_bound(skew_h):
    m, h = skew_h
    for t in (0.25, 0.5, 1.0):
        n = h.index_of(t)
        for lam in (0.3, 1.0, 2.5):
            f = char_fn(m, h, lam, t)
            assert abs(char_fn(m, h, -lam, t) - f.conjugate()) < 1e-12
            assert abs(f) <= 1 + h.values[n] + 1e-6


def test_char_fn_short_time():
    m = build_model(dict(x=2, T=0.1, alpha="0.25", rho="1/(1+u)"))
    h = solve_h(m)
    ref = np.exp(2j) * np.exp(-h.dt / 2)
    assert abs(char_fn(m, h, 1.0, h.dt) - ref) < 1e-6


def test_occupation_functional(sticky_h):
    m, h = sticky_h
    zero = HTable(dt=h.dt, values=np.zeros(h.M + 1), residuals=np.zeros(h.M + 1))
    assert occupation_functional(m, zero, 1.0) == 0.0
    assert occupation_functional(m, h, 1.0) == pytest.approx(np.trapezoid(h.values, dx=h.dt), rel=1e-14)


def test_refinement_from_coarse_grids():
    m = build_model(STICKY)
    tables = [solve_h(m, SolveOptions(dt=dt)) for dt in (1e-2, 5e-3, 2.5e-3, 1.25e-3)]
    changes = [np.max(np.abs(a.values - b.values[::2])) for a, b in zip(tables, tables[1:])]
    assert changes[0] > changes[1] > changes[2]
