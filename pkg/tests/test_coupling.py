import numpy as np
import pytest

from stickylab.lattice import (
    GridMismatchError,
    WalkParams,
    constant_table,
    couple_solutions,
    max_min_process,
)
from stickylab.lattice.coupling import X1, X2
from stickylab.model import build_model
from stickylab.volterra import solve_h


@pytest.fixture(scope="module")
def setup():
    m = build_model(dict(x=0, T=0.2, alpha="0.25", rho="1/(1+u)"))
    return m, solve_h(m), WalkParams.for_model(m, 0.01)


def test_identical_tables_give_identical_paths(setup):
    m, h, p = setup
    run = couple_solutions(m, h, h, 5000, p, 42)
    assert run.sup_distance == 0.0 and run.L0_delta == 0.0
    psi, se = run.psi_prime()
    assert np.isnan(psi[0]) and np.all(psi[1:] == 0.0)
    mm = max_min_process(run)
    h1, _ = run.atom(X1)
    assert np.array_equal(mm.h_max, h1) and np.array_equal(mm.h_min, h1)
    assert np.array_equal(run.atom(X2)[0], h1)
    assert np.array_equal(mm.L0_max_mean, mm.L0_min_mean)


def test_stats_csv(setup, tmp_path):
    m, h, p = setup
    run = couple_solutions(m, h, h, 200, p, 1)
    text = run.stats_csv(tmp_path / "c.csv")
    lines = text.splitlines()
    assert lines[0] == "t,sup_dist_mean,L0_delta_mean,psi_prime"
    assert lines[1] == "0,0,0,nan"
    assert lines[2] == "0.001,0,0,0"
    assert (tmp_path / "c.csv").read_text() == text


def test_negative_control_separates(setup):
    m, h, p = setup
    run = couple_solutions(m, h, constant_table(0.0, h.dt, h.M), 5000, p, 42)
    assert run.sup_distance > 2 * p.eps
    assert run.L0_delta > 4 * p.eps
    assert np.all(np.diff(run.sup_dist_mean) >= 0)


def test_max_min_identities(setup):
    m, h, p = setup
    run = couple_solutions(m, h, constant_table(0.0, h.dt, h.M), 20_000, p, 42)
    mm = max_min_process(run)
    h1, se1 = run.atom(X1)
    h2, se2 = run.atom(X2)
    # the max sits at 0 only if both are <= 0; the min only if both are >= 0
    assert np.all(mm.h_max <= np.minimum(h1, h2) + 1e-12 + 2 * (se1 + se2))
    n = -1
    assert abs(mm.balance[n]) < 3 * mm.balance_se[n]


def test_grid_mismatch(setup):
    m, h, p = setup
    with pytest.raises(GridMismatchError):
        couple_solutions(m, h, constant_table(0.0, 2e-3, 100), 10, p, 0)
    with pytest.raises(ValueError):
        couple_solutions(m, h, h, 0, p, 0)
