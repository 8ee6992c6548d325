import math

import numpy as np
import pytest

from stickylab.lattice import WalkParams, constant_table, couple_solutions, simulate_ensemble
from stickylab.model import build_model
from stickylab.validate import (
    Check,
    ValidationReport,
    check_density_identity,
    check_pathwise_uniqueness,
    check_solver_agreement,
    check_supremum_is_solution,
    check_weak_uniqueness,
    run_checks,
)
from stickylab.volterra import SolveOptions, solve_h

STICKY = dict(x=0, T=0.2, alpha="0", rho="1")


def test_density_check_can_fail():
    m = build_model(STICKY)
    p = WalkParams.for_model(m, 0.01)
    ones = constant_table(1.0, 1e-3, 200)
    # walkers that never leave 0
    frozen = build_model(dict(STICKY, rho="1e15"))
    ens = simulate_ensemble(frozen, ones, 50, p, 0)
    with pytest.warns(UserWarning):
        (c,) = check_density_identity(m, ones, ens, [0.2])
    assert c.statistic == 0.0 and c.expected == 1.0 and not c.passed


def test_agreement_reports_worst_time():
    m = build_model(STICKY)
    h = solve_h(m)
    ens = simulate_ensemble(m, h, 5000, WalkParams.for_model(m, 0.01), 42)
    (c,) = check_solver_agreement(h, ens)
    assert c.name.startswith("solver_agreement[all, worst t=")
    per_time = check_solver_agreement(h, ens, [0.1, 0.2])
    assert [x.name for x in per_time] == ["solver_agreement[t=0.1]", "solver_agreement[t=0.2]"]
    shifted = constant_table(0.5, h.dt, h.M)
    (bad,) = check_solver_agreement(shifted, ens)
    assert not bad.passed


def test_identical_tables_pass_pathwise_and_supremum():
    m = build_model(dict(x=0, T=0.2, alpha="0.25", rho="1/(1+u)"))
    h = solve_h(m)
    entries = check_pathwise_uniqueness(m, h, h, 2000, 0.01, 5)
    assert all(c.passed for c in entries)
    assert {c.statistic for c in entries if "halving" not in c.name} == {0.0}
    run = couple_solutions(m, h, h, 2000, WalkParams.for_model(m, 0.01), 5)
    sup = check_supremum_is_solution(run, [0.1, 0.2], solver_residuals=h.residuals)
    assert all(c.passed for c in sup if "residual" not in c.name)
    assert all(c.statistic == 0.0 for c in sup if "max_plus_min" in c.name or "psi" in c.name)


def test_negative_control_fails_thresholds():
    m = build_model(dict(x=0, T=0.2, alpha="0.25", rho="1/(1+u)"))
    h = solve_h(m)
    entries = check_pathwise_uniqueness(m, h, constant_table(0.0, h.dt, h.M), 2000, 0.01, 5, halve=False)
    assert not any(c.passed for c in entries)


@pytest.mark.parametrize(
    "cfg",
    [
        dict(x=0, T=0.2, alpha="0.25", rho="0.5"),
        dict(x=0, T=0.2, alpha="0.5*min(1, t)", rho="1-u/2"),
    ],
)
def test_weak_uniqueness(cfg):
    m = build_model(cfg)
    entries = check_weak_uniqueness(m, particles=5000, eps=0.01, seed=42, mc_tol=0.04)
    assert [c.name for c in entries] == ["weak_uniqueness.solver", "weak_uniqueness.particles"]
    assert all(c.passed for c in entries)
    with pytest.raises(ValueError):
        check_weak_uniqueness(m, particles=10)


def test_report_format(tmp_path):
    r = ValidationReport(provenance={"seed": 1})
    r.extend([Check("b", 1.0, 1.0, 0.1, 0.01, True), Check("a", 0.5, 1.0, 0.1, math.nan, False)])
    assert [c.name for c in r.checks] == ["a", "b"]
    assert not r.passed and [c.name for c in r.failures()] == ["a"]
    csv = r.to_csv(tmp_path / "r.csv")
    assert csv.splitlines() == [
        "check,statistic,expected,tol,se,pass",
        "a,0.5,1,0.10000000000000001,nan,false",
        "b,1,1,0.10000000000000001,0.01,true",
    ]
    text = r.to_text()
    assert text.startswith("# seed = 1\nFAIL  a:")
    assert text.endswith("1/2 checks passed\n")


def test_run_checks_small_sticky():
    m = build_model(dict(x=0, T=0.5, alpha="0", rho="1"))
    report, art = run_checks(
        m, checks=("agreement", "charfn", "weak_uniqueness"), eps=0.01, particles=20_000,
        times=(0.25, 0.5), lambdas=(1.0,),
    )  # fmt: skip
    assert report.passed, report.to_text()
    assert {"h", "ensemble"} <= set(art)
    again, _ = run_checks(
        m, checks=("agreement", "charfn", "weak_uniqueness"), eps=0.01, particles=20_000,
        times=(0.25, 0.5), lambdas=(1.0,),
    )  # fmt: skip
    assert again.to_csv() == report.to_csv()
    with pytest.raises(ValueError):
        run_checks(m, checks=("nope",))


def test_run_checks_pathwise_includes_control():
    m = build_model(dict(x=0, T=0.2, alpha="0.25", rho="1/(1+u)"))
    report, art = run_checks(m, checks=("pathwise",), eps=0.01, particles=3000, times=(0.2,))
    names = [c.name for c in report.checks]
    assert "pathwise.negative_control_fails" in names
    assert next(c for c in report.checks if c.name == "pathwise.negative_control_fails").passed
    assert "mc_table" in art
