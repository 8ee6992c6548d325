"""Named comparisons between the solver and the lattice simulator.

Monte Carlo comparisons pass within three standard errors; deterministic
ones carry an explicit absolute or relative tolerance. Each check returns a
list of :class:`Check` entries that a :class:`ValidationReport` collects.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from stickylab.lattice import (
    INTERACTING,
    WalkParams,
    boundary_density,
    constant_table,
    couple_solutions,
    empirical_char_fn,
    max_min_process,
    mckean_vlasov_iterate,
    simulate_ensemble,
)
from stickylab.lattice.coupling import MAX, MIN, X1, X2, CoupledRun
from stickylab.lattice.ensemble import Ensemble
from stickylab.model import HTable, ModelSpec
from stickylab.volterra import SolveOptions, batch_residuals, char_fn, solve_h

__all__ = [
    "Check",
    "ValidationReport",
    "check_density_identity",
    "check_charfn",
    "check_pathwise_uniqueness",
    "check_supremum_is_solution",
    "check_weak_uniqueness",
    "check_solver_agreement",
    "run_checks",
    "CHECKS",
]

N_SIGMA = 3.0


@dataclass(frozen=True)
class Check:
    name: str
    statistic: float
    expected: float
    tolerance: float
    standard_error: float
    passed: bool


def _stat_check(name: str, stat: float, expected: float, se: float) -> Check:
    tol = N_SIGMA * se
    return Check(name, float(stat), float(expected), float(tol), float(se), bool(abs(stat - expected) <= tol))


def _fmt(v: float) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return f"{v:.17g}"


@dataclass
class ValidationReport:
    checks: list[Check] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def extend(self, entries: Sequence[Check]) -> None:
        self.checks.extend(entries)
        self.checks.sort(key=lambda c: c.name)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        buf.write("check,statistic,expected,tol,se,pass\n")
        for c in self.checks:
            row = [c.name, _fmt(c.statistic), _fmt(c.expected), _fmt(c.tolerance), _fmt(c.standard_error)]
            buf.write(",".join(row) + "," + ("true" if c.passed else "false") + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_text(self) -> str:
        lines = []
        for key in sorted(self.provenance):
            lines.append(f"# {key} = {self.provenance[key]}")
        for c in self.checks:
            verdict = "PASS" if c.passed else "FAIL"
            lines.append(
                f"{verdict}  {c.name}: {c.statistic:.6g} vs {c.expected:.6g} "
                f"(tol {c.tolerance:.3g}, se {c.standard_error:.3g})"
            )
        n_fail = len(self.failures())
        lines.append(f"{len(self.checks) - n_fail}/{len(self.checks)} checks passed")
        return "\n".join(lines) + "\n"


def _t_label(t: float) -> str:
    return f"t={t:g}"


# {{{ checks on one ensemble


def check_density_identity(
    m: ModelSpec,
    h: HTable,
    ens: Ensemble,
    times: Sequence[float],
    *,
    band_sites: int = 4,
    rel_tol: float = 0.10,
) -> list[Check]:
    """Mid-value of the boundary density against ``(1 - alpha) h / rho(h)``."""
    eps = ens.params.eps
    band = band_sites * eps
    out = []
    for t in times:
        plus, minus = boundary_density(ens, t, band)
        est = 0.5 * (plus + minus)
        n = h.index_of(t)
        expected = (1.0 - float(m.alpha(t))) * h.values[n] / float(m.rho(h.values[n]))
        # both bands together hold a binomial count c with est = c / (2 band N)
        frac = 2.0 * band * est
        se = math.sqrt(max(frac * (1.0 - frac), 0.0) / ens.N) / (2.0 * band)
        tol = rel_tol * abs(expected)
        out.append(
            Check(f"density_identity[{_t_label(t)}]", est, expected, tol, se, abs(est - expected) <= tol)
        )
    return out


def check_charfn(
    m: ModelSpec,
    h: HTable,
    ens: Ensemble,
    lambdas: Sequence[float],
    times: Sequence[float],
) -> list[Check]:
    """Empirical ``E[exp(i lam X) 1{X != 0}]`` against the formula, per component."""
    out = []
    for t in times:
        for lam in lambdas:
            emp, se_re, se_im = empirical_char_fn(ens, lam, t)
            ref = char_fn(m, h, lam, t)
            tag = f"charfn[lam={lam:g},{_t_label(t)}]"
            out.append(_stat_check(tag + ".re", emp.real, ref.real, se_re))
            out.append(_stat_check(tag + ".im", emp.imag, ref.imag, se_im))
    return out


def check_solver_agreement(h: HTable, ens: Ensemble, times: Sequence[float] | None = None) -> list[Check]:
    """``h_hat`` against the solver table, at *times* or at every grid time.

    Over all grid times the entry reported is the worst one; it passes only
    if every time does.
    """
    z_ok = np.abs(ens.h_hat - h.values) <= N_SIGMA * ens.se
    if times is not None:
        out = []
        for t in times:
            n = h.index_of(t)
            out.append(_stat_check(f"solver_agreement[{_t_label(t)}]", ens.h_hat[n], h.values[n], ens.se[n]))
        return out
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(ens.se > 0, np.abs(ens.h_hat - h.values) / ens.se, np.where(z_ok, 0.0, np.inf))
    n = int(np.argmax(z))
    c = _stat_check(f"solver_agreement[all, worst {_t_label(n * h.dt)}]", ens.h_hat[n], h.values[n], ens.se[n])
    return [Check(c.name, c.statistic, c.expected, c.tolerance, c.standard_error, bool(z_ok.all()))]


# }}}


# {{{ coupled runs


def _halving(name: str, coarse: float, fine: float, slack: float) -> Check:
    # both zero: the pairs never separated at either resolution
    if coarse == 0.0 and fine == 0.0:
        return Check(name, 0.5, 0.5, 0.5 * slack, float("nan"), True)
    ratio = fine / coarse if coarse > 0 else float("inf")
    return Check(name, ratio, 0.5, 0.5 * slack, float("nan"), abs(ratio - 0.5) <= 0.5 * slack)


def check_pathwise_uniqueness(
    m: ModelSpec,
    h_a: HTable,
    h_b: HTable | Callable[[float], HTable],
    N: int,
    eps: float,
    seed: int,
    *,
    halve: bool = True,
    sup_factor: float = 2.0,
    local_time_factor: float = 4.0,
    halving_slack: float = 0.5,
    label: str = "pathwise",
) -> list[Check]:
    """Couple walkers driven by *h_a* and *h_b* and measure how far apart they get.

    Passes when the mean running distance is at most ``2 eps`` and the mean
    local time of the difference at most ``4 eps``, and, with *halve*, both
    drop to half (within *halving_slack* relative) at ``eps / 2``. *h_b* may
    be a function of ``eps`` returning the table to use at that resolution.
    """
    get_b = h_b if callable(h_b) else (lambda _e: h_b)
    out = []
    stats = []
    for e in (eps, eps / 2.0) if halve else (eps,):
        p = WalkParams.for_model(m, e)
        run = couple_solutions(m, h_a, get_b(e), N, p, seed)
        sd, ld = run.sup_distance, run.L0_delta
        stats.append((sd, ld))
        tag = f"{label}[eps={e:g}]"
        out.append(Check(tag + ".sup_distance", sd, 0.0, sup_factor * e, float("nan"), sd <= sup_factor * e))
        out.append(
            Check(tag + ".L0_delta", ld, 0.0, local_time_factor * e, float("nan"), ld <= local_time_factor * e)
        )
    if halve:
        (sd0, ld0), (sd1, ld1) = stats
        out.append(_halving(f"{label}.halving.sup_distance", sd0, sd1, halving_slack))
        out.append(_halving(f"{label}.halving.L0_delta", ld0, ld1, halving_slack))
    return out


def check_supremum_is_solution(
    run: CoupledRun,
    times: Sequence[float],
    *,
    solver_residuals: np.ndarray | None = None,
    label: str = "supremum",
) -> list[Check]:
    """Checks on the pointwise max and min of a coupled pair.

    * sojourn balance of the max at each time, within 3 SE of 0;
    * the atoms of the max and of the min put into the discretized equation
      with ``rho`` at the ``h`` driving ``X1`` and no ``psi'`` term: residual
      within the solver's own residual plus 3 SE (batch means);
    * ``h_max + h_min - 2 h(X1)`` within 3 SE of 0 (batch means);
    * ``psi'`` within 3 SE of 0 at every grid time, reported at the worst.
    """
    m = run.model
    mm = max_min_process(run)
    nb = run.batches
    out = []
    idx = [int(round(t / run.dt)) for t in times]
    res_solver = np.zeros(run.M + 1) if solver_residuals is None else np.abs(solver_residuals)
    for t, n in zip(times, idx):
        out.append(_stat_check(f"{label}.balance[{_t_label(t)}]", mm.balance[n], 0.0, mm.balance_se[n]))

    zero_psi = np.zeros(run.M + 1)
    for name, which in (("max", MAX), ("min", MIN)):
        full = run.atom(which)[0]
        r_full = batch_residuals(m, run.dt, full, rho_arg=run.h_a, psi=zero_psi)
        r_batch = batch_residuals(m, run.dt, run.batch_atom(which).T, rho_arg=run.h_a, psi=zero_psi)
        se = r_batch.std(axis=1, ddof=1) / math.sqrt(nb) if nb > 1 else np.zeros(run.M + 1)
        for t, n in zip(times, idx):
            tol = res_solver[n] + N_SIGMA * se[n]
            out.append(
                Check(f"{label}.residual_{name}[{_t_label(t)}]", r_full[n], 0.0, tol, se[n], abs(r_full[n]) <= tol)
            )

    diff_batch = run.batch_atom(MAX) + run.batch_atom(MIN) - 2.0 * run.batch_atom(X1)
    diff = run.atom(MAX)[0] + run.atom(MIN)[0] - 2.0 * run.atom(X1)[0]
    se = diff_batch.std(axis=0, ddof=1) / math.sqrt(nb) if nb > 1 else np.zeros(run.M + 1)
    for t, n in zip(times, idx):
        out.append(_stat_check(f"{label}.max_plus_min[{_t_label(t)}]", diff[n], 0.0, se[n]))

    psi, psi_se = run.psi_prime()
    ok = np.abs(psi[1:]) <= N_SIGMA * psi_se[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(psi_se[1:] > 0, np.abs(psi[1:]) / psi_se[1:], np.where(ok, 0.0, np.inf))
    n = 1 + int(np.argmax(z))
    c = _stat_check(f"{label}.psi_prime[all, worst {_t_label(n * run.dt)}]", psi[n], 0.0, psi_se[n])
    out.append(Check(c.name, c.statistic, c.expected, c.tolerance, c.standard_error, bool(ok.all())))
    return out


# }}}


def check_weak_uniqueness(
    m: ModelSpec,
    opts: SolveOptions | None = None,
    *,
    tol: float = 1e-8,
    particles: int | None = None,
    eps: float | None = None,
    seed: int = 0,
    mc_tol: float | None = None,
) -> list[Check]:
    """Fixed points from ``h = 0`` and ``h = 1`` must coincide.

    The solver's Picard sweeps are compared to *tol*. With *particles* the
    particle fixed point is run from both starts with the same seed and
    compared to ``2 mc_tol``.
    """
    opts = opts or SolveOptions()
    lo = solve_h(m, opts, init=0.0)
    hi = solve_h(m, opts, init=1.0)
    d = float(np.max(np.abs(lo.values - hi.values)))
    out = [Check("weak_uniqueness.solver", d, 0.0, tol, float("nan"), d <= tol)]
    if particles is not None:
        if eps is None or mc_tol is None:
            raise ValueError("the particle fixed point needs eps and mc_tol")
        p = WalkParams.for_model(m, eps)
        a = mckean_vlasov_iterate(m, particles, p, seed, mc_tol, init=0.0, dt=opts.dt)
        b = mckean_vlasov_iterate(m, particles, p, seed, mc_tol, init=1.0, dt=opts.dt)
        d = float(np.max(np.abs(a.values - b.values)))
        out.append(Check("weak_uniqueness.particles", d, 0.0, 2.0 * mc_tol, float("nan"), d <= 2.0 * mc_tol))
    return out


CHECKS = ("agreement", "density", "charfn", "weak_uniqueness", "pathwise", "supremum")


def run_checks(
    m: ModelSpec,
    *,
    checks: Sequence[str] = CHECKS,
    dt: float = 1e-3,
    eps: float = 0.005,
    particles: int = 100_000,
    seed: int = 42,
    times: Sequence[float] = (0.25, 0.5, 1.0),
    lambdas: Sequence[float] = (0.5, 1.0, 2.0),
) -> tuple[ValidationReport, dict]:
    """Run the named checks on one model and assemble the report.

    Returns the report and the intermediate objects (solver table,
    ensembles, coupled runs) so callers can write them out. Random streams:
    the frozen ensemble uses *seed*, the interacting ensemble ``seed + 1``,
    the coupled runs ``seed + 2`` and the negative control ``seed + 3``.
    """
    unknown = [c for c in checks if c not in CHECKS]
    if unknown:
        raise ValueError(f"unknown check(s) {', '.join(unknown)}; known: {', '.join(CHECKS)}")
    opts = SolveOptions(dt=dt)
    h = solve_h(m, opts)
    p = WalkParams.for_model(m, eps)
    report = ValidationReport()
    report.provenance = {
        "model": m.digest(),
        "dt": dt,
        "eps": eps,
        "particles": particles,
        "seed": seed,
        "checks": " ".join(checks),
    }
    artifacts: dict = {"h": h}

    if {"agreement", "density", "charfn"} & set(checks):
        ens = simulate_ensemble(m, h, particles, p, seed, snapshot_times=times)
        artifacts["ensemble"] = ens
        if "agreement" in checks:
            report.extend(check_solver_agreement(h, ens, times))
        if "density" in checks:
            report.extend(check_density_identity(m, h, ens, times))
        if "charfn" in checks:
            report.extend(check_charfn(m, h, ens, lambdas, times))
    if "weak_uniqueness" in checks:
        report.extend(check_weak_uniqueness(m, opts))

    if {"pathwise", "supremum"} & set(checks):
        mc_cache: dict[float, HTable] = {}

        def mc_table(e: float) -> HTable:
            if e not in mc_cache:
                pe = WalkParams.for_model(m, e)
                mc_cache[e] = simulate_ensemble(m, INTERACTING, particles, pe, seed + 1, dt=dt).to_htable()
            return mc_cache[e]

        if "pathwise" in checks:
            report.extend(check_pathwise_uniqueness(m, h, mc_table, particles, eps, seed + 2))
            if not m.rho.is_constant:
                control = check_pathwise_uniqueness(
                    m, h, constant_table(0.0, dt, h.M), particles, eps, seed + 3, halve=False,
                    label="control",
                )  # fmt: skip
                failed = not all(c.passed for c in control)
                report.extend(
                    [Check("pathwise.negative_control_fails", float(failed), 1.0, 0.0, float("nan"), failed)]
                )
                artifacts["control"] = control
        if "supremum" in checks:
            run = couple_solutions(m, h, mc_table(eps), particles, p, seed + 2)
            artifacts["coupled"] = run
            report.extend(check_supremum_is_solution(run, times, solver_residuals=h.residuals))
        artifacts["mc_table"] = mc_table(eps)
    return report, artifacts
