"""Command line entry point.

Runs are described by a flat config file of ``section.key = value`` lines
with ``#`` comments::

    model.x = 0
    model.T = 1
    model.alpha = 0.25
    model.rho = 1/(1+u)
    lattice.eps = 0.005

Every key except the four model ones has a default; unknown or repeated
keys are errors. Each subcommand writes its CSVs and a ``manifest.txt``
into the output directory. Exit status is 0 on success, 1 when a
validation check fails and 2 on a bad config or model.
"""

from __future__ import annotations

import argparse
import platform
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numba
import numpy as np
import scipy

from stickylab.funcspec import FuncExprError
from stickylab.lattice import (
    INTERACTING,
    GridMismatchError,
    WalkParams,
    constant_table,
    couple_solutions,
    empirical_char_fn,
    mckean_vlasov_iterate,
    simulate_ensemble,
)
from stickylab.model import (
    HypothesisError,
    ModelSpec,
    Origin,
    build_model,
    read_htable_csv,
    write_htable_csv,
)
from stickylab.validate import CHECKS, run_checks
from stickylab.volterra import SolveOptions, char_fn, solve_h

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "run", "main"]

VERSION = "0.1.0"

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2
SUBCOMMANDS = ("solve", "simulate", "fixpoint", "couple", "validate", "charfn")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    items = [s for s in text.replace(",", " ").split() if s]
    if not items:
        raise ValueError("empty list")
    return tuple(float(s) for s in items)


def _words(text: str) -> tuple[str, ...]:
    return tuple(s for s in text.replace(",", " ").split() if s)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be at least 1")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _mode(text: str) -> str:
    if text not in ("frozen", INTERACTING):
        raise ValueError("must be frozen or interacting")
    return text


def _checks(text: str) -> tuple[str, ...]:
    names = _words(text)
    bad = [n for n in names if n not in CHECKS]
    if bad:
        raise ValueError(f"unknown check {bad[0]!r}; known: {', '.join(CHECKS)}")
    return names


# key -> (parser, default); None marks a required key
_FIELDS: dict[str, tuple[Callable[[str], Any], Any]] = {
    "model.x": (float, None),
    "model.T": (float, None),
    "model.alpha": (str, None),
    "model.rho": (str, None),
    "model.delta": (float, 1e-6),
    "solver.dt": (_positive_float, 1e-3),
    "solver.picard_tol": (_positive_float, 1e-10),
    "solver.root_tol": (_positive_float, 1e-12),
    "solver.max_picard": (_positive_int, 200),
    "solver.scheme": (str, "sqrt-quadratic"),
    "lattice.eps": (_positive_float, 0.005),
    "lattice.particles": (_positive_int, 100_000),
    "lattice.seed": (int, 42),
    "lattice.mode": (_mode, "frozen"),
    "fixpoint.tol": (_positive_float, 0.02),
    "fixpoint.max_iter": (_positive_int, 50),
    "fixpoint.init": (float, 0.0),
    "couple.h_b": (str, "mc"),
    "validate.checks": (_checks, CHECKS),
    "validate.times": (_floats, (0.25, 0.5, 1.0)),
    "validate.lambdas": (_floats, (0.5, 1.0, 2.0)),
    "output.dir": (str, "out"),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict
    source: str = "<string>"

    def __getitem__(self, key: str):
        return self.values[key]

    def model(self) -> ModelSpec:
        v = self.values
        return build_model(
            {"x": v["model.x"], "T": v["model.T"], "alpha": v["model.alpha"], "rho": v["model.rho"],
             "delta": v["model.delta"]}
        )  # fmt: skip

    def solve_options(self) -> SolveOptions:
        v = self.values
        return SolveOptions(
            dt=v["solver.dt"],
            root_tol=v["solver.root_tol"],
            picard_tol=v["solver.picard_tol"],
            max_picard=v["solver.max_picard"],
            scheme=v["solver.scheme"],
        )

    def with_overrides(self, **kw) -> RunConfig:
        values = dict(self.values)
        for key, val in kw.items():
            if val is not None:
                values[key] = val
        return RunConfig(values, self.source)

    def echo(self) -> list[str]:
        out = []
        for key in _FIELDS:
            val = self.values[key]
            if isinstance(val, tuple):
                val = " ".join(f"{x:g}" if isinstance(x, float) else str(x) for x in val)
            out.append(f"{key} = {val}")
        return out


def _unquote(text: str) -> str:
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    seen: dict[str, int] = {}
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw.strip()!r}")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        value = _unquote(value)
        try:
            values[key] = _FIELDS[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    missing = [k for k, (_, d) in _FIELDS.items() if d is None and k not in values]
    if missing:
        raise ConfigError(f"{source}: missing required key(s) {', '.join(missing)}")
    for key, (_, default) in _FIELDS.items():
        values.setdefault(key, default)
    return RunConfig(values, source)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


# {{{ subcommands


def _csv_rows(header: str, rows) -> str:
    return header + "\n" + "".join(",".join(f"{v:.17g}" for v in r) + "\n" for r in rows)


def _walk(cfg: RunConfig, m: ModelSpec) -> WalkParams:
    return WalkParams.for_model(m, cfg["lattice.eps"])


def _cmd_solve(cfg, m, out, manifest):
    h = solve_h(m, cfg.solve_options())
    write_htable_csv(h, out / "h_table.csv")
    manifest["solver.sweeps"] = h.meta["sweeps"]
    manifest["solver.max_residual"] = f"{np.max(np.abs(h.residuals)):.3e}"
    manifest["solver.flagged_nodes"] = int(h.flags.sum())
    return EXIT_OK


def _cmd_simulate(cfg, m, out, manifest):
    seed, N = cfg["lattice.seed"], cfg["lattice.particles"]
    p = _walk(cfg, m)
    if cfg["lattice.mode"] == INTERACTING:
        ens = simulate_ensemble(m, INTERACTING, N, p, seed, dt=cfg["solver.dt"])
    else:
        h = solve_h(m, cfg.solve_options())
        write_htable_csv(h, out / "h_table.csv")
        ens = simulate_ensemble(m, h, N, p, seed)
    ens.summary_csv(out / "ensemble_summary.csv")
    manifest["streams.ensemble"] = f"seed {seed}, streams 0..{N - 1}"
    return EXIT_OK


def _cmd_fixpoint(cfg, m, out, manifest):
    seed, N = cfg["lattice.seed"], cfg["lattice.particles"]
    h = mckean_vlasov_iterate(
        m, N, _walk(cfg, m), seed, cfg["fixpoint.tol"], cfg["fixpoint.max_iter"],
        init=cfg["fixpoint.init"], dt=cfg["solver.dt"],
    )  # fmt: skip
    write_htable_csv(h, out / "fixpoint_h.csv")
    manifest["fixpoint.iterations"] = h.meta["iterations"]
    manifest["fixpoint.changes"] = " ".join(f"{c:.6g}" for c in h.meta["changes"])
    manifest["streams.fixpoint"] = f"seed {seed}, streams 0..{N - 1}, every iteration"
    return EXIT_OK


def _cmd_couple(cfg, m, out, manifest):
    seed, N = cfg["lattice.seed"], cfg["lattice.particles"]
    p = _walk(cfg, m)
    opts = cfg.solve_options()
    h_a = solve_h(m, opts)
    source = cfg["couple.h_b"]
    if source == "mc":
        h_b = simulate_ensemble(m, INTERACTING, N, p, seed + 1, dt=opts.dt).to_htable()
        manifest["streams.h_b"] = f"interacting ensemble, seed {seed + 1}, streams 0..{N - 1}"
    elif source in ("zero", "one"):
        h_b = constant_table(0.0 if source == "zero" else 1.0, opts.dt, h_a.M)
    elif source == "solver":
        h_b = h_a
    else:
        h_b = read_htable_csv(source, Origin.EXTERNAL)
    write_htable_csv(h_a, out / "h_a.csv")
    write_htable_csv(h_b, out / "h_b.csv")
    run = couple_solutions(m, h_a, h_b, N, p, seed)
    run.stats_csv(out / "coupled_stats.csv")
    manifest["streams.pairs"] = f"seed {seed}, streams 0..{N - 1}"
    manifest["couple.sup_distance"] = f"{run.sup_distance:.17g}"
    manifest["couple.L0_delta"] = f"{run.L0_delta:.17g}"
    return EXIT_OK


def _cmd_validate(cfg, m, out, manifest):
    seed = cfg["lattice.seed"]
    report, _ = run_checks(
        m,
        checks=cfg["validate.checks"],
        dt=cfg["solver.dt"],
        eps=cfg["lattice.eps"],
        particles=cfg["lattice.particles"],
        seed=seed,
        times=cfg["validate.times"],
        lambdas=cfg["validate.lambdas"],
    )
    report.to_csv(out / "report.csv")
    (out / "report.txt").write_text(report.to_text())
    manifest["streams.ensemble"] = f"seed {seed}"
    manifest["streams.interacting"] = f"seed {seed + 1}"
    manifest["streams.pairs"] = f"seed {seed + 2}"
    manifest["streams.control"] = f"seed {seed + 3}"
    manifest["validate.failures"] = len(report.failures())
    sys.stdout.write(report.to_text())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def _cmd_charfn(cfg, m, out, manifest):
    seed, N = cfg["lattice.seed"], cfg["lattice.particles"]
    times, lambdas = cfg["validate.times"], cfg["validate.lambdas"]
    h = solve_h(m, cfg.solve_options())
    ens = simulate_ensemble(m, h, N, _walk(cfg, m), seed, snapshot_times=times)
    rows = []
    for t in times:
        for lam in lambdas:
            ref = char_fn(m, h, lam, t)
            emp, se_re, se_im = empirical_char_fn(ens, lam, t)
            rows.append((t, lam, ref.real, ref.imag, emp.real, emp.imag, se_re, se_im))
    header = "t,lambda,re_formula,im_formula,re_mc,im_mc,se_re,se_im"
    (out / "charfn.csv").write_text(_csv_rows(header, rows))
    manifest["streams.ensemble"] = f"seed {seed}, streams 0..{N - 1}"
    return EXIT_OK


_COMMANDS = {
    "solve": _cmd_solve,
    "simulate": _cmd_simulate,
    "fixpoint": _cmd_fixpoint,
    "couple": _cmd_couple,
    "validate": _cmd_validate,
    "charfn": _cmd_charfn,
}


# }}}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stickylab", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="run config file")
    ap.add_argument("--out", default=None, help="output directory (default ./out)")
    ap.add_argument("--seed", type=int, default=None, help="master seed, overrides the config")
    ap.add_argument("--eps", type=_positive_float, default=None, help="lattice spacing")
    ap.add_argument("--particles", type=_positive_int, default=None, help="number of walkers")
    return ap


def _write_manifest(path: Path, command: str, cfg: RunConfig, extra: dict) -> None:
    lines = [f"command = {command}", f"config.source = {Path(cfg.source).name}"]
    lines += cfg.echo()
    lines += [f"{k} = {v}" for k, v in extra.items()]
    lines += [
        f"version.stickylab = {VERSION}",
        f"version.python = {platform.python_version()}",
        f"version.numpy = {np.__version__}",
        f"version.scipy = {scipy.__version__}",
        f"version.numba = {numba.__version__}",
    ]
    path.write_text("\n".join(lines) + "\n")


def run(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config).with_overrides(
            **{"lattice.seed": args.seed, "lattice.eps": args.eps, "lattice.particles": args.particles}
        )
        m = cfg.model()
        if args.out is not None:
            cfg = cfg.with_overrides(**{"output.dir": args.out})
    except (ConfigError, HypothesisError, FuncExprError, KeyError, ValueError) as exc:
        print(f"stickylab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    manifest: dict = {}
    try:
        code = _COMMANDS[args.command](cfg, m, out, manifest)
    except GridMismatchError as exc:
        print(f"stickylab: grid error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _write_manifest(out / "manifest.txt", args.command, cfg, manifest)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
