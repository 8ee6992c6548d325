import numpy as np
import pytest

from stickylab.cli import ConfigError, load_config, parse_config, run
from stickylab.model import read_htable_csv

MINIMAL = """\
# sticky Brownian motion
model.x = 0
model.T = 1
model.alpha = 0
model.rho = 1
"""

SMALL = """\
model.x = 0
model.T = 0.5
model.alpha = 0
model.rho = "1"
lattice.eps = 0.01
lattice.particles = 20000
validate.times = 0.25 0.5
validate.lambdas = 0.5 1
"""


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_defaults_are_applied():
    cfg = parse_config(MINIMAL)
    assert cfg["solver.dt"] == 1e-3
    assert cfg["lattice.eps"] == 0.005
    assert cfg["lattice.particles"] == 100_000
    assert cfg["lattice.seed"] == 42
    assert cfg["model.alpha"] == "0"


def test_rho_expression_is_parsed():
    cfg = parse_config(MINIMAL.replace("model.rho = 1", 'model.rho = "1/(1+u)"'))
    m = cfg.model()
    assert not m.rho.is_constant
    assert m.rho(1.0) == 0.5


@pytest.mark.parametrize(
    "text, needle",
    [
        (MINIMAL + "model.x = 1\n", "6: duplicate key 'model.x' (first set on line 2)"),
        (MINIMAL + "lattice.epsilon = 0.01\n", "6: unknown key 'lattice.epsilon'"),
        (MINIMAL + "lattice.eps = -1\n", "6: bad value for lattice.eps"),
        (MINIMAL + "just words\n", "6: expected 'section.key = value'"),
        ("model.x = 0\nmodel.T = 1\n", "missing required key(s) model.alpha, model.rho"),
        (MINIMAL + "validate.checks = agreement bogus\n", "unknown check 'bogus'"),
    ],
)
def test_config_errors(text, needle):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "x.cfg")
    assert needle in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_solve_writes_small_residuals(tmp_path):
    cfg = _write(tmp_path, MINIMAL)
    assert run(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    h = read_htable_csv(tmp_path / "o" / "h_table.csv")
    assert h.M == 1000
    assert np.max(np.abs(h.residuals)) < 1e-12
    manifest = (tmp_path / "o" / "manifest.txt").read_text()
    assert "command = solve" in manifest
    assert "model.rho = 1" in manifest and "version.numpy = " in manifest


def test_alpha_above_half_is_a_config_error(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL.replace("model.alpha = 0", 'model.alpha = "0.6"'))
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "1/2" in capsys.readouterr().err


def test_bad_usage_exits_2(tmp_path):
    cfg = _write(tmp_path, MINIMAL)
    assert run(["frobnicate", "--config", cfg]) == 2
    assert run(["solve"]) == 2
    assert run(["solve", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert run(["simulate", "--config", cfg, "--eps", "0.003", "--out", str(tmp_path / "o")]) == 2


def test_simulate_reruns_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "o"
    files = {}
    for attempt in range(2):
        assert run(["simulate", "--config", cfg, "--out", str(out), "--particles", "2000"]) == 0
        files[attempt] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    assert files[0] == files[1]
    assert set(files[0]) == {"ensemble_summary.csv", "h_table.csv", "manifest.txt"}
    assert b"lattice.particles = 2000" in files[0]["manifest.txt"]


def test_seed_override_changes_output(tmp_path):
    cfg = _write(tmp_path, SMALL)
    run(["simulate", "--config", cfg, "--out", str(tmp_path / "a"), "--particles", "2000"])
    run(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--particles", "2000", "--seed", "7"])
    a = (tmp_path / "a" / "ensemble_summary.csv").read_text()
    b = (tmp_path / "b" / "ensemble_summary.csv").read_text()
    assert a != b


def test_couple_identical_tables(tmp_path):
    cfg = _write(tmp_path, SMALL + "couple.h_b = solver\n")
    assert run(["couple", "--config", cfg, "--out", str(tmp_path / "o"), "--particles", "500"]) == 0
    lines = (tmp_path / "o" / "coupled_stats.csv").read_text().splitlines()
    assert lines[0] == "t,sup_dist_mean,L0_delta_mean,psi_prime"
    assert lines[-1].split(",")[1:3] == ["0", "0"]


def test_charfn_table(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert run(["charfn", "--config", cfg, "--out", str(tmp_path / "o"), "--particles", "2000"]) == 0
    rows = (tmp_path / "o" / "charfn.csv").read_text().splitlines()
    assert rows[0] == "t,lambda,re_formula,im_formula,re_mc,im_mc,se_re,se_im"
    assert len(rows) == 5


def test_fixpoint_constant_rho(tmp_path):
    cfg = _write(tmp_path, SMALL.replace("model.T = 0.5", "model.T = 0.2") + "fixpoint.tol = 0.05\n")
    assert run(["fixpoint", "--config", cfg, "--out", str(tmp_path / "o"), "--particles", "5000"]) == 0
    assert "fixpoint.iterations = 2" in (tmp_path / "o" / "manifest.txt").read_text()


def test_validate_sticky_end_to_end(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert run(["validate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    report = (tmp_path / "o" / "report.csv").read_text().splitlines()
    assert report[0] == "check,statistic,expected,tol,se,pass"
    assert all(line.endswith(",true") for line in report[1:])
    assert "checks passed" in capsys.readouterr().out


def test_validate_failure_exits_1(tmp_path):
    cfg = _write(tmp_path, SMALL + "validate.checks = density\n")
    # a few hundred walkers cannot resolve the density to 10%
    assert run(["validate", "--config", cfg, "--out", str(tmp_path / "o"), "--particles", "300"]) == 1
    assert ",false" in (tmp_path / "o" / "report.csv").read_text()
