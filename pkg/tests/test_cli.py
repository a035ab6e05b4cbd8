import csv
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from shockkin.cli import OUT_ENV, main, parse_scenario
from shockkin.errors import ConfigError, UnknownNameError

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

SMALL = """\
name: small
class: pdmp-f
model: {name: shifted_burgers}
domain: {a_minus: 0.0, a_plus: 2.0, t0: 0.0, T: 0.3}
drift: {kind: zero}
kernel: {family: tail, amp: 1.0}
initial: {m0: 0.2}
grid: {n_rho: 41, dt: 0.005, store_every: 10}
ensemble: {N: 300, seed: 9}
"""


def run(tmp_path, *argv):
    return main([*argv[:1], "--out", str(tmp_path), *argv[1:]])


def test_degenerate_validate_exits_zero(tmp_path):
    assert run(tmp_path, "validate", "--scenario", str(SCENARIOS / "degenerate.yaml")) == 0
    with open(tmp_path / "verdict.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(r["pass"] == "true" for r in rows)
    manifest = (tmp_path / "manifest.txt").read_text()
    assert "exit_status: 0" in manifest and "verdict.csv: sha256=" in manifest


def test_unknown_model_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(SMALL.replace("shifted_burgers", "hopf"))
    assert run(tmp_path / "o", "simulate", "--scenario", str(bad)) == 2
    err = capsys.readouterr().err
    assert "line 3" in err and "hopf" in err


@pytest.mark.parametrize("text, needle", [
    (SMALL.replace("T: 0.3", "T: -0.3"), "line 4"),
    (SMALL.replace("family: tail", "family: spiky"), "line 6"),
    (SMALL + "bogus: 1\n", "line 10"),
])
def test_config_errors_carry_line_numbers(text, needle):
    with pytest.raises(ConfigError) as exc:
        parse_scenario(text)
    assert needle in str(exc.value)


def test_unknown_name_error_is_config_error():
    assert issubclass(UnknownNameError, ConfigError)


def test_missing_seed_rejected():
    with pytest.raises(ConfigError):
        parse_scenario(SMALL.replace(", seed: 9", ""))


def test_negative_seed_exit_code(tmp_path):
    assert run(tmp_path, "simulate", "--scenario", str(SCENARIOS / "degenerate.yaml"), "--seed", "-1") == 2


def test_band_kinetic_row_sums(tmp_path):
    assert run(tmp_path, "kinetic", "--scenario", str(SCENARIOS / "burgers-band.yaml")) == 0
    rows = np.loadtxt(tmp_path / "row_sums.csv", delimiter=",", skiprows=1)
    assert np.max(np.abs(rows[:, -1])) <= 1e-6


def test_outputs_identical_across_workers(tmp_path):
    scen = tmp_path / "small.yaml"
    scen.write_text(SMALL)
    a, b = tmp_path / "w1", tmp_path / "w4"
    assert main(["simulate", "--scenario", str(scen), "--out", str(a), "--workers", "1"]) == 0
    assert main(["simulate", "--scenario", str(scen), "--out", str(b), "--workers", "4"]) == 0
    for name in ("left_values.csv", "configurations.csv", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert b"\r\n" not in (a / "configurations.csv").read_bytes()


def test_seed_override_changes_output(tmp_path):
    scen = tmp_path / "small.yaml"
    scen.write_text(SMALL)
    main(["simulate", "--scenario", str(scen), "--out", str(tmp_path / "a")])
    main(["simulate", "--scenario", str(scen), "--out", str(tmp_path / "b"), "--seed", "10"])
    assert (tmp_path / "a" / "left_values.csv").read_bytes() != (tmp_path / "b" / "left_values.csv").read_bytes()
    assert "seed: 10" in (tmp_path / "b" / "manifest.txt").read_text()


def test_resolution_scale_refines_grid(tmp_path):
    scen = tmp_path / "small.yaml"
    scen.write_text(SMALL)
    main(["kinetic", "--scenario", str(scen), "--out", str(tmp_path / "s1")])
    main(["kinetic", "--scenario", str(scen), "--out", str(tmp_path / "s2"), "--resolution-scale", "2"])
    n1 = np.unique(np.loadtxt(tmp_path / "s1" / "row_sums.csv", delimiter=",", skiprows=1)[:, 2]).size
    n2 = np.unique(np.loadtxt(tmp_path / "s2" / "row_sums.csv", delimiter=",", skiprows=1)[:, 2]).size
    assert (n1, n2) == (41, 81)
    assert "resolution_scale: 2" in (tmp_path / "s2" / "manifest.txt").read_text()


def test_output_directory_from_environment(tmp_path):
    env_out = tmp_path / "from_env"
    proc = subprocess.run([sys.executable, "-m", "shockkin", "simulate", "--scenario",
                           str(SCENARIOS / "degenerate.yaml")], capture_output=True, text=True,
                          env={**os.environ, OUT_ENV: str(env_out)})
    assert proc.returncode == 0, proc.stderr
    assert (env_out / "manifest.txt").exists()


def test_fundamental_simulate_and_validate(tmp_path):
    scen = str(SCENARIOS / "fundamental.yaml")
    assert main(["simulate", "--scenario", scen, "--out", str(tmp_path / "sim")]) == 0
    assert main(["validate", "--scenario", scen, "--out", str(tmp_path / "val")]) == 0


def test_oracle_requires_pdmp_class(tmp_path):
    assert run(tmp_path, "oracle", "--scenario", str(SCENARIOS / "fundamental.yaml")) == 2
