import json

import numpy as np
import pytest

from qfc import harness, qubit
from qfc.cli import main
from qfc.config import parse_config
from qfc.core import SY
from qfc.errors import TrajectoryFailure, ValidationError

GENERIC = """
mode = "sme"
[system]
dim = 3
initial = {diag = [0.7, 0.2, 0.1]}
target = 0
[measurement]
X = "random"
k = 1.0
[[channels]]
operator = "decay"
rate = 0.1
[feedback]
law = "linear"
u = 5.0
[numerics]
dt = 1e-3
horizon = 0.3
n_traj = 6
block_size = 2
record_every = 50
noise = "two-point"
"""

QUBIT = """
mode = "qubit"
[measurement]
k = 1.0
[[channels]]
operator = "decay"
rate = 0.05
[[channels]]
operator = "dephasing"
rate = 0.05
[feedback]
law = "linear"
u = 400.0
[numerics]
dt = 1e-4
horizon = 0.2
n_traj = 24
block_size = 5
seed = 42
"""


def test_parse_matrix_forms():
    np.testing.assert_array_equal(harness.parse_matrix("sigma_y", 2), SY)
    np.testing.assert_array_equal(harness.parse_matrix({"diag": [1, 2, 3]}, 3), np.diag([1, 2, 3]))
    m = harness.parse_matrix([[0, [0, -1]], ["0+1j", 0]], 2)
    np.testing.assert_array_equal(m, SY)
    assert harness.parse_matrix("decay", 3)[1, 0] == 1
    for bad in ("sigma_x", "nope", {"diag": [1, 2]}, [[1, 0], [0, 1]]):
        with pytest.raises(ValidationError):
            harness.parse_matrix(bad, 3)


def test_build_system_rejects_bad_states():
    with pytest.raises(ValidationError):
        harness.build_system(parse_config(GENERIC, {"system.initial": {"diag": [0.7, 0.7, 0.1]}}))
    with pytest.raises(ValidationError):
        harness.build_system(parse_config(GENERIC, {"measurement.X": [[0, 1, 0], [0, 0, 0], [0, 0, 0]]}))
    with pytest.raises(ValidationError):
        harness.build_system(parse_config(GENERIC, {"system.target": 3}))


def test_linear_feedback_elements_qubit():
    np.testing.assert_allclose(harness.linear_feedback_elements([0.1 + 0.3j], 10.0), SY, atol=1e-15)
    np.testing.assert_allclose(harness.linear_feedback_elements([0.1 + 0.3j], 10.0),
                               qubit.feedback_hamiltonian(0.1 + 0.3j, 10.0), atol=1e-15)


@pytest.mark.parametrize("mode", ["sme", "eigenflow", "goodcontrol"])
def test_single_trajectory_run_equals_direct_call(mode):
    cfg = parse_config(GENERIC, {"mode": mode, "numerics.n_traj": 1,
                                 "system.initial": {"diag": [0.95, 0.03, 0.02]}, "feedback.u": 50.0,
                                 "numerics.dt": 1e-4, "numerics.horizon": 0.05,
                                 "numerics.record_every": 10})
    stats = harness.run(cfg)
    row = harness.run_trajectory(cfg, harness.build_system(cfg), 0)
    for j, name in enumerate(stats.observables):
        assert np.array_equal(stats.mean[name], row[:, j])
        assert not np.any(stats.variance[name])


def test_generic_run_is_worker_independent():
    cfg = parse_config(GENERIC)
    a, b = harness.run(cfg, jobs=1), harness.run(cfg, jobs=8)
    for n in a.observables:
        assert np.array_equal(a.mean[n], b.mean[n])
        assert np.array_equal(a.variance[n], b.variance[n])
    assert a.steady == b.steady
    assert a.metadata == b.metadata


def test_qubit_run_is_worker_independent():
    cfg = parse_config(QUBIT)
    a, b = harness.run(cfg, jobs=1), harness.run(cfg, jobs=8)
    for n in a.observables:
        assert np.array_equal(a.mean[n], b.mean[n])
        assert np.array_equal(a.variance[n], b.variance[n])
    assert a.metadata["config_hash"] == cfg.digest()


def test_propagators_agree_on_shared_streams():
    runs = {m: harness.run(parse_config(GENERIC, {"mode": m})) for m in ("sme", "eigenflow")}
    for n in ("P", "lambda0", "lambda1"):
        np.testing.assert_allclose(runs["sme"].mean[n], runs["eigenflow"].mean[n], atol=1e-3)


def test_failure_budget():
    cfg = parse_config(QUBIT, {"feedback.u": 1.0, "numerics.horizon": 10.0, "numerics.dt": 1e-3,
                               "numerics.qubit_mode": "good-control", "numerics.n_traj": 20})
    with pytest.raises(TrajectoryFailure):
        harness.run(cfg)


def test_empty_axis_sweep_matches_run():
    cfg = parse_config(QUBIT, {"mode": "sweep", "numerics.qubit_mode": "good-control"})
    report = harness.sweep(cfg)
    assert len(report.rows) == 1
    stats = harness.run(parse_config(QUBIT, {"numerics.qubit_mode": "good-control"}))
    row = report.rows[0]
    assert row["mean"] == stats.steady["lambda1"].mean
    assert row["stderr"] == stats.steady["lambda1"].stderr
    assert row["predicted"] == qubit.steady_lambda1(1.0, 0.05, 0.05)


def test_validate_trivial_dynamics():
    cfg = parse_config(GENERIC, {"mode": "validate", "measurement.k": 0.0, "channels": [],
                                 "feedback.law": "none", "validate.n_instances": 5,
                                 "validate.trajectory_steps": 50})
    report = harness.validate(cfg)
    assert report.passed
    values = {r["check"]: r["value"] for r in report.rows}
    # only eigvalsh round-off remains
    assert values["joint trajectory max |lambda| deviation"] <= 1e-15
    assert values["joint trajectory max |P| deviation"] <= 1e-15


def test_validate_three_level_with_channel():
    cfg = parse_config(GENERIC, {"mode": "validate", "feedback.law": "none",
                                 "validate.n_instances": 30, "validate.trajectory_steps": 300})
    report = harness.validate(cfg)
    assert report.passed, report.rows
    checks = [r["check"] for r in report.rows]
    assert "distinct noise streams" in checks


def test_validate_skips_degenerate_start():
    cfg = parse_config(GENERIC, {"mode": "validate", "system.initial": "maximally_mixed",
                                 "validate.n_instances": 5})
    report = harness.validate(cfg)
    assert "skipped" in report.rows[-1]["note"]


# ---------------------------------------------------------------- CLI


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_success_and_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, QUBIT)
    out = tmp_path / "r.json"
    assert main(["qubit", "--config", cfg, "--out", str(out), "--format", "json",
                 "--set", "numerics.n_traj=4", "--seed", "3", "--plot-data"]) == 0
    data = json.loads(out.read_text())
    assert data["n_traj"] == 4 and data["metadata"]["seed"] == 3
    assert (tmp_path / "r_lambda1.dat").exists()
    assert main(["qubit", "--config", cfg, "--set", "numerics.n_traj=2"]) == 0
    assert capsys.readouterr().out.startswith("time,observable,mean,variance,stderr\n")


def test_cli_without_config_file(capsys):
    assert main(["qubit", "--set", "numerics.horizon=0.01", "--set", "numerics.dt=1e-3",
                 "--set", "numerics.n_traj=2"]) == 0
    assert "lambda1" in capsys.readouterr().out


def test_cli_config_errors(tmp_path, capsys):
    cfg = _write(tmp_path, QUBIT)
    assert main(["qubit", "--config", cfg, "--set", "numerics.dt=0.1"]) == 2
    assert main(["qubit", "--config", _write(tmp_path, QUBIT + "strenght = 1\n", "b.toml")]) == 2
    assert main(["qubit", "--config", str(tmp_path / "none.toml")]) == 2
    assert main(["qubit", "--config", cfg, "--set", "novalue"]) == 2
    assert "strenght" in capsys.readouterr().err


def test_cli_tolerance_failure(tmp_path):
    cfg = _write(tmp_path, QUBIT)
    args = ["sweep", "--config", cfg, "--set", "numerics.qubit_mode='good-control'",
            "--set", "sweep.observable='var_re_z1'", "--out", str(tmp_path / "s.csv")]
    assert main(args + ["--set", "sweep.max_rel=1e-9"]) == 3
    assert main(args + ["--set", "sweep.max_rel=10.0"]) == 0
    assert (tmp_path / "s.csv").read_text().splitlines()[0].startswith("k,Gamma,gamma,u")


def test_cli_runtime_failure(tmp_path):
    cfg = _write(tmp_path, QUBIT)
    assert main(["qubit", "--config", cfg, "--set", "numerics.n_traj=2",
                 "--out", str(tmp_path / "no" / "x.csv")]) == 1
    assert main(["qubit", "--config", cfg, "--set", "feedback.u=1.0", "--set", "numerics.dt=1e-3",
                 "--set", "numerics.horizon=10.0", "--set", "numerics.qubit_mode='good-control'",
                 "--set", "numerics.n_traj=20"]) == 1
