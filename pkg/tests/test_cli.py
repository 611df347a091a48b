import csv
import json

import numpy as np
import pytest

from ftddp.cli import ConfigError, main, parse_config, read_trajectory, write_trajectory
from ftddp.core import TrajectoryGrid

DI_CONFIG = """\
# double integrator, unit control weight
model = double_integrator
model.R = 1
problem.tf_init = 1
solver.gamma_max = 0.5
solver.epsilon = 0.5
"""


def run_solve(tmp_path, text, name="run"):
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(text)
    out = tmp_path / name
    return main(["solve", "--config", str(cfg), "--out", str(out)]), out


def test_models_listing(capsys):
    assert main(["models"]) == 0
    assert capsys.readouterr().out.splitlines() == [
        "cart_pole n=4 m=1 k=2",
        "double_integrator n=2 m=1 k=1",
        "quadrotor n=16 m=4 k=6",
    ]


def test_parse_config_sections():
    cfg = parse_config(
        "model = cart_pole\nmodel.c_t = 2.5\nproblem.x0 = 0, 0, 3.14, 0\nsolver.max_iterations = 7\n"
        "solver.initial_control = 0.5\noutput.dir = out  # trailing comment\n"
    )
    assert cfg["model"] == "cart_pole"
    assert cfg["model_params"] == {"c_t": 2.5}
    assert cfg["problem"]["x0"] == [0.0, 0.0, 3.14, 0.0]
    assert cfg["solver"] == {"max_iterations": 7, "initial_control": [0.5]}
    assert cfg["output"] == "out"


def test_parse_config_keeps_string_model_params():
    assert parse_config("model = quadrotor\nmodel.input = wrench\n")["model_params"] == {"input": "wrench"}


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("model.R = 1\n", "missing required field 'model'"),
        ("model = pendulum\n", "unknown model"),
        ("model = double_integrator\nsolver.bogus = 1\n", "solver.bogus"),
        ("model = double_integrator\nproblem.tf_init = -1\n", "tf_init"),
        ("model = double_integrator\nmodel.R = nan\n", "finite"),
        ("model = double_integrator\nsolver.max_iterations = many\n", "solver.max_iterations"),
        ("model = double_integrator\njust words\n", "line 2"),
    ],
)
def test_parse_config_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_bad_config_exit_code(tmp_path, capsys):
    code, _ = run_solve(tmp_path, "model = double_integrator\nproblem.tf_init = -1\n")
    assert code == 1
    code, _ = run_solve(tmp_path, "model.R = 1\n")
    assert code == 1
    assert "missing required field 'model'" in capsys.readouterr().err
    assert main(["solve", "--config", str(tmp_path / "absent.cfg")]) == 1


def test_trajectory_csv_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    grid = TrajectoryGrid(np.pi / 3, rng.normal(size=(6, 3)) * 1e3, rng.normal(size=(5, 2)) / 7)
    path = tmp_path / "t.csv"
    write_trajectory(path, grid)
    tf, states, controls = read_trajectory(path)
    assert tf == grid.tf
    np.testing.assert_array_equal(states, grid.states)
    np.testing.assert_array_equal(controls, grid.controls)
    assert path.read_text().splitlines()[0] == "t,x_0,x_1,x_2,u_0,u_1"


def test_solve_double_integrator(tmp_path):
    code, out = run_solve(tmp_path, DI_CONFIG)
    assert code == 0
    with open(out / "iterations.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["iter", "cost", "tf", "nu_0", "psi_norm", "gamma", "zeta", "ham_residual"]
    assert float(rows[-1]["tf"]) == pytest.approx(1.4565, abs=0.01)
    summary = json.loads((out / "solution.json").read_text())
    assert summary["status"] == "converged"
    assert summary["tf"] == float(rows[-1]["tf"])
    tf, states, _ = read_trajectory(out / "trajectory.csv")
    assert tf == summary["tf"]
    assert states[-1, 0] == pytest.approx(1.0, abs=1e-4)


def test_repeat_runs_are_byte_identical(tmp_path):
    cfg = DI_CONFIG + "solver.max_iterations = 10\n"
    code_a, a = run_solve(tmp_path, cfg, "a")
    code_b, b = run_solve(tmp_path, cfg, "b")
    assert code_a == code_b == 2
    for name in ("iterations.csv", "trajectory.csv", "solution.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_output_dir_from_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = tmp_path / "c.cfg"
    cfg.write_text(DI_CONFIG + "solver.max_iterations = 1\noutput.dir = nested/out\n")
    assert main(["solve", "--config", str(cfg)]) == 2
    assert (tmp_path / "nested" / "out" / "trajectory.csv").exists()


def test_oracle_check_empty_list(capsys):
    assert main(["oracle-check", "--R", ""]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 and lines[0].split()[:3] == ["R", "tf", "tf*"]


def test_oracle_check_fails_with_one_iteration(capsys):
    assert main(["oracle-check", "--R", "1", "--max-iterations", "1"]) != 0
    assert capsys.readouterr().out.splitlines()[1].endswith("fail")


def test_oracle_check_passes(capsys):
    assert main(["oracle-check", "--R", "1"]) == 0
    row = capsys.readouterr().out.splitlines()[1].split()
    assert row[0] == "1" and row[2] == "1.4565" and row[-1] == "pass"


def test_oracle_check_rejects_bad_list():
    with pytest.raises(SystemExit):
        main(["oracle-check", "--R", "one"])
