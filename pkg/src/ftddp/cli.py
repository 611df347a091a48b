"""Command-line front end.

``ftddp solve --config run.cfg [--out DIR]`` runs one solve and writes
``iterations.csv``, ``trajectory.csv`` and ``solution.json``.
``ftddp oracle-check [--R 0.1,1,10]`` compares double-integrator solves with
the closed form. ``ftddp models`` lists the registered models.

Config files hold one ``key = value`` pair per line with ``#`` comments::

    model = double_integrator
    model.R = 1
    problem.tf_init = 1
    solver.max_iterations = 300
    output.dir = runs/di
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from ftddp.exceptions import DomainError, FTDDPError
from ftddp.models import REGISTRY, make_problem
from ftddp.oracle import verify_against_oracle
from ftddp.solver import CONVERGED, FAILED, SolverOptions, solve

log = logging.getLogger("ftddp")

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_FAILED = 0, 1, 2, 3

# step sizes used by oracle-check; the solver defaults also converge, only slower
ORACLE_STEP = 0.5

_INT_OPTIONS = {"max_iterations", "knot_count", "max_halvings"}
_PROBLEM_KEYS = {"x0", "tf_init", "nu_init"}


class ConfigError(FTDDPError):
    pass


def _vector(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _finite(key, value):
    values = value if isinstance(value, list) else [value]
    if not all(math.isfinite(v) for v in values):
        raise ConfigError(f"{key}: value must be finite")
    return value


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines into a nested run configuration."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value

    if "model" not in raw:
        raise ConfigError("missing required field 'model'")
    cfg = {"model": raw.pop("model"), "model_params": {}, "problem": {}, "solver": {}, "output": None}
    if cfg["model"] not in REGISTRY:
        raise ConfigError(f"model: unknown model {cfg['model']!r}; choose from {sorted(REGISTRY)}")
    option_fields = {f.name for f in dataclasses.fields(SolverOptions)}
    for key, value in raw.items():
        section, _, name = key.partition(".")
        try:
            if section == "model" and name:
                try:
                    cfg["model_params"][name] = _finite(key, float(value))
                except ValueError:
                    cfg["model_params"][name] = value
            elif section == "problem" and name in _PROBLEM_KEYS:
                cfg["problem"][name] = _finite(key, _vector(value) if name != "tf_init" else float(value))
            elif section == "solver" and name in option_fields:
                if name == "initial_control":
                    cfg["solver"][name] = _finite(key, _vector(value))
                elif name in _INT_OPTIONS:
                    cfg["solver"][name] = int(value)
                else:
                    cfg["solver"][name] = _finite(key, float(value))
            elif key == "output.dir":
                cfg["output"] = value
            else:
                raise ConfigError(f"{key}: unknown field")
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    tf_init = cfg["problem"].get("tf_init", 1.0)
    if not tf_init > 0:
        raise ConfigError(f"problem.tf_init: must be positive, got {tf_init}")
    return cfg


def fmt(v) -> str:
    """Shortest round-trip text for a float."""
    return repr(float(v))


def write_iterations(path: Path, records, k: int):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "cost", "tf", *[f"nu_{i}" for i in range(k)], "psi_norm", "gamma", "zeta", "ham_residual"])
        for r in records:
            w.writerow(
                [r.iteration, fmt(r.cost), fmt(r.tf), *map(fmt, np.ravel(r.nu)),
                 fmt(r.constraint_residual), fmt(r.gamma), fmt(r.zeta), fmt(r.hamiltonian_residual)]
            )


def write_trajectory(path: Path, traj):
    """One row per knot; the final knot repeats the last control."""
    U = traj.knot_controls()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *[f"x_{i}" for i in range(traj.n)], *[f"u_{i}" for i in range(traj.m)]])
        for t, x, u in zip(traj.times, traj.states, U):
            w.writerow([fmt(t), *map(fmt, x), *map(fmt, u)])


def read_trajectory(path):
    """Inverse of :func:`write_trajectory`; returns ``(tf, states, controls)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
    n = sum(h.startswith("x_") for h in header)
    return body[-1, 0], body[:, 1 : 1 + n], body[:-1, 1 + n :]


def cmd_solve(config_path, out=None) -> int:
    try:
        cfg = parse_config(Path(config_path).read_text())
        problem = make_problem(cfg["model"], **cfg["problem"], **cfg["model_params"])
        options = SolverOptions(**cfg["solver"])
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, DomainError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(out or cfg["output"] or ".")
    out_dir.mkdir(parents=True, exist_ok=True)

    sink = lambda r: log.info("iter %d cost %.6g tf %.6g psi %.3g", r.iteration, r.cost, r.tf, r.constraint_residual)
    sol = solve(problem, options, sink=sink)
    write_iterations(out_dir / "iterations.csv", sol.records, problem.k)
    write_trajectory(out_dir / "trajectory.csv", sol.trajectory)
    summary = {
        "model": cfg["model"],
        "status": sol.status,
        "iterations": sol.iterations,
        "tf": sol.tf,
        "nu": [float(v) for v in np.ravel(sol.nu)],
        "cost": sol.cost,
        "constraint_residual": sol.constraint_residual,
        "hamiltonian_residual": sol.hamiltonian_residual,
    }
    (out_dir / "solution.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"{sol.status} after {sol.iterations} iterations: tf={sol.tf:.6g} cost={sol.cost:.6g}")
    if sol.status == CONVERGED:
        return EXIT_OK
    return EXIT_FAILED if sol.status == FAILED else EXIT_NOT_CONVERGED


def cmd_oracle_check(R_list, max_iterations=300, gamma=ORACLE_STEP, epsilon=ORACLE_STEP, out=None) -> int:
    out = out or sys.stdout
    options = SolverOptions(gamma_max=gamma, epsilon=epsilon, max_iterations=max_iterations)
    print(f"{'R':>8} {'tf':>10} {'tf*':>10} {'nu':>10} {'nu*':>10} {'max|u-u*|':>10}  result", file=out)
    ok = True
    for R in R_list:
        sol = solve(make_problem("double_integrator", R=R), options)
        rep = verify_against_oracle(sol, R)
        passed = rep.passed and sol.status == CONVERGED
        ok &= passed
        print(
            f"{R:8.4g} {rep.tf:10.4f} {rep.tf_star:10.4f} {rep.nu:10.4f} {rep.nu_star:10.4f} "
            f"{rep.control_error:10.3g}  {'pass' if passed else 'fail'}",
            file=out,
        )
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_models(out=None) -> int:
    out = out or sys.stdout
    for name in sorted(REGISTRY):
        p = make_problem(name)
        print(f"{name} n={p.n} m={p.m} k={p.k}", file=out)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ftddp", description="Free-final-time DDP solver")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)
    p_solve = sub.add_parser("solve", help="run one solve from a config file")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    p_oracle = sub.add_parser("oracle-check", help="compare double-integrator solves with the closed form")
    p_oracle.add_argument("--R", default="0.1,1,10", help="comma-separated R values")
    p_oracle.add_argument("--max-iterations", type=int, default=300)
    p_oracle.add_argument("--gamma", type=float, default=ORACLE_STEP)
    p_oracle.add_argument("--epsilon", type=float, default=ORACLE_STEP)
    sub.add_parser("models", help="list registered models")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.command == "solve":
        return cmd_solve(args.config, args.out)
    if args.command == "oracle-check":
        try:
            R_list = _vector(args.R)
        except ValueError:
            parser.error(f"--R: cannot parse {args.R!r}")
        return cmd_oracle_check(R_list, args.max_iterations, args.gamma, args.epsilon)
    return cmd_models()


if __name__ == "__main__":
    sys.exit(main())
