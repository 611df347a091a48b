"""Outer iteration: a backward pass followed by a line-searched rollout."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ftddp.backward import MU_FLOOR, MU_MAX, backward_pass, terminal_conditions
from ftddp.core import IterationRecord, ProblemDefinition, TrajectoryGrid, ValueExpansion, total_cost
from ftddp.exceptions import BackwardPassError, DivergenceError, DomainError, EvaluationError
from ftddp.forward import MU_M, T_MAX, T_MIN, LineSearchOptions, constraint_norm, line_search, simulate

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
STALLED = "stalled"
FAILED = "failed"


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 300
    gamma_max: float = 0.05
    epsilon: float = 0.05
    tol_cost_change: float = 1e-8
    tol_constraint: float = 1e-4
    tol_tf_change: float = 1e-6
    t_min: float = T_MIN
    t_max: float = T_MAX
    knot_count: int = 200
    mu: float = MU_FLOOR
    mu_M: float = MU_M
    max_halvings: int = 8
    tf_trust: float = 0.5
    nu_trust: float = np.inf
    initial_control: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma_max <= 1.0:
            raise DomainError(f"gamma_max must lie in (0, 1], got {self.gamma_max}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise DomainError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        for name in ("tol_cost_change", "tol_constraint", "tol_tf_change", "mu", "mu_M"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if not 0 < self.t_min < self.t_max:
            raise DomainError("need 0 < t_min < t_max")
        if not (self.tf_trust > 0 and self.nu_trust > 0):
            raise DomainError("tf_trust and nu_trust must be positive")
        if self.knot_count < 1 or self.max_iterations < 0:
            raise DomainError("knot_count must be >= 1 and max_iterations >= 0")


@dataclass
class Solution:
    trajectory: TrajectoryGrid
    nu: np.ndarray
    tf: float
    cost: float
    records: list[IterationRecord]
    status: str
    constraint_residual: float
    hamiltonian_residual: float
    expansions: list[ValueExpansion] = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def iterations(self) -> int:
        return len(self.records)


def hamiltonian_residual(problem: ProblemDefinition, traj: TrajectoryGrid, ve_schedule) -> float:
    """``H(tf) = L + V_x^T f`` at the final knot; zero at a free-time optimum."""
    veT = ve_schedule[-1] if isinstance(ve_schedule, (list, tuple)) else ve_schedule
    xN, uN = traj.states[-1], traj.controls[-1]
    F = problem.dynamics.f(xN, uN, traj.tf)
    return float(problem.running_cost.value(xN, uN, traj.tf) + veT.V_x @ F)


def _initial_trajectory(problem, options):
    N = options.knot_count
    if options.initial_control is None:
        U = np.zeros((N, problem.m))
    else:
        U = np.broadcast_to(np.asarray(options.initial_control, dtype=float).reshape(-1, problem.m), (N, problem.m))
    return simulate(problem, U, problem.tf_init)


def _backward_with_regularization(problem, traj, nu, mu):
    while True:
        try:
            return backward_pass(problem, traj, nu, mu=mu), mu
        except (BackwardPassError, DivergenceError):
            if mu >= MU_MAX:
                raise
            mu = min(mu * 10.0, MU_MAX)


def solve(problem: ProblemDefinition, options: SolverOptions = SolverOptions(), sink: Callable | None = None) -> Solution:
    """Optimize the control schedule together with ``(tf, nu)``.

    ``sink``, when given, receives every :class:`IterationRecord` as it is
    produced. A :class:`Solution` is always returned; failures are reported
    through its status. If the initial rollout diverges the returned grid
    holds ``x0`` at every knot and the cost is NaN.
    """
    if not options.t_min <= problem.tf_init <= options.t_max:
        raise DomainError(f"tf_init={problem.tf_init} outside [{options.t_min}, {options.t_max}]")
    ls_opts = LineSearchOptions(
        gamma_max=options.gamma_max,
        zeta=options.epsilon,
        max_halvings=options.max_halvings,
        t_min=options.t_min,
        t_max=options.t_max,
        tf_trust=options.tf_trust,
        nu_trust=options.nu_trust,
        mu_M=options.mu_M,
    )

    nu = problem.nu_init.copy()
    try:
        traj = _initial_trajectory(problem, options)
    except DivergenceError as exc:
        log.warning("initial rollout diverged: %s", exc)
        u0 = np.zeros(problem.m) if options.initial_control is None else options.initial_control
        traj = TrajectoryGrid.constant(problem.tf_init, options.knot_count, problem.x0, np.ravel(u0)[: problem.m])
        return Solution(traj, nu, traj.tf, float("nan"), [], FAILED, float("nan"), float("nan"))
    cost = total_cost(problem, traj, nu)
    rho = (np.abs(nu).max() if nu.size else 0.0) + 1.0
    records: list[IterationRecord] = []
    expansions: list[ValueExpansion] = []
    status = MAX_ITER
    satisfied_prev = False
    failures = 0
    mu = options.mu

    for it in range(options.max_iterations):
        try:
            (expansions, gains, _), mu = _backward_with_regularization(problem, traj, nu, mu)
        except (BackwardPassError, EvaluationError) as exc:
            log.warning("backward pass failed at iteration %d: %s", it, exc)
            status = FAILED
            break
        rho = max(rho, (np.abs(nu).max() if nu.size else 0.0) + 1.0)
        try:
            res = line_search(problem, traj, gains, expansions[0], expansions[-1], nu, ls_opts, rho=rho)
        except DivergenceError as exc:
            failures += 1
            log.warning("rollout diverged at iteration %d (%d in a row): %s", it, failures, exc)
            if failures >= 3:
                status = FAILED
                break
            mu = min(mu * 10.0, MU_MAX)
            continue
        failures = 0
        mu = max(options.mu, mu / 10.0)

        psi_norm = constraint_norm(problem, res.traj)
        veT_new = terminal_conditions(problem, res.traj, res.nu)
        ham = hamiltonian_residual(problem, res.traj, veT_new)
        rel_change = abs(res.cost - cost) / max(abs(cost), 1e-12)
        rec = IterationRecord(
            iteration=it + 1,
            cost=res.cost,
            tf=res.tf,
            nu=res.nu.copy(),
            constraint_residual=psi_norm,
            gamma=res.gamma,
            zeta=res.zeta,
            hamiltonian_residual=ham,
            merit=res.merit,
            merit_reference=res.merit_reference,
            stalled=res.stalled,
            delta_tf=res.delta_tf,
        )
        records.append(rec)
        if sink is not None:
            sink(rec)

        fixed_point = (
            res.delta_tf == 0.0
            and not np.any(res.delta_nu)
            and np.array_equal(res.traj.states, traj.states)
            and np.array_equal(res.traj.controls, traj.controls)
        )
        traj, nu, cost = res.traj, res.nu, res.cost
        satisfied = (
            rel_change < options.tol_cost_change
            and psi_norm < options.tol_constraint
            and abs(res.proposed_delta_tf) < options.tol_tf_change
        )
        if satisfied and (satisfied_prev or fixed_point):
            status = CONVERGED
            break
        satisfied_prev = satisfied
    else:
        if records and records[-1].stalled:
            status = STALLED

    if status != FAILED or not expansions:
        try:
            expansions, _, _ = backward_pass(problem, traj, nu, mu=mu)
        except (BackwardPassError, EvaluationError):
            expansions = []
    ham = hamiltonian_residual(problem, traj, terminal_conditions(problem, traj, nu))
    return Solution(
        trajectory=traj,
        nu=np.asarray(nu),
        tf=traj.tf,
        cost=cost,
        records=records,
        status=status,
        constraint_residual=constraint_norm(problem, traj),
        hamiltonian_residual=ham,
        expansions=expansions,
    )
