"""Forward pass: the (nu, tf) update and the line-searched rollout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ftddp.core import GainSchedule, ProblemDefinition, TrajectoryGrid, ValueExpansion, regrid, rk4_step, total_cost
from ftddp.exceptions import DivergenceError, DomainError

MU_M = 1e-8
STATE_LIMIT = 1e8
T_MIN = 0.05
T_MAX = 100.0


@dataclass(frozen=True)
class StepProposal:
    gamma: float
    zeta: float
    delta_nu: np.ndarray
    delta_tf: float

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise DomainError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.zeta <= 1.0:
            raise DomainError(f"zeta must lie in [0, 1], got {self.zeta}")
        object.__setattr__(self, "delta_nu", np.atleast_1d(np.asarray(self.delta_nu, dtype=float)))
        object.__setattr__(self, "delta_tf", float(self.delta_tf))


def _newton_matrix(ve0: ValueExpansion):
    k = ve0.k
    M = np.empty((k + 1, k + 1))
    M[:k, :k] = ve0.V_nunu
    M[:k, k] = ve0.V_nutf
    M[k, :k] = ve0.V_nutf
    M[k, k] = ve0.V_tftf
    return M


def update_multiplier_time(ve0: ValueExpansion, veT: ValueExpansion, zeta=1.0, mu_M=MU_M):
    """Multiplier and horizon step ``-zeta * M^{-1} r``.

    ``M`` holds the (nu, tf) curvature of the expansion at the initial time;
    ``r = [V_nu; V_tf]`` is read from the terminal expansion. Eigen-directions
    of ``M`` whose eigenvalue magnitude falls below ``mu_M`` are held at zero.
    """
    if not 0.0 <= zeta <= 1.0:
        raise DomainError(f"zeta must lie in [0, 1], got {zeta}")
    k = ve0.k
    r = np.concatenate([veT.V_nu, [veT.V_tf]])
    M = _newton_matrix(ve0)
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(r))):
        return np.zeros(k), 0.0
    step = -zeta * _pinv_solve(M, r, mu_M)
    return step[:k], float(step[k])


def rollout(problem: ProblemDefinition, prev: TrajectoryGrid, gains: GainSchedule, proposal: StepProposal, nu):
    """Integrate the dynamics under the updated control law

    ``u = u_bar + gamma * l + Kx dx + Knu dnu + Ktf dtf``.

    Only the feedforward is scaled by ``gamma``; ``dnu`` and ``dtf`` already
    carry their ``zeta`` scaling. The horizon becomes ``prev.tf + delta_tf``
    with the knot count unchanged and feedback compares states at matching
    knot indices. Returns the new grid and its total cost at
    ``nu + delta_nu``.
    """
    if gains.N != prev.N:
        raise DomainError(f"gain schedule has {gains.N} knots, trajectory has {prev.N}")
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    new_tf = prev.tf + proposal.delta_tf
    grid = regrid(prev, new_tf)
    dt = grid.dt
    f = problem.dynamics.f
    dnu = proposal.delta_nu
    dtf = proposal.delta_tf

    # everything but the state feedback is known ahead of the sweep
    ff = prev.controls + proposal.gamma * gains.l
    if problem.k:
        ff = ff + gains.Knu @ dnu
    if dtf != 0.0:
        ff = ff + dtf * gains.Ktf
    Kx = gains.Kx

    N = prev.N
    xs = np.empty_like(prev.states)
    us = np.empty_like(prev.controls)
    x = problem.x0.copy()
    xs[0] = x
    xbar = prev.states
    for i in range(N):
        u = ff[i] + Kx[i] @ (x - xbar[i])
        us[i] = u
        x = rk4_step(f, x, u, i * dt, dt)
        if not np.all(np.abs(x) <= STATE_LIMIT):
            raise DivergenceError(f"rollout diverged at knot {i + 1}", index=i + 1)
        xs[i + 1] = x
    traj = TrajectoryGrid(new_tf, xs, us)
    return traj, total_cost(problem, traj, nu + dnu)


def simulate(problem: ProblemDefinition, controls, tf) -> TrajectoryGrid:
    """Open-loop RK4 rollout of a control schedule from ``problem.x0``."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    N = controls.shape[0]
    placeholder = TrajectoryGrid.constant(tf, N, problem.x0, np.zeros(problem.m))
    gains = GainSchedule(
        controls - placeholder.controls,
        np.zeros((N, problem.m, problem.n)),
        np.zeros((N, problem.m, problem.k)),
        np.zeros((N, problem.m)),
    )
    traj, _ = rollout(problem, placeholder, gains, StepProposal(1.0, 0.0, np.zeros(problem.k), 0.0), problem.nu_init)
    return traj


def constraint_norm(problem: ProblemDefinition, traj: TrajectoryGrid, ord=2) -> float:
    if problem.k == 0:
        return 0.0
    return float(np.linalg.norm(problem.terminal.psi(traj.states[-1], traj.tf), ord))


def merit(problem: ProblemDefinition, traj: TrajectoryGrid, nu, rho) -> float:
    """Exact-penalty merit ``J + rho * ||psi||_1``."""
    return total_cost(problem, traj, nu) + rho * constraint_norm(problem, traj, 1)


@dataclass(frozen=True)
class LineSearchOptions:
    gamma_max: float = 0.05
    zeta: float = 0.05
    max_halvings: int = 8
    tol: float = 1e-12
    t_min: float = T_MIN
    t_max: float = T_MAX
    tf_trust: float = 0.5
    nu_trust: float = np.inf
    mu_M: float = MU_M


@dataclass(frozen=True)
class LineSearchResult:
    traj: TrajectoryGrid
    nu: np.ndarray
    tf: float
    cost: float
    merit: float
    merit_reference: float
    gamma: float
    zeta: float
    delta_nu: np.ndarray
    delta_tf: float
    halvings: int
    stalled: bool
    proposed_delta_tf: float = 0.0


def _pinv_solve(M, r, mu_M):
    lam, Q = np.linalg.eigh(M)
    keep = np.abs(lam) >= mu_M
    coef = np.zeros_like(lam)
    coef[keep] = (Q[:, keep].T @ r) / lam[keep]
    return Q @ coef


def limit_step(ve0: ValueExpansion, veT: ValueExpansion, delta_nu, delta_tf, tf, nu, tf_trust=0.5, nu_trust=np.inf, mu_M=MU_M):
    """Keep a full (nu, tf) step inside a trust region.

    A horizon step longer than ``tf_trust * tf`` is clipped to that length
    and the multiplier step is re-solved from the nu rows of the Newton
    system with ``dtf`` held at the clipped value. The multiplier step is
    then scaled down, if needed, so ``|dnu|_inf <= nu_trust * max(1, |nu|_inf)``.
    """
    k = ve0.k
    delta_nu = np.asarray(delta_nu, dtype=float)
    if abs(delta_tf) > tf_trust * tf:
        delta_tf = float(np.sign(delta_tf) * tf_trust * tf)
        if k:
            M = _newton_matrix(ve0)
            delta_nu = -_pinv_solve(M[:k, :k], veT.V_nu + M[:k, k] * delta_tf, mu_M)
    if k and np.isfinite(nu_trust):
        bound = nu_trust * max(1.0, float(np.abs(nu).max()))
        big = float(np.abs(delta_nu).max())
        if big > bound:
            delta_nu = delta_nu * (bound / big)
    return delta_nu, float(delta_tf)


def clamp_delta_tf(tf, delta_tf, t_min=T_MIN, t_max=T_MAX):
    return float(np.clip(tf + delta_tf, t_min, t_max) - tf)


def _ladder(options: LineSearchOptions):
    halve = [0.5**h for h in range(options.max_halvings + 1)]
    joint = [(h, options.gamma_max * s, options.zeta * s) for h, s in enumerate(halve)]
    control_only = [(h, options.gamma_max * s, 0.0) for h, s in enumerate(halve)]
    return joint, control_only


def line_search(problem, prev, gains, ve0, veT, nu, options: LineSearchOptions = LineSearchOptions(), rho=None):
    """Backtrack on ``(gamma, zeta)`` until the merit decreases.

    Both scales are halved together, at most ``options.max_halvings`` times.
    If that ladder fails, the same ``gamma`` ladder is retried with the
    multiplier and horizon held (``zeta = 0``). When no candidate lowers the
    merit by more than ``options.tol`` the largest joint step that did not
    diverge is taken and the result is flagged as stalled. Every candidate's
    merit is evaluated at the nominal multiplier so all comparisons are
    between values of one function.
    """
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    floor = (np.abs(nu).max() if nu.size else 0.0) + 1.0
    rho = floor if rho is None else max(rho, floor)
    dnu_full, dtf_full = update_multiplier_time(ve0, veT, 1.0, mu_M=options.mu_M)
    dnu_full, dtf_full = limit_step(
        ve0, veT, dnu_full, dtf_full, prev.tf, nu, options.tf_trust, options.nu_trust, options.mu_M
    )
    reference = merit(problem, prev, nu, rho)

    joint, control_only = _ladder(options)
    if options.zeta == 0.0:
        control_only = []
    fallback = None
    for is_joint, ladder in ((True, joint), (False, control_only)):
        for h, gamma, zeta in ladder:
            dtf = clamp_delta_tf(prev.tf, zeta * dtf_full, options.t_min, options.t_max)
            prop = StepProposal(gamma, zeta, zeta * dnu_full, dtf)
            try:
                traj, cost = rollout(problem, prev, gains, prop, nu)
            except DivergenceError:
                continue
            m = merit(problem, traj, nu, rho)
            cand = LineSearchResult(
                traj, nu + prop.delta_nu, traj.tf, cost, m, reference, gamma, zeta,
                prop.delta_nu, dtf, h, False, options.zeta * dtf_full,
            )
            if m < reference - options.tol:
                return cand
            if is_joint and fallback is None:
                fallback = cand
    if fallback is None:
        raise DivergenceError("every line-search candidate diverged")
    return LineSearchResult(**{**fallback.__dict__, "stalled": True})
