"""Shared numeric data model: grids, value expansions, gain schedules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from ftddp.exceptions import DomainError

if TYPE_CHECKING:
    from ftddp.models import DynamicsModel, RunningCost, TerminalObjective


def _frozen(a, ndim: int | None = None) -> np.ndarray:
    a = np.array(a, dtype=float)
    if ndim is not None and a.ndim != ndim:
        raise DomainError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrajectoryGrid:
    """States at ``N + 1`` knots and zero-order-hold controls on ``N`` intervals
    over the horizon ``[0, tf]``.

    ``states`` has shape ``(N + 1, n)`` and ``controls`` shape ``(N, m)``.
    """

    tf: float
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tf", float(self.tf))
        object.__setattr__(self, "states", _frozen(self.states, 2))
        object.__setattr__(self, "controls", _frozen(self.controls, 2))
        if not self.tf > 0 or not np.isfinite(self.tf):
            raise DomainError(f"horizon must be positive and finite, got {self.tf}")
        if self.states.shape[0] != self.controls.shape[0] + 1:
            raise DomainError(
                f"need N+1 state knots for N controls, got {self.states.shape[0]} "
                f"states and {self.controls.shape[0]} controls"
            )
        if self.controls.shape[0] < 1:
            raise DomainError("need at least one control interval")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.controls))):
            raise DomainError("trajectory contains non-finite entries")

    @property
    def N(self) -> int:
        return self.controls.shape[0]

    @property
    def dt(self) -> float:
        return self.tf / self.N

    @property
    def times(self) -> np.ndarray:
        # dt * i rather than linspace so that times[N] == dt * N exactly
        return self.dt * np.arange(self.N + 1)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return self.controls.shape[1]

    def knot_controls(self) -> np.ndarray:
        """Controls at all N + 1 knots; the last knot reuses ``u[N-1]``."""
        return np.vstack([self.controls, self.controls[-1:]])

    @classmethod
    def constant(cls, tf, N, x0, u) -> TrajectoryGrid:
        """Grid with every state equal to ``x0`` and every control equal to ``u``.

        States are placeholders until a rollout fills them.
        """
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return cls(tf, np.tile(x0, (N + 1, 1)), np.tile(u, (N, 1)))


@dataclass(frozen=True)
class ValueExpansion:
    """Second-order expansion of the value function in (x, nu, tf) at one time."""

    V: float
    V_x: np.ndarray
    V_nu: np.ndarray
    V_tf: float
    V_xx: np.ndarray
    V_nunu: np.ndarray
    V_tftf: float
    V_xnu: np.ndarray
    V_xtf: np.ndarray
    V_nutf: np.ndarray

    @property
    def n(self) -> int:
        return self.V_x.shape[0]

    @property
    def k(self) -> int:
        return self.V_nu.shape[0]

    def pack(self) -> np.ndarray:
        """Flatten into one vector (the backward ODE state)."""
        return np.concatenate(
            [
                [self.V],
                self.V_x,
                self.V_nu,
                [self.V_tf],
                self.V_xx.ravel(),
                self.V_nunu.ravel(),
                [self.V_tftf],
                self.V_xnu.ravel(),
                self.V_xtf,
                self.V_nutf,
            ]
        )

    @classmethod
    def unpack(cls, z: np.ndarray, n: int, k: int) -> ValueExpansion:
        sizes = [1, n, k, 1, n * n, k * k, 1, n * k, n, k]
        parts = np.split(np.asarray(z, dtype=float), np.cumsum(sizes)[:-1])
        return cls(
            V=float(parts[0][0]),
            V_x=parts[1],
            V_nu=parts[2],
            V_tf=float(parts[3][0]),
            V_xx=parts[4].reshape(n, n),
            V_nunu=parts[5].reshape(k, k),
            V_tftf=float(parts[6][0]),
            V_xnu=parts[7].reshape(n, k),
            V_xtf=parts[8],
            V_nutf=parts[9],
        )

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.pack())))


@dataclass(frozen=True)
class GainSchedule:
    """Per-knot feedforward ``l`` and feedback gains ``Kx``, ``Knu``, ``Ktf``.

    Shapes: ``l`` (N, m), ``Kx`` (N, m, n), ``Knu`` (N, m, k), ``Ktf`` (N, m).
    """

    l: np.ndarray
    Kx: np.ndarray
    Knu: np.ndarray
    Ktf: np.ndarray

    def __post_init__(self):
        for name in ("l", "Kx", "Knu", "Ktf"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        N = self.l.shape[0]
        if not (self.Kx.shape[0] == self.Knu.shape[0] == self.Ktf.shape[0] == N):
            raise DomainError("gain arrays disagree on the knot count")

    @property
    def N(self) -> int:
        return self.l.shape[0]

    @classmethod
    def zeros(cls, N, n, m, k) -> GainSchedule:
        return cls(np.zeros((N, m)), np.zeros((N, m, n)), np.zeros((N, m, k)), np.zeros((N, m)))


@dataclass(frozen=True)
class ProblemDefinition:
    """A free-final-time optimal control problem.

    ``nu_init`` has length k, the terminal-constraint dimension; ``k == 0``
    gives an unconstrained free-time problem.
    """

    dynamics: DynamicsModel
    running_cost: RunningCost
    terminal: TerminalObjective
    x0: np.ndarray
    nu_init: np.ndarray
    tf_init: float
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "x0", _frozen(np.atleast_1d(self.x0), 1))
        object.__setattr__(self, "nu_init", _frozen(np.atleast_1d(self.nu_init), 1))
        object.__setattr__(self, "tf_init", float(self.tf_init))
        if not self.tf_init > 0:
            raise DomainError(f"tf_init must be positive, got {self.tf_init}")
        if self.x0.shape[0] != self.dynamics.n:
            raise DomainError(f"x0 has length {self.x0.shape[0]}, dynamics expect {self.dynamics.n}")
        if self.nu_init.shape[0] != self.terminal.k:
            raise DomainError(
                f"nu_init has length {self.nu_init.shape[0]}, constraint has {self.terminal.k} rows"
            )

    @property
    def n(self) -> int:
        return self.dynamics.n

    @property
    def m(self) -> int:
        return self.dynamics.m

    @property
    def k(self) -> int:
        return self.terminal.k


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    cost: float
    tf: float
    nu: np.ndarray
    constraint_residual: float
    gamma: float
    zeta: float
    hamiltonian_residual: float
    merit: float = float("nan")
    merit_reference: float = float("nan")
    stalled: bool = False
    delta_tf: float = 0.0
    extra: dict[str, Any] = field(default_factory=dict, compare=False)


def rk4_step(f, x, u, t, dt):
    """One classical fourth-order step of ``x' = f(x, u, t)`` with ``u`` held."""
    k1 = f(x, u, t)
    k2 = f(x + 0.5 * dt * k1, u, t + 0.5 * dt)
    k3 = f(x + 0.5 * dt * k2, u, t + 0.5 * dt)
    k4 = f(x + dt * k3, u, t + dt)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def regrid(traj: TrajectoryGrid, new_tf: float) -> TrajectoryGrid:
    """Stretch ``traj`` to horizon ``new_tf`` keeping the knot count.

    Control ``i`` keeps its value. States are copied as placeholders only;
    they no longer satisfy the dynamics and must be recomputed by a rollout.
    """
    if not new_tf > 0 or not np.isfinite(new_tf):
        raise DomainError(f"new horizon must be positive, got {new_tf}")
    if new_tf == traj.tf:
        return traj
    return TrajectoryGrid(new_tf, traj.states, traj.controls)


def trapezoid_weights(N: int, dt: float) -> np.ndarray:
    w = np.full(N + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def running_cost_integral(problem: ProblemDefinition, traj: TrajectoryGrid) -> float:
    """Trapezoidal quadrature of the running cost over the grid."""
    L = problem.running_cost.value(traj.states, traj.knot_controls(), traj.times)
    return float(np.dot(trapezoid_weights(traj.N, traj.dt), L))


def total_cost(problem: ProblemDefinition, traj: TrajectoryGrid, nu) -> float:
    """Terminal objective ``phi + nu^T psi`` plus the integrated running cost."""
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    if traj.n != problem.n or traj.m != problem.m:
        raise DomainError(
            f"trajectory is (n={traj.n}, m={traj.m}), problem is (n={problem.n}, m={problem.m})"
        )
    if nu.shape != (problem.k,):
        raise DomainError(f"nu must have length {problem.k}, got shape {nu.shape}")
    xN = traj.states[-1]
    term = problem.terminal.phi(xN, traj.tf)
    if problem.k:
        term += float(nu @ problem.terminal.psi(xN, traj.tf))
    return float(term) + running_cost_integral(problem, traj)
