import numpy as np
import pytest

from ftddp.core import ProblemDefinition
from ftddp.models import DynamicsModel, QuadraticRunningCost, QuadraticTerminal, TerminalObjective


class LinearDynamics(DynamicsModel):
    """``x' = A x + B u`` with analytic Jacobians."""

    name = "linear"

    def __init__(self, A, B):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.n, self.m = self.B.shape

    def f(self, x, u, t):
        return np.asarray(x) @ self.A.T + np.asarray(u) @ self.B.T

    def jacobians(self, x, u, t):
        batch = np.shape(x)[:-1]
        return np.broadcast_to(self.A, batch + self.A.shape), np.broadcast_to(self.B, batch + self.B.shape)


class ZeroDynamics(DynamicsModel):
    name = "zero"

    def __init__(self, n=2, m=1):
        self.n, self.m = n, m

    def f(self, x, u, t):
        return np.zeros_like(np.asarray(x, dtype=float))


class ZeroCost(QuadraticRunningCost):
    """Identically zero running cost (``R_u`` only enters through ``L_uu``)."""

    def __init__(self, n, m):
        super().__init__(0.0, np.zeros((n, n)), np.eye(m))

    def value(self, x, u, t):
        return np.zeros(np.shape(x)[:-1])

    def derivatives(self, x, u, t):
        L_x, L_u, L_xx, L_uu, L_xu = super().derivatives(x, u, t)
        return np.zeros_like(L_x), np.zeros_like(L_u), L_xx, L_uu, L_xu


def lqr_problem(A, B, Q, R, tf=1.0, Qf=None):
    dyn = LinearDynamics(A, B)
    n = dyn.n
    cost = QuadraticRunningCost(0.0, Q, R)
    term = QuadraticTerminal(n, Qf=Qf)
    return ProblemDefinition(dyn, cost, term, np.zeros(n), np.zeros(0), tf)


@pytest.fixture
def scalar_lqr():
    return lqr_problem([[0.0]], [[1.0]], [[1.0]], [[1.0]])


@pytest.fixture
def zero_problem():
    dyn = ZeroDynamics(2, 1)
    return ProblemDefinition(dyn, ZeroCost(2, 1), TerminalObjective(), np.zeros(2), np.zeros(0), 1.0)


_ACCEPTANCE = []


def record_acceptance(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    _ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
