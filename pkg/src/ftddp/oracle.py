"""Closed-form Pontryagin solution of the free-time double integrator.

For ``x1' = x2, x2' = u`` with running cost ``1 + R u^2 / 2``, ``x(0) = 0``
and the terminal constraint ``x1(tf) = 1``, the co-states are
``lam1 = nu`` and ``lam2 = nu (tf - t)``, the control is
``u = (nu / R)(t - tf)``, and the boundary conditions give
``tf^4 = 4.5 R`` and ``nu = -(2/3) tf``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ftddp.exceptions import DomainError


@dataclass(frozen=True)
class AnalyticSolution:
    R: float
    t_f_star: float
    nu_star: float

    def control(self, t):
        return (self.nu_star / self.R) * (np.asarray(t, dtype=float) - self.t_f_star)

    def costates(self, t):
        t = np.asarray(t, dtype=float)
        return np.full_like(t, self.nu_star), self.nu_star * (self.t_f_star - t)

    def states(self, t):
        t = np.asarray(t, dtype=float)
        c = self.nu_star / self.R
        x2 = c * (0.5 * t**2 - self.t_f_star * t)
        x1 = c * (t**3 / 6.0 - 0.5 * self.t_f_star * t**2)
        return np.stack([x1, x2], axis=-1)

    def hamiltonian(self, t):
        """``H = 1 + R u^2 / 2 + lam1 x2 + lam2 u``; zero along the optimum."""
        u = self.control(t)
        lam1, lam2 = self.costates(t)
        x2 = self.states(t)[..., 1]
        return 1.0 + 0.5 * self.R * u**2 + lam1 * x2 + lam2 * u


def analytic_double_integrator(R: float) -> AnalyticSolution:
    if not R > 0:
        raise DomainError(f"R must be positive, got {R}")
    tf = (4.5 * R) ** 0.25
    return AnalyticSolution(float(R), float(tf), float(-2.0 * tf / 3.0))


@dataclass(frozen=True)
class OracleTolerances:
    tf: float = 0.01
    nu: float = 0.02
    linearity: float = 0.01
    hamiltonian: float = 1e-2


@dataclass(frozen=True)
class OracleReport:
    R: float
    tf: float
    tf_star: float
    nu: float
    nu_star: float
    tf_error: float
    nu_error: float
    control_error: float
    linearity_defect: float
    hamiltonian: float
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def linearity_defect(t, u) -> float:
    """Max residual of the least-squares line through ``(t, u)`` relative to ``max|u|``."""
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float).ravel()
    scale = np.abs(u).max()
    if scale == 0.0:
        return 0.0
    coef = np.polynomial.polynomial.polyfit(t, u, 1)
    return float(np.abs(u - np.polynomial.polynomial.polyval(t, coef)).max() / scale)


def verify_against_oracle(solution, R: float, tolerances: OracleTolerances = OracleTolerances()) -> OracleReport:
    """Compare a double-integrator solution with the closed form at ``R``.

    ``solution`` needs ``trajectory``, ``nu`` and ``hamiltonian_residual``
    attributes, as on :class:`ftddp.solver.Solution`. Control error and
    linearity are measured at the left end of every control interval.
    """
    traj = solution.trajectory
    if traj.n != 2 or traj.m != 1 or np.size(solution.nu) != 1:
        raise DomainError("verify_against_oracle expects a double-integrator solution (n=2, m=1, k=1)")
    ref = analytic_double_integrator(R)
    t = traj.times[:-1]
    u = traj.controls[:, 0]
    nu = float(np.ravel(solution.nu)[0])
    report = dict(
        R=float(R),
        tf=traj.tf,
        tf_star=ref.t_f_star,
        nu=nu,
        nu_star=ref.nu_star,
        tf_error=abs(traj.tf - ref.t_f_star),
        nu_error=abs(nu - ref.nu_star),
        control_error=float(np.abs(u - ref.control(t)).max()),
        linearity_defect=linearity_defect(t, u),
        hamiltonian=float(solution.hamiltonian_residual),
    )
    checks = {
        "tf": report["tf_error"] <= tolerances.tf,
        "nu": report["nu_error"] <= tolerances.nu,
        "linearity": report["linearity_defect"] <= tolerances.linearity,
        "hamiltonian": abs(report["hamiltonian"]) <= tolerances.hamiltonian,
    }
    return OracleReport(**report, checks=checks)
