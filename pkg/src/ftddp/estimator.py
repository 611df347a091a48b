"""Estimator-style front end over :func:`ftddp.solver.solve`."""

from __future__ import annotations

import inspect

import numpy as np

from ftddp.core import ProblemDefinition
from ftddp.exceptions import DomainError
from ftddp.models import make_problem
from ftddp.solver import SolverOptions, solve


class FreeTimeDDP:
    """Free-final-time DDP with ``fit``/``predict``.

    Constructor arguments are stored unchanged and exposed through
    ``get_params``/``set_params``. ``fit`` takes a problem (or a registered
    model name plus its parameters) and sets the trailing-underscore
    attributes; ``predict`` returns the optimized zero-order-hold control at
    the requested times.
    """

    def __init__(
        self,
        gamma_max=0.05,
        epsilon=0.05,
        max_iterations=300,
        knot_count=200,
        tf_trust=0.5,
        nu_trust=np.inf,
        solver_options=None,
    ):
        self.gamma_max = gamma_max
        self.epsilon = epsilon
        self.max_iterations = max_iterations
        self.knot_count = knot_count
        self.tf_trust = tf_trust
        self.nu_trust = nu_trust
        self.solver_options = solver_options

    @classmethod
    def _param_names(cls):
        return [p for p in inspect.signature(cls.__init__).parameters if p != "self"]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise DomainError(f"unknown parameter {name!r} for {type(self).__name__}")
            setattr(self, name, value)
        return self

    def _options(self) -> SolverOptions:
        extra = dict(self.solver_options or {})
        return SolverOptions(
            gamma_max=self.gamma_max,
            epsilon=self.epsilon,
            max_iterations=self.max_iterations,
            knot_count=self.knot_count,
            tf_trust=self.tf_trust,
            nu_trust=self.nu_trust,
            **extra,
        )

    def fit(self, problem, sink=None, **model_params):
        if isinstance(problem, str):
            problem = make_problem(problem, **model_params)
        elif model_params:
            raise DomainError("model parameters are only accepted with a model name")
        if not isinstance(problem, ProblemDefinition):
            raise DomainError(f"expected a ProblemDefinition or model name, got {type(problem).__name__}")
        sol = solve(problem, self._options(), sink=sink)
        self.problem_ = problem
        self.solution_ = sol
        self.trajectory_ = sol.trajectory
        self.tf_ = sol.tf
        self.nu_ = sol.nu
        self.cost_ = sol.cost
        self.status_ = sol.status
        self.n_iter_ = sol.iterations
        return self

    def _check_fitted(self):
        if not hasattr(self, "solution_"):
            raise DomainError(f"this {type(self).__name__} instance is not fitted yet; call fit first")

    def predict(self, t):
        """Control at times ``t`` (held constant over each interval; ``t = tf`` uses the last)."""
        self._check_fitted()
        traj = self.trajectory_
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any((t < 0) | (t > traj.tf)):
            raise DomainError(f"times must lie in [0, {traj.tf}]")
        idx = np.minimum((t / traj.dt).astype(int), traj.N - 1)
        return traj.controls[idx]

    def score(self):
        """Negative total cost of the fitted solution (higher is better)."""
        self._check_fitted()
        return -float(self.cost_)
