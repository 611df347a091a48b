"""Dynamics and cost interfaces plus the built-in benchmark systems.

All evaluators broadcast over leading axes: ``x`` may have shape ``(..., n)``,
``u`` shape ``(..., m)`` and ``t`` a scalar or shape ``(...,)``. The backward
pass relies on this to linearize every knot in one batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ftddp.exceptions import DomainError, EvaluationError

FD_REL_STEP = 1e-6


class DynamicsModel:
    """Continuous-time dynamics ``dx/dt = f(x, u, t)``.

    Subclasses set ``n`` and ``m`` and implement :meth:`f`. Overriding
    :meth:`jacobians` supplies analytic ``(A, B)``; otherwise
    :func:`linearize` falls back to central differences.
    """

    n: int
    m: int
    name = "dynamics"

    def f(self, x, u, t):
        raise NotImplementedError

    def jacobians(self, x, u, t):
        return None

    @property
    def has_jacobians(self) -> bool:
        return type(self).jacobians is not DynamicsModel.jacobians

    def __call__(self, x, u, t):
        return self.f(x, u, t)


class RunningCost:
    """Running cost ``L(x, u, t)`` and its first and second derivatives."""

    def value(self, x, u, t):
        raise NotImplementedError

    def derivatives(self, x, u, t):
        """Return ``(L_x, L_u, L_xx, L_uu, L_xu)``, batched like the inputs."""
        raise NotImplementedError


class QuadraticRunningCost(RunningCost):
    """``L = 0.5 * (c_t + (x - p)^T Q (x - p) + u^T R_u u)``."""

    def __init__(self, c_t, Q, R_u, p=None):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        R_u = np.atleast_2d(np.asarray(R_u, dtype=float))
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12 * max(1.0, np.abs(Q).max()):
            raise DomainError("Q must be symmetric positive semidefinite")
        if not np.allclose(R_u, R_u.T) or np.linalg.eigvalsh(R_u).min() <= 0:
            raise DomainError("R_u must be symmetric positive definite")
        self.c_t = float(c_t)
        self.Q = Q
        self.R_u = R_u
        self.p = np.zeros(Q.shape[0]) if p is None else np.asarray(p, dtype=float)

    def value(self, x, u, t):
        e = np.asarray(x) - self.p
        u = np.asarray(u)
        return 0.5 * (
            self.c_t
            + np.einsum("...i,ij,...j->...", e, self.Q, e)
            + np.einsum("...i,ij,...j->...", u, self.R_u, u)
        )

    def derivatives(self, x, u, t):
        e = np.asarray(x) - self.p
        u = np.asarray(u)
        batch = e.shape[:-1]
        n, m = self.Q.shape[0], self.R_u.shape[0]
        L_x = e @ self.Q
        L_u = u @ self.R_u
        L_xx = np.broadcast_to(self.Q, batch + (n, n))
        L_uu = np.broadcast_to(self.R_u, batch + (m, m))
        L_xu = np.zeros(batch + (n, m))
        return L_x, L_u, L_xx, L_uu, L_xu


class TerminalObjective:
    """Terminal cost ``phi(x, tf)`` and constraint ``psi(x, tf)`` (k rows).

    The multiplier enters as ``Phi = phi + nu^T psi``; ``psi`` carries first
    derivatives only, so ``Phi`` is affine in ``nu`` and ``Phi_nunu == 0``.
    """

    k: int = 0

    def phi(self, x, tf) -> float:
        return 0.0

    def phi_derivatives(self, x, tf):
        """``(phi_x, phi_xx, phi_t, phi_xt, phi_tt)``."""
        n = len(x)
        return np.zeros(n), np.zeros((n, n)), 0.0, np.zeros(n), 0.0

    def psi(self, x, tf) -> np.ndarray:
        return np.zeros(0)

    def psi_x(self, x, tf) -> np.ndarray:
        return np.zeros((0, len(x)))

    def psi_t(self, x, tf) -> np.ndarray:
        return np.zeros(0)

    def Phi(self, x, nu, tf) -> float:
        val = self.phi(x, tf)
        if self.k:
            val += float(np.dot(nu, self.psi(x, tf)))
        return float(val)


class QuadraticTerminal(TerminalObjective):
    """``phi = 0.5 (x - p)^T Qf (x - p)`` and affine ``psi = C x - d``."""

    def __init__(self, n, Qf=None, p=None, C=None, d=None):
        self.n = int(n)
        self.Qf = np.zeros((n, n)) if Qf is None else np.asarray(Qf, dtype=float)
        self.p = np.zeros(n) if p is None else np.asarray(p, dtype=float)
        self.C = np.zeros((0, n)) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
        self.d = np.zeros(self.C.shape[0]) if d is None else np.atleast_1d(np.asarray(d, dtype=float))
        if self.C.shape != (self.d.shape[0], n):
            raise DomainError(f"constraint matrix has shape {self.C.shape}, expected ({self.d.shape[0]}, {n})")
        self.k = self.C.shape[0]

    def phi(self, x, tf):
        e = np.asarray(x) - self.p
        return 0.5 * float(e @ self.Qf @ e)

    def phi_derivatives(self, x, tf):
        e = np.asarray(x) - self.p
        n = self.n
        return self.Qf @ e, self.Qf.copy(), 0.0, np.zeros(n), 0.0

    def psi(self, x, tf):
        return self.C @ np.asarray(x) - self.d

    def psi_x(self, x, tf):
        return self.C.copy()

    def psi_t(self, x, tf):
        return np.zeros(self.k)


def _fd_steps(v):
    return FD_REL_STEP * np.maximum(1.0, np.abs(v))


def _checked(model, x, u, t, what, index):
    val = np.asarray(model.f(x, u, t), dtype=float)
    if not np.all(np.isfinite(val)):
        raise EvaluationError(f"non-finite dynamics while perturbing {what}[{index}]", index=(what, index))
    return val


def linearize(model: DynamicsModel, x, u, t):
    """Jacobians ``(A, B)`` of ``f`` at ``(x, u, t)``.

    Analytic when the model provides them, central differences otherwise.
    Accepts batched inputs (leading axes), returning ``(..., n, n)`` and
    ``(..., n, m)``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if model.has_jacobians:
        A, B = model.jacobians(x, u, t)
        return np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    return fd_jacobians(model, x, u, t)


def fd_jacobians(model: DynamicsModel, x, u, t):
    """Central-difference Jacobians with step ``1e-6 * max(1, |v_i|)``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n, m = x.shape[-1], u.shape[-1]
    f0 = np.asarray(model.f(x, u, t), dtype=float)
    if not np.all(np.isfinite(f0)):
        raise EvaluationError("non-finite dynamics at the linearization point")
    A = np.empty(x.shape[:-1] + (f0.shape[-1], n))
    B = np.empty(x.shape[:-1] + (f0.shape[-1], m))
    hx = _fd_steps(x)
    hu = _fd_steps(u)
    for i in range(n):
        dx = np.zeros_like(x)
        dx[..., i] = hx[..., i]
        fp = _checked(model, x + dx, u, t, "x", i)
        fm = _checked(model, x - dx, u, t, "x", i)
        A[..., :, i] = (fp - fm) / (2.0 * hx[..., i, None])
    for j in range(m):
        du = np.zeros_like(u)
        du[..., j] = hu[..., j]
        fp = _checked(model, x, u + du, t, "u", j)
        fm = _checked(model, x, u - du, t, "u", j)
        B[..., :, j] = (fp - fm) / (2.0 * hu[..., j, None])
    return A, B


def check_jacobians(model: DynamicsModel, points, rtol=1e-5):
    """Largest relative error of analytic Jacobians against central differences.

    ``points`` is an iterable of ``(x, u, t)``. Errors are scaled by
    ``max(1, |J|_max)`` so near-zero entries do not dominate. Returns the
    worst error and whether it is within ``rtol``.
    """
    if not model.has_jacobians:
        raise DomainError(f"{model.name} has no analytic Jacobians to check")
    worst = 0.0
    for x, u, t in points:
        A, B = model.jacobians(np.asarray(x, float), np.asarray(u, float), t)
        Af, Bf = fd_jacobians(model, x, u, t)
        for J, Jf in ((A, Af), (B, Bf)):
            scale = max(1.0, np.abs(J).max())
            worst = max(worst, float(np.abs(J - Jf).max() / scale))
    return worst, worst <= rtol


# --------------------------------------------------------------------------
# Built-in systems


class DoubleIntegrator(DynamicsModel):
    n, m = 2, 1
    name = "double_integrator"

    def f(self, x, u, t):
        x = np.asarray(x)
        u = np.asarray(u)
        return np.stack([x[..., 1], u[..., 0]], axis=-1)

    def jacobians(self, x, u, t):
        batch = np.asarray(x).shape[:-1]
        A = np.zeros(batch + (2, 2))
        A[..., 0, 1] = 1.0
        B = np.zeros(batch + (2, 1))
        B[..., 1, 0] = 1.0
        return A, B


@dataclass
class CartPole(DynamicsModel):
    """Frictionless cart pole, state ``[x, xdot, theta, thetadot]``.

    ``theta = 0`` is the upright position. The pole is a point mass ``m_pole``
    at distance ``length`` from the pivot; ``u`` is the horizontal force on
    the cart.
    """

    m_cart: float = 10.0
    m_pole: float = 1.0
    length: float = 0.5
    g: float = 9.8
    n: int = field(default=4, init=False)
    m: int = field(default=1, init=False)
    name = "cart_pole"

    def f(self, x, u, t):
        x = np.asarray(x)
        u = np.asarray(u)[..., 0]
        M, mp, l, g = self.m_cart, self.m_pole, self.length, self.g
        th, w = x[..., 2], x[..., 3]
        s, c = np.sin(th), np.cos(th)
        D = M + mp * s * s
        acc = (u - mp * l * s * w * w + mp * g * s * c) / D
        alpha = (u * c - mp * l * w * w * c * s + (M + mp) * g * s) / (l * D)
        return np.stack([x[..., 1], acc, w, alpha], axis=-1)

    def jacobians(self, x, u, t):
        x = np.asarray(x)
        u = np.asarray(u)[..., 0]
        M, mp, l, g = self.m_cart, self.m_pole, self.length, self.g
        th, w = x[..., 2], x[..., 3]
        s, c = np.sin(th), np.cos(th)
        D = M + mp * s * s
        dD = 2.0 * mp * s * c
        Na = u - mp * l * s * w * w + mp * g * s * c
        Nb = u * c - mp * l * w * w * c * s + (M + mp) * g * s
        dNa_th = -mp * l * c * w * w + mp * g * (c * c - s * s)
        dNb_th = -u * s - mp * l * w * w * (c * c - s * s) + (M + mp) * g * c
        batch = x.shape[:-1]
        A = np.zeros(batch + (4, 4))
        A[..., 0, 1] = 1.0
        A[..., 2, 3] = 1.0
        A[..., 1, 2] = (dNa_th * D - Na * dD) / (D * D)
        A[..., 1, 3] = -2.0 * mp * l * s * w / D
        A[..., 3, 2] = (dNb_th * D - Nb * dD) / (l * D * D)
        A[..., 3, 3] = -2.0 * mp * w * c * s / D
        B = np.zeros(batch + (4, 1))
        B[..., 1, 0] = 1.0 / D
        B[..., 3, 0] = c / (l * D)
        return A, B


@dataclass
class Quadrotor(DynamicsModel):
    """16-state quadrotor laid out as ``[p(3), euler(3), v(3), omega(3), motor(4)]``
    with world-frame velocity ``v`` and body rates ``omega``.

    Of the form ``f(x) + G u``: motor speeds follow a first-order lag toward
    hover speed plus a command linear in ``u``, so ``u = 0`` with motors at
    hover speed keeps the vehicle hovering. With ``input="motor"`` (default)
    ``u`` is the commanded per-motor speed offset in rad/s. With
    ``input="wrench"`` it is the collective thrust change and the pitching,
    rolling and yawing moments, mapped to motor commands through the
    linearized mixer. Parameter values follow a commonly used small-quadrotor
    model.
    """

    mass: float = 0.468
    arm: float = 0.225
    k_f: float = 2.98e-6
    k_m: float = 1.14e-7
    inertia: tuple = (4.856e-3, 4.856e-3, 8.801e-3)
    tau_motor: float = 0.02
    g: float = 9.81
    input: str = "motor"
    n: int = field(default=16, init=False)
    m: int = field(default=4, init=False)
    name = "quadrotor"

    def __post_init__(self):
        self.hover_speed = float(np.sqrt(self.mass * self.g / (4.0 * self.k_f)))
        l, cm = self.arm, self.k_m / self.k_f
        # rows: thrust, roll, pitch, yaw as functions of per-rotor thrusts
        self.mixer = np.array(
            [[1.0, 1.0, 1.0, 1.0], [0.0, l, 0.0, -l], [-l, 0.0, l, 0.0], [cm, -cm, cm, -cm]]
        )
        # u = (thrust, pitch, roll, yaw) -> mixer row order (thrust, roll, pitch, yaw)
        perm = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=float)
        if self.input == "motor":
            self.G_motor = np.eye(4) / self.tau_motor
        elif self.input == "wrench":
            lin = np.linalg.inv(self.mixer) / (2.0 * self.k_f * self.hover_speed)
            self.G_motor = lin @ perm / self.tau_motor
        else:
            raise DomainError(f"input must be 'motor' or 'wrench', got {self.input!r}")

    def x_hover(self, position=(0.0, 0.0, 0.0)):
        x = np.zeros(16)
        x[0:3] = position
        x[12:16] = self.hover_speed
        return x

    def f(self, x, u, t):
        x = np.asarray(x)
        u = np.asarray(u)
        phi, th, psi = x[..., 3], x[..., 4], x[..., 5]
        p, q, r = x[..., 9], x[..., 10], x[..., 11]
        omega = x[..., 12:16]
        sph, cph = np.sin(phi), np.cos(phi)
        sth, cth = np.sin(th), np.cos(th)
        sps, cps = np.sin(psi), np.cos(psi)

        rotor = self.k_f * omega * omega
        wrench = rotor @ self.mixer.T
        thrust, tx, ty, tz = wrench[..., 0], wrench[..., 1], wrench[..., 2], wrench[..., 3]

        Ix, Iy, Iz = self.inertia
        ax = thrust / self.mass * (cph * sth * cps + sph * sps)
        ay = thrust / self.mass * (cph * sth * sps - sph * cps)
        az = thrust / self.mass * cph * cth - self.g

        tth = sth / cth
        dphi = p + (q * sph + r * cph) * tth
        dth = q * cph - r * sph
        dpsi = (q * sph + r * cph) / cth

        dp = (tx - (Iz - Iy) * q * r) / Ix
        dq = (ty - (Ix - Iz) * p * r) / Iy
        dr = (tz - (Iy - Ix) * p * q) / Iz

        domega = (self.hover_speed - omega) / self.tau_motor + u @ self.G_motor.T

        return np.concatenate(
            [
                x[..., 6:9],
                np.stack([dphi, dth, dpsi, ax, ay, az, dp, dq, dr], axis=-1),
                domega,
            ],
            axis=-1,
        )


def double_integrator(R=1.0):
    """Double integrator ``x1' = x2, x2' = u`` with ``L = 1 + R u^2 / 2``,
    no terminal cost and constraint ``x1(tf) = 1``."""
    if not R > 0:
        raise DomainError(f"R must be positive, got {R}")
    dyn = DoubleIntegrator()
    cost = QuadraticRunningCost(c_t=2.0, Q=np.zeros((2, 2)), R_u=[[R]])
    term = QuadraticTerminal(2, C=[[1.0, 0.0]], d=[1.0])
    return dyn, cost, term


def cart_pole(c_t=1.0, m_cart=10.0, m_pole=1.0, length=0.5, g=9.8, R_u=0.01):
    """Cart-pole swing-up: ``Q = diag(0, 0, 1, 1)``, constraint on the final
    pole angle and rate."""
    dyn = CartPole(m_cart=m_cart, m_pole=m_pole, length=length, g=g)
    cost = QuadraticRunningCost(c_t=c_t, Q=np.diag([0.0, 0.0, 1.0, 1.0]), R_u=[[R_u]], p=np.zeros(4))
    C = np.zeros((2, 4))
    C[0, 2] = C[1, 3] = 1.0
    term = QuadraticTerminal(4, p=np.zeros(4), C=C, d=np.zeros(2))
    return dyn, cost, term


def quadrotor_weights():
    """Return ``(Qf, Q, p)`` for the hover task."""
    qf = np.zeros(16)
    qf[0:3] = 1e7
    qf[3:9] = 1e6
    qf[9:12] = 1e5
    Qf = np.diag(qf)
    p = np.zeros(16)
    p[2] = 1.0
    return Qf, 0.01 * Qf, p


def quadrotor(c_t=1.0, **params):
    """Quadrotor take-off to hover at ``z = 1``; the first six states are
    constrained at the final time."""
    dyn = Quadrotor(**params)
    Qf, Q, p = quadrotor_weights()
    cost = QuadraticRunningCost(c_t=c_t, Q=Q, R_u=1e-4 * np.eye(4), p=p)
    C = np.zeros((6, 16))
    C[np.arange(6), np.arange(6)] = 1.0
    term = QuadraticTerminal(16, Qf=Qf, p=p, C=C, d=p[:6])
    return dyn, cost, term


def default_x0(name, dynamics=None):
    if name == "double_integrator":
        return np.zeros(2)
    if name == "cart_pole":
        return np.array([0.0, 0.0, np.pi, 0.0])
    if name == "quadrotor":
        return (dynamics or Quadrotor()).x_hover()
    raise DomainError(f"unknown model {name!r}")


REGISTRY = {
    "cart_pole": cart_pole,
    "double_integrator": double_integrator,
    "quadrotor": quadrotor,
}


def make_problem(name, x0=None, tf_init=1.0, nu_init=None, **params):
    """Build a :class:`~ftddp.core.ProblemDefinition` for a registered model."""
    from ftddp.core import ProblemDefinition

    if name not in REGISTRY:
        raise DomainError(f"unknown model {name!r}; choose from {sorted(REGISTRY)}")
    dyn, cost, term = REGISTRY[name](**params)
    if x0 is None:
        x0 = default_x0(name, dyn)
    if nu_init is None:
        nu_init = np.zeros(term.k)
    return ProblemDefinition(dyn, cost, term, x0, nu_init, tf_init, name=name)
