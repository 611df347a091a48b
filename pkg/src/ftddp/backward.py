"""Backward pass from the terminal conditions down to the per-knot gains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from numba import njit

from ftddp.core import GainSchedule, ProblemDefinition, TrajectoryGrid, ValueExpansion
from ftddp.exceptions import BackwardPassError, DivergenceError, EvaluationError
from ftddp.models import linearize

MU_FLOOR = 1e-9
MU_MAX = 1e-2
# relative step-doubling tolerance that triggers interval subdivision
SUBSTEP_TOL = 1e-6
SUBSTEP_DEPTH = 40


@dataclass(frozen=True)
class KnotDerivatives:
    """Linearized dynamics and cost derivatives at every knot of a nominal.

    Arrays carry a leading knot axis of length ``N + 1``; the last knot is
    evaluated with the final control ``u[N-1]``.
    """

    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    L: np.ndarray
    L_x: np.ndarray
    L_u: np.ndarray
    L_xx: np.ndarray
    L_uu: np.ndarray
    L_xu: np.ndarray

    def at(self, i):
        return tuple(getattr(self, name)[i] for name in _COEFFS)

    def lerp(self, i, w):
        """Coefficients at ``(1 - w) * knot[i] + w * knot[i + 1]``."""
        if w == 0.0:
            return self.at(i)
        if w == 1.0:
            return self.at(i + 1)
        return tuple(
            (1.0 - w) * getattr(self, name)[i] + w * getattr(self, name)[i + 1] for name in _COEFFS
        )

    def luu_condition(self) -> float:
        eig = np.linalg.eigvalsh(self.L_uu)
        return float(np.max(eig[..., -1] / np.abs(eig[..., 0])))


_COEFFS = ("A", "B", "F", "L", "L_x", "L_u", "L_xx", "L_uu", "L_xu")


def knot_derivatives(problem: ProblemDefinition, traj: TrajectoryGrid) -> KnotDerivatives:
    X = traj.states
    U = traj.knot_controls()
    T = traj.times
    A, B = linearize(problem.dynamics, X, U, T)
    F = np.asarray(problem.dynamics.f(X, U, T), dtype=float)
    L = np.asarray(problem.running_cost.value(X, U, T), dtype=float)
    L_x, L_u, L_xx, L_uu, L_xu = problem.running_cost.derivatives(X, U, T)
    kd = KnotDerivatives(A, B, F, L, L_x, L_u, np.asarray(L_xx), np.asarray(L_uu), L_xu)
    for name in _COEFFS:
        arr = getattr(kd, name)
        if not np.all(np.isfinite(arr)):
            bad = int(np.argwhere(~np.isfinite(arr.reshape(arr.shape[0], -1)))[0, 0])
            raise EvaluationError(f"non-finite {name} at knot {bad}", index=bad)
    return kd


def terminal_conditions(problem: ProblemDefinition, traj: TrajectoryGrid, nu, tf=None) -> ValueExpansion:
    """Value expansion at the final time from the terminal objective.

    The horizon enters through the running cost collected over the extra
    ``dtf`` and through the drift of the final state, ``F = f(x_N, u_{N-1})``.
    """
    tf = traj.tf if tf is None else float(tf)
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    term = problem.terminal
    xN = traj.states[-1]
    uN = traj.controls[-1]
    F = np.asarray(problem.dynamics.f(xN, uN, tf), dtype=float)
    L = float(problem.running_cost.value(xN, uN, tf))

    phi = term.phi(xN, tf)
    phi_x, phi_xx, phi_t, phi_xt, phi_tt = term.phi_derivatives(xN, tf)
    psi = np.atleast_1d(term.psi(xN, tf))
    psi_x = np.atleast_2d(term.psi_x(xN, tf)).reshape(term.k, problem.n)
    psi_t = np.atleast_1d(term.psi_t(xN, tf))

    Phi = phi + float(nu @ psi)
    Phi_x = phi_x + psi_x.T @ nu
    Phi_tf = phi_t + float(nu @ psi_t)
    Phi_xx = np.asarray(phi_xx, dtype=float)
    Phi_xnu = psi_x.T
    Phi_xtf = np.asarray(phi_xt, dtype=float)
    Phi_nutf = psi_t

    ve = ValueExpansion(
        V=float(Phi),
        V_x=np.asarray(Phi_x, dtype=float),
        V_nu=psi,
        V_tf=L + float(Phi_x @ F) + Phi_tf,
        V_xx=Phi_xx.copy(),
        V_nunu=np.zeros((term.k, term.k)),
        V_tftf=float(phi_tt + 2.0 * Phi_xtf @ F + F @ Phi_xx @ F),
        V_xnu=Phi_xnu.copy(),
        V_xtf=Phi_xtf + Phi_xx @ F,
        V_nutf=Phi_nutf + psi_x @ F,
    )
    if not ve.is_finite():
        raise EvaluationError("non-finite terminal derivatives", index=traj.N)
    return ve


def regularize_luu(L_uu, mu=MU_FLOOR):
    """Add ``mu * I`` where the smallest eigenvalue of ``L_uu`` is below ``mu``.

    Works on a single matrix or a stack. Raises :class:`BackwardPassError`
    if the shifted matrix is still not positive definite.
    """
    L_uu = np.asarray(L_uu, dtype=float)
    lam_min = np.linalg.eigvalsh(L_uu)[..., 0]
    low = lam_min < mu
    if not np.any(low):
        return L_uu
    out = L_uu.copy()
    eye = np.eye(L_uu.shape[-1])
    if out.ndim == 2:
        out = out + mu * eye
    else:
        out[low] += mu * eye
    if np.any(lam_min + mu * low <= 0.0):
        raise BackwardPassError(f"L_uu not positive definite after shift mu={mu:g}")
    return out


def compute_gains(B, L_u, L_uu, L_xu, V_x, V_xx, V_xnu, V_xtf):
    """Feedforward and feedback gains for ``du = l + Kx dx + Knu dnu + Ktf dtf``.

    ``L_uu`` is taken as already regularized. One factorization serves all
    four right-hand sides.
    """
    m = L_uu.shape[0]
    n = V_x.shape[0]
    k = V_xnu.shape[1]
    L_ux = L_xu.T
    Bt = B.T
    rhs = np.empty((m, 2 + n + k))
    rhs[:, 0] = L_u + Bt @ V_x
    rhs[:, 1 : 1 + n] = 0.5 * L_ux + 0.5 * L_xu.T + Bt @ V_xx
    rhs[:, 1 + n : 1 + n + k] = Bt @ V_xnu
    rhs[:, 1 + n + k] = Bt @ V_xtf
    if m == 1:
        sol = -rhs / L_uu[0, 0]
    else:
        sol = -np.linalg.solve(L_uu, rhs)
    return sol[:, 0], sol[:, 1 : 1 + n], sol[:, 1 + n : 1 + n + k], sol[:, 1 + n + k]


class _Layout:
    """Slices of the packed value-expansion vector."""

    def __init__(self, n, k):
        self.n, self.k = n, k
        sizes = [1, n, k, 1, n * n, k * k, 1, n * k, n, k]
        edges = np.concatenate([[0], np.cumsum(sizes)])
        self.sl = [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
        self.size = int(edges[-1])

    def views(self, z):
        n, k = self.n, self.k
        s = self.sl
        return (
            z[s[0]],
            z[s[1]],
            z[s[2]],
            z[s[3]],
            z[s[4]].reshape(n, n),
            z[s[5]].reshape(k, k),
            z[s[6]],
            z[s[7]].reshape(n, k),
            z[s[8]],
            z[s[9]],
        )


def backward_rhs(z, coeffs, lay: _Layout):
    """Time derivative of the packed expansion (forward-time sign).

    Readable reference for the compiled sweep below; tests compare the two.
    """
    A, B, F, L, L_x, L_u, L_xx, L_uu, L_xu = coeffs
    _, V_x, _, _, V_xx, _, _, V_xnu, V_xtf, _ = lay.views(z)
    l, Kx, Knu, Ktf = compute_gains(B, L_u, L_uu, L_xu, V_x, V_xx, V_xnu, V_xtf)
    Luu_l = L_uu @ l
    At = A.T
    VxxB = V_xx @ B
    dz = np.empty(lay.size)
    d = lay.views(dz)
    d[0][0] = -(L - 0.5 * l @ Luu_l)
    d[1][:] = -(L_x - Kx.T @ Luu_l + At @ V_x)
    d[2][:] = -(Knu.T @ L_u)
    d[3][0] = -(Ktf @ L_u)
    d[4][:] = -(L_xx - Kx.T @ L_uu @ Kx + At @ V_xx + V_xx @ A)
    d[5][:] = Knu.T @ L_uu @ Knu
    d[6][0] = Ktf @ L_uu @ Ktf
    d[7][:] = -(L_xu @ Knu + At @ V_xnu + VxxB @ Knu)
    d[8][:] = -(L_xu @ Ktf + At @ V_xtf + VxxB @ Ktf)
    d[9][:] = -(Knu.T @ (B.T @ V_xtf))
    return dz


def _symmetrize(z, lay: _Layout):
    views = lay.views(z)
    for M in (views[4], views[5]):
        M[:] = 0.5 * (M + M.T)


@njit(cache=True)
def _finite(z):
    for v in z:
        if not np.isfinite(v):
            return False
    return True


@njit(cache=True)
def _kernel_rhs(z, A, B, L, L_x, L_u, L_xx, L_uu, L_xu, n, m, k, out):
    # packed offsets, same order as ValueExpansion.pack
    o_x = 1
    o_nu = o_x + n
    o_tf = o_nu + k
    o_xx = o_tf + 1
    o_nunu = o_xx + n * n
    o_tftf = o_nunu + k * k
    o_xnu = o_tftf + 1
    o_xtf = o_xnu + n * k
    o_nutf = o_xtf + n
    if not _finite(z):
        out[:] = np.nan
        return
    V_x = z[o_x:o_nu]
    V_xx = z[o_xx:o_nunu].copy().reshape(n, n)
    V_xnu = z[o_xnu:o_xtf].copy().reshape(n, k)
    V_xtf = z[o_xtf:o_nutf]

    Bt = B.T.copy()
    rhs = np.empty((m, 2 + n + k))
    rhs[:, 0] = L_u + Bt @ V_x
    rhs[:, 1 : 1 + n] = 0.5 * L_xu.T + 0.5 * L_xu.T + Bt @ V_xx
    if k > 0:
        rhs[:, 1 + n : 1 + n + k] = Bt @ V_xnu
    rhs[:, 1 + n + k] = Bt @ V_xtf
    sol = -np.linalg.solve(L_uu, rhs)
    l = sol[:, 0].copy()
    Kx = sol[:, 1 : 1 + n].copy()
    Knu = sol[:, 1 + n : 1 + n + k].copy()
    Ktf = sol[:, 1 + n + k].copy()

    Luu_l = L_uu @ l
    At = A.T.copy()
    VxxB = V_xx @ B
    out[0] = -(L - 0.5 * (l @ Luu_l))
    out[o_x:o_nu] = -(L_x - Kx.T @ Luu_l + At @ V_x)
    out[o_tf] = -(Ktf @ L_u)
    dxx = -(L_xx - Kx.T @ L_uu @ Kx + At @ V_xx + V_xx @ A)
    out[o_xx:o_nunu] = dxx.ravel()
    out[o_tftf] = Ktf @ (L_uu @ Ktf)
    dxtf = -(L_xu @ Ktf + At @ V_xtf + VxxB @ Ktf)
    out[o_xtf:o_nutf] = dxtf
    if k > 0:
        out[o_nu:o_tf] = -(Knu.T @ L_u)
        out[o_nunu:o_tftf] = (Knu.T @ L_uu @ Knu).ravel()
        out[o_xnu:o_xtf] = (-(L_xu @ Knu + At @ V_xnu + VxxB @ Knu)).ravel()
        out[o_nutf:] = -(Knu.T @ (Bt @ V_xtf))


@njit(cache=True)
def _kernel_symmetrize(z, n, k):
    o_xx = 1 + n + k + 1
    o_nunu = o_xx + n * n
    for a in range(n):
        for b in range(a + 1, n):
            s = 0.5 * (z[o_xx + a * n + b] + z[o_xx + b * n + a])
            z[o_xx + a * n + b] = s
            z[o_xx + b * n + a] = s
    for a in range(k):
        for b in range(a + 1, k):
            s = 0.5 * (z[o_nunu + a * k + b] + z[o_nunu + b * k + a])
            z[o_nunu + a * k + b] = s
            z[o_nunu + b * k + a] = s


@njit(cache=True)
def _kernel_step(z, s, h, i, A, B, L, L_x, L_u, L_xx, L_uu, L_xu, dt, n, m, k, kbuf):
    # one RK4 step from fraction s of interval i down to s - h; coefficients
    # are interpolated linearly between knot i (s = 0) and knot i + 1 (s = 1)
    H = h * dt
    for j in range(4):
        w = s - (0.0, 0.5, 0.5, 1.0)[j] * h
        a = 1.0 - w
        if j == 0:
            zz = z
        elif j == 3:
            zz = z - H * kbuf[2]
        else:
            zz = z - 0.5 * H * kbuf[j - 1]
        _kernel_rhs(
            zz,
            a * A[i] + w * A[i + 1], a * B[i] + w * B[i + 1], a * L[i] + w * L[i + 1],
            a * L_x[i] + w * L_x[i + 1], a * L_u[i] + w * L_u[i + 1], a * L_xx[i] + w * L_xx[i + 1],
            a * L_uu[i] + w * L_uu[i + 1], a * L_xu[i] + w * L_xu[i + 1],
            n, m, k, kbuf[j],
        )
    out = z - (H / 6.0) * (kbuf[0] + 2.0 * kbuf[1] + 2.0 * kbuf[2] + kbuf[3])
    _kernel_symmetrize(out, n, k)
    return out


@njit(cache=True)
def _kernel_sweep(zT, A, B, L, L_x, L_u, L_xx, L_uu, L_xu, dt, n, m, k, tol, max_depth):
    N = A.shape[0] - 1
    size = zT.shape[0]
    packed = np.empty((N + 1, size))
    packed[N] = zT
    z = zT.copy()
    kbuf = np.empty((4, size))
    h_min = 0.5**max_depth
    h = 1.0
    for i in range(N - 1, -1, -1):
        s = 1.0
        while s > 0.0:
            h = min(h, s)
            while True:
                full = _kernel_step(z, s, h, i, A, B, L, L_x, L_u, L_xx, L_uu, L_xu, dt, n, m, k, kbuf)
                if tol <= 0.0:
                    break
                half = _kernel_step(z, s, 0.5 * h, i, A, B, L, L_x, L_u, L_xx, L_uu, L_xu, dt, n, m, k, kbuf)
                half = _kernel_step(half, s - 0.5 * h, 0.5 * h, i, A, B, L, L_x, L_u, L_xx, L_uu, L_xu, dt, n, m, k, kbuf)
                ok = _finite(full) and _finite(half)
                if ok:
                    for j in range(size):
                        if abs(full[j] - half[j]) > tol * (1.0 + abs(half[j])):
                            ok = False
                            break
                if ok or h <= h_min:
                    break
                h *= 0.5
            z = full
            if not _finite(z):
                packed[i] = z
                return packed, i
            s = s - h if h < s else 0.0
            h = min(1.0, 2.0 * h)
        packed[i] = z
    return packed, -1


def knot_gains(kd: KnotDerivatives, expansions) -> GainSchedule:
    """Gains at knots ``0..N-1`` from the expansions stored at those knots."""
    N = len(expansions) - 1
    V_x = np.stack([ve.V_x for ve in expansions[:N]])
    V_xx = np.stack([ve.V_xx for ve in expansions[:N]])
    V_xnu = np.stack([ve.V_xnu for ve in expansions[:N]])
    V_xtf = np.stack([ve.V_xtf for ve in expansions[:N]])
    B = kd.B[:N]
    Bt = np.swapaxes(B, -1, -2)
    n, k = V_x.shape[1], V_xnu.shape[2]
    m = B.shape[2]
    L_xu = kd.L_xu[:N]
    rhs = np.concatenate(
        [
            (kd.L_u[:N] + np.einsum("imn,in->im", Bt, V_x))[..., None],
            0.5 * np.swapaxes(L_xu, -1, -2) + 0.5 * np.swapaxes(L_xu, -1, -2) + Bt @ V_xx,
            Bt @ V_xnu,
            np.einsum("imn,in->im", Bt, V_xtf)[..., None],
        ],
        axis=2,
    )
    sol = -np.linalg.solve(kd.L_uu[:N], rhs)
    return GainSchedule(sol[:, :, 0], sol[:, :, 1 : 1 + n], sol[:, :, 1 + n : 1 + n + k], sol[:, :, 1 + n + k])


def backward_pass(
    problem: ProblemDefinition, traj: TrajectoryGrid, nu, tf=None, mu=MU_FLOOR, kd=None, substep_tol=SUBSTEP_TOL
):
    """Integrate the value expansion from the final knot back to the first.

    Each interval takes one classical RK4 step with coefficients linearly
    interpolated between its end knots, subdivided by step doubling where the
    full and half steps disagree by more than ``substep_tol`` (relative);
    ``substep_tol <= 0`` gives plain fixed-step RK4. ``V_xx`` and ``V_nunu``
    are symmetrized after every step. Returns the per-knot expansions (length
    ``N + 1``), the gain schedule, and the knot derivatives used.
    """
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    if kd is None:
        kd = knot_derivatives(problem, traj)
    kd = KnotDerivatives(**{**kd.__dict__, "L_uu": regularize_luu(kd.L_uu, mu)})

    n, k, m = problem.n, problem.k, problem.m
    zT = terminal_conditions(problem, traj, nu, tf).pack()
    c = lambda a: np.ascontiguousarray(a, dtype=float)
    packed, bad = _kernel_sweep(
        zT, c(kd.A), c(kd.B), c(kd.L), c(kd.L_x), c(kd.L_u), c(kd.L_xx), c(kd.L_uu), c(kd.L_xu),
        float(traj.dt), n, m, k, float(substep_tol), SUBSTEP_DEPTH,
    )
    if bad >= 0:
        raise DivergenceError(f"value expansion diverged at knot {bad}", index=int(bad))
    expansions = [ValueExpansion.unpack(packed[i], n, k) for i in range(traj.N + 1)]
    return expansions, knot_gains(kd, expansions), kd
