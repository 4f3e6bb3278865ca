"""Riccati equations attached to the LQMFG equilibrium system.

Three routes to the matrix paths:

* the symmetric control Riccati pair (Xi, zeta) of the single-agent
  problem with a frozen mean path z,
* the nonsymmetric equation for Gamma in the ansatz eta = Gamma xi,
  solved either through blocks of the fundamental solution (Radon's
  lemma) or by direct backward integration with blow-up detection,
* explicit closed forms in the scalar constant-coefficient case.

Gamma carries A+Abar on one side and A* on the other, so it need not be
symmetric and can escape to infinity in finite time; blow-ups are flagged
outcomes, not errors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .coeffs import ProblemSpec, Schedule, build_grid, uniform_grid
from .fbsolver import COND_LIMIT, equilibrium_system
from .odecore import (IntegrationOverflow, StageSampled,
                      rk4_integrate_backward, stage_points)

BLOW_UP_LIMIT = 1e12


class BoundaryOperatorSingular(RuntimeError):
    """Radon's boundary operator is singular at some time: Gamma does not
    exist on the whole horizon."""

    def __init__(self, t: float, cond: float):
        self.t = t
        self.cond = cond
        super().__init__(
            f"Radon boundary operator singular at t={t:.6g} "
            f"(condition number {cond:.3e})")


class DistinctRootsViolated(ValueError):
    """The closed-form quadratic has no two distinct real roots."""


@dataclass
class RiccatiPath:
    """A matrix path (Gamma_t, Xi_t or P_t) with optional affine part and
    blow-up diagnostics.

    When blow_up is set it is the first grid index (in backward
    integration order, so the largest failing time index) where an entry
    exceeded 1e12; samples at earlier times are NaN.
    """

    grid: np.ndarray
    gamma: np.ndarray          # (K+1, n, n)
    aux: np.ndarray | None = None   # (K+1, n), zeta or rho
    blow_up: int | None = None


def _inverse_schedule(sched: Schedule) -> Schedule:
    return sched.map(lambda M: np.linalg.inv(M))


def solve_symmetric(spec: ProblemSpec, grid: np.ndarray | None = None,
                    z=None, steps: int = 2000) -> RiccatiPath:
    """Symmetric Riccati pair of the auxiliary control problem.

    Xi solves the standard Riccati equation with running weight Q + Qbar
    and terminal QT + QbarT.  Given a frozen mean path z (array on the
    grid or a callable), zeta solves the linear backward equation with
    source (Qbar_t S_t - Xi_t Abar_t) z_t and terminal -QbarT ST z(T);
    the two are integrated jointly so zeta sees Xi at the RK4 stage points.
    """
    if grid is None:
        grid = build_grid(spec, steps)
    n = spec.n
    Rinv = _inverse_schedule(spec.R)

    def BRB(t):
        B = spec.B.at(t)
        return B @ Rinv.at(t) @ B.T

    if z is None:
        def field(t, Xi):
            A = spec.A.at(t)
            return (-Xi @ A - A.T @ Xi + Xi @ BRB(t) @ Xi
                    - spec.Q.at(t) - spec.Qbar.at(t))

        XiT = spec.QT + spec.QbarT
        path = rk4_integrate_backward(field, XiT, grid)
        return RiccatiPath(grid=grid, gamma=path)

    if callable(z):
        z_fn = z
    else:
        stages = stage_points(grid)
        z_stage = CubicSpline(grid, np.asarray(z, float), axis=0)(stages)
        z_fn = StageSampled(grid, z_stage)
    zT = np.asarray(z_fn(grid[-1]), float).reshape(-1)

    def field(t, y):
        Xi = y[:, :n]
        zeta = y[:, n]
        A = spec.A.at(t)
        G = BRB(t)
        dXi = -Xi @ A - A.T @ Xi + Xi @ G @ Xi - spec.Q.at(t) - spec.Qbar.at(t)
        dzeta = (-A.T @ zeta + Xi @ G @ zeta
                 + (spec.Qbar.at(t) @ spec.S.at(t) - Xi @ spec.Abar.at(t)) @ z_fn(t))
        out = np.empty_like(y)
        out[:, :n] = dXi
        out[:, n] = dzeta
        return out

    yT = np.zeros((n, n + 1))
    yT[:, :n] = spec.QT + spec.QbarT
    yT[:, n] = -spec.QbarT @ spec.ST @ zT
    path = rk4_integrate_backward(field, yT, grid)
    return RiccatiPath(grid=grid, gamma=path[:, :, :n], aux=path[:, :, n])


def solve_nonsymmetric_direct(spec: ProblemSpec, grid: np.ndarray | None = None,
                              steps: int = 2000) -> RiccatiPath:
    """Backward integration of the nonsymmetric Riccati equation

        dGamma/dt = -Gamma (A+Abar) - A* Gamma + Gamma B R^-1 B* Gamma
                    - (Q + Seff),   Gamma_T = QT + SeffT.

    A blow-up (entries beyond 1e12) is returned as a flagged path, since
    the equation is not always solvable.
    """
    if grid is None:
        grid = build_grid(spec, steps)
    n = spec.n
    eye = np.eye(n)
    Rinv = _inverse_schedule(spec.R)

    def field(t, G):
        A = spec.A.at(t)
        B = spec.B.at(t)
        QS = spec.Q.at(t) + spec.Qbar.at(t) @ (eye - spec.S.at(t))
        return (-G @ (A + spec.Abar.at(t)) - A.T @ G
                + G @ B @ Rinv.at(t) @ B.T @ G - QS)

    GT = spec.QT + spec.terminal_effective_S
    try:
        path = rk4_integrate_backward(field, GT, grid, max_abs=BLOW_UP_LIMIT)
    except IntegrationOverflow as exc:
        return RiccatiPath(grid=grid, gamma=exc.path, blow_up=exc.index)
    return RiccatiPath(grid=grid, gamma=path)


def solve_nonsymmetric_radon(spec: ProblemSpec, grid: np.ndarray | None = None,
                             steps: int = 2000,
                             cond_limit: float = COND_LIMIT) -> RiccatiPath:
    """Gamma through blocks of the fundamental solution (Radon's lemma):

        Gamma_t = -[(GT, -I) Phi(T,t) (O; I)]^-1 [(GT, -I) Phi(T,t) (I; O)]

    with GT = QT + SeffT.  Phi(T,t) is obtained in one backward pass from
    dPsi/dt = -Psi M(t), Psi(T) = I.  Raises BoundaryOperatorSingular at
    the first grid time where the inverted block is ill conditioned.
    """
    if grid is None:
        grid = build_grid(spec, steps)
    Msched, GT = equilibrium_system(spec)
    n = spec.n

    def field(t, Psi):
        return -Psi @ Msched.at(t)

    Psi = rk4_integrate_backward(field, np.eye(2 * n), grid)
    C = np.hstack([GT, -np.eye(n)])
    CP = np.einsum("ij,kjl->kil", C, Psi)
    U = CP[:, :, :n]
    V = CP[:, :, n:]
    conds = np.linalg.cond(V)
    bad = np.flatnonzero(~np.isfinite(conds) | (conds > cond_limit))
    if bad.size:
        k = int(bad[0])
        raise BoundaryOperatorSingular(float(grid[k]), float(conds[k]))
    gamma = -np.linalg.solve(V, U)
    return RiccatiPath(grid=grid, gamma=gamma)


def solve_1d_closed_form(a: float, abar: float, b: float, r: float,
                         q_plus_s: float, qT_plus_sT: float, T: float,
                         grid: np.ndarray | None = None,
                         steps: int = 2000) -> RiccatiPath:
    """Explicit scalar constant-coefficient solutions.

    For b = 0 the equation is linear: exponential in T-t when
    2a+abar != 0, affine otherwise.  For b != 0, with alpha >= 0 >= -beta
    the roots of q_plus_s + (2a+abar) g - (b^2/r) g^2 = 0, the rational
    formula is evaluated with exp(-(alpha+beta)(b^2/r)(T-t)) factored out
    of the denominator so large horizons cannot overflow.
    """
    if grid is None:
        grid = uniform_grid(T, steps)
    tau = grid[-1] - grid  # T - t
    two_a = 2.0 * a + abar
    GT = qT_plus_sT
    c = q_plus_s
    if b == 0.0:
        if two_a != 0.0:
            gamma = (GT + c / two_a) * np.exp(two_a * tau) - c / two_a
        else:
            gamma = c * tau + GT
    else:
        k2 = b * b / r
        disc = two_a * two_a + 4.0 * k2 * c
        if disc <= 0.0:
            raise DistinctRootsViolated(
                "quadratic for the closed form has no two distinct real roots "
                f"(discriminant {disc:.3e})")
        root = np.sqrt(disc)
        alpha = (two_a + root) / (2.0 * k2)
        neg_beta = (two_a - root) / (2.0 * k2)
        if alpha < 0.0 or neg_beta > 0.0:
            raise ValueError(
                "roots do not satisfy alpha >= 0 >= -beta; the b != 0 branch "
                "requires q_plus_s >= 0")
        beta = -neg_beta
        E = np.exp(-k2 * (alpha + beta) * tau)
        gamma = alpha + ((GT - alpha) * (alpha + beta) * E
                         / ((GT + beta) - (GT - alpha) * E))
    return RiccatiPath(grid=grid, gamma=np.asarray(gamma).reshape(-1, 1, 1))


def _fmt(x: float) -> str:
    return repr(float(x))


def riccati_csv(path: RiccatiPath) -> str:
    n = path.gamma.shape[1]
    header = "t," + ",".join(f"gamma_{i+1}{j+1}"
                             for i in range(n) for j in range(n))
    if path.aux is not None:
        header += "," + ",".join(f"zeta_{i+1}" for i in range(n))
    lines = [header]
    for k, t in enumerate(path.grid):
        vals = [t, *path.gamma[k].reshape(-1)]
        if path.aux is not None:
            vals.extend(path.aux[k])
        lines.append(",".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"
