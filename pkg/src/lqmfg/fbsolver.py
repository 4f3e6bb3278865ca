"""Equilibrium forward-backward ODE solver.

The mean-field equilibrium reduces to the two-point problem

    d/dt (xi; eta) = [[A+Abar, -B R^-1 B*], [-(Q+Seff), -A*]] (xi; eta),
    xi(0) = E[x0],  eta(T) = (QT + SeffT) xi(T),

with Seff = Qbar (I - S).  This module solves it by shooting on the
fundamental solution, scans det of the lower blocks of Phi_t to locate
horizons where uniqueness fails, and independently solves the same
problem by the contraction iteration z -> xi of the auxiliary control
problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from .coeffs import ProblemSpec, Schedule, build_grid, uniform_grid
from .odecore import (StageSampled, matrix_exponential, rk4_integrate,
                      stage_points)

COND_LIMIT = 1e12  # boundary operators beyond this are reported singular


class SingularShootingMatrix(RuntimeError):
    """The shooting boundary operator is numerically singular.

    Signals non-uniqueness of the equilibrium at this horizon (the T0
    phenomenon), not a programming error.
    """

    def __init__(self, cond: float, message: str | None = None):
        self.cond = cond
        super().__init__(
            message or f"shooting matrix condition number {cond:.3e} exceeds "
                       f"{COND_LIMIT:.0e}")


class NoConvergence(RuntimeError):
    """Fixed-point iteration failed to converge."""

    def __init__(self, iterations: int, ratio: float, diverged: bool = False):
        self.iterations = iterations
        self.ratio = ratio
        self.diverged = diverged
        what = "diverged" if diverged else "did not converge"
        super().__init__(
            f"fixed-point iteration {what} after {iterations} iterations "
            f"(last contraction ratio {ratio:.3g})")


@dataclass
class FBSolution:
    """Paired mean paths (xi, eta) with boundary and ODE defect diagnostics."""

    grid: np.ndarray
    xi: np.ndarray    # (K+1, n)
    eta: np.ndarray   # (K+1, n)
    eta0: np.ndarray
    boundary_residual: float
    ode_residual: float
    shooting_condition: float | None = None
    iterations: int | None = None
    contraction_ratio: float | None = None


@dataclass
class ScanReport:
    """det Phi22_t and det Phi21_t over a horizon scan, with sign brackets."""

    grid: np.ndarray
    det22: np.ndarray
    det21: np.ndarray
    sign_change_brackets: list[tuple[float, float]]


def _inverse_schedule(sched: Schedule) -> Schedule:
    return sched.map(lambda M: np.linalg.inv(M))


def _merged_breakpoints(*scheds: Schedule) -> list[float]:
    points = sorted({b for s in scheds for b in s.breakpoints})
    return [0.0] + points


def equilibrium_system(spec: ProblemSpec) -> tuple[Schedule, np.ndarray]:
    """The 2n x 2n piecewise-constant system matrix of the forward form
    and the terminal boundary weight QT + SeffT."""
    n = spec.n
    eye = np.eye(n)
    Rinv = _inverse_schedule(spec.R)
    pieces = []
    for t in _merged_breakpoints(spec.A, spec.Abar, spec.B, spec.R, spec.Q,
                                 spec.Qbar, spec.S):
        A = spec.A.at(t)
        B = spec.B.at(t)
        QS = spec.Q.at(t) + spec.Qbar.at(t) @ (eye - spec.S.at(t))
        M = np.zeros((2 * n, 2 * n))
        M[:n, :n] = A + spec.Abar.at(t)
        M[:n, n:] = -B @ Rinv.at(t) @ B.T
        M[n:, :n] = -QS
        M[n:, n:] = -A.T
        pieces.append((t, M))
    GT = spec.QT + spec.terminal_effective_S
    return Schedule.piecewise(pieces), GT


def shoot_affine_tpbvp(M_of_t, source_of_t, x0, GT, cT, grid,
                       cond_limit: float = COND_LIMIT):
    """Shooting solve of d/dt (x; p) = M(t)(x; p) + source(t) with
    x(0) = x0 and terminal condition p(T) = GT x(T) + cT.

    One forward RK4 pass integrates the particular solution and the n
    homogeneous columns seeded by p(0) = e_i; the terminal condition then
    determines p(0) from an n x n linear system.  Returns
    (x path, p path, p0, condition number of the boundary operator).
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = x0.size
    Y0 = np.zeros((2 * n, n + 1))
    Y0[:n, 0] = x0
    Y0[n:, 1:] = np.eye(n)

    if source_of_t is None:
        def field(t, Y):
            return M_of_t(t) @ Y
    else:
        def field(t, Y):
            dY = M_of_t(t) @ Y
            dY[:, 0] += source_of_t(t)
            return dY

    path = rk4_integrate(field, Y0, grid)
    YT = path[-1]
    C = np.hstack([GT, -np.eye(n)])
    N = C @ YT[:, 1:]
    cond = float(np.linalg.cond(N))
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularShootingMatrix(cond)
    rhs = -(C @ YT[:, 0]) - np.asarray(cT, dtype=float).reshape(-1)
    p0 = np.linalg.solve(N, rhs)
    w = path[:, :, 0] + path[:, :, 1:] @ p0
    return w[:, :n], w[:, n:], p0, cond


def _ode_defect(grid, xi, eta, M_of_t, source_of_t=None) -> float:
    """Max defect of the paths against the right-hand side, measured by a
    5-point (4th-order) finite-difference re-differencing on interior points."""
    w = np.hstack([xi, eta])
    K = grid.size - 1
    if K < 4:
        return float("nan")
    h = grid[1] - grid[0]
    dw = (-w[4:] + 8.0 * w[3:-1] - 8.0 * w[1:-3] + w[:-4]) / (12.0 * h)
    worst = 0.0
    for j, k in enumerate(range(2, K - 1)):
        rhs = M_of_t(grid[k]) @ w[k]
        if source_of_t is not None:
            rhs = rhs + source_of_t(grid[k])
        worst = max(worst, float(np.max(np.abs(dw[j] - rhs))))
    return worst


def solve_equilibrium_shooting(spec: ProblemSpec, grid: np.ndarray | None = None,
                          steps: int = 2000,
                          cond_limit: float = COND_LIMIT) -> FBSolution:
    """Solve the equilibrium two-point system by shooting.

    Raises SingularShootingMatrix when the boundary operator
    (QT+SeffT, -I) Phi(T,0) (O; I) has condition number above 1e12,
    the signature of a horizon where uniqueness fails.
    """
    if grid is None:
        grid = build_grid(spec, steps)
    Msched, GT = equilibrium_system(spec)
    zero = np.zeros(spec.n)
    xi, eta, eta0, cond = shoot_affine_tpbvp(
        Msched.at, None, spec.x0_mean, GT, zero, grid, cond_limit)
    boundary = float(np.linalg.norm(eta[-1] - GT @ xi[-1]))
    defect = _ode_defect(grid, xi, eta, Msched.at)
    return FBSolution(grid=grid, xi=xi, eta=eta, eta0=eta0,
                      boundary_residual=boundary, ode_residual=defect,
                      shooting_condition=cond)


def existence_scan(spec: ProblemSpec, t_max: float, steps: int) -> ScanReport:
    """Tabulate det Phi22_t and det Phi21_t on [0, t_max].

    For constant coefficients Phi_t = exp(M t) via the matrix exponential;
    otherwise Phi is integrated as a fundamental solution.  Sign changes
    of det Phi22 bracket horizons T0 at which the equilibrium system
    loses unique solvability.
    """
    Msched, _ = equilibrium_system(spec)
    grid = uniform_grid(t_max, steps)
    n = spec.n
    if Msched.is_constant:
        M = Msched.at(0.0)
        samples = np.stack([matrix_exponential(M * t) for t in grid])
    else:
        from .odecore import fundamental_solution
        samples = fundamental_solution(Msched.at, 0.0, grid).samples
    det22 = np.linalg.det(samples[:, n:, n:])
    det21 = np.linalg.det(samples[:, n:, :n])
    brackets = [(float(grid[k]), float(grid[k + 1]))
                for k in range(grid.size - 1)
                if det22[k] * det22[k + 1] < 0.0]
    return ScanReport(grid=grid, det22=det22, det21=det21,
                      sign_change_brackets=brackets)


def refine_singular_horizon(spec: ProblemSpec, bracket: tuple[float, float],
                            tol: float = 1e-6, steps: int = 2000) -> float:
    """Bisect det Phi22_t inside a sign-change bracket down to width tol."""
    Msched, _ = equilibrium_system(spec)
    n = spec.n

    if Msched.is_constant:
        M = Msched.at(0.0)

        def det22(t):
            return float(np.linalg.det(matrix_exponential(M * t)[n:, n:]))
    else:
        from .odecore import fundamental_solution

        def det22(t):
            g = uniform_grid(t, steps)
            phi = fundamental_solution(Msched.at, 0.0, g).samples[-1]
            return float(np.linalg.det(phi[n:, n:]))

    lo, hi = bracket
    f_lo = det22(lo)
    if f_lo * det22(hi) > 0:
        raise ValueError(f"det Phi22 does not change sign on {bracket}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = det22(mid)
        if f_lo * f_mid <= 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


def q_weighted_norm(spec: ProblemSpec, grid: np.ndarray, v: np.ndarray) -> float:
    """The Hilbert-space norm ||v||_Q^2 = v_T* QT v_T + int_0^T v* Q v dt,
    with the integral by trapezoid on the grid."""
    Qvals = np.stack([spec.Q.at(t) for t in grid])
    quad = np.einsum("ki,kij,kj->k", v, Qvals, v)
    terminal = float(v[-1] @ spec.QT @ v[-1])
    return float(np.sqrt(trapezoid(quad, grid) + terminal))


def _aux_inner_system(spec: ProblemSpec) -> tuple[Schedule, Schedule, Schedule]:
    """System matrix of the auxiliary (classical LQ) problem plus the
    Abar and Seff schedules that multiply the frozen iterate z."""
    n = spec.n
    eye = np.eye(n)
    Rinv = _inverse_schedule(spec.R)
    seff_pieces = [(t, spec.Qbar.at(t) @ (eye - spec.S.at(t)))
                   for t in _merged_breakpoints(spec.Qbar, spec.S)]
    pieces = []
    for t in _merged_breakpoints(spec.A, spec.B, spec.R, spec.Q):
        A = spec.A.at(t)
        B = spec.B.at(t)
        M = np.zeros((2 * n, 2 * n))
        M[:n, :n] = A
        M[:n, n:] = -B @ Rinv.at(t) @ B.T
        M[n:, :n] = -spec.Q.at(t)
        M[n:, n:] = -A.T
        pieces.append((t, M))
    return Schedule.piecewise(pieces), spec.Abar, Schedule.piecewise(seff_pieces)


def fixed_point_iterate(spec: ProblemSpec, grid: np.ndarray | None = None,
                        steps: int = 2000, tol: float = 1e-10,
                        max_iter: int = 60) -> FBSolution:
    """Solve the equilibrium system by iterating the map z -> xi.

    Each inner step solves the classical LQ two-point problem with source
    terms Abar_t z_t and Qbar_t(I-S_t) z_t by shooting (terminal operator
    QT, always well posed), then replaces z by the resulting xi.  Stops
    when ||xi - z||_Q < tol.  The initial iterate is z = 0.  Outside the
    contraction regime the iteration may diverge; that is reported as
    NoConvergence with the last ratio estimate.
    """
    if grid is None:
        grid = build_grid(spec, steps)
    M0, Abar, Seff = _aux_inner_system(spec)
    SeffT = spec.terminal_effective_S
    n = spec.n

    source_free = (all(np.all(M == 0) for _, M in Abar.values)
                   and all(np.all(M == 0) for _, M in Seff.values)
                   and np.all(SeffT == 0))

    stages = stage_points(grid)
    Abar_stage = np.stack([Abar.at(t) for t in stages])
    Seff_stage = np.stack([Seff.at(t) for t in stages])

    def inner_solve(z_path):
        if z_path is None:
            source = None
            cT = np.zeros(n)
        else:
            z_stage = CubicSpline(grid, z_path, axis=0)(stages)
            src = np.concatenate(
                [np.einsum("kij,kj->ki", Abar_stage, z_stage),
                 -np.einsum("kij,kj->ki", Seff_stage, z_stage)], axis=1)
            source = StageSampled(grid, src)
            cT = SeffT @ z_path[-1]
        return shoot_affine_tpbvp(M0.at, source, spec.x0_mean, spec.QT, cT, grid)

    z = np.zeros((grid.size, n))
    prev_diff = None
    ratio = float("nan")
    for it in range(1, max_iter + 1):
        xi, eta, eta0, _ = inner_solve(None if it == 1 else z)
        diff = q_weighted_norm(spec, grid, xi - z)
        if prev_diff is not None and prev_diff > 0:
            ratio = diff / prev_diff
        if diff < tol or (source_free and it == 1):
            GT = spec.QT + SeffT
            boundary = float(np.linalg.norm(eta[-1] - GT @ xi[-1]))
            Msched, _ = equilibrium_system(spec)
            defect = _ode_defect(grid, xi, eta, Msched.at)
            return FBSolution(grid=grid, xi=xi, eta=eta, eta0=eta0,
                              boundary_residual=boundary, ode_residual=defect,
                              iterations=it, contraction_ratio=ratio)
        if not np.all(np.isfinite(xi)) or np.max(np.abs(xi)) > 1e12:
            raise NoConvergence(it, ratio, diverged=True)
        z = xi
        prev_diff = diff
    raise NoConvergence(max_iter, ratio)


@dataclass
class FeedbackLaw:
    """Affine state feedback u_t(y) = -R^-1 B* (Xi_t y + k_t), sampled on a grid.

    gain and shift are the precomposed maps G_t = R^-1 B* Xi_t and
    g_t = R^-1 B* k_t, so u = -(G_t y + g_t).
    """

    grid: np.ndarray
    Xi: np.ndarray      # (K+1, n, n)
    k: np.ndarray       # (K+1, n)
    gain: np.ndarray    # (K+1, m, n)
    shift: np.ndarray   # (K+1, m)

    def control(self, index: int, y: np.ndarray) -> np.ndarray:
        """Control at grid index for a state y of shape (n,) or a batch (N, n)."""
        if y.ndim == 1:
            return -(self.gain[index] @ y + self.shift[index])
        return -(y @ self.gain[index].T + self.shift[index])

    def scaled(self, theta: float) -> "FeedbackLaw":
        return FeedbackLaw(self.grid, self.Xi, self.k,
                           theta * self.gain, theta * self.shift)


def equilibrium_control_law(spec: ProblemSpec, sol: FBSolution,
                            xi_riccati) -> FeedbackLaw:
    """Assemble the equilibrium feedback u(y) = -R^-1 B* (Xi y + k) with
    k_t = eta_t - Xi_t xi_t, from an FB solution and the symmetric
    Riccati path Xi (a riccati.RiccatiPath)."""
    grid = sol.grid
    ric_grid = xi_riccati.grid
    if ric_grid.size != grid.size or np.max(np.abs(ric_grid - grid)) > 1e-9:
        raise ValueError("FB solution and Riccati path use different grids")
    Xi = xi_riccati.gamma
    k = sol.eta - np.einsum("kij,kj->ki", Xi, sol.xi)
    Rinv = _inverse_schedule(spec.R)
    RinvBt = np.stack([Rinv.at(t) @ spec.B.at(t).T for t in grid])
    gain = np.einsum("kij,kjl->kil", RinvBt, Xi)
    shift = np.einsum("kij,kj->ki", RinvBt, k)
    return FeedbackLaw(grid=grid, Xi=Xi, k=k, gain=gain, shift=shift)


def _fmt(x: float) -> str:
    return repr(float(x))


def fbsolution_csv(sol: FBSolution) -> str:
    n = sol.xi.shape[1]
    header = ("t," + ",".join(f"xi_{i+1}" for i in range(n))
              + "," + ",".join(f"eta_{i+1}" for i in range(n)))
    lines = [header]
    for k, t in enumerate(sol.grid):
        vals = [t, *sol.xi[k], *sol.eta[k]]
        lines.append(",".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def scan_csv(report: ScanReport) -> str:
    lines = ["t,det_phi22,det_phi21"]
    for t, d22, d21 in zip(report.grid, report.det22, report.det21):
        lines.append(f"{_fmt(t)},{_fmt(d22)},{_fmt(d21)}")
    return "\n".join(lines) + "\n"
