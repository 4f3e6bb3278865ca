"""Deterministic ODE integration and matrix utilities.

Classical fixed-step RK4 for vector- and matrix-valued linear-affine
systems, fundamental solutions of dphi/dt = A_t phi, matrix exponentials,
principal PSD square roots, and spectral norms.  Backward problems are
integrated by the substitution tau = T - t so there is a single forward
integrator code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .coeffs import MatrixPath, check_uniform_grid


PSD_EIG_TOL = 1e-10   # eigenvalue slack accepted as "zero" in psd_sqrt
PD_EIG_FLOOR = 1e-12  # smallest eigenvalue admitted as positive definite


class IntegrationOverflow(RuntimeError):
    """Integration produced a non-finite or out-of-bounds value.

    ``index`` is the first grid index with a bad value, ``path`` the
    partial solution (NaN beyond the failure point).
    """

    def __init__(self, index: int, path: np.ndarray, direction: str = "forward"):
        self.index = index
        self.path = path
        self.direction = direction
        super().__init__(
            f"{direction} integration blew up at grid index {index}")


def rk4_integrate(field, y0, grid, max_abs: float | None = None) -> np.ndarray:
    """Classical 4th-order Runge-Kutta on a uniform grid.

    field(t, y) evaluates the right-hand side; piecewise-constant
    coefficients inside it are evaluated right-continuously at the stage
    points t, t+h/2, t+h.  Returns the path with shape (len(grid), *y0.shape).
    Raises IntegrationOverflow on non-finite values (or |y| > max_abs if set).
    """
    grid = np.asarray(grid, dtype=float)
    check_uniform_grid(grid)
    y = np.asarray(y0, dtype=float)
    out = np.full((grid.size,) + y.shape, np.nan)
    out[0] = y
    limit = np.inf if max_abs is None else max_abs
    for k in range(grid.size - 1):
        t = grid[k]
        h = grid[k + 1] - grid[k]
        k1 = field(t, y)
        k2 = field(t + h / 2.0, y + (h / 2.0) * k1)
        k3 = field(t + h / 2.0, y + (h / 2.0) * k2)
        k4 = field(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > limit:
            out[k + 1] = y
            raise IntegrationOverflow(k + 1, out)
        out[k + 1] = y
    return out


def rk4_integrate_backward(field, yT, grid, max_abs: float | None = None) -> np.ndarray:
    """Integrate dy/dt = field(t, y) backward from y(T) = yT.

    Substitutes tau = T - t and runs forward RK4; the returned path is
    aligned with the original grid (path[k] = y(grid[k])).
    """
    grid = np.asarray(grid, dtype=float)
    T = grid[-1]

    def reversed_field(tau, y):
        return -field(T - tau, y)

    try:
        rev = rk4_integrate(reversed_field, yT, T - grid[::-1], max_abs=max_abs)
    except IntegrationOverflow as exc:
        path = exc.path[::-1].copy()
        raise IntegrationOverflow(grid.size - 1 - exc.index, path,
                                  direction="backward") from None
    return rev[::-1].copy()


def _as_field(A) -> "callable":
    """Accept a callable t -> matrix, a MatrixPath, or a constant matrix."""
    if callable(A):
        return A
    if isinstance(A, MatrixPath):
        return A.at
    M = np.asarray(A, dtype=float)
    return lambda t: M


def stage_points(grid: np.ndarray) -> np.ndarray:
    """Grid points interleaved with midpoints: every time RK4 stages touch."""
    grid = np.asarray(grid, dtype=float)
    return np.linspace(grid[0], grid[-1], 2 * (grid.size - 1) + 1)


class StageSampled:
    """Callable t -> value backed by samples on the RK4 stage points.

    Avoids per-stage interpolator calls inside integration loops; t must
    be one of the stage points (nearest lookup, exact on stage points).
    """

    def __init__(self, grid: np.ndarray, values: np.ndarray):
        self._t0 = float(grid[0])
        self._h2 = (grid[1] - grid[0]) / 2.0
        self._values = values

    def __call__(self, t: float) -> np.ndarray:
        j = int(round((t - self._t0) / self._h2))
        return self._values[min(max(j, 0), len(self._values) - 1)]


@dataclass(frozen=True)
class FundamentalSolution:
    """Samples of phi(t, s), the solution of dphi/dt = A_t phi, phi(s,s)=I."""

    anchor: float
    grid: np.ndarray
    samples: np.ndarray  # (len(grid), n, n)

    def at_index(self, k: int) -> np.ndarray:
        return self.samples[k]


def fundamental_solution(A, s: float, grid) -> FundamentalSolution:
    """Fundamental solution associated with A_t, anchored at grid point s.

    Integrates forward from s to T and backward from s to 0, so samples
    cover the whole grid.  A may be a callable, a MatrixPath, or a
    constant matrix.
    """
    grid = np.asarray(grid, dtype=float)
    field_A = _as_field(A)
    idx = int(np.argmin(np.abs(grid - s)))
    if abs(grid[idx] - s) > 1e-9 * max(1.0, abs(grid[-1])):
        raise ValueError(f"anchor {s} is not a grid point")
    n = np.asarray(field_A(grid[idx])).shape[0]
    eye = np.eye(n)

    def field(t, phi):
        return field_A(t) @ phi

    samples = np.empty((grid.size, n, n))
    samples[idx] = eye
    if idx < grid.size - 1:
        fwd = rk4_integrate(field, eye, grid[idx:])
        samples[idx:] = fwd
    if idx > 0:
        bwd = rk4_integrate_backward(field, eye, grid[:idx + 1])
        samples[:idx + 1] = bwd
    return FundamentalSolution(float(grid[idx]), grid, samples)


def matrix_exponential(M: np.ndarray) -> np.ndarray:
    """exp(M) by scaling-and-squaring with a fixed-order Pade approximant."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix exponential of a non-finite matrix")
    return scipy.linalg.expm(M)


def _check_symmetric(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.size and float(np.max(np.abs(M - M.T))) > 1e-9:
        raise ValueError("matrix is not symmetric within 1e-9")
    return (M + M.T) / 2.0


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix via eigendecomposition."""
    M = _check_symmetric(M)
    lam, V = np.linalg.eigh(M)
    if lam.min() < -PSD_EIG_TOL:
        raise ValueError(
            f"matrix is not positive semidefinite (min eigenvalue {lam.min():.3e})")
    root = V @ np.diag(np.sqrt(np.clip(lam, 0.0, None))) @ V.T
    return (root + root.T) / 2.0


def inv_sqrt(M: np.ndarray) -> np.ndarray:
    """Inverse principal square root of a symmetric PD matrix."""
    M = _check_symmetric(M)
    lam, V = np.linalg.eigh(M)
    if lam.min() <= PD_EIG_FLOOR:
        raise ValueError(
            f"matrix is not positive definite (min eigenvalue {lam.min():.3e})")
    root = V @ np.diag(lam ** -0.5) @ V.T
    return (root + root.T) / 2.0


def spectral_norm(M: np.ndarray) -> float:
    """Largest singular value."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("spectral norm of a non-finite matrix")
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False).max())


def spectral_norms(batch: np.ndarray) -> np.ndarray:
    """Largest singular value along the last two axes of a stacked array."""
    return np.linalg.svd(batch, compute_uv=False).max(axis=-1)
