import numpy as np
import pytest

from lqmfg.coeffs import uniform_grid
from lqmfg.fbsolver import equilibrium_system
from lqmfg.odecore import (FundamentalSolution, IntegrationOverflow,
                           fundamental_solution, inv_sqrt, matrix_exponential,
                           psd_sqrt, rk4_integrate, rk4_integrate_backward,
                           spectral_norm)


def test_rk4_zero_field_is_constant():
    path = rk4_integrate(lambda t, y: 0.0 * y, np.array([3.0, -1.0]),
                         uniform_grid(1.0, 50))
    assert np.all(path == np.array([3.0, -1.0]))


def test_rk4_scalar_exponential():
    path = rk4_integrate(lambda t, y: y, np.array([1.0]), uniform_grid(1.0, 100))
    assert abs(path[-1, 0] - np.e) < 1e-8


def test_rk4_rotation_against_sine_cosine():
    # dy/dt = [[0,1],[-1,0]] y with y0 = (1, 0): y(t) = (cos t, sin t)... with
    # this sign convention y = (cos t, -sin t); check against the closed form.
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    grid = uniform_grid(1.0, 200)
    path = rk4_integrate(lambda t, y: J @ y, np.array([1.0, 0.0]), grid)
    exact = np.stack([np.cos(grid), -np.sin(grid)], axis=1)
    assert np.max(np.abs(path - exact)) < 1e-8
    norms = np.linalg.norm(path, axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-8


def test_rk4_order_factor():
    # halving the step divides the endpoint error by about 2^4
    def endpoint_error(K):
        path = rk4_integrate(lambda t, y: y, np.array([1.0]),
                             uniform_grid(1.0, K))
        return abs(path[-1, 0] - np.e)

    factor = endpoint_error(100) / endpoint_error(200)
    assert 14.0 <= factor <= 18.0


def test_rk4_backward_inverts_forward():
    grid = uniform_grid(1.0, 100)
    back = rk4_integrate_backward(lambda t, y: y, np.array([np.e]), grid)
    assert abs(back[0, 0] - 1.0) < 1e-8
    assert abs(back[-1, 0] - np.e) == 0.0


def test_rk4_overflow_reports_first_bad_index():
    # dy/dt = y^2 from y(0)=1 escapes at t=1
    grid = uniform_grid(2.0, 100)
    with pytest.raises(IntegrationOverflow) as exc:
        rk4_integrate(lambda t, y: y * y, np.array([1.0]), grid, max_abs=1e6)
    assert 0 < exc.value.index <= 100
    assert np.all(np.isnan(exc.value.path[exc.value.index + 1:]))


def test_fundamental_solution_zero_field_is_identity():
    fs = fundamental_solution(np.zeros((2, 2)), 0.0, uniform_grid(1.0, 20))
    assert np.allclose(fs.samples, np.eye(2))


def test_fundamental_solution_constant_matches_expm():
    rng = np.random.default_rng(3)
    A = rng.normal(scale=0.8, size=(3, 3))
    grid = uniform_grid(1.0, 400)
    fs = fundamental_solution(A, 0.0, grid)
    for k in (100, 250, 400):
        assert np.max(np.abs(fs.samples[k]
                             - matrix_exponential(A * grid[k]))) < 1e-8


def test_fundamental_solution_scalar_value():
    fs = fundamental_solution(np.array([[2.0]]), 0.0, uniform_grid(0.5, 100))
    assert abs(fs.samples[-1, 0, 0] - np.e) < 1e-8


def test_fundamental_solution_backward_from_interior_anchor():
    rng = np.random.default_rng(4)
    A = rng.normal(scale=0.5, size=(2, 2))
    grid = uniform_grid(1.0, 200)
    fs = fundamental_solution(A, 0.5, grid)
    assert isinstance(fs, FundamentalSolution)
    assert np.max(np.abs(fs.samples[100] - np.eye(2))) < 1e-10
    # phi(t, s) = exp(A (t - s)) for constant A, also for t < s
    assert np.max(np.abs(fs.samples[0]
                         - matrix_exponential(-0.5 * A))) < 1e-8


def test_semigroup_property():
    rng = np.random.default_rng(5)
    A = rng.normal(scale=0.7, size=(2, 2))
    grid = uniform_grid(1.0, 200)
    phi_from_0 = fundamental_solution(A, 0.0, grid)
    phi_from_mid = fundamental_solution(A, 0.5, grid)
    # phi(t, s) = phi(t, r) phi(r, s), s=0, r=0.5, t=1
    lhs = phi_from_0.samples[-1]
    rhs = phi_from_mid.samples[-1] @ phi_from_0.samples[100]
    assert np.max(np.abs(lhs - rhs)) < 1e-7


def test_liouville_identity_random_constant():
    rng = np.random.default_rng(6)
    A = rng.normal(scale=0.6, size=(3, 3))
    grid = uniform_grid(1.0, 400)
    fs = fundamental_solution(A, 0.0, grid)
    dets = np.linalg.det(fs.samples)
    expected = np.exp(np.trace(A) * grid)
    assert np.max(np.abs(dets / expected - 1.0)) < 1e-6


def test_liouville_identity_counterexample_system(spec_ex1):
    # tr of the equilibrium block matrix is 0.4, so det Phi_t = e^{0.4 t}
    Msched, _ = equilibrium_system(spec_ex1)
    M = Msched.at(0.0)
    assert abs(np.trace(M) - 0.4) < 1e-12
    grid = uniform_grid(1.0, 500)
    fs = fundamental_solution(M, 0.0, grid)
    dets = np.linalg.det(fs.samples)
    assert np.max(np.abs(dets / np.exp(0.4 * grid) - 1.0)) < 1e-6


def test_matrix_exponential_zero():
    assert np.array_equal(matrix_exponential(np.zeros((3, 3))), np.eye(3))


def test_matrix_exponential_diagonal():
    E = matrix_exponential(np.diag([1.0, 2.0]))
    assert np.allclose(E, np.diag([np.e, np.e ** 2]), rtol=1e-12)


def test_matrix_exponential_nilpotent():
    N = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert np.allclose(matrix_exponential(N),
                       np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_matrix_exponential_inverse_property():
    rng = np.random.default_rng(7)
    for _ in range(5):
        M = rng.normal(size=(4, 4))
        M *= 10.0 / max(np.linalg.norm(M, 2), 10.0)
        prod = matrix_exponential(M) @ matrix_exponential(-M)
        assert np.max(np.abs(prod - np.eye(4))) < 1e-9


def test_matrix_exponential_rejects_nonfinite():
    with pytest.raises(ValueError, match="non-finite"):
        matrix_exponential(np.array([[np.inf, 0.0], [0.0, 0.0]]))


def test_psd_sqrt_identity_and_diagonal():
    assert np.allclose(psd_sqrt(np.eye(3)), np.eye(3))
    assert np.allclose(psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_psd_sqrt_squares_back():
    rng = np.random.default_rng(8)
    W = rng.normal(size=(4, 4))
    M = W @ W.T
    root = psd_sqrt(M)
    assert np.max(np.abs(root @ root - M)) < 1e-9
    assert np.max(np.abs(root - root.T)) == 0.0


def test_psd_sqrt_rejects_indefinite():
    with pytest.raises(ValueError, match="not positive semidefinite"):
        psd_sqrt(np.diag([1.0, -1.0]))


def test_inv_sqrt_rejects_singular():
    with pytest.raises(ValueError, match="not positive definite"):
        inv_sqrt(np.diag([1.0, 0.0]))


def test_inv_sqrt_inverts():
    M = np.diag([4.0, 9.0])
    assert np.allclose(inv_sqrt(M), np.diag([0.5, 1.0 / 3.0]))


def test_spectral_norm_cases():
    assert spectral_norm(np.zeros((3, 2))) == 0.0
    assert abs(spectral_norm(np.diag([3.0, -5.0])) - 5.0) < 1e-12
    assert abs(spectral_norm(np.array([[0.0, 2.0], [0.0, 0.0]])) - 2.0) < 1e-12
