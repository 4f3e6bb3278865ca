import numpy as np
import pytest

from conftest import scalar_spec
from lqmfg.coeffs import (ConfigError, MatrixPath, Schedule, build_grid,
                          effective_S, parse_config, sample, uniform_grid,
                          validate)


def test_validate_trivial_constant_spec_is_valid():
    spec = scalar_spec(q=1.0, qbar=1.0, r=1.0, delta=0.5)
    report = validate(spec)
    assert report.ok, report.violations


def test_validate_flags_R_below_delta():
    spec = scalar_spec(r=0.0, delta=0.1)
    report = validate(spec)
    assert not report.ok
    assert any("R >= delta*I fails" in v for v in report.violations)


def test_validate_flags_indefinite_Q():
    spec = scalar_spec(q=-0.5)
    report = validate(spec)
    assert any(v.startswith("Q at") for v in report.violations)


def test_validate_counterexample_config(spec_ex1):
    assert validate(spec_ex1).ok


def test_validate_is_idempotent():
    spec = scalar_spec(r=0.0, q=-1.0, delta=0.1)
    first = validate(spec)
    second = validate(spec)
    assert first.violations == second.violations


def test_validate_reports_dimension_mismatch():
    spec = scalar_spec()
    bad = type(spec)(n=2, m=1, T=1.0, A=spec.A, Abar=spec.Abar, B=spec.B,
                     sigma=spec.sigma, Q=spec.Q, Qbar=spec.Qbar, R=spec.R,
                     S=spec.S, QT=np.zeros((2, 2)), QbarT=np.zeros((2, 2)),
                     ST=np.zeros((2, 2)), x0_mean=np.zeros(2))
    report = validate(bad)
    assert any("A has shape" in v for v in report.violations)


def test_effective_S_with_S_identity_is_zero():
    spec = scalar_spec(qbar=3.0, s=1.0, sT=1.0, qbarT=2.0)
    eff = effective_S(spec, uniform_grid(1.0, 10))
    assert np.all(eff.path.samples == 0.0)
    assert np.all(eff.terminal == 0.0)


def test_effective_S_with_zero_Qbar_is_zero():
    spec = scalar_spec(qbar=0.0, s=0.7)
    eff = effective_S(spec, uniform_grid(1.0, 10))
    assert np.all(eff.path.samples == 0.0)


def test_effective_S_scalar_value():
    spec = scalar_spec(qbar=2.0, s=0.5)
    eff = effective_S(spec, uniform_grid(1.0, 4))
    assert np.allclose(eff.path.samples, 1.0)


def test_effective_S_matches_pointwise_product():
    rng = np.random.default_rng(11)
    n = 3
    Qbar = rng.normal(size=(n, n))
    Qbar = Qbar @ Qbar.T
    S = rng.normal(size=(n, n))
    spec = scalar_spec()
    spec = type(spec)(n=n, m=1, T=1.0,
                      A=Schedule.constant(np.zeros((n, n))),
                      Abar=Schedule.constant(np.zeros((n, n))),
                      B=Schedule.constant(np.ones((n, 1))),
                      sigma=Schedule.constant(np.eye(n)),
                      Q=Schedule.constant(np.eye(n)),
                      Qbar=Schedule.constant(Qbar),
                      R=Schedule.constant(np.eye(1)),
                      S=Schedule.constant(S),
                      QT=np.eye(n), QbarT=np.zeros((n, n)), ST=np.eye(n),
                      x0_mean=np.zeros(n))
    grid = uniform_grid(1.0, 7)
    eff = effective_S(spec, grid)
    for k, t in enumerate(grid):
        expected = spec.Qbar.at(t) @ (np.eye(n) - spec.S.at(t))
        assert np.array_equal(eff.path.samples[k], expected)


def test_sample_constant_schedule():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    path = sample(Schedule.constant(M), uniform_grid(1.0, 5))
    assert all(np.array_equal(s, M) for s in path.samples)


def test_sample_piecewise_right_continuity():
    M1 = np.array([[1.0]])
    M2 = np.array([[2.0]])
    sched = Schedule.piecewise([(0.0, M1), (0.5, M2)])
    grid = uniform_grid(1.0, 100)
    path = sample(sched, grid)
    assert path.at(0.5)[0, 0] == 2.0
    assert path.at(0.49)[0, 0] == 1.0
    assert sched.at(0.5)[0, 0] == 2.0
    assert sched.at(0.49)[0, 0] == 1.0


def test_sample_constant_consistent_across_resolutions():
    M = np.array([[2.5]])
    sched = Schedule.constant(M)
    coarse = sample(sched, uniform_grid(1.0, 4))
    fine = sample(sched, uniform_grid(1.0, 8))
    for k, t in enumerate(coarse.grid):
        assert np.array_equal(coarse.samples[k], fine.samples[2 * k])
        assert fine.grid[2 * k] == t


def test_matrix_path_rejects_nonuniform_grid():
    with pytest.raises(ValueError, match="uniform"):
        MatrixPath(np.array([0.0, 0.1, 0.3]), np.zeros((3, 1, 1)))


def test_build_grid_contains_breakpoints():
    spec = scalar_spec()
    spec = type(spec)(n=1, m=1, T=1.0,
                      A=Schedule.piecewise([(0.0, [[0.0]]), (0.25, [[1.0]])]),
                      Abar=spec.Abar, B=spec.B, sigma=spec.sigma, Q=spec.Q,
                      Qbar=spec.Qbar, R=spec.R, S=spec.S, QT=spec.QT,
                      QbarT=spec.QbarT, ST=spec.ST, x0_mean=spec.x0_mean)
    grid = build_grid(spec, 10)
    assert np.any(np.abs(grid - 0.25) < 1e-12)


def test_schedule_rejects_mixed_shapes():
    with pytest.raises(ValueError, match="mixed shapes"):
        Schedule.piecewise([(0.0, np.eye(2)), (0.5, np.eye(3))])


def test_spec_symmetrizes_weights_with_warning():
    asym = np.array([[1.0, 0.3], [0.0, 1.0]])
    with pytest.warns(UserWarning, match="asymmetric"):
        spec = type(scalar_spec())(
            n=2, m=2, T=1.0,
            A=Schedule.constant(np.zeros((2, 2))),
            Abar=Schedule.constant(np.zeros((2, 2))),
            B=Schedule.constant(np.eye(2)),
            sigma=Schedule.constant(np.eye(2)),
            Q=Schedule.constant(asym),
            Qbar=Schedule.constant(np.zeros((2, 2))),
            R=Schedule.constant(np.eye(2)),
            S=Schedule.constant(np.eye(2)),
            QT=np.zeros((2, 2)), QbarT=np.zeros((2, 2)), ST=np.eye(2),
            x0_mean=np.zeros(2))
    assert np.allclose(spec.Q.at(0.0), (asym + asym.T) / 2)


CONFIG_OK = """
[problem]
n = 1
m = 1
T = 2.0
x0_mean = 0.5
[A]
const = 0.1
[Abar]
const = 0.0
[B]
const = 1.0
[sigma]
const = 0.2
[Q]
at 0.0 = 1.0
at 1.0 = 2.0   # second piece
[Qbar]
const = 0.0
[R]
const = 1.0
[S]
const = 0.0
[QT]
const = 0.0
[QbarT]
const = 0.0
[ST]
const = 0.0
"""


def test_parse_config_roundtrip():
    spec = parse_config(CONFIG_OK)
    assert spec.n == 1 and spec.T == 2.0 and spec.delta == 1e-6
    assert spec.Q.at(0.5)[0, 0] == 1.0
    assert spec.Q.at(1.0)[0, 0] == 2.0
    assert validate(spec).ok


def test_parse_config_missing_section():
    broken = CONFIG_OK.replace("[ST]\nconst = 0.0", "")
    with pytest.raises(ConfigError, match=r"missing section \[ST\]"):
        parse_config(broken)


def test_parse_config_bad_entry_has_line_number():
    broken = CONFIG_OK.replace("const = 0.2", "const = 0.2x")
    with pytest.raises(ConfigError, match="line"):
        parse_config(broken)


def test_parse_config_unknown_section():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[bogus]\nconst = 1\n")


def test_parse_config_terminal_rejects_piecewise():
    broken = CONFIG_OK.replace("[QT]\nconst = 0.0", "[QT]\nat 0.0 = 0.0")
    with pytest.raises(ConfigError, match="terminal"):
        parse_config(broken)
