import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from drddl import solvers
from drddl.errors import DegenerateInput, NumericalError
from drddl.solvers import IstaConfig, irls_l1, ista, least_squares, soft_threshold

from oracles import l1_regression_lp, lasso_cd, lasso_value, normal_equations

finite = st.floats(-1e6, 1e6, allow_nan=False)


# ---------------------------------------------------------------- soft threshold

@pytest.mark.parametrize("x, tau, want", [(5, 2, 3), (-5, 2, -3), (0.1, 0.2, 0), (-7.5, 0, -7.5)])
def test_soft_threshold_examples(x, tau, want):
    assert soft_threshold(x, tau) == want


def test_soft_threshold_rejects_negative_threshold():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


@given(finite, st.floats(0, 1e6))
def test_soft_threshold_is_odd_and_shrinks(x, tau):
    y = soft_threshold(x, tau)
    assert soft_threshold(-x, tau) == -y
    assert abs(y) <= abs(x)
    assert abs(y) == pytest.approx(max(abs(x) - tau, 0.0), abs=1e-9 * max(1, abs(x)))


@given(arrays(np.float64, (4, 3), elements=finite), st.floats(0, 100))
def test_soft_threshold_elementwise(M, tau):
    out = soft_threshold(M, tau)
    assert out.shape == M.shape
    want = np.array([[soft_threshold(v, tau) for v in row] for row in M])
    np.testing.assert_array_equal(out, want)


# ---------------------------------------------------------------- least squares

def test_least_squares_identity():
    Y = np.arange(12.0).reshape(4, 3)
    np.testing.assert_allclose(least_squares(np.eye(4), Y), Y)


def test_least_squares_scalar_mean():
    np.testing.assert_allclose(least_squares(np.array([[1.0], [1.0]]), np.array([1.0, 3.0])), [2.0])


def test_least_squares_matches_normal_equations():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((6, 4))
    Y = rng.standard_normal((6, 3))
    np.testing.assert_allclose(least_squares(A, Y), normal_equations(A, Y), atol=1e-8)


def test_least_squares_rank_deficient_is_minimum_norm():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    z = least_squares(A, np.array([2.0, 2.0]))
    np.testing.assert_allclose(z, [1.0, 1.0], atol=1e-12)


def test_least_squares_rhs_recovers_left_factor():
    rng = np.random.default_rng(1)
    D = rng.standard_normal((5, 3))
    Z = rng.standard_normal((3, 20))
    np.testing.assert_allclose(solvers.least_squares_rhs(D @ Z, Z), D, atol=1e-10)


def test_least_squares_errors():
    with pytest.raises(DegenerateInput):
        least_squares(np.zeros((3, 2)), np.ones(3))
    with pytest.raises(NumericalError):
        least_squares(np.eye(2), np.array([np.nan, 1.0]))
    with pytest.raises(DegenerateInput):
        least_squares(np.eye(2), np.ones(3))


# ---------------------------------------------------------------- spectral norm

def test_spectral_norm_examples():
    assert solvers.spectral_norm_sq(2 * np.eye(3)) == pytest.approx(4.0, rel=1e-12)
    assert solvers.spectral_norm_sq(np.diag([3.0, 1.0])) == pytest.approx(9.0, rel=1e-12)


def test_spectral_norm_matches_eigensolver():
    A = np.random.default_rng(0).standard_normal((5, 3))
    want = np.linalg.eigvalsh(A.T @ A).max()
    assert solvers.spectral_norm_sq(A) == pytest.approx(want, rel=1e-6)


def test_spectral_norm_reports_failure_with_estimate():
    A = np.diag([1.0, 0.999999])
    with pytest.raises(NumericalError) as info:
        solvers.spectral_norm_sq(A, max_iters=3)
    assert info.value.estimate > 0.9
    # the step constant falls back to an exact norm
    assert solvers.lipschitz(A) == pytest.approx(2.0 * (1 + 1e-6), rel=1e-12)


def test_spectral_norm_rejects_zero():
    with pytest.raises(DegenerateInput):
        solvers.spectral_norm_sq(np.zeros((2, 2)))


# ---------------------------------------------------------------- ISTA

def test_ista_orthonormal_is_soft_threshold(backend):
    y = np.array([3.0, -0.05, 1.0])
    z, rep = ista(np.eye(3), y, IstaConfig(lam=0.2, max_iters=2000, tol=1e-15))
    np.testing.assert_allclose(z, soft_threshold(y, 0.1), atol=1e-6)
    assert rep.converged


def test_ista_zero_lambda_is_least_squares(backend):
    rng = np.random.default_rng(0)
    D = rng.standard_normal((8, 4))
    y = rng.standard_normal(8)
    z, _ = ista(D, y, IstaConfig(lam=0.0, max_iters=20000, tol=0.0))
    np.testing.assert_allclose(z, normal_equations(D, y), atol=1e-8)


def test_ista_large_lambda_gives_zero(backend):
    rng = np.random.default_rng(2)
    D = rng.standard_normal((6, 3))
    y = rng.standard_normal(6)
    lam = 2.0 * np.abs(D.T @ y).max() + 1.0
    z, _ = ista(D, y, IstaConfig(lam=lam))
    np.testing.assert_array_equal(z, np.zeros(3))


@pytest.mark.parametrize("seed", range(5))
def test_ista_matches_coordinate_descent(backend, seed):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((9, 5))
    y = rng.standard_normal(9)
    z, _ = ista(D, y, IstaConfig(lam=0.3, max_iters=20000, tol=1e-14))
    zc = lasso_cd(D, y, 0.3)
    assert lasso_value(D, y, z, 0.3) == pytest.approx(lasso_value(D, y, zc, 0.3), abs=1e-6)


@given(st.integers(0, 10_000), st.floats(0.0, 2.0))
def test_ista_trace_never_increases(seed, lam):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((7, 4))
    Y = rng.standard_normal((7, 3))
    _, rep = ista(D, Y, IstaConfig(lam=lam, max_iters=300, tol=1e-12))
    trace = np.array(rep.objective_trace)
    assert np.all(np.diff(trace) <= 1e-10 * np.maximum(trace[:-1], 1.0))
    assert trace[0] == pytest.approx(np.sum(Y * Y))


def test_ista_batch_equals_single_columns(backend):
    rng = np.random.default_rng(3)
    D = rng.standard_normal((10, 6))
    Y = rng.standard_normal((10, 17))
    cfg = IstaConfig(lam=0.25)
    Z, _ = ista(D, Y, cfg)
    for j in range(Y.shape[1]):
        z, _ = ista(D, Y[:, j], cfg)
        np.testing.assert_array_equal(Z[:, j], z)


def test_ista_warm_start_trace_begins_at_start_point():
    rng = np.random.default_rng(4)
    D = rng.standard_normal((5, 3))
    y = rng.standard_normal(5)
    z0 = rng.standard_normal(3)
    _, rep = ista(D, y, IstaConfig(lam=0.1), Z0=z0[:, None])
    assert rep.objective_trace[0] == pytest.approx(solvers.lasso_objective(D, y[:, None], z0[:, None], 0.1))


def test_ista_config_validation():
    for bad in (dict(lam=-1), dict(max_iters=0), dict(tol=-1)):
        with pytest.raises(ValueError):
            IstaConfig(**bad)


def test_ista_errors():
    with pytest.raises(DegenerateInput):
        ista(np.zeros((3, 2)), np.ones(3))
    with pytest.raises(DegenerateInput):
        ista(np.eye(3), np.ones(3), Z0=np.zeros((2, 1)))
    with pytest.raises(NumericalError):
        ista(np.eye(2), np.array([np.inf, 0.0]))


# ---------------------------------------------------------------- IRLS

def test_irls_median_of_scalar_samples(backend):
    y = np.array([1.0, 2.0, 2.0, 3.0, 100.0])
    z = irls_l1(np.ones((5, 1)), y)
    assert z[0] == pytest.approx(2.0, abs=1e-5)


@pytest.mark.parametrize("seed", range(4))
def test_irls_matches_linear_program(backend, seed):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((12, 3))
    y = rng.standard_normal(12)
    y[rng.choice(12, 2, replace=False)] += 8.0
    z = irls_l1(D, y)
    _, best = l1_regression_lp(D, y)
    assert np.abs(y - D @ z).sum() == pytest.approx(best, abs=1e-3)


def test_irls_exact_fit_and_zero(backend):
    rng = np.random.default_rng(5)
    D = rng.standard_normal((10, 4))
    z_true = rng.standard_normal(4)
    np.testing.assert_allclose(irls_l1(D, D @ z_true), z_true, atol=1e-6)
    np.testing.assert_array_equal(irls_l1(D, np.zeros(10)), np.zeros(4))


@given(st.integers(0, 10_000))
def test_irls_never_worse_than_least_squares(seed):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((9, 3))
    y = rng.standard_normal(9) + 5.0 * (rng.random(9) < 0.2)
    z = irls_l1(D, y)
    z_ls = least_squares(D, y)
    assert np.abs(y - D @ z).sum() <= np.abs(y - D @ z_ls).sum() + 1e-12


def test_irls_batch_equals_single_columns(backend):
    rng = np.random.default_rng(6)
    D = rng.standard_normal((15, 5))
    Y = rng.standard_normal((15, 11))
    Z = irls_l1(D, Y)
    for j in range(Y.shape[1]):
        np.testing.assert_array_equal(Z[:, j], irls_l1(D, Y[:, j]))


def test_irls_warns_when_underdetermined():
    with pytest.warns(RuntimeWarning, match="fewer rows"):
        irls_l1(np.random.default_rng(0).standard_normal((2, 3)), np.ones(2))


def test_irls_errors():
    with pytest.raises(DegenerateInput):
        irls_l1(np.zeros((3, 2)), np.ones(3))
    with pytest.raises(ValueError):
        irls_l1(np.eye(2), np.ones(2), eps=0.0)
