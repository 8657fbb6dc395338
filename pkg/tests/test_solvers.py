import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import nnls

from builders import cd_lasso, lasso_value
from geninvert.model import ActivationSpec, make_rng, relu
from geninvert.solvers import (
    SmoothComposite,
    SolverConfig,
    accelerated_projected_descent,
    activation_fit_objective,
    admm_kkt_residuals,
    fista_momentum,
    lasso,
    lasso_optimality_residual,
    least_squares_objective,
    linearized_admm,
    operator_norm_bound,
    soft_threshold,
)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolverConfig(tol_opt=0.0)
    with pytest.raises(ValueError):
        SolverConfig(safety=0.9)
    with pytest.raises(ValueError):
        SolverConfig(step_rule="fixed")


def test_momentum_scalar():
    assert fista_momentum(1.0) == pytest.approx((1 + math.sqrt(5)) / 2)


def test_soft_threshold():
    assert np.allclose(soft_threshold(np.array([2.0, -0.05, -1.0]), 0.1), [1.9, 0.0, -0.9])


def _quadratic(a):
    return least_squares_objective(np.eye(len(a)), np.asarray(a, dtype=float))


def test_projected_descent_feasible_minimum():
    x, rep = accelerated_projected_descent(_quadratic([1.0, 2.0]), np.zeros(2))
    assert rep.converged and np.allclose(x, [1.0, 2.0], atol=1e-9)


def test_projected_descent_projects_minimum():
    x, rep = accelerated_projected_descent(_quadratic([-1.0, 3.0]), np.zeros(2))
    assert rep.converged and np.allclose(x, [0.0, 3.0], atol=1e-9)


def test_fixed_step_range_enforced():
    obj = _quadratic([1.0])
    with pytest.raises(ValueError, match="outside"):
        accelerated_projected_descent(obj, np.zeros(1), cfg=SolverConfig(step_rule="fixed", step=2.5))
    x, rep = accelerated_projected_descent(obj, np.zeros(1), cfg=SolverConfig(step_rule="fixed", step=0.5))
    assert rep.converged and x[0] == pytest.approx(1.0)


@pytest.mark.parametrize("restart", [True, False])
def test_projected_descent_never_worse_than_start(restart):
    rng = make_rng(3)
    W = rng.standard_normal((30, 20)) / math.sqrt(30)
    y = np.tanh(W @ relu(rng.standard_normal(20)))
    obj = activation_fit_objective(W, y, ActivationSpec("tanh"))
    x, rep = accelerated_projected_descent(obj, np.zeros(20), cfg=SolverConfig(restart=restart))
    assert rep.objective <= obj.value_and_grad(np.zeros(20))[0]
    assert np.all(x >= 0)


def test_activation_fit_gradient_matches_differences():
    rng = make_rng(5)
    W = rng.standard_normal((12, 6))
    y = np.tanh(rng.standard_normal(12))
    obj = activation_fit_objective(W, y, ActivationSpec("tanh"))
    x = rng.standard_normal(6) * 0.3
    _, g = obj.value_and_grad(x)
    h = 1e-6
    fd = np.array([(obj.value_and_grad(x + h * e)[0] - obj.value_and_grad(x - h * e)[0]) / (2 * h)
                   for e in np.eye(6)])
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_activation_fit_lipschitz_bound_holds():
    rng = make_rng(6)
    W = rng.standard_normal((15, 5))
    y = np.tanh(rng.standard_normal(15))
    obj = activation_fit_objective(W, y, ActivationSpec("tanh"))
    for k in range(50):
        a, b = make_rng(7, k).standard_normal((2, 5)) * 2
        ga, gb = obj.value_and_grad(a)[1], obj.value_and_grad(b)[1]
        assert np.linalg.norm(ga - gb) <= obj.lipschitz * np.linalg.norm(a - b) + 1e-12


# --- lasso ---------------------------------------------------------------------


def test_lasso_large_lambda_gives_zero():
    rng = make_rng(1)
    W, y = rng.standard_normal((10, 6)), rng.standard_normal(10)
    lam = np.max(np.abs(W.T @ y))
    for nonneg in (False, True):
        x, rep = lasso(W, y, lam, nonneg=nonneg)
        assert rep.converged and not x.any()


def test_lasso_orthonormal_soft_threshold():
    Q, _ = np.linalg.qr(make_rng(2).standard_normal((8, 8)))
    x, rep = lasso(Q, Q @ (2.0 * np.eye(8)[0]), 0.1)
    assert rep.converged
    assert np.allclose(x, 1.9 * np.eye(8)[0], atol=1e-8)


@pytest.mark.parametrize("nonneg", [False, True])
def test_lasso_sparse_recovery(nonneg):
    rng = make_rng(4)
    W = rng.standard_normal((64, 128))
    W /= np.linalg.norm(W, axis=0)
    x_true = np.zeros(128)
    x_true[[3, 50, 99]] = [1.0, 0.5, 2.0]
    # tiny lambda on a wide matrix converges slowly; give it room
    x, rep = lasso(W, W @ x_true, 1e-8, nonneg=nonneg, cfg=SolverConfig(max_iters=200000))
    assert rep.converged
    assert np.max(np.abs(x - x_true)) < 1e-5


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), nonneg=st.booleans())
def test_lasso_certificate_and_reference(seed, nonneg):
    rng = make_rng(seed)
    W = rng.standard_normal((12, 8))
    y = rng.standard_normal(12)
    lam = 0.3
    x, rep = lasso(W, y, lam, nonneg=nonneg)
    assert rep.converged
    assert lasso_optimality_residual(W, y, lam, x, nonneg) <= 1e-9
    if nonneg:
        assert np.all(x >= 0)
    ref = cd_lasso(W, y, lam, nonneg)
    assert lasso_value(W, y, lam, x) <= lasso_value(W, y, lam, ref) + 1e-9


def test_lasso_reports_nonconvergence():
    rng = make_rng(8)
    W = rng.standard_normal((40, 60))
    x, rep = lasso(W, rng.standard_normal(40), 1e-6, cfg=SolverConfig(max_iters=3))
    assert not rep.converged and rep.iterations == 3


def test_lasso_shape_errors():
    with pytest.raises(ValueError):
        lasso(np.eye(3), np.zeros(4), 0.1)
    with pytest.raises(ValueError):
        lasso(np.eye(3), np.zeros(3), -1.0)


# --- linearized ADMM -----------------------------------------------------------


def test_admm_without_inequalities_is_nnls():
    Q, _ = np.linalg.qr(make_rng(9).standard_normal((10, 6)))
    x_true = relu(make_rng(10).standard_normal(6))
    x, a, u, rep = linearized_admm(Q, None, Q @ x_true)
    assert rep.converged and np.allclose(x, x_true, atol=1e-8)
    assert a.size == 0 and u.size == 0


@pytest.mark.parametrize("k", range(20))
def test_admm_matches_active_set_nnls(k):
    rng = make_rng(11, k)
    A = rng.standard_normal((15, 8))
    b = rng.standard_normal(15)
    x, _, _, rep = linearized_admm(A, None, b, cfg=SolverConfig(tol_opt=1e-11, tol_feas=1e-11, max_iters=100000))
    ref, _ = nnls(A, b)
    assert rep.converged
    assert np.max(np.abs(x - ref)) < 1e-6


def _midlayer(seed, n=30, rows=80):
    rng = make_rng(seed)
    W = rng.standard_normal((rows, n)) / math.sqrt(rows)
    x = relu(rng.standard_normal(n))
    v = W @ x
    S = v > 0
    return W[S], W[~S], v[S], x


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_admm_feasible_and_kkt(seed):
    A, B, b, _ = _midlayer(seed)
    x, a, u, rep = linearized_admm(A, B, b, lam=0.0, rho=1e-2)
    assert rep.converged
    assert np.all(x >= 0) and np.all(a <= 0)
    assert np.max(B @ x, initial=-np.inf) <= 1e-8
    kkt = admm_kkt_residuals(A, B, b, x, u, 0.0, 1e-2)
    assert max(kkt.values()) <= 1e-6


def test_admm_iterates_stay_in_cones():
    A, B, b, _ = _midlayer(3)
    for iters in (1, 2, 5, 17, 100):
        x, a, u, _ = linearized_admm(A, B, b, cfg=SolverConfig(max_iters=iters))
        assert np.all(x >= 0) and np.all(a <= 0)


def test_admm_latent_step_with_ridge():
    rng = make_rng(12)
    W = rng.standard_normal((20, 4))
    z = rng.standard_normal(4)
    v = W @ z
    S = v > 0
    A, B, b = W[S], W[~S], v[S]
    zh, _, u, rep = linearized_admm(A, B, b, rho=1e-2, gamma=0.0, nonneg=False)
    assert rep.converged and np.allclose(zh, z, atol=1e-7)
    # ridge pulls toward zero; zero signal gives zero
    z0, _, _, rep = linearized_admm(A, B, np.zeros(A.shape[0]), gamma=0.5, nonneg=False)
    assert rep.converged and np.allclose(z0, 0.0)
    with pytest.raises(ValueError):
        linearized_admm(A, B, b, lam=0.1, nonneg=False)


def test_admm_latent_kkt_signed():
    rng = make_rng(13)
    W = rng.standard_normal((20, 4))
    v = W @ rng.standard_normal(4)
    S = v > 0
    b = v[S] + 0.05 * rng.standard_normal(S.sum())
    z, _, u, rep = linearized_admm(W[S], W[~S], b, gamma=0.1, nonneg=False,
                                   cfg=SolverConfig(tol_opt=1e-11, tol_feas=1e-11, max_iters=200000))
    assert rep.converged
    kkt = admm_kkt_residuals(W[S], W[~S], b, z, u, 0.0, 1e-2, 0.1, nonneg=False)
    assert max(kkt.values()) <= 1e-6


# --- operator norm ---------------------------------------------------------------


def test_operator_norm_examples():
    safety = 1.01
    val, flags = operator_norm_bound(np.eye(3), np.eye(3), rho=1.0, safety=safety)
    assert 2.0 <= val <= 2.0 * safety and not flags
    val, _ = operator_norm_bound(np.diag([1.0, 2.0]), None, safety=safety)
    assert 4.0 <= val <= 4.0 * safety


def test_operator_norm_monotone_in_rho():
    rng = make_rng(14)
    A, B = rng.standard_normal((6, 5)), rng.standard_normal((9, 5))
    vals = [operator_norm_bound(A, B, rho)[0] for rho in (1e-3, 1e-2, 1e-1, 1.0, 10.0)]
    assert vals == sorted(vals)
    exact = np.linalg.eigvalsh(A.T @ A + B.T @ B)[-1]
    assert operator_norm_bound(A, B, 1.0, safety=1.0)[0] == pytest.approx(exact, rel=1e-9)


def test_composite_value_and_grad():
    W = np.array([[1.0, 2.0], [0.0, 1.0]])
    obj = SmoothComposite(lambda x: W @ x, lambda r: W.T @ r, lambda v: (0.5 * v @ v, v), 10.0)
    val, g = obj.value_and_grad(np.array([1.0, 1.0]))
    assert val == pytest.approx(5.0) and np.allclose(g, W.T @ (W @ [1.0, 1.0]))
