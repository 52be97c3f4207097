import json

import numpy as np
import pytest

from conftest import fd_jac
from laplace_audit import (ConvergenceError, LaplaceApprox, NotPositiveDefiniteError, RngStream,
                           build_laplace, find_map, fit_laplace, gaussian_target,
                           generate_logistic_data, logistic_target, mixture_target_1d,
                           quartic_target_1d, sample_std_normal, standardize)
from laplace_audit.targets import AffineTarget


def test_gaussian_map_in_one_step():
    mu0 = np.array([1.0, -2.0, 0.5])
    H = np.array([[3.0, 0.5, 0.0], [0.5, 2.0, 0.2], [0.0, 0.2, 1.0]])
    info = find_map(gaussian_target(mu0, H), init=np.array([10.0, 10.0, -7.0]), return_info=True)
    assert np.allclose(info.mu, mu0, atol=1e-12)
    assert info.n_iter == 1


def test_quartic_map_from_three():
    mu = find_map(quartic_target_1d(0.3), init=np.array([3.0]))
    assert abs(mu[0]) < 1e-9


def test_logistic_map_first_order_condition():
    t = logistic_target(generate_logistic_data(100, 10, 7))
    info = find_map(t, init=np.zeros(10), return_info=True)
    assert info.grad_norm < 1e-8
    assert np.linalg.norm(t.grad(info.mu)) < 1e-8
    # accepted iterates strictly decrease phi
    assert all(b < a for a, b in zip(info.phi_trace, info.phi_trace[1:]))


def test_find_map_errors():
    with pytest.raises(ConvergenceError):
        find_map(logistic_target(generate_logistic_data(100, 10, 7)), max_iter=1, tol=1e-15)
    # the wide mixture is not convex away from the mode
    with pytest.raises(NotPositiveDefiniteError):
        find_map(mixture_target_1d(100.0), init=np.array([5.0]))


def test_build_laplace_scalars():
    lap = build_laplace(gaussian_target(np.zeros(2), np.eye(2)), np.zeros(2))
    assert np.allclose(lap.factor, np.eye(2))
    assert lap.log_det_sigma == pytest.approx(0.0, abs=1e-15)
    lap = build_laplace(gaussian_target(np.zeros(1), np.array([[4.0]])), np.zeros(1))
    assert lap.factor[0, 0] == pytest.approx(0.5)
    assert lap.log_det_sigma == pytest.approx(-np.log(4.0))


def test_logistic_laplace_identities(logistic_10_100):
    _, target, lap, st = logistic_10_100
    assert np.allclose(lap.precision @ lap.covariance, np.eye(10), atol=1e-8)
    assert np.allclose(lap.factor @ lap.factor.T, lap.covariance, atol=1e-12)
    assert np.allclose(np.tril(lap.factor), lap.factor)
    assert np.allclose(st.hess_tilde(np.zeros(10)), np.eye(10), atol=1e-6)
    assert lap.log_det_sigma == pytest.approx(-np.linalg.slogdet(lap.precision)[1], rel=1e-12)


def test_not_positive_definite_at_nonmode():
    t = mixture_target_1d(100.0)
    with pytest.raises(NotPositiveDefiniteError):
        build_laplace(t, np.array([5.0]))


def test_json_round_trip(logistic_10_100):
    _, _, lap, _ = logistic_10_100
    doc = json.loads(lap.to_json())
    assert doc["precision"]["layout"] == "row-major"
    assert doc["precision"]["rows"] == 10 and len(doc["precision"]["data"]) == 100
    back = LaplaceApprox.from_json(lap.to_json())
    assert np.array_equal(back.mu, lap.mu)
    assert np.array_equal(back.factor, lap.factor)
    assert back.log_det_sigma == lap.log_det_sigma


def test_standardized_gaussian_delta_is_zero():
    H = np.array([[2.0, 0.4], [0.4, 1.0]])
    _, st = fit_laplace(gaussian_target(np.array([1.0, 2.0]), H))
    grid = np.array([[a, b] for a in np.linspace(-3, 3, 7) for b in np.linspace(-3, 3, 7)])
    assert np.max(np.abs(st.delta(grid))) < 1e-12


def test_standardized_quartic_delta():
    eps = 0.01
    _, st = fit_laplace(quartic_target_1d(eps), init=np.array([1.0]))
    x = np.linspace(-4, 4, 17)[:, None]
    assert np.allclose(st.delta(x), eps * x[:, 0] ** 4, rtol=1e-12, atol=1e-15)
    assert st.delta(np.zeros(1)) == 0.0


def test_standardized_derivatives_consistent(logistic_10_100):
    _, _, _, st = logistic_10_100
    x = np.random.default_rng(1).normal(size=10)
    assert np.allclose(st.hess_tilde(x), fd_jac(st.grad_tilde, x), atol=1e-5)
    assert np.allclose(st.to_tilde(st.to_theta(x)), x)
    batch = np.stack([x, 2 * x])
    assert np.allclose(st.grad_tilde(batch)[1], st.grad_tilde(2 * x))
    assert st.delta(batch)[0] == pytest.approx(st.delta(x))


def test_affine_equivariance_diagonal():
    base = logistic_target(generate_logistic_data(60, 4, 2))
    A = np.diag([2.0, 0.5, 3.0, 1.25])
    b = np.array([0.1, -0.3, 0.2, 0.0])
    # theta -> phi(A theta + b): same density in other coordinates
    _, st0 = fit_laplace(base)
    _, st1 = fit_laplace(AffineTarget(base, A, b, const=3.0))
    x = sample_std_normal(4, RngStream(4, 0), size=500)
    # with A diagonal positive, the Cholesky factors map to each other exactly
    assert np.allclose(st0.delta(x), st1.delta(x), atol=1e-10)
