import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st_

from laplace_audit import (RngStream, SymTensor3, SymTensor4, compute_tensors, estimate_klvar,
                           fit_laplace, gaussian_target, generate_logistic_data, logistic_target,
                           quartic_target_1d, taylor_klvar, taylor_lsi)
from laplace_audit.taylor import symmetrize, taylor_polynomial, tensor_sums


def random_tensors(p, rng):
    return symmetrize(rng.normal(size=(p,) * 3)), symmetrize(rng.normal(size=(p,) * 4))


def hermite_variance(T3, T4):
    """Exact Gaussian variance of the Taylor polynomial by tensor Gauss-Hermite.

    Five nodes per axis integrate polynomials up to degree 9 exactly, enough
    for the square of a quartic.
    """
    p = T3.shape[0]
    z, w = np.polynomial.hermite_e.hermegauss(5)
    w = w / w.sum()
    pts = np.array(list(itertools.product(z, repeat=p)))
    wts = np.prod(np.array(list(itertools.product(w, repeat=p))), axis=1)
    f = taylor_polynomial(T3, T4, pts)
    m = wts @ f
    return float(wts @ (f - m) ** 2)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_klvar_closed_form_matches_hermite(p):
    rng = np.random.default_rng(p)
    for _ in range(5):
        T3, T4 = random_tensors(p, rng)
        assert taylor_klvar(T3, T4) == pytest.approx(hermite_variance(T3, T4), rel=1e-10)


def test_one_dimensional_examples():
    t, c = 1.7, -0.9
    z3, z4 = np.zeros((1, 1, 1)), np.zeros((1, 1, 1, 1))
    assert taylor_klvar(np.full((1, 1, 1), t), z4) == pytest.approx(5 * t * t / 12)
    assert taylor_klvar(np.full((1, 1, 1), t), z4) == pytest.approx((t / 6) ** 2 * 15)
    assert taylor_klvar(z3, np.full((1,) * 4, c)) == pytest.approx(c * c / 6)
    assert taylor_klvar(z3, np.full((1,) * 4, c)) == pytest.approx((c / 24) ** 2 * (105 - 9))
    assert taylor_lsi(np.full((1, 1, 1), t), z4) == pytest.approx(15 * t * t / 8)
    assert taylor_lsi(z3, np.full((1,) * 4, c)) == pytest.approx(35 * c * c / 24)
    assert taylor_klvar(z3, z4) == 0.0 and taylor_lsi(z3, z4) == 0.0


@settings(max_examples=40, deadline=None)
@given(st_.integers(1, 4), st_.integers(0, 2**31 - 1))
def test_closed_forms_nonnegative(p, seed):
    T3, T4 = random_tensors(p, np.random.default_rng(seed))
    assert taylor_klvar(T3, T4) >= 0
    assert taylor_lsi(T3, T4) >= 0


def test_partial_traces_reused():
    T3, T4 = random_tensors(3, np.random.default_rng(0))
    s = tensor_sums(SymTensor3(T3), SymTensor4(T4))
    assert s.t3_trace_sq == pytest.approx(np.sum(np.einsum("ijj->i", T3) ** 2))
    assert s.t4_full_trace == pytest.approx(np.einsum("iijj->", T4))


def test_compute_tensors_gaussian_and_quartic():
    _, st = fit_laplace(gaussian_target(np.zeros(2), np.diag([2.0, 3.0])))
    T3, T4 = compute_tensors(st)
    assert not np.any(T3.data) and not np.any(T4.data)
    eps = 0.02
    _, st = fit_laplace(quartic_target_1d(eps), init=np.array([1.0]))
    T3, T4 = compute_tensors(st)
    assert T3.data[0, 0, 0] == 0.0
    assert T4.data[0, 0, 0, 0] == pytest.approx(24 * eps)


def test_logistic_analytic_vs_finite_difference():
    p = 5
    _, st = fit_laplace(logistic_target(generate_logistic_data(200, p, 3)), init=np.full(p, 1 / np.sqrt(p)))
    a3, a4 = compute_tensors(st, "analytic")
    f3, f4 = compute_tensors(st, "finite_diff")
    assert np.max(np.abs(a3.data - f3.data)) < 1e-3
    assert np.max(np.abs(a4.data - f4.data)) < 1e-3
    # analytic tensors are symmetric
    assert np.allclose(a4.data, np.transpose(a4.data, (2, 0, 3, 1)))


def test_taylor_matches_sampled_klvar_on_quartic():
    # delta is exactly the quartic Taylor term here; the closed form is the full variance
    eps = 1e-3
    _, st = fit_laplace(quartic_target_1d(eps), init=np.array([0.5]))
    closed = taylor_klvar(*compute_tensors(st))
    est = estimate_klvar(st, 200_000, RngStream(4))
    assert abs(closed / 2 - est.value) <= 3 * est.std_error


def test_guard_and_validation():
    _, st = fit_laplace(gaussian_target(np.zeros(3), np.eye(3)))
    with pytest.raises(ValueError, match="sampling estimators"):
        compute_tensors(st, max_dim=2)
    with pytest.raises(ValueError):
        compute_tensors(st, method="exact")
    with pytest.raises(ValueError):
        SymTensor3(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        taylor_klvar(np.zeros((2, 2, 2)), np.zeros((3, 3, 3, 3)))
