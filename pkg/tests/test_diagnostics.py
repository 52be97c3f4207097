import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from conftest import within_se
from laplace_audit import (KlEstimate, RngStream, estimate_klvar, estimate_lsi, estimate_var_elbo,
                           fit_laplace, gaussian_target, generate_logistic_data, klvar_plus_lsi,
                           kl_direct, logistic_target, quartic_target_1d, radial_quartic_target,
                           sample_deltas, varelbo_plus_lsi)
from laplace_audit.diagnostics import batch_means_se, combine_klvar_lsi
from laplace_audit.targets import AffineTarget


def _abs_normal_moment(k):
    # independent oracle for E|Z|^k
    val, _ = integrate.quad(lambda z: 2 * z**k * norm.pdf(z), 0, np.inf, epsabs=1e-14, epsrel=1e-12)
    return val


@pytest.fixture(scope="module")
def gauss_st():
    H = np.array([[2.0, 0.3, 0.0], [0.3, 1.5, 0.1], [0.0, 0.1, 1.0]])
    return fit_laplace(gaussian_target(np.array([0.2, -0.1, 0.4]), H))[1]


def test_gaussian_all_zero(gauss_st):
    assert gauss_st.exact
    assert estimate_klvar(gauss_st, 2000, RngStream(1)).value == 0.0
    assert estimate_lsi(gauss_st, 2000, RngStream(1)).value == 0.0
    assert estimate_var_elbo(gauss_st, 200, 20, RngStream(1)).value == 0.0
    assert klvar_plus_lsi(gauss_st, 2000, RngStream(1)).value == 0.0
    assert varelbo_plus_lsi(gauss_st, 200, 20, RngStream(1)).value == 0.0


@pytest.mark.parametrize("eps", [1e-4, 1e-3])
def test_quartic_klvar_scaling(eps):
    # delta = eps x^4: Var = eps^2 (E x^8 - (E x^4)^2) = 96 eps^2, half is 48 eps^2
    _, st = fit_laplace(quartic_target_1d(eps), init=np.array([0.5]))
    est = estimate_klvar(st, 200_000, RngStream(2))
    assert within_se(est.value, 48 * eps**2, est.std_error)
    assert within_se(est.value / eps**2, 48.0, est.std_error / eps**2)


def test_quartic_lsi_reduction():
    eps = 1e-3
    _, st = fit_laplace(quartic_target_1d(eps), init=np.array([0.5]))
    est = estimate_lsi(st, 200_000, RngStream(3))
    # integrand 16 eps^2 r^(22/3), divided by 2 p^(2/3)
    exact = 8 * eps**2 * _abs_normal_moment(22 / 3)
    assert within_se(est.value, exact, est.std_error)


def test_logistic_klvar_self_consistency():
    _, st = fit_laplace(logistic_target(generate_logistic_data(1000, 10, 4)))
    a = estimate_klvar(st, 50_000, RngStream(10))
    b = estimate_klvar(st, 50_000, RngStream(11))
    assert abs(a.value - b.value) <= 3 * np.hypot(a.std_error, b.std_error)


def _lsi_over_klvar(n, p):
    _, st = fit_laplace(logistic_target(generate_logistic_data(n, p, 1)), init=np.full(p, 1 / np.sqrt(p)))
    return estimate_lsi(st, 20_000, RngStream(2)).value / estimate_klvar(st, 20_000, RngStream(1)).value


def test_lsi_negligible_at_large_p():
    # same n/p; the LSI share shrinks as p grows
    small, large = _lsi_over_klvar(100, 10), _lsi_over_klvar(1000, 100)
    assert large < 0.25
    assert large < small / 3


def test_var_elbo_radial_is_zero():
    _, st = fit_laplace(radial_quartic_target(3, 0.01), init=np.full(3, 0.2))
    est = estimate_var_elbo(st, 2000, 100, RngStream(5))
    assert est.value <= 3 * est.std_error + 1e-15


def test_var_elbo_below_klvar(logistic_10_100):
    st = logistic_10_100[3]
    ve = estimate_var_elbo(st, 2000, 100, RngStream(6))
    kv = estimate_klvar(st, 50_000, RngStream(7))
    assert ve.value <= kv.value + 3 * np.hypot(ve.std_error, kv.std_error)


def test_var_elbo_corrections_ordered(logistic_10_100):
    st = logistic_10_100[3]
    vals = {c: estimate_var_elbo(st, 500, 20, RngStream(8), correction=c).value
            for c in ("none", "interaction")}
    # the correction removes a nonnegative inner-noise term
    assert vals["interaction"] <= vals["none"]
    with pytest.raises(ValueError):
        estimate_var_elbo(st, 500, 1, RngStream(8))
    with pytest.raises(ValueError):
        estimate_var_elbo(st, 500, 20, RngStream(8), correction="bogus")


def test_combinations(logistic_10_100):
    st = logistic_10_100[3]
    comb = klvar_plus_lsi(st, 20_000, RngStream(9))
    kv = estimate_klvar(st, 20_000, RngStream(9).child(1))
    assert comb.value >= kv.value
    assert comb.estimator_name == "klvar_plus_lsi"
    vp = varelbo_plus_lsi(st, 300, 20, RngStream(9))
    assert vp.value >= 0 and vp.estimator_name == "varelbo_plus_lsi"


@pytest.mark.parametrize("n", [30, 100, 300])
def test_klvar_plus_lsi_upper_bounds_kl(n):
    p = 10
    _, st = fit_laplace(logistic_target(generate_logistic_data(n, p, 1)), init=np.full(p, 1 / np.sqrt(p)))
    up = klvar_plus_lsi(st, 50_000, RngStream(1))
    kl = kl_direct(st, 50_000, RngStream(2))
    ratio = up.value / kl.value
    rel = np.hypot(up.std_error / up.value, kl.std_error / kl.value)
    assert ratio >= 1 - 3 * rel


def test_invariance_to_constant_and_diagonal_affine():
    base = logistic_target(generate_logistic_data(80, 3, 5))
    _, st0 = fit_laplace(base)
    _, st1 = fit_laplace(AffineTarget(base, np.diag([3.0, 0.2, 1.0]), np.array([0.5, 0.0, -1.0]), 17.0))
    for fn in (estimate_klvar, estimate_lsi):
        a, b = fn(st0, 5000, RngStream(3)), fn(st1, 5000, RngStream(3))
        assert b.value == pytest.approx(a.value, rel=1e-8)


def test_non_finite_delta_is_reported():
    class Bad(quartic_target_1d(0.1).__class__):
        def phi_batch(self, thetas):
            out = super().phi_batch(thetas)
            out[np.abs(np.atleast_2d(thetas)[:, 0]) > 2.5] = np.nan
            return out

    _, st = fit_laplace(Bad(0.1), init=np.array([0.3]))
    with pytest.raises(FloatingPointError, match="draw"):
        sample_deltas(st, 5000, RngStream(1))


def test_kl_estimate_validation():
    with pytest.raises(ValueError):
        KlEstimate(-0.1, 0.0, 10, "klvar")
    with pytest.raises(ValueError):
        KlEstimate(0.1, -1.0, 10, "klvar")
    with pytest.raises(ValueError):
        KlEstimate(0.1, 0.1, 1, "klvar")
    KlEstimate(-0.01, 0.01, 10, "kl_chain")
    e = combine_klvar_lsi(KlEstimate(0.1, 0.03, 10, "klvar"), KlEstimate(0.2, 0.04, 10, "lsi"))
    assert e.value == pytest.approx(0.3) and e.std_error == pytest.approx(0.05)


def test_batch_means_se_iid():
    x = np.random.default_rng(0).normal(size=100_000)
    se = batch_means_se(x)
    assert 0.7 / np.sqrt(len(x)) < se < 1.3 / np.sqrt(len(x))


def test_minimum_sizes(gauss_st):
    with pytest.raises(ValueError):
        estimate_klvar(gauss_st, 50, RngStream(0))
    with pytest.raises(ValueError):
        estimate_lsi(gauss_st, 50, RngStream(0))
