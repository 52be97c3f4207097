import numpy as np
import pytest
from hypothesis import given, settings, strategies as st_
from scipy import integrate
from scipy.stats import chi

from laplace_audit import (RngStream, SphericalPoint, chi_moment, compose, decompose, sample_chi,
                           sample_sphere, sample_std_normal)
from laplace_audit.geometry import CHI_GAMMA_THRESHOLD, as_stream, chunked_normals


def test_decompose_examples():
    pt = decompose(np.array([3.0, 4.0]))
    assert pt.r == 5.0
    assert np.allclose(pt.e, [0.6, 0.8])
    u = np.array([0.0, 1.0, 0.0])
    pt = decompose(u)
    assert pt.r == 1.0 and np.array_equal(pt.e, u)
    with pytest.raises(ValueError):
        decompose(np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st_.lists(st_.floats(-1e3, 1e3), min_size=7, max_size=7).filter(lambda v: np.linalg.norm(v) > 1e-6))
def test_round_trip(v):
    x = np.array(v)
    back = compose(decompose(x))
    assert np.allclose(back, x, rtol=1e-12, atol=1e-12 * np.linalg.norm(x))
    assert isinstance(decompose(x), SphericalPoint)


def _chi_moment_quad(p, k):
    # independent oracle: integrate r^k against the chi_p density
    val, _ = integrate.quad(lambda r: r**k * chi.pdf(r, p), 0, np.inf, epsabs=1e-13, epsrel=1e-12)
    return val


@pytest.mark.parametrize("p", [1, 2, 5, 20])
@pytest.mark.parametrize("k", [1, 2, 3, 4 / 3, 16 / 3])
def test_chi_moment_matches_quadrature(p, k):
    assert chi_moment(p, k) == pytest.approx(_chi_moment_quad(p, k), rel=1e-9)


def test_chi_moment_examples():
    assert chi_moment(3, 2) == pytest.approx(3.0, rel=1e-14)
    assert chi_moment(1, 1) == pytest.approx(0.797885, abs=1e-6)
    assert 0.99 <= chi_moment(100, 2) / 100 <= 1.01
    assert chi_moment(7, 0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        chi_moment(0, 1)
    with pytest.raises(ValueError):
        chi_moment(3, -1)


@pytest.mark.parametrize("p", [1, 2, 5, 20, 80])
def test_sample_chi_moments(p):
    # both sampling routes: Gaussian norm below the threshold, Gamma above
    r = sample_chi(p, RngStream(3, p), size=100_000)
    for k in (1, 2, 4 / 3):
        x = r**k
        assert abs(x.mean() - chi_moment(p, k)) <= 3 * x.std(ddof=1) / np.sqrt(len(x))
    assert (p > CHI_GAMMA_THRESHOLD) == (p == 80)


def test_sample_chi_five():
    r = sample_chi(5, RngStream(1, 0), size=100_000)
    assert abs(r.mean() - chi_moment(5, 1)) <= 3 * r.std(ddof=1) / np.sqrt(len(r))


def test_sphere_is_centered_and_unit():
    e = sample_sphere(3, RngStream(2, 0), size=50_000)
    assert np.allclose(np.linalg.norm(e, axis=1), 1.0)
    se = e.std(axis=0, ddof=1) / np.sqrt(len(e))
    assert np.all(np.abs(e.mean(axis=0)) <= 3 * se)


def test_radius_and_direction_independent():
    x = sample_std_normal(4, RngStream(9, 1), size=40_000)
    r = np.linalg.norm(x, axis=1)
    e = x / r[:, None]
    for i in range(4):
        c = np.corrcoef(r, e[:, i])[0, 1]
        assert abs(c) <= 3 / np.sqrt(len(r))


def test_stream_determinism():
    a = RngStream(42, 7).standard_normal(1000)
    b = RngStream(42, 7).standard_normal(1000)
    assert a.tobytes() == b.tobytes()
    c = RngStream(42, 8).standard_normal(1000)
    assert not np.array_equal(a, c)
    assert RngStream(5, 1).child(3).uniform(4).tobytes() == RngStream(5, 1).child(3).uniform(4).tobytes()
    assert not np.array_equal(RngStream(5, 1).child(3).uniform(4), RngStream(5, 1).child(4).uniform(4))


def test_chunked_normals_independent_of_consumption():
    blocks = list(chunked_normals(3, 25_000, RngStream(1, 2), chunk=10_000))
    assert [s for s, _ in blocks] == [0, 10_000, 20_000]
    assert sum(len(b) for _, b in blocks) == 25_000
    again = list(chunked_normals(3, 25_000, RngStream(1, 2), chunk=10_000))
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(blocks, again))


def test_as_stream():
    s = RngStream(1, 2)
    assert as_stream(s) is s
    assert as_stream(None).seed == 0
    assert as_stream(7).seed == 7
    with pytest.raises(TypeError):
        as_stream("seed")


def test_shape_validation():
    assert sample_std_normal(3, RngStream(0)).shape == (3,)
    assert sample_std_normal(3, RngStream(0), size=5).shape == (5, 3)
    with pytest.raises(ValueError):
        sample_std_normal(0, RngStream(0))
    with pytest.raises(ValueError):
        sample_sphere(0, RngStream(0))
