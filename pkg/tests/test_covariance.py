import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlmcmc.covariance import MaternParams, covariance_matrix, matern_eval


def bessel_matern(sigma2, lam, nu, r):
    # independent oracle: the general Bessel form evaluated in arbitrary precision
    a = mpmath.sqrt(2 * nu) * r / lam
    return float(sigma2 * 2 ** (1 - nu) / mpmath.gamma(nu) * a**nu * mpmath.besselk(nu, a))


def test_zero_distance_is_variance():
    assert matern_eval(MaternParams(1.0, 0.5, 1.5), 0.0) == 1.0
    assert matern_eval(MaternParams(2.5, 0.3, 0.8), 0.0) == 2.5


def test_exponential_case():
    p = MaternParams(1.0, 1.0, 0.5)
    assert matern_eval(p, 1.0) == pytest.approx(np.exp(-1), rel=1e-14)
    assert matern_eval(p, 1.0) == pytest.approx(bessel_matern(1, 1, 0.5 + 1e-8, 1.0), rel=1e-7)


def test_three_halves_case():
    p = MaternParams(1.0, 1.0, 1.5)
    expected = (1 + np.sqrt(3)) * np.exp(-np.sqrt(3))
    assert matern_eval(p, 1.0) == pytest.approx(expected, rel=1e-14)
    assert matern_eval(p, 1.0) == pytest.approx(0.4834, abs=1e-4)
    assert matern_eval(p, 1.0) == pytest.approx(bessel_matern(1, 1, 1.5, 1.0), rel=1e-12)


@pytest.mark.parametrize("nu", [0.7, 1.2, 2.5, 3.3])
def test_general_nu_matches_bessel_oracle(nu):
    p = MaternParams(1.3, 0.4, nu)
    for r in [1e-3, 0.1, 0.5, 2.0]:
        assert matern_eval(p, r) == pytest.approx(bessel_matern(1.3, 0.4, nu, r), rel=1e-10)


def test_domain_errors():
    p = MaternParams()
    with pytest.raises(ValueError):
        matern_eval(p, np.nan)
    with pytest.raises(ValueError):
        matern_eval(p, -1.0)
    with pytest.raises(ValueError):
        MaternParams(sigma2=-1.0)
    with pytest.raises(ValueError):
        covariance_matrix(p, np.zeros((0, 2)), np.zeros((1, 2)))


def test_matrix_examples():
    p = MaternParams(2.0, 0.5, 1.5)
    assert covariance_matrix(p, [[0.3, 0.4]], [[0.3, 0.4]]).tolist() == [[2.0]]
    assert np.all(covariance_matrix(p, [[1, 1], [1, 1]], [[1, 1], [1, 1]]) == 2.0)
    q = MaternParams(1.0, 0.5, 0.5)
    pts = np.array([[0, 0], [0.5, 0], [1.0, 0]])
    C = covariance_matrix(q, pts, pts)
    e1, e2 = np.exp(-1), np.exp(-2)
    np.testing.assert_allclose(C, [[1, e1, e2], [e1, 1, e1], [e2, e1, 1]], rtol=1e-14)


def test_monotone_decay(matern):
    r = np.linspace(0, 5, 2001)
    c = matern_eval(matern, r)
    assert np.all(np.diff(c) <= 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 200), st.integers(0, 2**31 - 1))
def test_psd_and_symmetric(n, seed):
    p = MaternParams(1.0, 0.5, 1.5)
    pts = np.random.default_rng(seed).uniform([0, 0], [4, 1], size=(n, 2))
    C = covariance_matrix(p, pts, pts)
    assert np.array_equal(C, C.T)
    assert np.linalg.eigvalsh(C).min() >= -1e-8
