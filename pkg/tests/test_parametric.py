import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sievecov import DomainError
from sievecov.parametric import (
    ParametricCovariance,
    bessel_k,
    eval_parametric,
    from_unconstrained,
    matern_correlation,
    semivariogram_of,
    to_unconstrained,
)

SETTING5 = ParametricCovariance("LinearMatern", (1.0, 1.25, 3 * math.sqrt(2) / 4, 1.0, 2.0))


def test_bessel_half_integer_closed_form():
    assert bessel_k(0.5, 1.0) == pytest.approx(math.sqrt(math.pi / 2) * math.exp(-1), rel=1e-12)
    assert bessel_k(0.5, 1.0) == pytest.approx(0.461068504, abs=1e-9)


def test_bessel_k1_at_one():
    assert bessel_k(1.0, 1.0) == pytest.approx(0.601907230, abs=1e-9)


def test_bessel_asymptotic_envelope():
    x = 80.0
    ratio = bessel_k(1.0, x) / (math.sqrt(math.pi / (2 * x)) * math.exp(-x))
    assert abs(ratio - 1) < 0.01


@given(st.floats(0.01, 5.0), st.floats(1e-6, 100.0))
def test_bessel_against_mpmath(nu, x):
    mpmath.mp.dps = 30
    ref = float(mpmath.besselk(nu, x))
    assert bessel_k(nu, x) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("x", [0.0, -1.0])
def test_bessel_domain(x):
    with pytest.raises(DomainError):
        bessel_k(1.0, x)


def test_family_examples():
    assert eval_parametric(ParametricCovariance("Gaussian", (1, 3)), 0.0) == 1.0
    assert eval_parametric(ParametricCovariance("Cauchy", (1, 0.8)), 0.8) == pytest.approx(2**-0.5, rel=1e-12)
    assert eval_parametric(ParametricCovariance("Matern", (1, 1, 0.5)), 1.0) == pytest.approx(math.exp(-1), rel=1e-12)


def test_gencauchy_formula():
    model = ParametricCovariance("GenCauchy", (2.0, 0.3, 0.5, 2.0))
    h = 0.7
    assert eval_parametric(model, h) == pytest.approx(2.0 * (1 + (h / 0.3) ** 2) ** (-0.25), rel=1e-14)


@pytest.mark.parametrize("nu", [1.0, 1.7, 2.0])
def test_matern_continuity_at_origin(nu):
    # 1 - R(h) is O(h^2 log h) or smaller once nu >= 1
    assert matern_correlation(1e-6, 1.0, nu) == pytest.approx(1.0, abs=1e-8)
    assert matern_correlation(0.0, 1.0, nu) == 1.0


def test_rough_matern_near_origin_matches_mpmath():
    # for nu < 1 the approach to 1 is slow (order h^(2 nu)); check the value itself
    mpmath.mp.dps = 30
    x = mpmath.mpf("1e-6")
    ref = float(x**0.3 * mpmath.besselk(0.3, x) / (2 ** (0.3 - 1) * mpmath.gamma(0.3)))
    assert float(matern_correlation(1e-6, 1.0, 0.3)) == pytest.approx(ref, rel=1e-10)


def test_matern_against_mpmath():
    mpmath.mp.dps = 30
    for nu, rho, h in [(1.0, 1.25, 0.4), (2.0, 1.06, 3.0), (0.7, 2.0, 10.0)]:
        x = mpmath.mpf(h) / rho
        ref = float(x**nu * mpmath.besselk(nu, x) / (2 ** (nu - 1) * mpmath.gamma(nu)))
        assert matern_correlation(h, rho, nu) == pytest.approx(ref, rel=1e-10)


def test_nugget_at_origin_only():
    model = ParametricCovariance("Gaussian", (2.0, 1.0), nugget=0.5)
    assert eval_parametric(model, 0.0) == pytest.approx(2.5)
    assert eval_parametric(model, 1e-12) == pytest.approx(2.0)


def test_linear_matern_is_exact_mixture():
    h = np.linspace(0, 12, 50)
    a = matern_correlation(h, 1.25, 1.0)
    b = matern_correlation(h, 3 * math.sqrt(2) / 4, 2.0)
    assert np.allclose(SETTING5.correlation(h), 0.5 * a + 0.5 * b, rtol=0, atol=1e-15)


def test_semivariogram():
    gauss = ParametricCovariance("Gaussian", (1, 3))
    assert semivariogram_of(gauss, 0.0) == 0.0
    assert semivariogram_of(gauss, 1e4) == pytest.approx(1.0)
    h = np.array([0.5, 2.0, 7.0])
    expected = 1 - 0.5 * matern_correlation(h, 1.25, 1) - 0.5 * matern_correlation(h, 3 * math.sqrt(2) / 4, 2)
    assert np.allclose(semivariogram_of(SETTING5, h), expected, atol=1e-15)


def test_semivariogram_includes_nugget():
    model = ParametricCovariance("Cauchy", (1.0, 1.0), nugget=0.2)
    assert semivariogram_of(model, 1e-9) == pytest.approx(0.2, abs=1e-9)


@pytest.mark.parametrize(
    "family,params",
    [
        ("Matern", (1, 1, 1)),
        ("Cauchy", (1, 0.8)),
        ("Gaussian", (1, 3)),
        ("GenCauchy", (1, 0.3, 0.5, 2)),
        ("LinearMatern", SETTING5.params),
    ],
)
def test_variance_and_monotonicity(family, params):
    model = ParametricCovariance(family, params, nugget=0.1)
    assert eval_parametric(model, 0.0) == pytest.approx(params[0] + 0.1)
    vals = eval_parametric(model, np.linspace(1e-3, 20, 300))
    assert np.all(np.diff(vals) <= 1e-15)


@pytest.mark.parametrize(
    "family,params",
    [
        ("Matern", (1, 1)),
        ("Matern", (-1, 1, 1)),
        ("Cauchy", (1, 0)),
        ("GenCauchy", (1, 1, 1, 2.5)),
        ("GenCauchy", (1, 1, 0, 1)),
        ("Spherical", (1, 1)),
    ],
)
def test_invalid_params(family, params):
    with pytest.raises(DomainError):
        ParametricCovariance(family, params)


def test_roundtrip_dict():
    model = ParametricCovariance("GenCauchy", (1.0, 0.3, 0.5, 2.0), nugget=0.25)
    assert ParametricCovariance.from_dict(model.to_dict()) == model


@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(0.01, 10), st.floats(0.01, 1.99))
def test_unconstrained_roundtrip(s2, rho, k1, k2):
    params = (s2, rho, k1, k2)
    back = from_unconstrained("GenCauchy", to_unconstrained("GenCauchy", params))
    assert np.allclose(back, params, rtol=1e-9)
