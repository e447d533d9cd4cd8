import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from sievecov import DomainError
from sievecov.basis import (
    SieveCovariance,
    basis_eval,
    basis_eval_beta,
    basis_matrix,
    cov_eval,
    g_density,
    lift_bernstein_coefficients,
    lift_weights,
    spectral_density_f,
)


def beta_oracle(k, m, h):
    """High-precision Beta-function ratio."""
    mpmath.mp.dps = 40
    return float(mpmath.beta(k + mpmath.mpf(h) ** 2, m - k + 1) / mpmath.beta(k, m - k + 1))


def simplex(draw_floats):
    w = np.abs(np.asarray(draw_floats, dtype=float)) + 1e-3
    return w / w.sum()


# --- basis_eval ----------------------------------------------------------------


def test_origin_is_one():
    assert basis_eval(1, 5, 0.0) == 1.0
    assert basis_eval_beta(3, 3, 0.0) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("k,m,h,expected", [(2, 2, 1.0, 2 / 3), (1, 2, 1.0, 1 / 3)])
def test_small_cases(k, m, h, expected):
    assert basis_eval(k, m, h) == pytest.approx(expected, rel=1e-15)
    assert basis_eval_beta(k, m, h) == pytest.approx(expected, rel=1e-12)
    assert beta_oracle(k, m, h) == pytest.approx(expected, rel=1e-15)


def test_beta_matches_product_at_m25():
    assert basis_eval_beta(1, 25, 2.0) == pytest.approx(basis_eval(1, 25, 2.0), rel=1e-12)


@pytest.mark.parametrize("k,m,h", [(1, 1000, 3.0), (500, 1000, 40.0), (7, 200, 50.0), (1, 70, 0.5)])
def test_against_mpmath_large_orders(k, m, h):
    ref = beta_oracle(k, m, h)
    assert basis_eval(k, m, h) == pytest.approx(ref, rel=1e-12)
    assert basis_eval_beta(k, m, h) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("args", [(0, 3, 1.0), (4, 3, 1.0), (1, 0, 1.0), (1, 3, -0.1), (1, 3, float("nan"))])
def test_domain_errors(args):
    with pytest.raises(DomainError):
        basis_eval(*args)
    with pytest.raises(DomainError):
        basis_eval_beta(*args)


@given(st.integers(1, 200), st.data(), st.floats(0, 50))
def test_two_routes_agree(m, data, h):
    k = data.draw(st.integers(1, m))
    a = basis_eval(k, m, h)
    b = basis_eval_beta(k, m, h)
    if a > 1e-300:
        assert abs(a - b) <= 1e-12 * a


@given(st.integers(2, 60), st.data(), st.floats(0, 30))
def test_monotone_in_k(m, data, h):
    k = data.draw(st.integers(1, m - 1))
    assert basis_eval(k, m, h) <= basis_eval(k + 1, m, h) * (1 + 1e-14)


@given(st.integers(1, 50), st.floats(0, 1e3))
def test_last_basis_tail_identity(m, h):
    assert basis_eval(m, m, h) * (1 + h * h / m) == pytest.approx(1.0, rel=1e-13)


def test_strictly_decreasing_in_h():
    h = np.linspace(0, 10, 200)
    vals = [basis_eval(2, 6, x) for x in h]
    assert np.all(np.diff(vals) < 0)


def test_basis_matrix_matches_scalar(rng):
    h = rng.uniform(0, 20, size=(4, 3))
    B = basis_matrix(h, 7)
    assert B.shape == (4, 3, 7)
    for idx in np.ndindex(h.shape):
        for k in range(1, 8):
            assert B[idx + (k - 1,)] == pytest.approx(basis_eval(k, 7, h[idx]), rel=1e-13)


# --- SieveCovariance and cov_eval --------------------------------------------------


def test_cov_eval_examples():
    assert cov_eval(SieveCovariance([1.0]), 0.0) == 1.0
    assert cov_eval(SieveCovariance([1.0]), 1.0) == pytest.approx(0.5)
    assert cov_eval(SieveCovariance([1.0], rho=2.0, sigma2=3.0, nugget=0.5), 0.0) == pytest.approx(3.5)
    with pytest.raises(DomainError):
        cov_eval(SieveCovariance([1.0]), -1.0)


def test_cov_eval_nugget_only_at_origin():
    model = SieveCovariance([0.5, 0.5], rho=1.5, sigma2=2.0, nugget=0.3)
    h = np.array([0.0, 1e-9, 1.0])
    out = cov_eval(model, h)
    assert out[0] == pytest.approx(2.3)
    assert out[1] == pytest.approx(2.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(weights=[0.5, 0.6]),
        dict(weights=[-0.1, 1.1]),
        dict(weights=[1.0], rho=0.0),
        dict(weights=[1.0], sigma2=-1.0),
        dict(weights=[1.0], nugget=-0.1),
        dict(weights=[]),
    ],
)
def test_model_validation(kwargs):
    with pytest.raises(DomainError):
        SieveCovariance(**kwargs)


def test_serialization_roundtrip():
    model = SieveCovariance([0.25, 0.0, 0.75], rho=1.7, sigma2=2.5, nugget=0.1)
    rec = model.to_dict()
    assert set(rec) == {"m", "weights", "rho", "sigma2", "nugget"}
    back = SieveCovariance.from_json(model.to_json())
    assert back.m == 3
    assert np.array_equal(back.weights, model.weights)
    assert (back.rho, back.sigma2, back.nugget) == (1.7, 2.5, 0.1)


def test_from_nonnegative_normalizes():
    model = SieveCovariance.from_nonnegative([1.0, 3.0], rho=2.0)
    assert model.sigma2 == pytest.approx(4.0)
    assert np.allclose(model.weights, [0.25, 0.75])


# --- nesting ----------------------------------------------------------------------


def test_lift_single_basis():
    c = lift_bernstein_coefficients([1.0])
    assert np.allclose(c, [1.0, 1.0])
    h = np.linspace(0, 5, 40)
    lhs = 0.5 * (basis_matrix(h, 2) @ c)
    assert np.allclose(lhs, basis_matrix(h, 1)[:, 0], atol=1e-14)


def test_lift_coefficient_example():
    c = lift_bernstein_coefficients([1.0, 0.0])
    assert np.allclose(c, [1.0, 0.5, 0.0])
    h = np.linspace(0, 5, 40)
    assert np.allclose((basis_matrix(h, 3) @ c) / 3, (basis_matrix(h, 2) @ [1.0, 0.0]) / 2, atol=1e-14)


def test_lift_rejects_negative():
    with pytest.raises(DomainError):
        lift_weights([1.5, -0.5])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_lift_preserves_g_mass(raw):
    w = np.array(raw) + 0.01
    m = w.size
    c = lift_bernstein_coefficients(w)
    lhs = sum(c[k - 1] * math.comb(m, k - 1) * special.beta(k, m + 2 - k) for k in range(1, m + 2))
    rhs = sum(w[k - 1] * math.comb(m - 1, k - 1) * special.beta(k, m + 1 - k) for k in range(1, m + 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.1, 30))
def test_lifted_model_is_identical(raw, hmax):
    w = simplex(raw)
    u = lift_weights(w)
    assert u.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(u >= 0)
    h = np.linspace(0, hmax, 25)
    assert np.max(np.abs(basis_matrix(h, w.size + 1) @ u - basis_matrix(h, w.size) @ w)) <= 1e-10


# --- spectral transforms -----------------------------------------------------------


def test_g_density_examples():
    assert g_density(SieveCovariance([1.0]), 0.5) == pytest.approx(1.0)
    m2 = SieveCovariance([1.0, 0.0])
    assert g_density(m2, 0.0) == pytest.approx(1.0)
    assert g_density(m2, 1.0) == pytest.approx(0.0)
    s = np.linspace(0, 1, 11)
    assert np.allclose(g_density(SieveCovariance([0.0, 1.0, 0.0]), s), 2 * s * (1 - s))
    with pytest.raises(DomainError):
        g_density(m2, 1.5)


def test_spectral_density_examples():
    model = SieveCovariance([1.0])
    assert spectral_density_f(model, 0.0) == 0.0
    assert spectral_density_f(model, 1.0) == pytest.approx(2 * math.exp(-1))
    with pytest.raises(DomainError):
        spectral_density_f(model, -1.0)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.floats(0, 4))
def test_f_g_change_of_variables(raw, r):
    model = SieveCovariance(simplex(raw))
    e = math.exp(-r * r)
    assert spectral_density_f(model, r) == pytest.approx(2 * r * e * g_density(model, e), rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("weights", [[1.0], [0.2, 0.8], [0.1, 0.0, 0.6, 0.3], list(np.full(9, 1 / 9))])
def test_spectral_mass_closed_form(weights):
    model = SieveCovariance(weights)
    m = model.m
    total, _ = integrate.quad(lambda r: spectral_density_f(model, r), 0, np.inf, epsabs=1e-13, epsrel=1e-12)
    closed = sum(w * math.comb(m - 1, k) * special.beta(k + 1, m - k) for k, w in enumerate(model.weights))
    assert total == pytest.approx(closed, abs=1e-8)
    assert closed == pytest.approx(1.0 / m, rel=1e-12)


def test_spectral_mixture_reproduces_covariance():
    # C(h) = m * integral exp(-r^2 h^2) f_m(r) dr in the correlation convention
    model = SieveCovariance([0.3, 0.0, 0.7])
    for h in (0.0, 0.5, 2.0):
        val, _ = integrate.quad(lambda r: math.exp(-r * r * h * h) * spectral_density_f(model, r), 0, np.inf,
                                epsabs=1e-13)
        assert model.m * val == pytest.approx(model(h), rel=1e-8)
