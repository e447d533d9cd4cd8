import math

import numpy as np
import pytest

from sievecov import DomainError
from sievecov.basis import SieveCovariance
from sievecov.evaluation import (
    METRICS,
    CovarianceEstimate,
    compute_metrics,
    estimate_from_model,
    evaluation_grid,
    fit_method,
    mc_study,
    scaled_l2_error,
    setting_truth,
    sup_error,
)
from sievecov.gp import simulate_gp
from sievecov.parametric import ParametricCovariance


def test_grid_excludes_origin():
    h = evaluation_grid(10.3)
    assert h.size == 2000 and h[0] == pytest.approx(10.3 / 2000) and h[-1] == pytest.approx(10.3)


def test_identical_functions():
    f = np.cos
    assert scaled_l2_error(f, f, 3.0) == 0.0
    assert sup_error(f, f, 3.0) == 0.0


def test_constant_offset():
    assert scaled_l2_error(np.exp, lambda h: np.exp(h) + 0.1, 2.0) == pytest.approx(0.1, rel=1e-9)
    assert sup_error(np.exp, lambda h: np.exp(h) - 0.25, 2.0) == pytest.approx(0.25, rel=1e-12)


def test_l2_against_grid_sum():
    K = 2000
    h = np.arange(1, K + 1) / K
    oracle = math.sqrt(sum((1 + x * x) ** -2 for x in h) / K)
    got = scaled_l2_error(lambda x: 1 / (1 + x * x), lambda x: np.zeros_like(x), 1.0)
    assert got == pytest.approx(oracle, rel=1e-12)
    # the grid mean approaches the integral 1/4 + pi/8
    assert got == pytest.approx(math.sqrt(0.25 + math.pi / 8), abs=1e-3)


def test_linear_error_peaks_at_endpoint():
    assert sup_error(lambda h: h / 5.0, lambda h: np.zeros_like(h), 5.0) == pytest.approx(1.0)


def test_bad_range():
    with pytest.raises(DomainError):
        sup_error(np.cos, np.sin, 0.0)


@pytest.mark.parametrize(
    "sid,family,params,h_m",
    [
        (1, "Matern", (1, 1.25, 1), 10.3),
        (2, "Cauchy", (1, 0.8), 16),
        (3, "Gaussian", (1, 3), 7.9),
        (4, "GenCauchy", (1, 0.3, 0.5, 2), 13.3),
        (5, "LinearMatern", (1, 1.25, 3 * math.sqrt(2) / 4, 1, 2), 10.5),
    ],
)
def test_settings(sid, family, params, h_m):
    model, hm = setting_truth(sid)
    assert model.family == family
    assert model.params == tuple(float(p) for p in params)
    assert hm == h_m
    assert model.nugget == 0.0


@pytest.mark.parametrize("sid", [0, 6, "1"])
def test_setting_out_of_range(sid):
    with pytest.raises(DomainError):
        setting_truth(sid)


def test_metrics_of_truth_are_zero():
    truth, h_m = setting_truth(4)
    rep = compute_metrics(truth, truth, h_m)
    assert all(getattr(rep, name) == 0.0 for name in METRICS)


def test_metric_bounds_and_ordering(rng):
    truth, h_m = setting_truth(1)
    est = SieveCovariance(rng.dirichlet(np.ones(5)), rho=0.7, sigma2=1.3)
    rep = compute_metrics(truth, est, h_m)
    assert rep.bias_c0 == pytest.approx(0.3)
    for a, b in (("l2_corr", "sup_corr"), ("l2_cov", "sup_cov"), ("l2_gamma", "sup_gamma")):
        assert 0 <= getattr(rep, a) <= getattr(rep, b)
    assert rep.sup_corr <= 2


def test_nugget_excluded_from_correlation_by_default():
    model = ParametricCovariance("Gaussian", (1.0, 3.0), nugget=0.5)
    est = estimate_from_model(model)
    assert est.c0 == 1.0
    h = np.array([0.5, 1.0])
    assert np.allclose(est.correlation(h), model.correlation(h))
    total = estimate_from_model(model, include_nugget=True)
    assert np.allclose(total.correlation(h), model.correlation(h) / 1.5)


def test_covariance_estimate_from_semivariogram_convention():
    gamma = lambda h: 1.0 - np.exp(-h)  # noqa: E731
    est = CovarianceEstimate(c0=gamma(np.array([8.0]))[0], cov=lambda h: gamma(np.array([8.0]))[0] - gamma(h))
    assert est.semivariogram(np.array([2.0]))[0] == pytest.approx(gamma(np.array([2.0]))[0])


def test_fit_method_unknown():
    truth, _ = setting_truth(1)
    data = simulate_gp(truth, np.random.default_rng(0).uniform(0, 5, (6, 2)), 2, seed=0)
    with pytest.raises(DomainError):
        fit_method("kriging", data)
    with pytest.raises(DomainError):
        fit_method("wls_cov_Spherical", data)


def test_oracle_study():
    res = mc_study(3, n_sites=15, r=5, n_mc=3, methods=("truth",), seed=1)
    stats = res.summary()["truth"]
    assert all(stats[name] == (0.0, 0.0) for name in METRICS)
    assert res.failures == {"truth": 0}


def test_study_determinism_and_table():
    kwargs = dict(n_sites=20, r=10, n_mc=2, methods=("sieve_mle", "wls_gamma_Cauchy", "mle_Cauchy"), seed=3)
    a = mc_study(2, **kwargs)
    b = mc_study(2, **kwargs)
    assert a.to_table() == b.to_table()
    lines = a.to_table().strip().split("\n")
    assert len(lines) == 4
    assert lines[0].split(",")[1:8] == list(METRICS)
    assert all(len(line.split(",")) == 10 for line in lines)


def test_study_failure_accounting(monkeypatch):
    from sievecov import evaluation
    from sievecov.exceptions import ConditioningError

    real = evaluation.fit_method

    def flaky(method, data, truth=None, fit_config=None):
        if method == "sieve_mle":
            raise ConditioningError("boom")
        return real(method, data, truth=truth, fit_config=fit_config)

    monkeypatch.setattr(evaluation, "fit_method", flaky)
    res = mc_study(1, n_sites=10, r=3, n_mc=2, methods=("truth", "sieve_mle"), seed=0)
    assert res.failures == {"truth": 0, "sieve_mle": 2}
    assert len(res.reports["truth"]) == 2
    assert "n_failed" in res.to_table()


def test_study_rejects_unknown_method():
    with pytest.raises(DomainError):
        mc_study(1, methods=("nope",), n_mc=1)
