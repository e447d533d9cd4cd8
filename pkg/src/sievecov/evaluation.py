"""Error metrics and the Monte Carlo comparison harness.

Errors are measured on the grid ``h_i = i * h_m / K``, ``i = 1..K`` (the
origin is excluded; the variance enters through the bias instead).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .basis import SieveCovariance, basis_matrix
from .empirical import WlsSpec, empirical_summary, wls_fit
from .exceptions import ConditioningError, ConvergenceError, DomainError, ValidationError
from .gp import fit_parametric_mle, simulate_gp
from .parametric import FAMILIES, ParametricCovariance
from .sieve_mle import FitConfig, fit_auto_m

__all__ = [
    "GRID_SIZE",
    "METRICS",
    "MetricReport",
    "CovarianceEstimate",
    "StudyResult",
    "scaled_l2_error",
    "sup_error",
    "evaluation_grid",
    "setting_truth",
    "estimate_from_model",
    "compute_metrics",
    "fit_method",
    "available_methods",
    "mc_study",
]

GRID_SIZE = 2000
METRICS = ("bias_c0", "l2_corr", "sup_corr", "l2_cov", "sup_cov", "l2_gamma", "sup_gamma")

_SETTINGS = {
    1: (("Matern", (1.0, 1.25, 1.0)), 10.3),
    2: (("Cauchy", (1.0, 0.8)), 16.0),
    3: (("Gaussian", (1.0, 3.0)), 7.9),
    4: (("GenCauchy", (1.0, 0.3, 0.5, 2.0)), 13.3),
    5: (("LinearMatern", (1.0, 1.25, 3.0 * math.sqrt(2.0) / 4.0, 1.0, 2.0)), 10.5),
}


def evaluation_grid(h_m, K=GRID_SIZE):
    if not h_m > 0:
        raise DomainError("h_m must be positive")
    K = int(K)
    if K < 1:
        raise DomainError("K must be positive")
    return h_m * np.arange(1, K + 1) / K


def scaled_l2_error(truth, estimate, h_m, K=GRID_SIZE):
    """Root-mean-square difference of two functions over the evaluation grid."""
    h = evaluation_grid(h_m, K)
    diff = np.asarray(truth(h), dtype=float) - np.asarray(estimate(h), dtype=float)
    return float(np.sqrt(np.mean(diff * diff)))


def sup_error(truth, estimate, h_m, K=GRID_SIZE):
    """Largest absolute difference over the evaluation grid."""
    h = evaluation_grid(h_m, K)
    diff = np.asarray(truth(h), dtype=float) - np.asarray(estimate(h), dtype=float)
    return float(np.max(np.abs(diff)))


def setting_truth(setting_id):
    """True covariance and metric range ``h_m`` of simulation setting 1-5.

    >>> model, h_m = setting_truth(3)
    >>> model.family, model.params, h_m
    ('Gaussian', (1.0, 3.0), 7.9)
    """
    if setting_id not in _SETTINGS:
        raise DomainError(f"setting must be one of 1..5, got {setting_id!r}")
    (family, params), h_m = _SETTINGS[setting_id]
    return ParametricCovariance(family, params), h_m


@dataclass(frozen=True)
class CovarianceEstimate:
    """An estimated covariance reduced to what the metrics need.

    ``cov(h)`` is evaluated at ``h > 0`` only; ``c0`` is the estimated
    variance at the origin.
    """

    c0: float
    cov: Callable

    def correlation(self, h):
        return np.asarray(self.cov(h)) / self.c0

    def semivariogram(self, h):
        return self.c0 - np.asarray(self.cov(h))


def _model_correlation(model, h):
    h = np.asarray(h, dtype=float)
    if isinstance(model, SieveCovariance):
        return basis_matrix(h / model.rho, model.m) @ model.weights
    return model.correlation(h)


def estimate_from_model(model, include_nugget=False):
    """Covariance estimate of a fitted model.

    By default the nugget is excluded from both ``c0`` and the correlation
    denominator, so the correlation is the model's smooth part. With
    ``include_nugget`` the correlation is relative to the total variance.
    """
    sigma2 = float(model.sigma2)
    c0 = sigma2 + (float(model.nugget) if include_nugget else 0.0)
    if not c0 > 0:
        raise ValidationError("estimated variance must be positive")
    return CovarianceEstimate(c0=c0, cov=lambda h: sigma2 * _model_correlation(model, h))


def _estimate_from_semivariogram(model, h_max):
    def gamma(h):
        return model.nugget + model.sigma2 * (1.0 - _model_correlation(model, h))

    c0 = float(gamma(np.array([h_max]))[0])
    return CovarianceEstimate(c0=c0, cov=lambda h: c0 - gamma(h))


@dataclass(frozen=True)
class MetricReport:
    """Bias at the origin and grid errors for correlation, covariance and semivariogram."""

    bias_c0: float
    l2_corr: float
    sup_corr: float
    l2_cov: float
    sup_cov: float
    l2_gamma: float
    sup_gamma: float
    h_m: float
    K: int = GRID_SIZE

    def to_dict(self):
        return asdict(self)


def compute_metrics(truth, estimate, h_m, K=GRID_SIZE):
    """Score ``estimate`` (a :class:`CovarianceEstimate` or a model) against ``truth``."""
    if not isinstance(estimate, CovarianceEstimate):
        estimate = estimate_from_model(estimate)
    t = estimate_from_model(truth)
    h = evaluation_grid(h_m, K)

    def pair(a, b):
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        return float(np.sqrt(np.mean(d * d))), float(np.max(np.abs(d)))

    l2c, supc = pair(t.correlation(h), estimate.correlation(h))
    l2v, supv = pair(t.cov(h), estimate.cov(h))
    l2g, supg = pair(t.semivariogram(h), estimate.semivariogram(h))
    return MetricReport(
        bias_c0=float(estimate.c0 - t.c0),
        l2_corr=l2c,
        sup_corr=supc,
        l2_cov=l2v,
        sup_cov=supv,
        l2_gamma=l2g,
        sup_gamma=supg,
        h_m=float(h_m),
        K=int(K),
    )


# --- estimation methods ------------------------------------------------------

_WLS_SIEVE_M = 5


def available_methods():
    """Names accepted by :func:`fit_method` and :func:`mc_study`."""
    names = ["truth", "sieve_mle", "sieve_mle_nugget"]
    for fam in FAMILIES:
        names += [f"mle_{fam}", f"wls_cov_{fam}", f"wls_gamma_{fam}"]
    names += ["wls_cov_sieve", "wls_gamma_sieve"]
    return names


def fit_method(method, dataset, truth=None, fit_config=None):
    """Fit one named method and return ``(CovarianceEstimate, info)``.

    Methods are ``truth`` (the oracle), ``sieve_mle`` / ``sieve_mle_nugget``,
    ``mle_<Family>``, and ``wls_cov_<Family|sieve>`` / ``wls_gamma_<Family|sieve>``
    (weighted least squares on the replicate-averaged empirical covariance or
    semivariogram, pair-count weights). Semivariogram fits take the variance
    as the fitted semivariogram at the largest observed distance.
    """
    info = {}
    if method == "truth":
        if truth is None:
            raise ValidationError("the truth method needs the true model")
        return estimate_from_model(truth), info
    if method in ("sieve_mle", "sieve_mle_nugget"):
        cfg = fit_config or FitConfig()
        if method == "sieve_mle_nugget":
            cfg = replace(cfg, include_nugget=True)
        res = fit_auto_m(dataset, cfg)
        info.update(m=res.model.m, loglik_per_obs=res.loglik_per_obs, converged=res.converged)
        return estimate_from_model(res.model), info
    if method.startswith("mle_"):
        fam = method[4:]
        model, ll = fit_parametric_mle(dataset, fam)
        info.update(loglik_per_obs=ll)
        return estimate_from_model(model), info
    for prefix, target in (("wls_cov_", "covariance"), ("wls_gamma_", "semivariogram")):
        if method.startswith(prefix):
            name = method[len(prefix):]
            model_name = "sieve" if name == "sieve" else name
            if model_name != "sieve" and model_name not in FAMILIES:
                break
            spec = WlsSpec(target=target, weights="pair_count", model=model_name, m=_WLS_SIEVE_M)
            summary = empirical_summary(dataset)
            res = wls_fit(summary, spec)
            info.update(objective=res.objective, converged=res.converged)
            if target == "covariance":
                return estimate_from_model(res.model), info
            return _estimate_from_semivariogram(res.model, float(summary.distances[-1])), info
    raise DomainError(f"unknown method {method!r}; choose from {available_methods()}")


# --- Monte Carlo study -------------------------------------------------------


@dataclass
class StudyResult:
    """Per-method metric reports from a Monte Carlo study."""

    setting: int
    h_m: float
    reports: dict
    failures: dict
    config: dict = field(default_factory=dict)

    def summary(self):
        """``{method: {metric: (mean, sd)}}`` over successful runs."""
        out = {}
        for method, reps in self.reports.items():
            stats = {}
            for name in METRICS:
                vals = np.array([getattr(rep, name) for rep in reps], dtype=float)
                if vals.size == 0:
                    stats[name] = (float("nan"), float("nan"))
                else:
                    sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
                    stats[name] = (float(np.mean(vals)), sd)
            out[method] = stats
        return out

    def to_table(self, delimiter=",", scale=100.0):
        """Method-by-metric table of ``mean (sd)`` in units of ``1/scale``."""
        lines = [delimiter.join(("method",) + METRICS + ("n_ok", "n_failed"))]
        for method, stats in self.summary().items():
            cells = [method]
            for name in METRICS:
                mu, sd = stats[name]
                cells.append(f"{mu * scale:.2f} ({sd * scale:.2f})")
            cells += [str(len(self.reports[method])), str(self.failures[method])]
            lines.append(delimiter.join(cells))
        return "\n".join(lines) + "\n"


def _one_replicate(args):
    setting, coords, r, seed_seq, methods, fit_config, h_m = args
    truth, _ = setting_truth(setting)
    data = simulate_gp(truth, coords, r, np.random.default_rng(seed_seq))
    out = {}
    for method in methods:
        try:
            est, info = fit_method(method, data, truth=truth, fit_config=fit_config)
            out[method] = (compute_metrics(truth, est, h_m), info)
        except (ConditioningError, ConvergenceError, ValidationError, np.linalg.LinAlgError, FloatingPointError) as exc:
            out[method] = (None, {"error": f"{type(exc).__name__}: {exc}"})
    return out


def mc_study(setting, n_sites=60, domain=20.0, r=50, n_mc=10, methods=("sieve_mle",),
             seed=0, fit_config=None, threads=1, progress=None):
    """Simulate, fit and score ``n_mc`` replicated data sets.

    Site coordinates are drawn once per study, uniformly on
    ``[0, domain]^2``. Each Monte Carlo run draws ``r`` realizations at those
    sites from an independent stream spawned from ``seed``, so results do not
    depend on ``threads``. Runs where a method fails are counted in
    ``failures`` and left out of its reports.
    """
    truth, h_m = setting_truth(setting)
    for method in methods:
        if method not in available_methods():
            raise DomainError(f"unknown method {method!r}")
    n_mc = int(n_mc)
    if n_mc < 1 or n_sites < 2 or r < 1:
        raise ValidationError("need n_mc >= 1, n_sites >= 2 and r >= 1")
    root = np.random.SeedSequence(seed)
    coord_seq, *run_seqs = root.spawn(n_mc + 1)
    coords = np.random.default_rng(coord_seq).uniform(0.0, domain, size=(int(n_sites), 2))
    jobs = [(setting, coords, r, s, tuple(methods), fit_config, h_m) for s in run_seqs]
    t0 = time.perf_counter()
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(_one_replicate, jobs))
    else:
        results = []
        for i, job in enumerate(jobs):
            results.append(_one_replicate(job))
            if progress:
                progress(i + 1, n_mc)
    reports = {m: [] for m in methods}
    failures = {m: 0 for m in methods}
    infos = {m: [] for m in methods}
    for res in results:
        for method in methods:
            rep, info = res[method]
            infos[method].append(info)
            if rep is None:
                failures[method] += 1
            else:
                reports[method].append(rep)
    config = {
        "setting": setting, "n_sites": int(n_sites), "domain": float(domain), "r": int(r),
        "n_mc": n_mc, "methods": list(methods), "seed": seed,
        "wallclock": time.perf_counter() - t0, "infos": infos,
    }
    return StudyResult(setting=setting, h_m=h_m, reports=reports, failures=failures, config=config)
