"""Sieve maximum-likelihood estimation of an isotropic covariance.

For a fixed order ``m`` the range ``rho`` and simplex weights ``w`` are updated
alternately, each update never lowering the profile log-likelihood (the
variance is profiled out in closed form). The order is then chosen by
walking the schedule ``{1 + floor(N^a)}`` until the likelihood gain stalls.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from ._simplex import simplex_kkt_residual
from .basis import SieveCovariance, basis_matrix, lift_weights
from .exceptions import ConditioningError, DomainError, ValidationError
from .gp import SpatialDataset, cholesky_with_jitter, profile_loglik

__all__ = [
    "FitConfig",
    "FitResult",
    "SieveLikelihood",
    "m_schedule",
    "update_rho",
    "update_weights",
    "fit_given_m",
    "fit_auto_m",
]

log = logging.getLogger(__name__)

DEFAULT_EXPONENTS = tuple(round(0.05 * i, 2) for i in range(1, 19))
ETA_MAX = 1e4


@dataclass(frozen=True)
class FitConfig:
    """Tuning knobs for the sieve estimator.

    ``m_schedule_exponents`` defaults to ``0.05, 0.10, ..., 0.90``; the first
    exponent is what yields ``m = 2`` in the schedule.
    """

    rel_tol: float = 1e-3
    rho_search_draws: int = 64
    rho_bounds_policy: str = "observed_range"
    rho_bounds: tuple = None
    m_schedule_exponents: tuple = DEFAULT_EXPONENTS
    m_stop_rel_gain: float = 1e-3
    include_nugget: bool = False
    seed: int = 0
    max_outer_iters: int = 50
    max_weight_iters: int = 200
    warm_start: bool = False

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise DomainError("rel_tol must be positive")
        if self.rho_search_draws < 0:
            raise DomainError("rho_search_draws must be nonnegative")
        if self.rho_bounds_policy not in ("observed_range", "user"):
            raise DomainError("rho_bounds_policy must be 'observed_range' or 'user'")
        if self.rho_bounds_policy == "user":
            if self.rho_bounds is None or not 0 < self.rho_bounds[0] < self.rho_bounds[1]:
                raise DomainError("user rho_bounds must satisfy 0 < low < high")
        ex = tuple(self.m_schedule_exponents)
        if not ex or any(not 0 < a <= 1 for a in ex) or any(b <= a for a, b in zip(ex, ex[1:])):
            raise DomainError("schedule exponents must be increasing in (0, 1]")
        if self.max_outer_iters < 1:
            raise DomainError("max_outer_iters must be positive")


@dataclass
class FitResult:
    """Outcome of a sieve fit.

    ``trace`` holds ``(iteration, loglik_per_obs)`` after every half-step.
    ``m_candidates`` holds one dict per order tried.
    """

    model: SieveCovariance
    loglik_per_obs: float
    trace: list = field(default_factory=list)
    m_candidates: list = field(default_factory=list)
    converged: bool = True
    wallclock: float = 0.0
    kkt_residual: float = float("nan")

    def candidate_table(self):
        """Rows ``(m, loglik_per_obs, nugget, C0(0))`` for every candidate order."""
        rows = []
        for c in self.m_candidates:
            mod = c.get("model")
            rows.append(
                (
                    c["m"],
                    c.get("loglik", float("nan")),
                    mod.nugget if mod is not None else float("nan"),
                    mod.sigma2 if mod is not None else float("nan"),
                )
            )
        return rows

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "loglik_per_obs": self.loglik_per_obs,
            "trace": [[int(i), float(v)] for i, v in self.trace],
            "m_candidates": [
                {
                    "m": c["m"],
                    "loglik_per_obs": c.get("loglik"),
                    "nugget": c["model"].nugget if c.get("model") else None,
                    "c0": c["model"].sigma2 if c.get("model") else None,
                    "converged": c.get("converged"),
                    "error": c.get("error"),
                }
                for c in self.m_candidates
            ],
            "converged": self.converged,
        }


def m_schedule(n_obs, exponents=DEFAULT_EXPONENTS):
    """Distinct orders ``1 + floor(n_obs ** a)`` in increasing order."""
    out = []
    for a in exponents:
        m = 1 + int(math.floor(n_obs**a + 1e-9))
        if not out or m > out[-1]:
            out.append(m)
    return out


class SieveLikelihood:
    """Profile log-likelihood of a fixed-order sieve on one dataset.

    Caches the basis stack for the current range so that repeated weight
    evaluations cost one Cholesky each.
    """

    def __init__(self, dataset, m):
        if not isinstance(dataset, SpatialDataset):
            raise ValidationError("expected a SpatialDataset")
        self.data = dataset
        self.m = int(m)
        self.Y = dataset.obs
        self.r, self.n = self.Y.shape
        self.D = dataset.distances
        self._rho = None
        self._basis = None

    def basis(self, rho):
        if rho != self._rho:
            self._basis = basis_matrix(self.D / rho, self.m)
            self._rho = rho
        return self._basis

    def shape_matrix(self, w, rho, eta):
        S = self.basis(rho) @ np.asarray(w, dtype=float)
        if eta:
            S[np.diag_indices_from(S)] += eta
        return S

    def loglik(self, w, rho, eta=0.0):
        """Per-observation profile log-likelihood and profiled variance."""
        handle = cholesky_with_jitter(self.shape_matrix(w, rho, eta))
        return profile_loglik(handle, self.Y)

    def loglik_and_grad(self, w, rho, eta=0.0):
        """Value and gradient in ``(w, eta)`` of the per-observation profile likelihood."""
        handle = cholesky_with_jitter(self.shape_matrix(w, rho, eta))
        ll, s2 = profile_loglik(handle, self.Y)
        Sinv = handle.solve(np.eye(self.n))
        U = handle.solve(self.Y.T)
        G = -Sinv / (2.0 * self.n) + (U @ U.T) / (2.0 * self.r * self.n * s2)
        G = 0.5 * (G + G.T)
        gw = np.tensordot(G, self.basis(rho), axes=([0, 1], [0, 1]))
        geta = float(np.trace(G))
        return ll, s2, gw, geta


def _search_bounds(dataset, cfg):
    if cfg.rho_bounds_policy == "user":
        return cfg.rho_bounds
    return dataset.distance_range()


def update_rho(dataset, weights, nugget_ratio, cfg, rho=None, rng=None, lik=None):
    """Random search for the range at fixed weights.

    Candidates are the incumbent ``rho`` plus ``cfg.rho_search_draws``
    log-uniform draws in the search interval; the best profile likelihood
    wins, ties going to the incumbent.

    Returns
    -------
    rho : float
    loglik : float
        Per-observation profile log-likelihood at the returned ``rho``.
    """
    lik = lik or SieveLikelihood(dataset, len(weights))
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    lo, hi = _search_bounds(dataset, cfg)
    if rho is None:
        rho = float(np.median(dataset.distances[np.triu_indices(dataset.n, 1)]))
    try:
        best_ll = lik.loglik(weights, rho, nugget_ratio)[0]
    except ConditioningError:
        best_ll = -math.inf
    best_rho = rho
    if cfg.rho_search_draws == 0:
        return best_rho, best_ll
    draws = np.exp(rng.uniform(math.log(lo), math.log(hi), size=cfg.rho_search_draws))
    failures = 0
    for cand in draws:
        try:
            ll = lik.loglik(weights, float(cand), nugget_ratio)[0]
        except ConditioningError:
            failures += 1
            continue
        if ll > best_ll:
            best_ll, best_rho = ll, float(cand)
    if failures == cfg.rho_search_draws and not math.isfinite(best_ll):
        warnings.warn("every range candidate failed to factorize; keeping the previous range")
    return best_rho, best_ll


def _weight_kkt(w, gw, eta, geta, include_nugget):
    res = simplex_kkt_residual(w, -gw, tol_active=0.0)
    if include_nugget:
        res = max(res, abs(geta) if eta > 0 else max(geta, 0.0))
    return res


def update_weights(dataset, rho, weights0, nugget_ratio, cfg, lik=None):
    """Maximize the profile likelihood over the simplex at fixed ``rho``.

    SLSQP with analytic gradients (bounds ``w >= 0``, ``sum(w) = 1``, and
    ``0 <= eta`` when a nugget is fitted), followed by a polish step that
    zeroes weights below ``1e-8`` on the active face. A proposal is only
    accepted if it does not lower the likelihood, so the result is never
    worse than ``weights0``.

    Returns
    -------
    weights : numpy.ndarray
    nugget_ratio : float
    loglik : float
    kkt : float
        KKT residual of the simplex problem at the returned point.
    """
    w0 = np.asarray(weights0, dtype=float)
    m = w0.size
    lik = lik or SieveLikelihood(dataset, m)
    eta0 = float(nugget_ratio) if cfg.include_nugget else 0.0
    ll0, _, g0, geta0 = lik.loglik_and_grad(w0, rho, eta0)
    if m == 1 and not cfg.include_nugget:
        return np.ones(1), 0.0, ll0, 0.0

    nug = cfg.include_nugget

    def unpack(x):
        return (x[:m], x[m]) if nug else (x, 0.0)

    def fun(x):
        w, eta = unpack(x)
        w = np.clip(w, 0.0, None)
        try:
            ll, _, gw, geta = lik.loglik_and_grad(w, rho, eta)
        except ConditioningError:
            return 1e10, np.zeros_like(x)
        grad = np.append(-gw, -geta) if nug else -gw
        return -ll, grad

    x0 = np.append(w0, eta0) if nug else w0.copy()
    bounds = [(0.0, 1.0)] * m + ([(0.0, ETA_MAX)] if nug else [])
    cons = [{"type": "eq", "fun": lambda x: np.sum(x[:m]) - 1.0, "jac": lambda x: np.r_[np.ones(m), [0.0] * nug]}]
    best = (w0, eta0, ll0, g0, geta0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sol = optimize.minimize(
                fun,
                x0,
                jac=True,
                method="SLSQP",
                bounds=bounds,
                constraints=cons,
                options={"maxiter": cfg.max_weight_iters, "ftol": 1e-12},
            )
        proposals = [sol.x]
    except (ValueError, np.linalg.LinAlgError):
        proposals = []
    for x in proposals:
        w, eta = unpack(np.asarray(x, dtype=float))
        w = np.clip(w, 0.0, None)
        if w.sum() <= 0:
            continue
        w = w / w.sum()
        eta = max(float(eta), 0.0)
        for cand in (w, _polish(w)):
            try:
                ll, _, gw, geta = lik.loglik_and_grad(cand, rho, eta)
            except ConditioningError:
                continue
            if ll >= best[2]:
                best = (cand, eta, ll, gw, geta)
    w, eta, ll, gw, geta = best
    return w, eta, ll, _weight_kkt(w, gw, eta, geta, nug)


def _polish(w, floor=1e-8):
    w = np.where(w < floor, 0.0, w)
    return w / w.sum()


def _validate(dataset):
    if dataset.r * dataset.n < 3:
        raise ValidationError("need at least 3 observations in total")
    if dataset.n < 2:
        raise ValidationError("need at least two sites")
    if not np.any(dataset.obs != 0.0) or float(np.var(dataset.obs)) == 0.0:
        raise ValidationError("observations have zero variance")
    dataset.distance_range()


def fit_given_m(dataset, m, cfg=None, init=None):
    """Alternate range and weight updates at a fixed order ``m``.

    Starts from uniform weights and the median pairwise distance unless
    ``init`` (a :class:`SieveCovariance` of order ``m``) is given. Stops once
    the relative gain of the per-observation log-likelihood over a full
    iteration is at most ``cfg.rel_tol`` (at least two iterations are run).
    """
    cfg = cfg or FitConfig()
    _validate(dataset)
    t0 = time.perf_counter()
    m = int(m)
    if m < 1:
        raise DomainError("m must be positive")
    lik = SieveLikelihood(dataset, m)
    rng = np.random.default_rng([cfg.seed, m])
    if init is not None:
        if init.m != m:
            raise DomainError("initial model has the wrong order")
        w = np.array(init.weights)
        rho = init.rho
        eta = init.nugget / init.sigma2 if cfg.include_nugget else 0.0
    else:
        w = np.full(m, 1.0 / m)
        rho = float(np.median(dataset.distances[np.triu_indices(dataset.n, 1)]))
        eta = 0.1 if cfg.include_nugget else 0.0
    ll = lik.loglik(w, rho, eta)[0]
    trace = [(0, ll)]
    prev = ll
    converged = False
    kkt = float("nan")
    for it in range(1, cfg.max_outer_iters + 1):
        rho, ll_rho = update_rho(dataset, w, eta, cfg, rho=rho, rng=rng, lik=lik)
        ll = ll_rho
        trace.append((it, ll))
        w, eta, ll_w, kkt = update_weights(dataset, rho, w, eta, cfg, lik=lik)
        ll = ll_w
        trace.append((it, ll))
        if it >= 2 and (ll - prev) / abs(ll) <= cfg.rel_tol:
            converged = True
            break
        prev = ll
    ll, s2 = lik.loglik(w, rho, eta)
    model = SieveCovariance(w, rho=rho, sigma2=s2, nugget=eta * s2)
    return FitResult(
        model=model,
        loglik_per_obs=ll,
        trace=trace,
        m_candidates=[{"m": m, "loglik": ll, "model": model, "converged": converged, "error": None}],
        converged=converged,
        wallclock=time.perf_counter() - t0,
        kkt_residual=kkt,
    )


def _lift_to(model, m_new):
    w = np.array(model.weights)
    while w.size < m_new:
        w = lift_weights(w)
    return SieveCovariance(w, rho=model.rho, sigma2=model.sigma2, nugget=model.nugget)


def fit_auto_m(dataset, cfg=None, schedule=None):
    """Fit every order of the schedule until the likelihood gain stalls.

    The schedule is ``{1 + floor(N^a)}`` with ``N = r n`` the total number of
    observations. The walk stops at the first order whose relative gain over
    the previous candidate is nonnegative but below ``cfg.m_stop_rel_gain``
    (a decrease, which signals an incompletely optimized candidate, lets the
    walk continue); the candidate with the largest likelihood is returned.
    """
    cfg = cfg or FitConfig()
    _validate(dataset)
    t0 = time.perf_counter()
    schedule = schedule or m_schedule(dataset.r * dataset.n, cfg.m_schedule_exponents)
    candidates = []
    best = None
    prev_ll = None
    for m in schedule:
        init = _lift_to(best.model, m) if (cfg.warm_start and best is not None) else None
        try:
            res = fit_given_m(dataset, m, cfg, init=init)
        except (ConditioningError, ValidationError, np.linalg.LinAlgError) as exc:
            log.warning("fit at m=%d failed: %s", m, exc)
            candidates.append({"m": m, "loglik": None, "model": None, "converged": False, "error": str(exc)})
            continue
        candidates.append(res.m_candidates[0])
        if best is None or res.loglik_per_obs > best.loglik_per_obs:
            best = res
        ll = res.loglik_per_obs
        # a drop in likelihood does not end the walk; only a small nonnegative gain does
        if prev_ll is not None and 0.0 <= (ll - prev_ll) / abs(prev_ll) < cfg.m_stop_rel_gain:
            break
        prev_ll = ll
    if best is None:
        raise ConditioningError("every candidate order failed")
    best.m_candidates = candidates
    best.wallclock = time.perf_counter() - t0
    return best
