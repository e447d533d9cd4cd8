"""Gaussian-process machinery: covariance matrices, likelihood, simulation.

Replicates are independent realizations at shared sites, so the joint
covariance is block diagonal and one Cholesky factor serves all of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist

from .basis import SieveCovariance, basis_matrix
from .exceptions import ConditioningError, ValidationError
from .parametric import FAMILIES, ParametricCovariance, from_unconstrained, to_unconstrained

__all__ = [
    "SpatialDataset",
    "CovMatrixHandle",
    "pairwise_distances",
    "cholesky_with_jitter",
    "build_cov_matrix",
    "sieve_shape_matrix",
    "log_likelihood",
    "profile_sigma2",
    "profile_loglik",
    "simulate_gp",
    "fit_parametric_mle",
]

LOG_2PI = math.log(2.0 * math.pi)
JITTER_START = 1e-10
JITTER_MAX = 1e-6


def pairwise_distances(coords):
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    return cdist(coords, coords)


@dataclass
class SpatialDataset:
    """Replicated observations at a fixed set of sites.

    Attributes
    ----------
    coords : numpy.ndarray
        ``(n, d)`` site coordinates.
    obs : numpy.ndarray
        ``(r, n)`` observations, one row per independent realization.
    labels : list, optional
        Site identifiers.
    seed : int, optional
        Seed that generated the data, when simulated.
    """

    coords: np.ndarray
    obs: np.ndarray
    labels: list = None
    seed: int = None
    _dist: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        obs = np.atleast_2d(np.asarray(self.obs, dtype=float))
        if coords.shape[0] < 1:
            raise ValidationError("need at least one site")
        if obs.shape[1] != coords.shape[0]:
            raise ValidationError(f"obs has {obs.shape[1]} columns but there are {coords.shape[0]} sites")
        if not np.all(np.isfinite(coords)) or not np.all(np.isfinite(obs)):
            raise ValidationError("coordinates and observations must be finite")
        if self.labels is not None and len(self.labels) != coords.shape[0]:
            raise ValidationError("labels must match the number of sites")
        self.coords = coords
        self.obs = obs

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def r(self):
        return self.obs.shape[0]

    @property
    def d(self):
        return self.coords.shape[1]

    @property
    def distances(self):
        if self._dist is None:
            self._dist = pairwise_distances(self.coords)
        return self._dist

    def distance_range(self):
        """Smallest positive and largest pairwise distance."""
        iu = np.triu_indices(self.n, 1)
        d = self.distances[iu]
        d = d[d > 0]
        if d.size == 0:
            raise ValidationError("need at least two distinct sites")
        return float(d.min()), float(d.max())


@dataclass(frozen=True)
class CovMatrixHandle:
    """A factorized covariance matrix.

    ``jitter`` is the amount that had to be added to the diagonal.
    """

    matrix: np.ndarray
    chol: np.ndarray
    logdet: float
    jitter: float = 0.0

    def solve(self, b):
        return linalg.cho_solve((self.chol, True), b)

    def quad_form(self, Y):
        """``sum_j y_j' S^{-1} y_j`` over the rows of ``Y``, by triangular solves."""
        Z = linalg.solve_triangular(self.chol, np.atleast_2d(Y).T, lower=True, check_finite=False)
        return float(np.sum(Z * Z))


def cholesky_with_jitter(S):
    """Cholesky factor of ``S``, escalating diagonal jitter on failure.

    Jitter starts at ``1e-10 * mean(diag)`` and grows tenfold up to
    ``1e-6 * mean(diag)``.
    """
    S = np.asarray(S, dtype=float)
    scale = float(np.mean(np.diag(S)))
    jitter = 0.0
    while True:
        A = S if jitter == 0.0 else S + jitter * np.eye(S.shape[0])
        L, info = linalg.lapack.dpotrf(A, lower=1, clean=1)
        if info == 0:
            logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
            return CovMatrixHandle(matrix=S, chol=L, logdet=logdet, jitter=jitter)
        if not np.isfinite(scale) or scale <= 0:
            break
        jitter = JITTER_START * scale if jitter == 0.0 else jitter * 10.0
        if jitter > JITTER_MAX * scale * (1 + 1e-9):
            break
    try:
        min_eig = float(linalg.eigvalsh(S, subset_by_index=[0, 0])[0])
    except (linalg.LinAlgError, ValueError):
        min_eig = None
    raise ConditioningError(
        f"covariance matrix not positive definite within jitter budget (min eigenvalue {min_eig})",
        min_pivot=min_eig,
    )


def _partial_cov(model, D):
    """Covariance at distances ``D`` with the nugget left out."""
    if isinstance(model, SieveCovariance):
        return model.sigma2 * (basis_matrix(D / model.rho, model.m) @ model.weights)
    return model.sigma2 * model.correlation(D)


def build_cov_matrix(model, coords=None, distances=None):
    """Covariance matrix ``C(||s_i - s_j||)`` with the nugget on the diagonal.

    Duplicated sites share ``sigma2`` off the diagonal; only the diagonal
    carries the nugget.
    """
    D = pairwise_distances(coords) if distances is None else np.asarray(distances, dtype=float)
    S = _partial_cov(model, D)
    S = 0.5 * (S + S.T)
    S[np.diag_indices_from(S)] += model.nugget
    return cholesky_with_jitter(S)


def sieve_shape_matrix(weights, rho, distances, nugget_ratio=0.0, basis=None):
    """Unit-variance sieve matrix ``sum_k w_k A_k(D / rho) + eta I``.

    ``basis`` may hold the precomputed ``(n, n, m)`` stack of basis matrices.
    """
    weights = np.asarray(weights, dtype=float)
    if basis is None:
        basis = basis_matrix(np.asarray(distances) / rho, weights.size)
    S = basis @ weights
    if nugget_ratio:
        S[np.diag_indices_from(S)] += nugget_ratio
    return S


def log_likelihood(model, dataset):
    """Gaussian log-likelihood summed over replicates (data assumed mean zero)."""
    h = build_cov_matrix(model, distances=dataset.distances)
    r, n = dataset.r, dataset.n
    return -0.5 * r * h.logdet - 0.5 * h.quad_form(dataset.obs) - 0.5 * r * n * LOG_2PI


def profile_loglik(handle, Y):
    """Profile out the variance from a unit-variance shape matrix.

    Returns
    -------
    loglik_per_obs : float
        ``l / (r n)`` at the profiled variance.
    sigma2 : float
        ``sum_j y_j' S^{-1} y_j / (r n)``.
    """
    Y = np.atleast_2d(Y)
    r, n = Y.shape
    q = handle.quad_form(Y)
    sigma2 = q / (r * n)
    if not sigma2 > 0:
        raise ValidationError("all observations are zero; variance is degenerate")
    ll = -0.5 * handle.logdet / n - 0.5 * math.log(sigma2) - 0.5 - 0.5 * LOG_2PI
    return ll, sigma2


def profile_sigma2(weights, rho, nugget_ratio, dataset):
    """Closed-form variance maximizing the likelihood at fixed shape parameters."""
    S = sieve_shape_matrix(weights, rho, dataset.distances, nugget_ratio)
    handle = cholesky_with_jitter(S)
    return profile_loglik(handle, dataset.obs)[1]


def simulate_gp(model, coords, r, seed):
    """Draw ``r`` independent mean-zero realizations ``L z`` at ``coords``.

    The generator is numpy's PCG64 seeded with ``seed``; identical seeds give
    bit-identical draws.
    """
    coords = np.asarray(coords, dtype=float)
    handle = build_cov_matrix(model, coords)
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((int(r), coords.shape[0]))
    return SpatialDataset(coords=coords, obs=Z @ handle.chol.T, seed=seed)


def fit_parametric_mle(dataset, family, include_nugget=False, init=None):
    """Maximum-likelihood fit of a parametric family with ``sigma2`` profiled out.

    The remaining parameters (and the nugget-to-variance ratio, when
    ``include_nugget``) are optimized by Nelder-Mead in the unconstrained
    parameterization of :func:`to_unconstrained`, from a few range starts.

    Returns
    -------
    model : ParametricCovariance
    loglik_per_obs : float
    """
    if family not in FAMILIES:
        raise ValidationError(f"unknown family {family!r}")
    D = dataset.distances
    Y = dataset.obs
    hmin, hmax = dataset.distance_range()

    def unpack(x):
        params = from_unconstrained(family, np.concatenate([[0.0], x[: len(FAMILIES[family]) - 1]]))
        eta = math.exp(float(np.clip(x[-1], -30, 10))) if include_nugget else 0.0
        return params, eta

    def negll(x):
        params, eta = unpack(x)
        try:
            mod = ParametricCovariance(family, params)
            S = mod.correlation(D)
            if eta:
                S[np.diag_indices_from(S)] += eta
            ll, _ = profile_loglik(cholesky_with_jitter(S), Y)
        except (ConditioningError, ValidationError, ValueError):
            return 1e300
        return -ll if math.isfinite(ll) else 1e300

    if init is None:
        base = {
            "Matern": (1.0, 0.2 * hmax, 1.0),
            "Cauchy": (1.0, 0.2 * hmax),
            "Gaussian": (1.0, 0.2 * hmax),
            "GenCauchy": (1.0, 0.2 * hmax, 1.0, 1.0),
            "LinearMatern": (1.0, 0.1 * hmax, 0.3 * hmax, 0.5, 1.5),
        }[family]
    else:
        base = (1.0,) + tuple(init[1:])
    x0 = to_unconstrained(family, base)[1:]
    if include_nugget:
        x0 = np.append(x0, math.log(0.05))
    best = None
    for shift in (0.0, math.log(0.2), math.log(3.0)):
        xs = x0.copy()
        xs[0] += shift
        sol = optimize.minimize(negll, xs, method="Nelder-Mead",
                                options={"xatol": 1e-7, "fatol": 1e-10, "maxiter": 3000})
        if best is None or sol.fun < best.fun:
            best = sol
    params, eta = unpack(best.x)
    shape = ParametricCovariance(family, params)
    S = shape.correlation(D)
    if eta:
        S[np.diag_indices_from(S)] += eta
    ll, sigma2 = profile_loglik(cholesky_with_jitter(S), Y)
    model = ParametricCovariance(family, (sigma2,) + tuple(params[1:]), eta * sigma2)
    return model, ll
