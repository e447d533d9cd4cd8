"""Empirical covariance / semivariogram and weighted least-squares fits.

Replicates share sites, so method-of-moments estimates at each distance are
averaged over replicates before fitting. Data are assumed detrended (mean
zero); :func:`detrend_two_way_anova` produces such residuals from a
station-by-year panel.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .basis import SieveCovariance, basis_matrix
from .exceptions import DomainError, ValidationError
from .gp import SpatialDataset
from .parametric import FAMILIES, ParametricCovariance, from_unconstrained, to_unconstrained

__all__ = [
    "EmpiricalSummary",
    "WlsSpec",
    "WlsResult",
    "empirical_summary",
    "wls_weights",
    "wls_fit",
    "nugget_adapted_cov_fit",
    "detrend_two_way_anova",
]

DEFAULT_BINS = 30


@dataclass
class EmpiricalSummary:
    """Replicate-averaged moment estimates per distance (or distance bin)."""

    distances: np.ndarray
    cov_hat: np.ndarray
    gamma_hat: np.ndarray
    pair_counts: np.ndarray
    binned: bool = False
    sample_variance: float = float("nan")
    n_replicates: int = 1

    def __post_init__(self):
        n = len(self.distances)
        if not (len(self.cov_hat) == len(self.gamma_hat) == len(self.pair_counts) == n):
            raise ValidationError("summary arrays must have equal length")
        if n and np.any(np.diff(self.distances) <= 0):
            raise ValidationError("distances must be strictly increasing")
        if np.any(np.asarray(self.pair_counts) < 1):
            raise ValidationError("pair counts must be positive")

    def as_table(self):
        """``(L, 4)`` array of distance, covariance, semivariance, pair count."""
        return np.column_stack([self.distances, self.cov_hat, self.gamma_hat, self.pair_counts])


def _group_distances(d, rel_tol=1e-9):
    """Label each distance with the index of its distinct value."""
    order = np.argsort(d, kind="stable")
    ds = d[order]
    scale = max(float(ds[-1]), 1.0)
    new = np.empty(ds.size, dtype=bool)
    new[0] = True
    new[1:] = np.diff(ds) > rel_tol * scale
    labels_sorted = np.cumsum(new) - 1
    labels = np.empty_like(labels_sorted)
    labels[order] = labels_sorted
    return labels, int(labels_sorted[-1]) + 1


def empirical_summary(dataset, bins=None):
    """Replicate-averaged empirical covariance and semivariogram.

    For each distinct pair distance (``bins=None``) or each of ``bins``
    equal-width distance bins over ``[h_min, h_max]`` (``bins=True`` means
    30 bins):

    * ``gamma_hat`` is the average over replicates and pairs of ``(Y_i - Y_j)^2 / 2``;
    * ``cov_hat`` is the average of ``Y_i Y_j`` (mean-zero convention).

    Only pairs ``i < j`` enter. Binned distances are pair-count weighted
    means of the member distances.
    """
    if dataset.n < 2:
        raise ValidationError("need at least two sites")
    Y = dataset.obs
    r = Y.shape[0]
    P = (Y.T @ Y) / r
    iu = np.triu_indices(dataset.n, 1)
    d = dataset.distances[iu]
    prod = P[iu]
    diag = np.diag(P)
    semi = 0.5 * (diag[iu[0]] + diag[iu[1]] - 2.0 * prod)
    if bins is True:
        bins = DEFAULT_BINS
    if bins is None or bins is False:
        bins = None
        labels, L = _group_distances(d)
    else:
        bins = int(bins)
        if bins < 1:
            raise DomainError("bins must be positive")
        lo, hi = float(d.min()), float(d.max())
        width = (hi - lo) / bins if hi > lo else 1.0
        labels = np.minimum(((d - lo) / width).astype(int), bins - 1)
        L = bins
    counts = np.bincount(labels, minlength=L)
    keep = counts > 0
    counts_k = counts[keep]
    dist = np.bincount(labels, weights=d, minlength=L)[keep] / counts_k
    cov = np.bincount(labels, weights=prod, minlength=L)[keep] / counts_k
    gam = np.bincount(labels, weights=semi, minlength=L)[keep] / counts_k
    return EmpiricalSummary(
        distances=dist,
        cov_hat=cov,
        gamma_hat=gam,
        pair_counts=counts_k.astype(int),
        binned=bins is not None,
        sample_variance=float(np.mean(Y * Y)),
        n_replicates=r,
    )


@dataclass(frozen=True)
class WlsSpec:
    """What to fit and how to weight it.

    Attributes
    ----------
    target : {"covariance", "semivariogram"}
    weights : {"uniform", "pair_count"} or array_like
        Per-distance weights; ``pair_count`` uses ``N(h_i)``.
    model : str
        A parametric family name, or ``"sieve"``.
    m : int
        Sieve order when ``model == "sieve"``.
    nugget : bool
        Fit a nugget (semivariogram target only; covariance fits use distinct
        pairs, which carry no nugget).
    fixed_sill : float, optional
        For semivariogram fits: hold ``sigma2 + nugget`` at this value.
    """

    target: str = "covariance"
    weights: object = "pair_count"
    model: str = "Matern"
    m: int = 5
    nugget: bool = False
    fixed_sill: float = None

    def __post_init__(self):
        if self.target not in ("covariance", "semivariogram"):
            raise DomainError("target must be 'covariance' or 'semivariogram'")
        if self.model != "sieve" and self.model not in FAMILIES:
            raise DomainError(f"unknown model {self.model!r}")
        if isinstance(self.weights, str) and self.weights not in ("uniform", "pair_count"):
            raise DomainError("weights must be 'uniform', 'pair_count' or an array")


@dataclass
class WlsResult:
    """Fitted model with the attained weighted squared error."""

    model: object
    objective: float
    converged: bool = True
    c0_hat: float = float("nan")
    diagnostics: dict = field(default_factory=dict)


def wls_weights(summary, scheme):
    if isinstance(scheme, str):
        if scheme == "uniform":
            w = np.ones(len(summary.distances))
        elif scheme == "pair_count":
            w = np.asarray(summary.pair_counts, dtype=float)
        else:
            raise DomainError(f"unknown weight scheme {scheme!r}")
    else:
        w = np.asarray(scheme, dtype=float)
    if w.shape != (len(summary.distances),):
        raise ValidationError("weights must have one entry per distance")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValidationError("weights must be nonnegative and not all zero")
    return w


# --- parametric fits ---------------------------------------------------------

def _initial_sill(summary, y, cov_target):
    """Starting sill read off the data rather than the sample variance.

    The sample variance contains any nugget, which distinct pairs never see;
    covariance fits start from the short-lag covariance, semivariogram fits
    from the long-lag semivariance.
    """
    L = len(y)
    k = max(3, L // 10)
    w = np.asarray(summary.pair_counts, dtype=float)
    part = slice(0, k) if cov_target else slice(max(L - k, 0), L)
    sill = float(np.average(y[part], weights=w[part]))
    scale = abs(summary.sample_variance) if math.isfinite(summary.sample_variance) else float(np.max(np.abs(y)))
    return max(sill, 1e-3 * max(scale, 1e-8), 1e-12)


def _initial_params(family, summary, sill):
    h = summary.distances
    rho0 = float(np.median(h)) / 3.0
    return {
        "Matern": (sill, rho0, 1.0),
        "Cauchy": (sill, rho0),
        "Gaussian": (sill, rho0),
        "GenCauchy": (sill, rho0, 1.0, 1.0),
        "LinearMatern": (sill, rho0, 2 * rho0, 0.5, 1.5),
    }[family]


def _fit_parametric(summary, spec, wts):
    h = summary.distances
    cov_target = spec.target == "covariance"
    y = summary.cov_hat if cov_target else summary.gamma_hat
    fam = spec.model
    fit_nugget = spec.nugget and not cov_target
    sill0 = _initial_sill(summary, y, cov_target)
    fixed = spec.fixed_sill

    def build(x):
        x = np.asarray(x)
        params = list(from_unconstrained(fam, x[: len(FAMILIES[fam])]))
        nug = math.exp(float(np.clip(x[-1], -30, 30))) if fit_nugget else 0.0
        if fixed is not None:
            frac = 1.0 / (1.0 + math.exp(-float(x[-1]))) if fit_nugget else 0.0
            nug = fixed * frac
            params[0] = fixed - nug
        return ParametricCovariance(fam, tuple(params), nug)

    def objective(x):
        try:
            mod = build(x)
        except DomainError:
            return 1e300
        corr = mod.correlation(h)
        pred = mod.sigma2 * corr if cov_target else mod.nugget + mod.sigma2 * (1.0 - corr)
        res = y - pred
        val = float(wts @ (res * res))
        return val if math.isfinite(val) else 1e300

    x0 = to_unconstrained(fam, _initial_params(fam, summary, sill0))
    if fit_nugget:
        x0 = np.append(x0, 0.0 if fixed is not None else math.log(0.1 * sill0))
    starts = [x0]
    for f in (0.3, 3.0):
        xs = x0.copy()
        xs[1] += math.log(f)
        starts.append(xs)
    best = None
    for xs in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sol = optimize.minimize(objective, xs, method="Nelder-Mead",
                                    options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000, "maxfev": 8000})
            sol = optimize.minimize(objective, sol.x, method="BFGS", options={"gtol": 1e-12})
        if best is None or sol.fun < best.fun:
            best = sol
    model = build(best.x)
    if fixed is not None and not fit_nugget:
        model = ParametricCovariance(fam, (fixed,) + model.params[1:], 0.0)
    return model, float(best.fun), bool(best.success or best.status == 2)


# --- sieve fits --------------------------------------------------------------


def _sieve_design(h, rho, m, cov_target, fit_nugget):
    A = basis_matrix(h / rho, m)
    if cov_target:
        return A
    B = 1.0 - A
    if fit_nugget:
        B = np.column_stack([B, np.ones_like(h)])
    return B


def _sieve_nnls(h, y, wts, rho, m, cov_target, fit_nugget):
    sw = np.sqrt(wts)
    B = _sieve_design(h, rho, m, cov_target, fit_nugget)
    coef, rnorm = optimize.nnls(B * sw[:, None], y * sw, maxiter=50 * B.shape[1])
    return coef, rnorm * rnorm


def _fit_sieve(summary, spec, wts):
    h = summary.distances
    cov_target = spec.target == "covariance"
    y = summary.cov_hat if cov_target else summary.gamma_hat
    fit_nugget = spec.nugget and not cov_target
    m = int(spec.m)
    pos = h[h > 0]
    lo, hi = float(pos.min()) / 10.0, float(pos.max()) * 2.0
    grid = np.exp(np.linspace(math.log(lo), math.log(hi), 61))
    vals = [_sieve_nnls(h, y, wts, rho, m, cov_target, fit_nugget)[1] for rho in grid]
    i = int(np.argmin(vals))
    a, b = math.log(grid[max(i - 1, 0)]), math.log(grid[min(i + 1, len(grid) - 1)])
    sol = optimize.minimize_scalar(
        lambda t: _sieve_nnls(h, y, wts, math.exp(t), m, cov_target, fit_nugget)[1],
        bounds=(a, b),
        method="bounded",
        options={"xatol": 1e-10},
    )
    rho = math.exp(sol.x) if sol.fun <= vals[i] else grid[i]
    coef, obj = _sieve_nnls(h, y, wts, rho, m, cov_target, fit_nugget)
    nug = float(coef[m]) if fit_nugget else 0.0
    v = coef[:m]
    if v.sum() <= 0:
        v = np.full(m, 1e-12)
    model = SieveCovariance.from_nonnegative(v, rho=rho, nugget=nug)
    return model, float(obj), True


def wls_fit(summary, spec):
    """Weighted least-squares fit of a model to an empirical summary.

    Minimizes ``sum_i w_i (E(h_i) - M_theta(h_i))^2`` where ``E`` is the
    empirical covariance or semivariogram. Parametric families are fitted in
    an unconstrained reparameterization (logs, and a logistic map for
    ``kappa2``). The sieve is fitted by nonnegative least squares in the
    scaled weights at each range, with a one-dimensional search over the range.

    ``c0_hat`` is the fitted variance at the origin; for semivariogram fits it
    is read off as the fitted semivariogram at the largest distance.
    """
    wts = wls_weights(summary, spec.weights)
    if spec.model == "sieve":
        model, obj, ok = _fit_sieve(summary, spec, wts)
    else:
        model, obj, ok = _fit_parametric(summary, spec, wts)
    if spec.target == "semivariogram":
        hmax = float(summary.distances[-1])
        c0 = float(model.nugget + model.sigma2 * (1.0 - float(np.asarray(_corr(model, np.array([hmax])))[0])))
    else:
        c0 = float(model.sigma2)
    return WlsResult(model=model, objective=obj, converged=ok, c0_hat=c0)


def _corr(model, h):
    if isinstance(model, SieveCovariance):
        return basis_matrix(h / model.rho, model.m) @ model.weights
    return model.correlation(h)


def nugget_adapted_cov_fit(dataset, spec=None, bins=None):
    """Covariance fit on distinct pairs, nugget from the sample variance.

    The model is fitted to the empirical covariance of pairs ``i != j``; the
    nugget is then ``sample_variance - C_theta(0)``, floored at zero. The raw
    (possibly negative) value is kept in ``diagnostics["raw_nugget"]``.
    """
    spec = spec or WlsSpec(target="covariance")
    if spec.target != "covariance":
        raise DomainError("the nugget adaptation applies to covariance fits")
    summary = empirical_summary(dataset, bins=bins)
    res = wls_fit(summary, spec)
    raw = summary.sample_variance - res.model.sigma2
    tau2 = max(raw, 0.0)
    if isinstance(res.model, SieveCovariance):
        model = SieveCovariance(res.model.weights, res.model.rho, res.model.sigma2, tau2)
    else:
        model = ParametricCovariance(res.model.family, res.model.params, tau2)
    res.model = model
    res.diagnostics["raw_nugget"] = raw
    res.diagnostics["negative_nugget"] = raw < 0
    res.c0_hat = model.sigma2
    return res


def detrend_two_way_anova(panel, mask=None, coords=None, labels=None):
    """Residuals of ``Y_ij = mu + alpha_i + beta_j + e_ij`` on a complete panel.

    Parameters
    ----------
    panel : array_like
        ``(stations, years)`` matrix.
    mask : array_like of bool, optional
        ``True`` where a value is observed; must be all ``True``.
    coords : array_like, optional
        Station coordinates; when given, a :class:`SpatialDataset` with years
        as replicates is returned instead of the residual matrix.

    Returns
    -------
    residuals : numpy.ndarray or SpatialDataset
    effects : dict
        ``mu``, ``alpha`` (stations) and ``beta`` (years), each effect vector
        summing to zero.
    """
    Y = np.asarray(panel, dtype=float)
    if Y.ndim != 2:
        raise ValidationError("panel must be a 2-D station-by-year matrix")
    if mask is not None and not np.all(np.asarray(mask, dtype=bool)):
        raise ValidationError("panel has missing cells; drop incomplete stations first")
    if not np.all(np.isfinite(Y)):
        raise ValidationError("panel has missing or non-finite cells")
    if Y.shape[0] < 2 or Y.shape[1] < 2:
        raise ValidationError("need at least two stations and two years")
    mu = float(Y.mean())
    alpha = Y.mean(axis=1) - mu
    beta = Y.mean(axis=0) - mu
    resid = Y - mu - alpha[:, None] - beta[None, :]
    effects = {"mu": mu, "alpha": alpha, "beta": beta}
    if coords is None:
        return resid, effects
    return SpatialDataset(coords=np.asarray(coords, dtype=float), obs=resid.T, labels=labels), effects
