"""Sieve basis functions and the covariance model they span.

The basis functions are

    A_{k,m}(h) = prod_{j=k}^{m} (1 + h^2 / j)^{-1},   1 <= k <= m,

each of which is a valid isotropic correlation function in every dimension.
A sieve covariance is ``sigma2 * sum_k w_k A_{k,m}(h / rho)`` with weights on
the probability simplex, plus a nugget at the origin.

Weights follow the simplex convention (``C(0) = sigma2`` before the nugget).
The Bernstein-coefficient form, in which ``C = (1/m) sum_k c_k A_{k,m}``, only
appears in :func:`lift_bernstein_coefficients`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .exceptions import DomainError

__all__ = [
    "SieveCovariance",
    "basis_eval",
    "basis_eval_beta",
    "basis_matrix",
    "cov_eval",
    "correlation_eval",
    "lift_weights",
    "lift_bernstein_coefficients",
    "g_density",
    "spectral_density_f",
]

SIMPLEX_TOL = 1e-10
_PRODUCT_MAX_FACTORS = 64
_STIRLING_MIN_ARG = 20.0
# B_{2k} / (2k (2k-1)) for k = 1..6
_STIRLING_COEFFS = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
)


def _check_km(k, m):
    if int(m) != m or m < 1:
        raise DomainError(f"m must be a positive integer, got {m!r}")
    if int(k) != k or not 1 <= k <= m:
        raise DomainError(f"k must be an integer in [1, {m}], got {k!r}")


def _check_h(h):
    h = float(h)
    if not h >= 0.0 or not math.isfinite(h):
        raise DomainError(f"distance must be finite and nonnegative, got {h!r}")
    return h


def basis_eval(k, m, h):
    """Evaluate ``A_{k,m}(h)`` in product form.

    Products of more than 64 factors are accumulated in log space.
    """
    _check_km(k, m)
    h = _check_h(h)
    k, m = int(k), int(m)
    h2 = h * h
    if m - k + 1 <= _PRODUCT_MAX_FACTORS:
        out = 1.0
        for j in range(k, m + 1):
            out /= 1.0 + h2 / j
        return out
    j = np.arange(k, m + 1, dtype=float)
    return math.exp(-math.fsum(np.log1p(h2 / j)))


def _stirling_tail(z):
    zi = 1.0 / z
    zi2 = zi * zi
    acc = 0.0
    p = zi
    for c in _STIRLING_COEFFS:
        acc += c * p
        p *= zi2
    return acc


def _log_gamma_ratio(x, n):
    """Return ``lnGamma(x) - lnGamma(x + n)`` for ``x > 0``, integer ``n >= 0``.

    For large ``x`` the difference is formed from Stirling's series so that the
    two large log-Gamma values never get subtracted directly.
    """
    if n == 0:
        return 0.0
    if x < _STIRLING_MIN_ARG:
        return float(special.gammaln(x) - special.gammaln(x + n))
    b = x + n
    return (
        -n * math.log(b)
        + (x - 0.5) * math.log1p(-n / b)
        + n
        + _stirling_tail(x)
        - _stirling_tail(b)
    )


def basis_eval_beta(k, m, h):
    """Evaluate ``A_{k,m}(h)`` as ``B(k + h^2, m-k+1) / B(k, m-k+1)``.

    The ratio is taken through log-Gamma differences, independently of the
    product form used by :func:`basis_eval`.
    """
    _check_km(k, m)
    h = _check_h(h)
    k, m = int(k), int(m)
    n = m - k + 1
    log_a = _log_gamma_ratio(k + h * h, n) - _log_gamma_ratio(float(k), n)
    return math.exp(log_a)


def basis_matrix(h, m):
    """Evaluate every basis function of order ``m`` at the distances ``h``.

    Parameters
    ----------
    h : array_like
        Nonnegative distances, any shape.
    m : int
        Sieve order.

    Returns
    -------
    numpy.ndarray
        Array of shape ``h.shape + (m,)`` whose last axis holds
        ``A_{1,m}(h), ..., A_{m,m}(h)``.
    """
    if int(m) != m or m < 1:
        raise DomainError(f"m must be a positive integer, got {m!r}")
    m = int(m)
    h = np.asarray(h, dtype=float)
    if np.any(~(h >= 0.0)) or not np.all(np.isfinite(h)):
        raise DomainError("distances must be finite and nonnegative")
    j = np.arange(1, m + 1, dtype=float)
    logs = np.log1p((h * h)[..., None] / j)
    # reverse cumulative sum: sum_{j=k}^m
    tail = np.cumsum(logs[..., ::-1], axis=-1)[..., ::-1]
    return np.exp(-tail)


@dataclass(frozen=True)
class SieveCovariance:
    """Fitted or specified sieve covariance model.

    Attributes
    ----------
    weights : numpy.ndarray
        Simplex weights ``w_1..w_m``.
    rho : float
        Range parameter; distances are divided by ``rho`` before evaluation.
    sigma2 : float
        Marginal (partial-sill) variance.
    nugget : float
        Nugget variance added at zero distance.
    """

    weights: np.ndarray
    rho: float = 1.0
    sigma2: float = 1.0
    nugget: float = 0.0
    m: int = field(init=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size < 1:
            raise DomainError("need at least one weight")
        if np.any(~np.isfinite(w)) or np.any(w < 0.0):
            raise DomainError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise DomainError(f"weights must sum to 1, got {w.sum()!r}")
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise DomainError(f"rho must be positive, got {self.rho!r}")
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise DomainError(f"sigma2 must be positive, got {self.sigma2!r}")
        if not (self.nugget >= 0 and math.isfinite(self.nugget)):
            raise DomainError(f"nugget must be nonnegative, got {self.nugget!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "m", int(w.size))
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "nugget", float(self.nugget))

    @classmethod
    def from_nonnegative(cls, coefs, rho=1.0, nugget=0.0):
        """Build from unnormalized nonnegative coefficients (``sigma2 = sum``)."""
        coefs = np.asarray(coefs, dtype=float)
        total = coefs.sum()
        if not total > 0:
            raise DomainError("coefficients must have positive sum")
        w = np.clip(coefs / total, 0.0, None)
        return cls(w / w.sum(), rho=rho, sigma2=float(total), nugget=nugget)

    def __call__(self, h):
        return cov_eval(self, h)

    @property
    def variance(self):
        """Total variance at the origin, ``sigma2 + nugget``."""
        return self.sigma2 + self.nugget

    def to_dict(self):
        return {
            "m": self.m,
            "weights": [float(x) for x in self.weights],
            "rho": self.rho,
            "sigma2": self.sigma2,
            "nugget": self.nugget,
        }

    @classmethod
    def from_dict(cls, d):
        model = cls(d["weights"], rho=d["rho"], sigma2=d["sigma2"], nugget=d.get("nugget", 0.0))
        if "m" in d and int(d["m"]) != model.m:
            raise DomainError(f"record says m={d['m']} but carries {model.m} weights")
        return model

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def correlation_eval(model, h):
    """Correlation ``sum_k w_k A_{k,m}(h / rho)``, nugget excluded."""
    h = np.asarray(h, dtype=float)
    A = basis_matrix(h / model.rho, model.m)
    return A @ model.weights


def cov_eval(model, h):
    """Evaluate the sieve covariance, adding the nugget at ``h == 0``.

    Accepts scalars or arrays; returns a float for scalar input.
    """
    scalar = np.ndim(h) == 0
    h = np.asarray(h, dtype=float)
    if np.any(~(h >= 0.0)):
        raise DomainError("distances must be nonnegative")
    out = model.sigma2 * correlation_eval(model, h)
    if model.nugget:
        out = out + model.nugget * (h == 0.0)
    return float(out) if scalar else out


def lift_bernstein_coefficients(w):
    """Degree-elevate Bernstein coefficients from order ``m`` to ``m + 1``.

    Works in the ``C_m = (1/m) sum_k w_k A_{k,m}`` parameterization; the returned
    ``c`` satisfies ``(1/m) sum w_k A_{k,m} == (1/(m+1)) sum c_k A_{k,m+1}``.
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    if np.any(w < 0.0) or np.any(~np.isfinite(w)):
        raise DomainError("coefficients must be finite and nonnegative")
    m = w.size
    k = np.arange(1, m + 2, dtype=float)
    c = np.zeros(m + 1)
    # C(m-1,k-1)/C(m,k-1) = (m-k+1)/m and C(m-1,k-2)/C(m,k-1) = (k-1)/m
    c[:m] += w * (m - k[:m] + 1.0) / m
    c[1:] += w * (k[1:] - 1.0) / m
    return c


def lift_weights(weights):
    """Express an order-``m`` simplex model exactly as an order-``m+1`` one.

    Returns simplex weights ``u`` with ``sum_k u_k A_{k,m+1} == sum_k w_k A_{k,m}``
    for every distance.
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    if np.any(w < 0.0) or np.any(~np.isfinite(w)):
        raise DomainError("weights must be finite and nonnegative")
    m = w.size
    c = lift_bernstein_coefficients(m * w)
    return c / (m + 1)


def g_density(model, s):
    """Bernstein-form density on ``[0, 1]`` implied by the weights.

    ``g_m(s) = sum_k w_k C(m-1, k-1) s^(k-1) (1-s)^(m-k)``. Only the shape
    (weights) enters; ``rho`` and ``sigma2`` are ignored.
    """
    scalar = np.ndim(s) == 0
    s = np.asarray(s, dtype=float)
    if np.any(~((s >= 0.0) & (s <= 1.0))):
        raise DomainError("s must lie in [0, 1]")
    m = model.m
    k = np.arange(m)
    pmf = stats.binom.pmf(k, m - 1, s[..., None])
    out = pmf @ model.weights
    return float(out) if scalar else out


def spectral_density_f(model, r):
    """Spectral density ``f_m(r) = 2 r exp(-r^2) g_m(exp(-r^2))``."""
    scalar = np.ndim(r) == 0
    r = np.asarray(r, dtype=float)
    if np.any(~(r >= 0.0)):
        raise DomainError("r must be nonnegative")
    e = np.exp(-r * r)
    out = 2.0 * r * e * g_density(model, e)
    return float(out) if scalar else out
