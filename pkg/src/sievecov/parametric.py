"""Parametric isotropic covariance families.

Parameter order per family:

=============  ==========================================
Matern         sigma2, rho, nu
Cauchy         sigma2, rho
Gaussian       sigma2, rho
GenCauchy      sigma2, rho, kappa1, kappa2
LinearMatern   sigma2, rho1, rho2, nu1, nu2
=============  ==========================================

LinearMatern is the equal-weight mixture of two Matern models sharing
``sigma2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import DomainError

__all__ = [
    "FAMILIES",
    "ParametricCovariance",
    "bessel_k",
    "matern_correlation",
    "eval_parametric",
    "semivariogram_of",
    "to_unconstrained",
    "from_unconstrained",
]

FAMILIES = {
    "Matern": ("sigma2", "rho", "nu"),
    "Cauchy": ("sigma2", "rho"),
    "Gaussian": ("sigma2", "rho"),
    "GenCauchy": ("sigma2", "rho", "kappa1", "kappa2"),
    "LinearMatern": ("sigma2", "rho1", "rho2", "nu1", "nu2"),
}

# below this scaled distance x^nu K_nu(x) equals its limit to double precision
_MATERN_ORIGIN = 1e-12


def bessel_k(nu, x):
    """Modified Bessel function of the second kind ``K_nu(x)`` for ``x > 0``."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(~(x_arr > 0.0)):
        raise DomainError("bessel_k needs x > 0")
    out = special.kv(nu, x_arr)
    return float(out) if np.ndim(x) == 0 else out


def matern_correlation(h, rho, nu):
    """Matern correlation ``x^nu K_nu(x) / (2^(nu-1) Gamma(nu))`` with ``x = h/rho``."""
    x = np.asarray(h, dtype=float) / rho
    out = np.ones_like(x)
    pos = x > _MATERN_ORIGIN
    xp = x[pos]
    # log-space prefactor keeps large nu from overflowing; the exponentially
    # scaled kve keeps x^nu and K_nu(x) from meeting as inf * 0 in the tail
    logc = (1.0 - nu) * math.log(2.0) - special.gammaln(nu)
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        out[pos] = np.exp(logc + nu * np.log(xp) - xp) * special.kve(nu, xp)
    out[pos & ~np.isfinite(out)] = 0.0
    return out


@dataclass(frozen=True)
class ParametricCovariance:
    """A parametric covariance: family tag, parameter tuple, nugget."""

    family: str
    params: tuple
    nugget: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}; expected one of {sorted(FAMILIES)}")
        params = tuple(float(p) for p in self.params)
        names = FAMILIES[self.family]
        if len(params) != len(names):
            raise DomainError(f"{self.family} takes {len(names)} parameters {names}, got {len(params)}")
        if not all(math.isfinite(p) for p in params):
            raise DomainError("parameters must be finite")
        if not (self.nugget >= 0 and math.isfinite(self.nugget)):
            raise DomainError("nugget must be nonnegative")
        p = dict(zip(names, params))
        if p["sigma2"] <= 0:
            raise DomainError("sigma2 must be positive")
        for key in ("rho", "rho1", "rho2", "nu", "nu1", "nu2", "kappa1"):
            if key in p and p[key] <= 0:
                raise DomainError(f"{key} must be positive")
        if "kappa2" in p and not 0 < p["kappa2"] <= 2:
            raise DomainError("kappa2 must lie in (0, 2]")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "nugget", float(self.nugget))

    @property
    def sigma2(self):
        return self.params[0]

    @property
    def variance(self):
        return self.params[0] + self.nugget

    def as_dict(self):
        return dict(zip(FAMILIES[self.family], self.params))

    def correlation(self, h):
        """Correlation at distance ``h`` ignoring the nugget."""
        h = np.asarray(h, dtype=float)
        p = self.params
        if self.family == "Matern":
            return matern_correlation(h, p[1], p[2])
        if self.family == "Cauchy":
            return 1.0 / np.sqrt(1.0 + (h / p[1]) ** 2)
        if self.family == "Gaussian":
            return np.exp(-((h / p[1]) ** 2))
        if self.family == "GenCauchy":
            _, rho, k1, k2 = p
            return (1.0 + (h / rho) ** k2) ** (-k1 / k2)
        _, rho1, rho2, nu1, nu2 = p
        return 0.5 * matern_correlation(h, rho1, nu1) + 0.5 * matern_correlation(h, rho2, nu2)

    def __call__(self, h):
        return eval_parametric(self, h)

    def to_dict(self):
        return {"family": self.family, "params": list(self.params), "nugget": self.nugget}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], tuple(d["params"]), d.get("nugget", 0.0))


def eval_parametric(model, h):
    """Covariance ``C(h) + nugget * 1{h == 0}``."""
    scalar = np.ndim(h) == 0
    h = np.asarray(h, dtype=float)
    if np.any(~(h >= 0.0)):
        raise DomainError("distances must be nonnegative")
    out = model.sigma2 * model.correlation(h)
    if model.nugget:
        out = out + model.nugget * (h == 0.0)
    return float(out) if scalar else out


def semivariogram_of(model, h):
    """Semivariogram ``C(0) - C(h)`` (zero at the origin, nugget in ``C(0)``).

    ``model`` is any callable covariance accepting array distances.
    """
    scalar = np.ndim(h) == 0
    h = np.asarray(h, dtype=float)
    if np.any(~(h >= 0.0)):
        raise DomainError("distances must be nonnegative")
    c0 = float(np.asarray(model(np.zeros(1)))[0])
    out = np.where(h == 0.0, 0.0, c0 - np.asarray(model(h), dtype=float))
    return float(out) if scalar else out


def to_unconstrained(family, params):
    """Map family parameters to R^p: logs, and a logit of ``kappa2 / 2``."""
    out = []
    for name, p in zip(FAMILIES[family], params):
        if name == "kappa2":
            t = min(max(p / 2.0, 1e-9), 1 - 1e-9)
            out.append(math.log(t / (1 - t)))
        else:
            out.append(math.log(p))
    return np.array(out)


def from_unconstrained(family, x):
    """Inverse of :func:`to_unconstrained` (arguments clipped to +-30)."""
    out = []
    for name, v in zip(FAMILIES[family], x):
        v = float(np.clip(v, -30.0, 30.0))
        out.append(2.0 / (1.0 + math.exp(-v)) if name == "kappa2" else math.exp(v))
    return tuple(out)
