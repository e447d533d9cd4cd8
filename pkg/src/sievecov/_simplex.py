"""Helpers for optimization over the probability simplex."""

import numpy as np


def project_simplex(v):
    """Euclidean projection of ``v`` onto ``{w : w >= 0, sum(w) = 1}``.

    Sort-based algorithm (Held, Wolfe & Crowder 1974; Duchi et al. 2008).
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, n + 1)
    cond = u - css / idx > 0
    r = idx[cond][-1]
    theta = css[r - 1] / r
    return np.maximum(v - theta, 0.0)


def simplex_kkt_residual(w, grad, tol_active=0.0):
    """KKT residual of ``min f(w)`` over the simplex given ``grad = f'(w)``.

    The multiplier of ``sum(w) = 1`` is estimated as ``w @ grad``. Free
    coordinates must have ``grad_i == lam``; coordinates at zero must have
    ``grad_i >= lam``.
    """
    w = np.asarray(w, dtype=float)
    grad = np.asarray(grad, dtype=float)
    lam = float(w @ grad)
    free = w > tol_active
    stat = np.abs(grad[free] - lam)
    dual = np.maximum(lam - grad[~free], 0.0)
    parts = [0.0, abs(w.sum() - 1.0), float(np.maximum(-w, 0.0).max(initial=0.0))]
    if stat.size:
        parts.append(float(stat.max()))
    if dual.size:
        parts.append(float(dual.max()))
    return max(parts)
