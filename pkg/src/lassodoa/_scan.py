"""Dense one-dimensional scans with local polishing of the maxima."""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize_scalar


def local_maxima(values, periodic: bool) -> np.ndarray:
    """Indices of (weak-left, strict-right) local maxima of a sampled curve."""
    v = np.asarray(values, dtype=float)
    if v.size < 3:
        return np.array([int(np.argmax(v))])
    if periodic:
        left, right = np.roll(v, 1), np.roll(v, -1)
    else:
        left = np.concatenate(([-np.inf], v[:-1]))
        right = np.concatenate((v[1:], [-np.inf]))
    return np.flatnonzero((v >= left) & (v > right))


def polish_maximum(f, theta0: float, step: float, manifold, xatol: float = 1e-12):
    """Refine a sampled maximum of the scalar function ``f`` inside ``theta0 +- step``."""
    lo, hi = theta0 - step, theta0 + step
    if not manifold.periodic:
        lo, hi = max(lo, manifold.domain[0]), min(hi, manifold.domain[1])

    def neg(t):
        return -f(float(manifold.wrap(t)))

    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": xatol})
    t, val = float(manifold.wrap(res.x)), -float(res.fun)
    f0 = f(float(theta0))
    if f0 > val:
        return float(theta0), f0
    return t, val


def scan_maxima(manifold, thetas, values, f, top: int | None = None, floor: float = -np.inf):
    """Polish the sampled local maxima of ``f`` and return ``[(theta, value), ...]``.

    ``values`` are samples of ``f`` at the sorted ``thetas``. Only maxima
    with sampled value above ``floor`` are refined; ``top`` caps how many
    of the largest are refined. Results are sorted by decreasing value.
    """
    thetas = np.asarray(thetas, dtype=float)
    values = np.asarray(values, dtype=float)
    idx = local_maxima(values, manifold.periodic)
    idx = idx[values[idx] > floor]
    idx = idx[np.argsort(values[idx])[::-1]]
    if top is not None:
        idx = idx[:top]
    step = np.max(np.diff(thetas)) if thetas.size > 1 else manifold.width
    out = [polish_maximum(f, thetas[i], step, manifold) for i in idx]
    out.sort(key=lambda p: -p[1])
    return out
