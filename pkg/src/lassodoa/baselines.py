"""Reference estimators: deterministic maximum likelihood (NLLS) and beamforming."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

from . import _scan
from .manifold import Manifold

__all__ = ["BaselineEstimate", "nlls_objective", "nlls_ml_estimate", "cbf_spectrum", "cbf_estimate"]


@dataclass(frozen=True)
class BaselineEstimate:
    thetas: np.ndarray
    amplitudes: np.ndarray
    method: str
    objective: float
    flagged: bool = False
    message: str = ""

    @property
    def order(self) -> int:
        return self.thetas.size


def _as_matrix(X):
    X = np.asarray(X, dtype=complex)
    return X[:, None] if X.ndim == 1 else X


def _ls_amplitudes(A, X):
    return np.linalg.lstsq(A, X, rcond=None)[0]


def nlls_objective(X, manifold: Manifold, thetas) -> float:
    """``min_S ||X - A(theta) S||_F^2``."""
    X = _as_matrix(X)
    A = manifold.vectors(np.atleast_1d(thetas))
    R = X - A @ _ls_amplitudes(A, X)
    return float(np.vdot(R, R).real)


def cbf_spectrum(X, manifold: Manifold, thetas) -> np.ndarray:
    """Beamforming spectrum ``||a^H(theta) X||^2``."""
    return np.sum(np.abs(manifold.correlate(_as_matrix(X), np.asarray(thetas, dtype=float))) ** 2, axis=1)


def _cbf_peaks(X, manifold, scan_fineness):
    fineness = scan_fineness or np.pi / (64 * manifold.m)
    n_pts = max(int(math.ceil(manifold.width / (2 * fineness))) + 1, 4 * manifold.m)
    thetas, C = manifold.dual_scan(X, n_pts)
    vals = np.sum(np.abs(C) ** 2, axis=1)

    def f(t):
        return float(np.sum(np.abs(manifold.vectors([t]).conj().T @ X) ** 2))

    return _scan.scan_maxima(manifold, thetas, vals, f), thetas[1] - thetas[0]


def cbf_estimate(
    X, manifold: Manifold, n: int, scan_fineness: Optional[float] = None, floor_db: float = 10.0
) -> BaselineEstimate:
    """The ``n`` largest local maxima of the beamforming spectrum.

    Only maxima within ``floor_db`` of the global peak count, which keeps
    array sidelobes (-13 dB for a ULA) out. Flagged when fewer than ``n``
    such maxima exist.
    """
    if n < 1:
        raise ValueError("n must be positive")
    X = _as_matrix(X)
    peaks, step = _cbf_peaks(X, manifold, scan_fineness)
    chosen = []
    floor = peaks[0][1] * 10 ** (-floor_db / 10)
    for t, v in peaks:
        if v < floor:
            break
        if all(manifold.distance(t, u) > step for u in chosen):
            chosen.append(t)
        if len(chosen) == n:
            break
    th = np.sort(np.array(chosen))
    A = manifold.vectors(th)
    S = _ls_amplitudes(A, X)
    obj = nlls_objective(X, manifold, th)
    flagged = len(chosen) < n
    return BaselineEstimate(th, S, "cbf", obj, flagged, "fewer spectrum peaks than sources" if flagged else "")


def _refine(X, manifold, th0, gtol):
    """Variable-projection Levenberg-Marquardt on the concentrated cost."""
    m, T = X.shape
    n = th0.size

    def resid(th):
        A = manifold.vectors(manifold.wrap(th))
        R = X - A @ _ls_amplitudes(A, X)
        return np.concatenate([R.real.ravel(), R.imag.ravel()])

    def jac(th):
        th = manifold.wrap(th)
        A = manifold.vectors(th)
        D = manifold.derivatives(th)
        S = _ls_amplitudes(A, X)
        Q, _ = np.linalg.qr(A)
        J = np.empty((2 * m * T, n))
        for i in range(n):
            # Kaufman approximation of the projected Jacobian
            Ji = -(D[:, [i]] - Q @ (Q.conj().T @ D[:, [i]])) @ S[[i]]
            J[:, i] = np.concatenate([Ji.real.ravel(), Ji.imag.ravel()])
        return J

    if manifold.periodic:
        res = least_squares(resid, th0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=gtol, max_nfev=400)
    else:
        lo, hi = manifold.domain
        res = least_squares(
            resid, np.clip(th0, lo, hi), jac=jac, bounds=(lo, hi), method="trf", xtol=1e-15, ftol=1e-15, gtol=gtol, max_nfev=400
        )
    th = np.asarray(manifold.wrap(res.x), dtype=float)
    return th, 2 * float(res.cost), res.status > 0


def nlls_ml_estimate(
    X,
    manifold: Manifold,
    n: int,
    multistart: Optional[int] = None,
    seed: int = 0,
    gtol: float = 1e-10,
    scan_fineness: Optional[float] = None,
) -> BaselineEstimate:
    """Deterministic maximum-likelihood positions by nonlinear least squares.

    Starting points are subsets of the beamforming peaks, split peaks for
    unresolved pairs, and jittered copies of the best start; each is refined
    by Levenberg-Marquardt with the amplitudes projected out. The best local
    optimum is returned; it is flagged when no refinement converged.
    """
    X = _as_matrix(X)
    if n < 1 or n > manifold.m:
        raise ValueError("need 1 <= n <= m")
    multistart = multistart or 8 * n
    rng = np.random.default_rng(seed)
    peaks, step = _cbf_peaks(X, manifold, scan_fineness)
    tops = [t for t, _ in peaks[: 2 * n]]
    width = manifold.width / manifold.m
    starts = [np.array(c) for c in itertools.combinations(tops, n)] if len(tops) >= n else []
    for t in tops[:n]:
        split = [t + width * (k - (n - 1) / 2) / 2 for k in range(n)]
        starts.append(np.array(split))
    starts.sort(key=lambda th: nlls_objective(X, manifold, manifold.wrap(th)))
    base = starts[0]
    while len(starts) < multistart:
        starts.append(base + rng.normal(scale=width / 4, size=n))
    starts = starts[:multistart]

    best = None
    any_ok = False
    for th0 in starts:
        th0 = np.asarray(manifold.wrap(th0), dtype=float)
        init_obj = nlls_objective(X, manifold, th0)
        th, obj, ok = _refine(X, manifold, th0, gtol)
        obj = nlls_objective(X, manifold, th)
        if obj > init_obj:
            th, obj = th0, init_obj
        any_ok |= ok
        if best is None or obj < best[1]:
            best = (th, obj)
    th = np.sort(best[0])
    S = _ls_amplitudes(manifold.vectors(th), X)
    return BaselineEstimate(th, S, "nlls_ml", float(best[1]), not any_ok, "" if any_ok else "no start converged")
