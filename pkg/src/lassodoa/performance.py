"""Regularization choice and the statistical performance of the continuous LASSO.

With the first-order expansion ``theta_hat - theta = lam * beta + delta`` the
estimate carries a bias ``E(lam) beta`` and the covariance

    0.5 Gamma^{-1} R^{-1} Re[(B^H C B) * Xi^T] R^{-1} Gamma^{-1} + Var(lam) beta beta^T,

with ``B = P D`` and ``C`` the noise covariance. The best ``lam`` for one
noise realization is the smallest value for which the linearized solution
still satisfies the dual bound; for large arrays it is close to
``max_theta ||a^H(theta) N||`` whose moments follow extreme-value laws.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from . import _scan
from .manifold import Manifold, NoiseModel
from .perturbation import PerturbationExpansion, delta_from_noise

__all__ = [
    "EULER_GAMMA",
    "EMPIRICAL_GAMMA",
    "LambdaMoments",
    "PerformancePrediction",
    "InconsistentScenarioError",
    "lambda_profile",
    "optimal_lambda_exact",
    "lambda_approx",
    "extreme_value_moments",
    "montecarlo_lambda_moments",
    "predict_performance",
    "noise_covariance_term",
]

EULER_GAMMA = float(np.euler_gamma)
EMPIRICAL_GAMMA = 1.3


class InconsistentScenarioError(ValueError):
    """No finite regularization keeps the linearized solution optimal."""


@dataclass(frozen=True)
class LambdaMoments:
    mean: float
    mean_square: float
    gamma_expectation: float = EMPIRICAL_GAMMA
    source: str = "empirical_fit"

    def __post_init__(self):
        if self.mean < 0 or self.mean_square < 0:
            raise ValueError("moments must be non-negative")

    @property
    def variance(self) -> float:
        return max(self.mean_square - self.mean**2, 0.0)


@dataclass(frozen=True)
class PerformancePrediction:
    bias: np.ndarray
    covariance: np.ndarray
    noise_term: np.ndarray
    lambda_moments: LambdaMoments
    sigma: float

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance).copy()

    @property
    def mse(self) -> np.ndarray:
        return self.variance + self.bias**2


# --- per-realization optimal lambda ----------------------------------------------


class _LambdaTerms:
    """``a^H(theta) N_hat(lam) = c(theta) + lam e(theta)`` for the linearized solution."""

    def __init__(self, exp: PerturbationExpansion, N):
        N = np.asarray(N, dtype=complex)
        if N.ndim == 1:
            N = N[:, None]
        self.exp = exp
        dl = delta_from_noise(exp, N)
        self.Mc = exp.P @ (N - exp.D @ (dl[:, None] * exp.S))
        self.Me = exp.A @ exp.gram_inv @ exp.U - exp.P @ (exp.D @ ((exp.gamma * exp.beta)[:, None] * exp.U))

    def coefficients(self, thetas):
        man = self.exp.manifold
        c = man.correlate(self.Mc, thetas)
        e = man.correlate(self.Me, thetas)
        return c, e

    def support_limits(self):
        """Limit of the per-position lambda when approaching each true position."""
        man, exp = self.exp.manifold, self.exp
        Dv = man.derivatives(exp.thetas).conj().T
        D2 = man.second_derivatives(exp.thetas).conj().T
        c1, c2 = Dv @ self.Mc, D2 @ self.Mc
        e1, e2 = Dv @ self.Me, D2 @ self.Me
        U = exp.U
        kappa = np.sum(np.abs(e1) ** 2, axis=1) + np.real(np.sum(e2 * U.conj(), axis=1))
        q = np.real(np.sum(c1 * e1.conj(), axis=1)) + 0.5 * np.real(np.sum(c2 * U.conj(), axis=1))
        cc = np.sum(np.abs(c1) ** 2, axis=1)
        out = np.full(exp.n, np.inf)
        ok = kappa < 0
        out[ok] = (q[ok] + np.sqrt(np.maximum(q[ok] ** 2 - kappa[ok] * cc[ok], 0))) / (-kappa[ok])
        return out


def _root(c, e):
    """Smallest ``lam >= 0`` with ``||c + lam e|| <= lam`` for every row; inf if none."""
    ce = np.real(np.sum(c * e.conj(), axis=1))
    ee = np.sum(np.abs(e) ** 2, axis=1)
    cc = np.sum(np.abs(c) ** 2, axis=1)
    den = 1 - ee
    out = np.full(c.shape[0], np.inf)
    ok = den > 0
    out[ok] = (ce[ok] + np.sqrt(ce[ok] ** 2 + den[ok] * cc[ok])) / den[ok]
    return out


def lambda_profile(exp: PerturbationExpansion, N, thetas) -> np.ndarray:
    """Per-position minimal regularization ``Lambda(theta)``.

    Zero at the true positions (where ``c = 0`` and ``||e|| = 1``).
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    terms = _LambdaTerms(exp, N)
    c, e = terms.coefficients(thetas)
    out = _root(c, e)
    at_support = np.min(exp.manifold.distance(thetas[:, None], exp.thetas[None, :]), axis=1) == 0
    out[at_support] = 0.0
    return out


def optimal_lambda_exact(
    exp: PerturbationExpansion,
    N,
    scan_fineness: Optional[float] = None,
    return_theta: bool = False,
):
    """Smallest regularization under which the linearized estimate stays optimal.

    Maximizes the closed-form ``Lambda(theta)`` over a scan with local polish,
    together with its analytic limits next to each true position.

    Raises
    ------
    InconsistentScenarioError
        If ``Lambda`` is infinite somewhere (the dual bound cannot be met).
    """
    man = exp.manifold
    terms = _LambdaTerms(exp, N)
    fineness = scan_fineness or np.pi / (64 * man.m)
    n_pts = max(int(math.ceil(man.width / (2 * fineness))) + 1, 4 * man.m)
    thetas, c = man.dual_scan(terms.Mc, n_pts)
    _, e = man.dual_scan(terms.Me, n_pts)
    step = thetas[1] - thetas[0]
    dist = np.min(man.distance(thetas[:, None], exp.thetas[None, :]), axis=1)
    far = dist > step / 4
    vals = _root(c, e)
    vals[~far] = 0.0

    def f(t):
        if np.min(man.distance(t, exp.thetas)) < 1e-3 * step:
            return 0.0
        cc, ee = terms.coefficients(np.array([t]))
        v = _root(cc, ee)[0]
        return v if np.isfinite(v) else 1e300

    if not np.all(np.isfinite(vals)):
        i = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise InconsistentScenarioError(f"dual bound cannot be met near theta={thetas[i]:.6g}")
    peaks = _scan.scan_maxima(man, thetas, vals, f, top=8)
    limits = terms.support_limits()
    if not np.all(np.isfinite(limits)):
        raise InconsistentScenarioError("a true position is not a strict maximum of the dual bound")
    cands = peaks + [(float(t), float(v)) for t, v in zip(exp.thetas, limits)]
    t_best, best = max(cands, key=lambda p: p[1])
    if best >= 1e299:
        raise InconsistentScenarioError(f"dual bound cannot be met near theta={t_best:.6g}")
    return (float(best), float(t_best)) if return_theta else float(best)


def lambda_approx(manifold: Manifold, N, scan_fineness: Optional[float] = None) -> float:
    """Large-array approximation ``max_theta ||a^H(theta) N||``."""
    N = np.asarray(N, dtype=complex)
    if N.ndim == 1:
        N = N[:, None]
    fineness = scan_fineness or np.pi / (64 * manifold.m)
    n_pts = max(int(math.ceil(manifold.width / (2 * fineness))) + 1, 4 * manifold.m)
    thetas, C = manifold.dual_scan(N, n_pts)
    vals = np.linalg.norm(C, axis=1)

    def f(t):
        return float(np.linalg.norm(manifold.vectors([t]).conj().T @ N))

    return float(_scan.scan_maxima(manifold, thetas, vals, f, top=3)[0][1])


# --- moments ----------------------------------------------------------------------


def _gamma_source(g):
    if abs(g - EULER_GAMMA) < 1e-3:
        return "gumbel_theory"
    if g == EMPIRICAL_GAMMA:
        return "empirical_fit"
    return "user"


def extreme_value_moments(m: int, T: int = 1, sigma: float = 1.0, gamma_expectation: float = EMPIRICAL_GAMMA) -> LambdaMoments:
    """Large-``m`` moments of the optimal regularization for white noise.

    ``E(lam^2) = sigma^2 m (ln m + (T-1) ln ln m + E(gamma) - ln (T-1)!)`` and
    ``E(lam) = sigma sqrt(m ln m) (1 + (...) / (2 ln m))`` with the same
    bracketed correction.
    """
    if m < 3:
        raise ValueError("extreme-value moments need m >= 3")
    if T < 1:
        raise ValueError("T must be positive")
    lm = math.log(m)
    llm = math.log(lm)
    if T > 1 and T >= lm / llm:
        warnings.warn("T is not small compared to ln m / ln ln m; the asymptotic moments may be inaccurate", stacklevel=2)
    corr = (T - 1) * llm + gamma_expectation - float(gammaln(T))
    ms = sigma**2 * m * (lm + corr)
    mean = sigma * math.sqrt(m * lm) * (1 + corr / (2 * lm))
    return LambdaMoments(float(mean), float(ms), float(gamma_expectation), _gamma_source(gamma_expectation))


def montecarlo_lambda_moments(
    exp: PerturbationExpansion,
    noise: NoiseModel,
    trials: int = 500,
    method: str = "exact",
) -> LambdaMoments:
    """Moments of the optimal regularization estimated from noise draws.

    ``method`` is ``"exact"`` (linearized optimum) or ``"approx"``
    (``max_theta ||a^H N||``). Draws use trial indices ``0..trials-1`` of
    ``noise``.
    """
    man = exp.manifold
    vals = np.empty(trials)
    for k in range(trials):
        N = noise.draw(man.m, exp.T, trial=k)
        vals[k] = optimal_lambda_exact(exp, N) if method == "exact" else lambda_approx(man, N)
    return LambdaMoments(float(vals.mean()), float(np.mean(vals**2)), math.nan, "montecarlo")


def noise_covariance_term(exp: PerturbationExpansion, C) -> np.ndarray:
    """Covariance of the noise-driven shift ``delta`` for noise covariance ``C``."""
    B = exp.projected_derivatives
    core = 0.5 * np.real((B.conj().T @ C @ B) * exp.Xi.T)
    W = exp.R_inv / exp.gamma[:, None]
    cov = W @ core @ W.T
    return (cov + cov.T) / 2


def predict_performance(
    exp: PerturbationExpansion,
    noise: NoiseModel,
    moments: Optional[LambdaMoments] = None,
) -> PerformancePrediction:
    """Bias and covariance of the position estimates.

    ``moments`` defaults to :func:`extreme_value_moments` with the
    empirical constant, at the noise level of ``noise``.
    """
    m = exp.manifold.m
    if moments is None:
        moments = extreme_value_moments(m, exp.T, noise.sigma)
    C = noise.cov(m)
    first = noise_covariance_term(exp, C)
    cov = first + moments.variance * np.outer(exp.beta, exp.beta)
    bias = moments.mean * exp.beta
    return PerformancePrediction(bias, cov, first, moments, float(noise.sigma))
