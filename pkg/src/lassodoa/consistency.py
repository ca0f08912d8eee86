"""Noiseless consistency of the continuous LASSO and the resolution threshold.

A true configuration is recovered exactly by the noiseless estimate in the
small-regularization limit when

    ||a^H(theta) (A (A^H A)^{-1} - P D D0) Xi^{1/2}||_2 <= 1   for all theta,

with ``D0 = diag(Gamma beta)``. The left side equals one at each true
position. For a ULA with ``m -> infinity`` and two sources at scaled
separation ``delta = m * dphi`` the same test is written with the integral
kernels

    F_a(d) = int_0^1 exp(j x d) dx,  G_a = F_a',  H_a = -G_a'

and :func:`resolution_threshold_search` finds the smallest ``delta`` for
which it passes for (almost) every ``Xi``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _scan
from .manifold import Manifold, SparseRepresentation
from .perturbation import PerturbationExpansion, build_expansion, xi_sqrt

__all__ = [
    "ConsistencyVerdict",
    "check_consistency",
    "consistency_lhs_matrix",
    "kernel_F",
    "kernel_G",
    "kernel_H",
    "AsymptoticKernels",
    "asymptotic_kernels",
    "AsymptoticTest",
    "asymptotic_consistency_test",
    "unit_phase_xi_sampler",
    "ThresholdResult",
    "resolution_threshold_search",
]

log = logging.getLogger(__name__)

SUPPORT_TOL = 1e-6


@dataclass(frozen=True)
class ConsistencyVerdict:
    consistent: bool
    worst_theta: float
    worst_value: float
    support_values: np.ndarray
    support_curvature: np.ndarray
    scan_thetas: np.ndarray
    scan_values: np.ndarray

    @property
    def margin(self) -> float:
        return 1.0 - self.worst_value


def consistency_lhs_matrix(exp: PerturbationExpansion) -> np.ndarray:
    """``(A (A^H A)^{-1} - P D D0) Xi^{1/2}``, an ``m x r`` matrix.

    The consistency function is ``||a^H(theta) M||``.
    """
    D0 = exp.gamma * exp.beta
    K = exp.A @ exp.gram_inv - exp.P @ (exp.D * D0[None, :])
    return K @ xi_sqrt(exp.Xi)


def _support_curvature(manifold, exp, M):
    """Half the second derivative of ``||a^H M||^2`` at each true position."""
    e = manifold.vectors(exp.thetas).conj().T @ M
    e1 = manifold.derivatives(exp.thetas).conj().T @ M
    e2 = manifold.second_derivatives(exp.thetas).conj().T @ M
    return np.sum(np.abs(e1) ** 2, axis=1) + np.real(np.sum(e2 * e.conj(), axis=1))


def check_consistency(
    manifold: Manifold,
    truth,
    scan_fineness: Optional[float] = None,
    tol: float = 1e-9,
) -> ConsistencyVerdict:
    """Scan the consistency function over the domain.

    ``truth`` is a :class:`SparseRepresentation` or an already built
    :class:`PerturbationExpansion`. The configuration is consistent when
    every local maximum away from the true positions stays below
    ``1 + tol`` and each true position is a strict local maximum.

    Raises
    ------
    ValueError
        If the expansion cannot be built (singular ``R`` or rank-deficient ``A``).
    """
    exp = truth if isinstance(truth, PerturbationExpansion) else build_expansion(manifold, truth)
    M = consistency_lhs_matrix(exp)
    fineness = scan_fineness or np.pi / (64 * manifold.m)
    n_pts = max(int(math.ceil(manifold.width / (2 * fineness))) + 1, 4 * manifold.m)
    thetas, C = manifold.dual_scan(M, n_pts)
    vals = np.linalg.norm(C, axis=1)

    def f(t):
        return float(np.linalg.norm(manifold.vectors([t]).conj().T @ M))

    peaks = _scan.scan_maxima(manifold, thetas, vals, f, top=8 * manifold.m)
    step = thetas[1] - thetas[0]
    away = [
        (t, v)
        for t, v in peaks
        if not (np.min(manifold.distance(t, exp.thetas)) < 1e-3 * step and abs(v - 1) <= SUPPORT_TOL)
    ]
    # peaks next to a support point can hide behind the support peak on the scan
    for t0 in exp.thetas:
        for h in (step / 4, step / 32):
            for s in (-1.0, 1.0):
                t = t0 + s * h
                if manifold.periodic or manifold.domain[0] <= t <= manifold.domain[1]:
                    tt, v = _scan.polish_maximum(f, float(manifold.wrap(t)), h, manifold)
                    if np.min(manifold.distance(tt, exp.thetas)) >= 1e-3 * h:
                        away.append((tt, v))
    worst_t, worst = max(away, key=lambda p: p[1]) if away else (math.nan, 0.0)
    sup_vals = np.linalg.norm(manifold.vectors(exp.thetas).conj().T @ M, axis=1)
    curv = _support_curvature(manifold, exp, M)
    ok = worst <= 1 + tol and bool(np.all(curv < 0))
    return ConsistencyVerdict(bool(ok), float(worst_t), float(worst), sup_vals, curv, thetas, vals)


# --- asymptotic ULA kernels ------------------------------------------------------

_SMALL = 1.0  # below this the closed forms lose digits to cancellation


def _moment_kernel(d, k):
    """``int_0^1 x^k exp(j x d) dx`` by power series for ``|d| < 1``."""
    out = np.zeros(d.shape, dtype=complex)
    if d.size == 0:
        return out
    term = np.ones(d.shape, dtype=complex)
    for n in range(20):
        out += term / (n + k + 1)
        term = term * (1j * d) / (n + 1)
    return out


def kernel_F(d):
    """``int_0^1 exp(j x d) dx``."""
    d = np.asarray(d, dtype=float)
    out = np.empty(d.shape, dtype=complex)
    s = np.abs(d) < _SMALL
    x = d[~s]
    out[~s] = (np.exp(1j * x) - 1) / (1j * x)
    out[s] = _moment_kernel(d[s], 0)
    return out


def kernel_G(d):
    """``int_0^1 j x exp(j x d) dx``, the derivative of :func:`kernel_F`."""
    d = np.asarray(d, dtype=float)
    out = np.empty(d.shape, dtype=complex)
    s = np.abs(d) < _SMALL
    x = d[~s]
    e = np.exp(1j * x)
    out[~s] = e / x - (e - 1) / (1j * x**2)
    out[s] = 1j * _moment_kernel(d[s], 1)
    return out


def kernel_H(d):
    """``int_0^1 x^2 exp(j x d) dx``, minus the derivative of :func:`kernel_G`."""
    d = np.asarray(d, dtype=float)
    out = np.empty(d.shape, dtype=complex)
    s = np.abs(d) < _SMALL
    x = d[~s]
    e = np.exp(1j * x)
    out[~s] = e / (1j * x) + 2 * e / x**2 - 2 * (e - 1) / (1j * x**3)
    out[s] = _moment_kernel(d[s], 2)
    return out


@dataclass(frozen=True)
class AsymptoticKernels:
    """Two-source kernel matrices at scaled separation ``delta``.

    ``F``, ``G`` and ``H`` are the normalized limits of ``A^H A``,
    ``A^H D`` and ``D^H D``; :meth:`f` and :meth:`g` give the rows
    ``a^H A`` and ``a^H D`` for a test point at scaled offset ``dprime``.
    """

    delta: float
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray

    def f(self, dprime) -> np.ndarray:
        dp = np.atleast_1d(np.asarray(dprime, dtype=float))
        return np.stack([kernel_F(dp), kernel_F(self.delta + dp)], axis=1)

    def g(self, dprime) -> np.ndarray:
        dp = np.atleast_1d(np.asarray(dprime, dtype=float))
        return np.stack([kernel_G(dp), kernel_G(self.delta + dp)], axis=1)


def asymptotic_kernels(delta: float) -> AsymptoticKernels:
    d = np.array([delta, -delta])
    Fd, Gd, Hd = kernel_F(d), kernel_G(d), kernel_H(d)
    F = np.array([[1.0, Fd[0]], [Fd[1], 1.0]], dtype=complex)
    G = np.array([[0.5j, Gd[0]], [Gd[1], 0.5j]], dtype=complex)
    H = np.array([[1 / 3, Hd[0]], [Hd[1], 1 / 3]], dtype=complex)
    return AsymptoticKernels(float(delta), F, G, H)


@dataclass(frozen=True)
class AsymptoticTest:
    passed: bool
    worst_value: float
    worst_dprime: float
    beta: np.ndarray


class _Line:
    """Minimal stand-in for a manifold on an interval, for the scan helpers."""

    periodic = False

    def __init__(self, lo, hi):
        self.domain = (lo, hi)

    def wrap(self, t):
        return np.clip(t, *self.domain)


def _asymptotic_parts(delta, Xi):
    K = asymptotic_kernels(delta)
    Fi = np.linalg.inv(K.F)
    Ra = np.real((K.H - K.G.conj().T @ Fi @ K.G) * Xi.T)
    rhs = np.real(np.einsum("ki,kl,li->i", K.G.conj(), Fi, Xi))
    beta = np.linalg.solve(Ra, rhs)
    if not np.all(np.isfinite(beta)) or np.linalg.cond(Ra) > 1e12:
        raise np.linalg.LinAlgError("singular R_a")
    L = xi_sqrt(Xi)

    def lhs(dp):
        f, g = K.f(dp), K.g(dp)
        v = (g - f @ Fi @ K.G) * beta[None, :] - f @ Fi
        return np.linalg.norm(v @ L, axis=1)

    return lhs, beta


def asymptotic_consistency_test(
    delta: float,
    Xi,
    dprime_scan=None,
    tol: float = SUPPORT_TOL,
    polish_top: int = 3,
    decide_only: bool = False,
) -> AsymptoticTest:
    """Large-``m`` two-source ULA consistency test at scaled separation ``delta``.

    ``dprime_scan`` defaults to 4096 points on ``[-8 pi, 8 pi]``. Maxima at the
    two source offsets (``0`` and ``-delta``, value 1) are excluded.
    With ``decide_only`` the polish is skipped whenever the sampled values
    already settle the verdict; the reported worst value is then a sample.
    """
    Xi = np.asarray(Xi, dtype=complex)
    if dprime_scan is None:
        dprime_scan = np.linspace(-8 * np.pi, 8 * np.pi, 4096)
    dps = np.asarray(dprime_scan, dtype=float)
    try:
        lhs, beta = _asymptotic_parts(delta, Xi)
    except np.linalg.LinAlgError:
        return AsymptoticTest(False, math.inf, math.nan, np.full(2, np.nan))
    vals = lhs(dps)
    supports = np.array([0.0, -delta])
    step = dps[1] - dps[0]
    idx = _scan.local_maxima(vals, periodic=False)
    near = np.min(np.abs(dps[idx, None] - supports[None, :]), axis=1) < step
    cand = idx[~near]
    cand = cand[np.argsort(vals[cand])[::-1][:polish_top]]
    if decide_only and cand.size and vals[cand[0]] > 1 + tol:
        return AsymptoticTest(False, float(vals[cand[0]]), float(dps[cand[0]]), beta)
    if decide_only:
        cand = cand[vals[cand] > 1 - 1e-2]
    line = _Line(dps[0], dps[-1])

    def f(t):
        return float(lhs(np.array([t]))[0])

    peaks = [_scan.polish_maximum(f, dps[i], step, line, xatol=1e-10) for i in cand]
    if decide_only:
        # geometric samples next to the supports stand in for the polish
        off = np.geomspace(1e-4, step, 64)
        pts = (supports[:, None] + np.concatenate([off, -off])[None, :]).ravel()
        v = lhs(pts)
        k = int(np.argmax(v))
        peaks.append((float(pts[k]), float(v[k])))
        supports = supports[:0]
    for s0 in supports:
        for off in (-step / 2, step / 2):
            t, v = _scan.polish_maximum(f, s0 + off, step / 2, line, xatol=1e-10)
            if abs(t - s0) > 1e-4:
                peaks.append((t, v))
    worst_t, worst = max(peaks, key=lambda p: p[1]) if peaks else (math.nan, 0.0)
    return AsymptoticTest(bool(worst <= 1 + tol), float(worst), float(worst_t), beta)


def unit_phase_xi_sampler(rng: np.random.Generator, T: int = 1) -> np.ndarray:
    """Draw ``Xi = U U^H`` for two unit-norm amplitude rows with random phases.

    With ``T = 1`` the off-diagonal entry is a uniformly distributed unit
    phasor; larger ``T`` draws complex Gaussian rows and normalizes them.
    """
    if T == 1:
        U = np.exp(2j * np.pi * rng.random((2, 1)))
    else:
        U = rng.standard_normal((2, T)) + 1j * rng.standard_normal((2, T))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
    return U @ U.conj().T


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    per_sample: np.ndarray
    worst_xi: np.ndarray
    monotone: bool


def _sample_threshold(Xi, coarse, tol, xtol, dps):
    ok = np.array([asymptotic_consistency_test(d, Xi, dps, decide_only=True).passed for d in coarse])
    if ok.all():
        return float(coarse[0])
    last_fail = int(np.flatnonzero(~ok).max())
    if last_fail == coarse.size - 1:
        return math.inf
    a, b = coarse[last_fail], coarse[last_fail + 1]
    while b - a > xtol:
        c = 0.5 * (a + b)
        if asymptotic_consistency_test(c, Xi, dps, decide_only=True).passed:
            b = c
        else:
            a = c
    return float(b)


def resolution_threshold_search(
    xi_sampler: Optional[Callable[[np.random.Generator], np.ndarray]] = None,
    samples: int = 200,
    seed: int = 0,
    lo: float = 0.5 * np.pi,
    hi: float = 4.0 * np.pi,
    coarse_points: int = 36,
    xtol: float = 1e-4,
    dprime_scan=None,
    xis=None,
) -> ThresholdResult:
    """Smallest scaled separation above which the asymptotic test passes for every sampled ``Xi``.

    For each sample, the coarse grid on ``[lo, hi]`` locates the last failing
    separation, then bisection refines it to ``xtol``. Samples that already
    pass at the running maximum (and at every coarse point above it) cannot
    raise the result and are not refined.
    """
    if xis is None:
        rng = np.random.default_rng(seed)
        sampler = xi_sampler or unit_phase_xi_sampler
        xis = [sampler(rng) for _ in range(samples)]
    if dprime_scan is None:
        dprime_scan = np.linspace(-8 * np.pi, 8 * np.pi, 4096)
    coarse = np.linspace(lo, hi, coarse_points)
    best, worst_xi = -math.inf, None
    per = np.full(len(xis), np.nan)
    for k, Xi in enumerate(xis):
        if best > -math.inf:
            above = np.concatenate([[best], coarse[coarse > best]])
            if all(asymptotic_consistency_test(d, Xi, dprime_scan, decide_only=True).passed for d in above):
                continue
        t = _sample_threshold(Xi, coarse, SUPPORT_TOL, xtol, dprime_scan)
        per[k] = t
        if t > best:
            best, worst_xi = t, Xi
    monotone = True
    if worst_xi is not None and math.isfinite(best):
        for d in (best, 1.5 * best):
            if asymptotic_consistency_test(d, worst_xi, dprime_scan).passed and not asymptotic_consistency_test(
                2 * d, worst_xi, dprime_scan
            ).passed:
                monotone = False
        log.info("threshold %.6f pi, monotone check %s", best / np.pi, monotone)
    return ThresholdResult(float(best), per, worst_xi, monotone)
