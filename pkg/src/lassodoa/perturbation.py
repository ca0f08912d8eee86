"""First-order expansion of the continuous LASSO estimate around the true parameters.

For small noise and small regularization the estimated positions move as

    theta_hat - theta = lam * beta + delta(N) + higher order terms,

where ``beta`` depends only on the true configuration and ``delta`` is
linear in the noise. With ``U = Gamma^{-1} S`` (unit-norm amplitude rows),
``Xi = U U^H`` and ``P`` the projector onto the orthogonal complement of
``range(A)``::

    R      = Re[(D^H P D) * Xi^T]
    beta   = Gamma^{-1} R^{-1} Re[d_i^H A (A^H A)^{-1} xi_i]
    delta  = Gamma^{-1} R^{-1} Re[d_i^H P N U_i^H]

(``*`` is the elementwise product, ``xi_i`` the i-th column of ``Xi``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .manifold import Manifold, SparseRepresentation

__all__ = [
    "PerturbationExpansion",
    "build_expansion",
    "delta_from_noise",
    "predicted_theta_shift",
    "predicted_amplitude_shift",
    "xi_sqrt",
]

R_COND_LIMIT = 1e12


@dataclass(frozen=True)
class PerturbationExpansion:
    """Precomputed quantities of the first-order expansion.

    Attributes
    ----------
    thetas, S : true positions and amplitudes (``n`` and ``n x T``)
    A, D : steering vectors and their derivatives at ``thetas``
    gamma : row norms of ``S``
    U : ``Gamma^{-1} S``
    Xi : ``U U^H``
    gram_inv : ``(A^H A)^{-1}``
    P : projector onto ``range(A)``'s orthogonal complement
    R : the real ``n x n`` matrix ``Re[(D^H P D) * Xi^T]``
    beta : regularization slope of the position estimates
    """

    manifold: Manifold
    thetas: np.ndarray
    S: np.ndarray
    A: np.ndarray
    D: np.ndarray
    gamma: np.ndarray
    U: np.ndarray
    Xi: np.ndarray
    gram_inv: np.ndarray
    P: np.ndarray
    R: np.ndarray
    R_inv: np.ndarray
    beta: np.ndarray

    @property
    def n(self) -> int:
        return self.thetas.size

    @property
    def T(self) -> int:
        return self.S.shape[1]

    @property
    def projected_derivatives(self) -> np.ndarray:
        """``P D``."""
        return self.P @ self.D


def xi_sqrt(Xi, tol: float = 1e-12) -> np.ndarray:
    """A factor ``L`` (``n x r``) with ``L L^H = Xi`` from pivoted Cholesky.

    Any such factor gives the same row norms ``||v L||``, since
    ``||v L||^2 = v Xi v^H``.
    """
    Xi = np.asarray(Xi, dtype=complex)
    n = Xi.shape[0]
    if n == 0:
        return np.zeros((0, 0), dtype=complex)
    c, piv, rank, info = lapack.zpstrf(Xi.copy(), lower=1, tol=tol * max(np.abs(np.diag(Xi)).max(), 1e-300))
    if info < 0:
        raise np.linalg.LinAlgError("pivoted Cholesky failed")
    L = np.tril(c)[:, :rank]
    out = np.zeros((n, rank), dtype=complex)
    out[piv - 1] = L
    return out


def build_expansion(manifold: Manifold, truth: SparseRepresentation) -> PerturbationExpansion:
    """Assemble the expansion at a true configuration.

    Raises
    ------
    ValueError
        When ``A`` is rank deficient, a row of ``S`` is zero, or ``R`` is
        numerically singular (condition number above ``1e12``).
    """
    thetas = np.asarray(truth.thetas, dtype=float)
    S = np.asarray(truth.amplitudes, dtype=complex)
    n = thetas.size
    if n == 0:
        raise ValueError("expansion needs at least one source")
    A = manifold.vectors(thetas)
    D = manifold.derivatives(thetas)
    if np.linalg.matrix_rank(A) < n or np.linalg.cond(A) ** 2 > R_COND_LIMIT:
        raise ValueError("steering matrix is rank deficient")
    gamma = np.linalg.norm(S, axis=1)
    if np.any(gamma == 0):
        raise ValueError("every source needs a non-zero amplitude row")
    U = S / gamma[:, None]
    Xi = U @ U.conj().T
    np.fill_diagonal(Xi, 1.0)
    gram_inv = np.linalg.inv(A.conj().T @ A)
    Q, _ = np.linalg.qr(A)
    P = np.eye(manifold.m) - Q @ Q.conj().T
    B = P @ D
    R = np.real((B.conj().T @ B) * Xi.T)
    R = (R + R.T) / 2
    if np.linalg.cond(R) > R_COND_LIMIT:
        raise ValueError("expansion matrix R is singular; increase separation or snapshot diversity")
    R_inv = np.linalg.inv(R)
    W = D.conj().T @ A @ gram_inv @ Xi  # row i, column i: d_i^H A (A^H A)^{-1} xi_i
    beta = (R_inv @ np.real(np.diag(W))) / gamma
    return PerturbationExpansion(manifold, thetas, S, A, D, gamma, U, Xi, gram_inv, P, R, R_inv, beta)


def delta_from_noise(exp: PerturbationExpansion, N) -> np.ndarray:
    """Noise-driven part of the position shift (linear in ``N``)."""
    N = np.asarray(N, dtype=complex)
    if N.ndim == 1:
        N = N[:, None]
    r = np.real(np.sum((exp.D.conj().T @ exp.P @ N) * exp.U.conj(), axis=1))
    return (exp.R_inv @ r) / exp.gamma


def predicted_theta_shift(exp: PerturbationExpansion, lam: float, N) -> np.ndarray:
    """``lam * beta + delta(N)``."""
    return lam * exp.beta + delta_from_noise(exp, N)


def predicted_amplitude_shift(exp: PerturbationExpansion, lam: float, N) -> np.ndarray:
    """First-order change of the amplitude matrix.

    ``(A^H A)^{-1} [A^H (N - D diag(dtheta) S) - lam U]`` with ``dtheta``
    from :func:`predicted_theta_shift`.
    """
    N = np.asarray(N, dtype=complex)
    if N.ndim == 1:
        N = N[:, None]
    dth = predicted_theta_shift(exp, lam, N)
    inner = N - exp.D @ (dth[:, None] * exp.S)
    return exp.gram_inv @ (exp.A.conj().T @ inner - lam * exp.U)
