"""Continuous (gridless) LASSO estimates, their optimality certificate, and set metrics.

The estimator minimizes ``0.5 ||X - A(theta) S||_F^2 + lam sum_i ||S_i||`` jointly
over a finite, irreducible set of positions ``theta`` and amplitudes ``S``.
A representation is optimal iff

* ``a^H(theta_i) N = lam S_i / ||S_i||`` on every active position, and
* ``||a^H(theta) N|| <= lam`` for every ``theta`` in the domain,

with ``N = X - A(theta) S``. :func:`solve_class` searches with a grid
solve, a joint Newton polish and dual re-scans, and returns only
representations that pass :func:`verify_class_optimality`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _scan
from .grid_lasso import Grid, _group_lasso_hessian, solve_group_lasso
from .manifold import Manifold, SparseRepresentation, UlaManifold

__all__ = [
    "ClassOptions",
    "ClassCertificate",
    "ClassSolution",
    "CertificationError",
    "solve_class",
    "verify_class_optimality",
    "reduce_representation",
    "set_distance",
    "grid_fineness",
    "dual_function",
    "continuous_lambda_max",
    "properness_max_count",
    "ProperCount",
    "OrderSearch",
    "solve_class_for_order",
]


class CertificationError(RuntimeError):
    def __init__(self, msg, best=None, violation_theta=float("nan"), violation=float("nan")):
        super().__init__(msg)
        self.best = best
        self.violation_theta = violation_theta
        self.violation = violation


@dataclass(frozen=True)
class ClassOptions:
    initial_grid: Optional[int] = None  # defaults to 8 m points
    verify_fineness: Optional[float] = None  # defaults to pi / (64 m)
    tol: float = 1e-7
    max_refine: int = 40
    polish_iters: int = 50
    merge_tol: float = 1e-7
    insert_margin: float = 1e-9
    check_uniqueness: bool = False


@dataclass(frozen=True)
class ClassCertificate:
    dual_peak: float
    dual_peak_theta: float
    alignment_error: float
    stationarity_error: float
    passed: bool
    lam: float
    tol: float


@dataclass(frozen=True)
class ClassSolution:
    representation: SparseRepresentation
    lam: float
    residual: np.ndarray
    certificate: ClassCertificate
    non_unique: bool = False
    alternatives: tuple = field(default=(), repr=False)

    @property
    def thetas(self) -> np.ndarray:
        return self.representation.thetas

    @property
    def amplitudes(self) -> np.ndarray:
        return self.representation.amplitudes

    @property
    def order(self) -> int:
        return self.representation.n


def _as_matrix(X):
    X = np.asarray(X, dtype=complex)
    return X[:, None] if X.ndim == 1 else X


def reduce_representation(rep: SparseRepresentation, drop_tol: float = 0.0) -> SparseRepresentation:
    """Remove rows with ``||S_i|| <= drop_tol`` (the irreducible root)."""
    keep = rep.row_norms > drop_tol
    if keep.all():
        return rep
    return SparseRepresentation(rep.thetas[keep], rep.amplitudes[keep], rep.coordinate)


def set_distance(theta1, theta2, period: Optional[float] = None) -> float:
    """``max_{t1 in theta1} min_{t2 in theta2} |t1 - t2|``; not symmetric.

    An empty first set is at distance 0; a non-empty set is at infinite
    distance from the empty set.
    """
    a = np.atleast_1d(np.asarray(theta1, dtype=float)).ravel()
    b = np.atleast_1d(np.asarray(theta2, dtype=float)).ravel()
    if a.size == 0:
        return 0.0
    if b.size == 0:
        return math.inf
    d = np.abs(a[:, None] - b[None, :])
    if period is not None:
        d = np.minimum(d % period, period - d % period)
    return float(d.min(axis=1).max())


def grid_fineness(grid, domain, periodic: bool = False) -> float:
    """Largest distance from a domain point to its nearest grid point."""
    pts = np.sort(np.asarray(grid.points if isinstance(grid, Grid) else grid, dtype=float))
    lo, hi = domain
    if periodic:
        gaps = np.diff(np.concatenate([pts, [pts[0] + (hi - lo)]]))
        return float(gaps.max() / 2)
    inner = np.diff(pts).max() / 2 if pts.size > 1 else 0.0
    return float(max(pts[0] - lo, hi - pts[-1], inner))


def dual_function(manifold: Manifold, residual, thetas) -> np.ndarray:
    """``||a^H(theta) N||_2`` at each of ``thetas``."""
    return np.linalg.norm(manifold.correlate(_as_matrix(residual), np.atleast_1d(thetas)), axis=1)


def _verify_points(manifold, fineness):
    return max(int(math.ceil(manifold.width / (2 * fineness))) + 1, 2 * manifold.m)


def _dual_maxima(manifold, residual, fineness, extra=(), top=None, floor=-np.inf):
    """Polished local maxima of the dual function, largest first."""
    R = _as_matrix(residual)
    thetas, C = manifold.dual_scan(R, _verify_points(manifold, fineness))
    vals = np.linalg.norm(C, axis=1)

    def f(t):
        return float(np.linalg.norm(manifold.vectors([t]).conj().T @ R))

    peaks = _scan.scan_maxima(manifold, thetas, vals, f, top=top, floor=floor)
    step = thetas[1] - thetas[0]
    for t in extra:
        for h in (step / 8, step / 64, step / 1024):
            for s in (-1.0, 1.0):
                tt = float(manifold.wrap(t + s * h))
                if manifold.periodic or manifold.domain[0] <= t + s * h <= manifold.domain[1]:
                    peaks.append(_scan.polish_maximum(f, tt, h, manifold))
    peaks.sort(key=lambda p: -p[1])
    return peaks


def continuous_lambda_max(X, manifold: Manifold, fineness: Optional[float] = None) -> float:
    """``max_theta ||a^H(theta) X||`` over the continuum (scan plus polish)."""
    fineness = fineness or np.pi / (64 * manifold.m)
    peaks = _dual_maxima(manifold, X, fineness, top=8)
    return float(peaks[0][1])


def verify_class_optimality(
    candidate,
    X,
    manifold: Manifold,
    lam: Optional[float] = None,
    tol: float = 1e-7,
    fineness: Optional[float] = None,
) -> ClassCertificate:
    """Check the continuous optimality conditions for a candidate representation.

    ``candidate`` is a :class:`ClassSolution` or a :class:`SparseRepresentation`
    (then ``lam`` must be given).
    """
    if isinstance(candidate, ClassSolution):
        rep, lam = candidate.representation, candidate.lam if lam is None else lam
    else:
        rep = candidate
    if lam is None:
        raise ValueError("lam is required")
    X = _as_matrix(X)
    fineness = fineness or np.pi / (64 * manifold.m)
    R = X - rep.synthesize(manifold)
    align = stat = 0.0
    if rep.n:
        A = manifold.vectors(rep.thetas)
        D = manifold.derivatives(rep.thetas)
        gam = rep.row_norms
        if np.any(gam == 0):
            raise ValueError("candidate must be irreducible")
        U = rep.amplitudes / gam[:, None]
        align = float(np.linalg.norm(A.conj().T @ R - lam * U, axis=1).max())
        st = np.real(np.sum((D.conj().T @ R) * U.conj(), axis=1)) / np.linalg.norm(D, axis=0).clip(1e-300)
        stat = float(np.abs(st).max())
    peaks = _dual_maxima(manifold, R, fineness, extra=rep.thetas, top=4 * manifold.m + 8)
    peak_t, peak = peaks[0]
    passed = peak <= lam * (1 + tol) and align <= tol * lam and stat <= tol * lam
    return ClassCertificate(float(peak), float(peak_t), align, stat, bool(passed), float(lam), float(tol))


# --- joint polish ---------------------------------------------------------------


class _Objective:
    """Smooth restriction of the continuous LASSO cost to a fixed active set."""

    def __init__(self, X, manifold, lam, n, T):
        self.X, self.man, self.lam, self.n, self.T = X, manifold, lam, n, T

    def unpack(self, x):
        n, T = self.n, self.T
        th = x[:n]
        S = (x[n : n + n * T] + 1j * x[n + n * T :]).reshape(n, T)
        return th, S

    def pack(self, th, S):
        return np.concatenate([th, S.real.ravel(), S.imag.ravel()])

    def value(self, x):
        th, S = self.unpack(x)
        R = self.X - self.man.vectors(self.man.wrap(th)) @ S
        return 0.5 * float(np.vdot(R, R).real) + self.lam * float(np.linalg.norm(S, axis=1).sum())

    def grad(self, x):
        th, S = self.unpack(x)
        th = self.man.wrap(th)
        A = self.man.vectors(th)
        D = self.man.derivatives(th)
        R = self.X - A @ S
        gam = np.linalg.norm(S, axis=1)
        g_th = -np.real(np.sum((D.conj().T @ R) * S.conj(), axis=1))
        g_S = -(A.conj().T @ R) + self.lam * S / gam[:, None]
        return np.concatenate([g_th, g_S.real.ravel(), g_S.imag.ravel()])

    def hessian(self, x, steps):
        p = x.size
        H = np.empty((p, p))
        for j in range(p):
            e = np.zeros(p)
            e[j] = steps[j]
            H[:, j] = (self.grad(x + e) - self.grad(x - e)) / (2 * steps[j])
        return (H + H.T) / 2


def _polish(X, manifold, lam, rep, iters, gtol):
    """Damped Newton on positions and amplitudes; rows whose block minimizer is zero are dropped."""
    th, S = np.array(rep.thetas, dtype=float), np.array(rep.amplitudes, dtype=complex)
    T = X.shape[1]
    for _ in range(iters):
        if th.size == 0:
            break
        th, S = _drop_dead_rows(X, manifold, lam, th, S)
        if th.size == 0:
            break
        obj = _Objective(X, manifold, lam, th.size, T)
        x = obj.pack(th, S)
        g = obj.grad(x)
        gam = np.linalg.norm(S, axis=1)
        dn = np.linalg.norm(manifold.derivatives(th), axis=0)
        g_th = np.abs(g[: th.size]) / (gam * dn)
        g_S = np.abs(g[th.size :])
        if max(g_th.max(), g_S.max()) <= gtol:
            break
        an = math.sqrt(manifold.m)
        steps = np.concatenate([1e-6 * an / dn, np.repeat(1e-6 * gam, T), np.repeat(1e-6 * gam, T)])
        H = obj.hessian(x, steps)
        f0 = obj.value(x)
        mu = 0.0
        scale = np.abs(np.diag(H)).max() or 1.0
        moved = False
        for _attempt in range(12):
            try:
                L = np.linalg.cholesky(H + mu * np.eye(H.shape[0]))
            except np.linalg.LinAlgError:
                mu = max(10 * mu, 1e-10 * scale)
                continue
            p = -np.linalg.solve(L.T, np.linalg.solve(L, g))
            # keep rows away from zero and positions within half a beamwidth
            p = _limit_step(p, th.size, T, S, an / dn)
            slope = float(g @ p)
            t = 1.0
            while t > 1e-8:
                xc = x + t * p
                if obj.value(xc) <= f0 + 1e-4 * t * slope:
                    break
                t *= 0.5
            else:
                # cost changes can drown in rounding near the optimum; fall back
                # to the gradient norm as merit for the full step
                xc = x + p
                if np.linalg.norm(obj.grad(xc)) > 0.5 * np.linalg.norm(g):
                    mu = max(10 * mu, 1e-8 * scale)
                    continue
            th, S = obj.unpack(xc)
            th = np.asarray(manifold.wrap(th), dtype=float)
            moved = True
            break
        if not moved:
            break
    th, S = _drop_dead_rows(X, manifold, lam, th, S)
    if th.size:
        S = _finish_amplitudes(X, manifold, lam, th, S.reshape(th.size, T))
    return SparseRepresentation(th, S.reshape(th.size, T), rep.coordinate)


def _finish_amplitudes(X, manifold, lam, th, S, iters=5):
    """Full Newton steps on the amplitudes at fixed positions, kept while the gradient shrinks.

    Near the optimum cost decreases drown in rounding, so the joint polish
    can stall a few digits short; the amplitude block is convex and smooth
    for non-zero rows, which makes plain Newton safe here.
    """
    A = manifold.vectors(th)
    M, b = A.conj().T @ A, A.conj().T @ X

    def grad(S):
        return M @ S - b + lam * S / np.linalg.norm(S, axis=1)[:, None]

    g = grad(S)
    for _ in range(iters):
        gam = np.linalg.norm(S, axis=1)
        H = _group_lasso_hessian(M, S, gam, lam)
        try:
            step = np.linalg.solve(H, -np.concatenate([g.real.ravel(), g.imag.ravel()]))
        except np.linalg.LinAlgError:
            break
        q = S.size
        cand = S + (step[:q] + 1j * step[q:]).reshape(S.shape)
        if np.any(np.linalg.norm(cand, axis=1) == 0):
            break
        gc = grad(cand)
        if np.linalg.norm(gc) >= np.linalg.norm(g):
            break
        S, g = cand, gc
    return S


def _limit_step(p, n, T, S, th_scale):
    p = p.copy()
    lim = 0.5 * th_scale
    big = np.abs(p[:n]) > lim
    if big.any():
        p *= min(lim[big] / np.abs(p[:n][big]))
    return p


def _drop_dead_rows(X, manifold, lam, th, S):
    while th.size:
        A = manifold.vectors(th)
        R = X - A @ S
        nrm = np.sum(np.abs(A) ** 2, axis=0)
        blk = A.conj().T @ R + nrm[:, None] * S
        dead = np.linalg.norm(blk, axis=1) <= lam
        dead |= np.linalg.norm(S, axis=1) == 0
        if not dead.any():
            break
        # drop the weakest dead row only, then re-evaluate the rest
        i = np.flatnonzero(dead)[np.argmin(np.linalg.norm(S[dead], axis=1))]
        th, S = np.delete(th, i), np.delete(S, i, axis=0)
    return th, S


def _merge_close(manifold, th, S, merge_tol):
    if th.size < 2:
        return th, S
    order = np.argsort(th)
    th, S = th[order], S[order]
    out_t, out_s = [th[0]], [S[0]]
    for t, s in zip(th[1:], S[1:]):
        if manifold.distance(t, out_t[-1]) < merge_tol:
            w0, w1 = np.linalg.norm(out_s[-1]), np.linalg.norm(s)
            out_t[-1] = (w0 * out_t[-1] + w1 * t) / (w0 + w1)
            out_s[-1] = out_s[-1] + s
        else:
            out_t.append(t)
            out_s.append(s)
    if manifold.periodic and len(out_t) > 1 and manifold.distance(out_t[0], out_t[-1]) < merge_tol:
        out_s[0] = out_s[0] + out_s.pop()
        out_t.pop()
    return np.array(out_t), np.array(out_s)


def _cluster_grid_support(manifold, grid: Grid, S_hat):
    """Collapse runs of adjacent active grid points into single atoms."""
    N = len(grid)
    act = np.linalg.norm(S_hat, axis=1) > 0
    idx = np.flatnonzero(act)
    if idx.size == 0:
        return np.zeros(0), np.zeros((0, S_hat.shape[1]), dtype=complex)
    runs, cur = [], [idx[0]]
    for i in idx[1:]:
        if i == cur[-1] + 1:
            cur.append(i)
        else:
            runs.append(cur)
            cur = [i]
    runs.append(cur)
    if manifold.periodic and len(runs) > 1 and runs[0][0] == 0 and runs[-1][-1] == N - 1:
        runs[0] = runs.pop() + runs[0]
    th, S = [], []
    for run in runs:
        w = np.linalg.norm(S_hat[run], axis=1)
        pts = grid.points[run].copy()
        if manifold.periodic:
            pts = pts[0] + np.mod(pts - pts[0] + manifold.width / 2, manifold.width) - manifold.width / 2
        th.append(float(manifold.wrap(np.sum(w * pts) / w.sum())))
        S.append(S_hat[run].sum(axis=0))
    return np.array(th), np.array(S)


def _insert_atom(manifold, X, lam, th, S, t_new):
    R = X - (manifold.vectors(th) @ S if th.size else 0)
    a = manifold.vectors([t_new])[:, 0]
    c = a.conj() @ R
    cn = np.linalg.norm(c)
    s_new = (cn - lam) / np.vdot(a, a).real * c / cn
    return np.append(th, t_new), np.vstack([S, s_new[None, :]]) if th.size else s_new[None, :]


def solve_class(
    X,
    manifold: Manifold,
    lam: float,
    opts: Optional[ClassOptions] = None,
    init: Optional[SparseRepresentation] = None,
) -> ClassSolution:
    """Certified continuous LASSO estimate at regularization ``lam``.

    Parameters
    ----------
    X : (m, T) complex array
    manifold : Manifold
    lam : float
    opts : ClassOptions, optional
    init : SparseRepresentation, optional
        Warm start; skips the initial grid solve.

    Raises
    ------
    CertificationError
        If no certified representation is found within ``opts.max_refine``
        refinement rounds. The exception carries the best candidate and
        the location of its largest dual violation.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    opts = opts or ClassOptions()
    X = _as_matrix(X)
    T = X.shape[1]
    coord = getattr(manifold, "coordinate", "theta")
    fine = opts.verify_fineness or np.pi / (64 * manifold.m)

    empty = SparseRepresentation(np.zeros(0), np.zeros((0, T)), coord)
    cert = verify_class_optimality(empty, X, manifold, lam, opts.tol, fine)
    if cert.passed:
        return ClassSolution(empty, float(lam), X.copy(), cert)

    if init is not None and init.n:
        th, S = np.array(init.thetas, dtype=float), np.array(init.amplitudes, dtype=complex)
    else:
        th, S = _initial_atoms(X, manifold, lam, opts)

    gtol = 1e-3 * opts.tol * lam
    best = None
    for _ in range(opts.max_refine):
        if th.size == 0:
            th, S = _insert_atom(manifold, X, lam, th, S, cert.dual_peak_theta)
        rep = _polish(X, manifold, lam, SparseRepresentation(th, S, coord), opts.polish_iters, gtol)
        th, S = _merge_close(manifold, np.array(rep.thetas), np.array(rep.amplitudes), opts.merge_tol)
        rep = SparseRepresentation(th, S.reshape(th.size, T), coord)
        cert = verify_class_optimality(rep, X, manifold, lam, opts.tol, fine)
        best = ClassSolution(rep.sorted(), float(lam), X - rep.synthesize(manifold), cert)
        if cert.passed:
            break
        if cert.dual_peak > lam * (1 + opts.insert_margin):
            th, S = _insert_atom(manifold, X, lam, th, S.reshape(th.size, T), cert.dual_peak_theta)
    else:
        raise CertificationError(
            "continuous LASSO refinement did not certify",
            best,
            cert.dual_peak_theta,
            cert.dual_peak - lam,
        )

    if opts.check_uniqueness:
        other = solve_class(
            X,
            manifold,
            lam,
            ClassOptions(**{**opts.__dict__, "check_uniqueness": False, "initial_grid": 2 * _grid_size(manifold, opts) + 1}),
        )
        if other.order != best.order or set_distance(other.thetas, best.thetas) > 1e3 * opts.merge_tol:
            return ClassSolution(best.representation, best.lam, best.residual, best.certificate, True, (other,))
    return best


def _grid_size(manifold, opts):
    return opts.initial_grid or 8 * manifold.m


def _initial_atoms(X, manifold, lam, opts):
    grid = Grid.uniform(manifold, _grid_size(manifold, opts))
    sol = solve_group_lasso(X, grid, manifold, lam, tol=1e-6)
    return _cluster_grid_support(manifold, grid, np.array(sol.S_hat))


# --- properness of the ULA manifold ------------------------------------------------


@dataclass(frozen=True)
class ProperCount:
    count: int
    locations: np.ndarray
    peak: float
    fallback: bool


def properness_max_count(Z, ula, rel_tol: float = 1e-9) -> ProperCount:
    """Count the global maxima of ``||a^H(phi) Z||`` for a ULA.

    The squared dual ``F(phi)`` is a trigonometric polynomial; with
    ``z = exp(1j phi)`` every global maximum is a double root on the unit
    circle of ``S(z) = z^(m-1) (F(z) - peak)``, a polynomial of degree
    ``2(m-1)``, so there are at most ``m-1`` of them. When the root
    clustering is ambiguous the count falls back to a dense scan and
    ``fallback`` is set.
    """
    Z = _as_matrix(Z)
    if isinstance(ula, UlaManifold):
        man = ula
    else:
        man = UlaManifold(int(getattr(ula, "m", ula)))
    m = man.m
    if m != Z.shape[0]:
        raise ValueError("Z must have m rows")
    if not np.any(Z):
        raise ValueError("Z must be non-zero")
    Tm = Z @ Z.conj().T
    # F(phi) = sum_{i,j} T_ij exp(1j (j - i) phi); coefficient of z^(alpha - (m-1))
    coef = np.array([np.trace(Tm, offset=alpha - (m - 1)) for alpha in range(2 * m - 1)])
    off = np.delete(coef, m - 1)
    if np.all(np.abs(off) <= 1e-12 * abs(coef[m - 1])):
        # F is constant: every phi is a maximizer
        return ProperCount(-1, np.zeros(0), math.sqrt(abs(coef[m - 1])), True)
    scan_peaks = _dense_peaks(man, Z, rel_tol)
    peak = scan_peaks[0][1] ** 2
    poly = coef.copy()
    poly[m - 1] -= peak
    roots = np.roots(poly[::-1])
    near = roots[np.abs(np.abs(roots) - 1) < 1e-3]
    locs = _cluster_angles(np.angle(near))
    Fvals = np.array([_F(man, Z, t) for t in locs])
    good = [t for t, v in zip(locs, Fvals) if v >= peak * (1 - 1e-6)]
    dense_locs = [t for t, v in scan_peaks]
    fallback = len(good) != len(dense_locs)
    if fallback:
        good = dense_locs
    count = len(good)
    if count > m - 1:
        raise AssertionError("more than m-1 global maxima; manifold improper")
    return ProperCount(count, np.sort(np.array(good)), math.sqrt(peak), fallback)


def _F(man, Z, t):
    return float(np.linalg.norm(man.vectors([t]).conj().T @ Z) ** 2)


def _cluster_angles(angles, tol=1e-3):
    if angles.size == 0:
        return []
    a = np.sort(np.mod(angles + np.pi, 2 * np.pi) - np.pi)
    groups, cur = [], [a[0]]
    for x in a[1:]:
        if x - cur[-1] < tol:
            cur.append(x)
        else:
            groups.append(cur)
            cur = [x]
    groups.append(cur)
    if len(groups) > 1 and (groups[0][0] + 2 * np.pi) - groups[-1][-1] < tol:
        groups[0] = [g - 2 * np.pi for g in groups.pop()] + groups[0]
    return [float(np.mod(np.mean(g) + np.pi, 2 * np.pi) - np.pi) for g in groups if len(g) >= 2]


def _dense_peaks(man, Z, rel_tol, n_points=None):
    n_points = n_points or max(64 * man.m, 4096)
    thetas, C = man.dual_scan(Z, n_points)
    vals = np.linalg.norm(C, axis=1)

    def f(t):
        return float(np.linalg.norm(man.vectors([t]).conj().T @ Z))

    peaks = _scan.scan_maxima(man, thetas, vals, f, floor=vals.max() * (1 - 1e-2))
    top = peaks[0][1]
    return [p for p in peaks if p[1] >= top * (1 - rel_tol)]


# --- smallest regularization for a given order --------------------------------------


LAM_FLOOR = 1e-6  # relative to lambda_max; below it the certificate drowns in rounding


@dataclass(frozen=True)
class OrderSearch:
    solution: ClassSolution
    lam_max: float
    evaluations: int


def _offsupport_peak(manifold, X, rep, lam, fineness):
    R = X - rep.synthesize(manifold)
    peaks = _dual_maxima(manifold, R, fineness, top=2 * rep.n + 6)
    step = manifold.width / _verify_points(manifold, fineness)
    for t, v in peaks:
        if rep.n == 0 or np.min(manifold.distance(t, rep.thetas)) > step / 8:
            return v
    return 0.0


def solve_class_for_order(
    X,
    manifold: Manifold,
    n: int,
    opts: Optional[ClassOptions] = None,
    rtol: float = 1e-6,
    max_steps: int = 60,
) -> OrderSearch:
    """Certified estimate at the smallest regularization that yields ``n`` atoms.

    A geometric search finds some ``lam`` with exactly ``n`` atoms. The
    ``n``-atom estimate is then followed downwards in ``lam`` with the joint
    polish until a dual peak away from the atoms reaches ``lam``; that
    crossing is located to relative accuracy ``rtol`` and the estimate just
    above it is certified.

    Raises
    ------
    CertificationError
        If no regularization with exactly ``n`` atoms is found.
    """
    from scipy.optimize import brentq

    opts = opts or ClassOptions()
    X = _as_matrix(X)
    fine = opts.verify_fineness or np.pi / (64 * manifold.m)
    lam_max = continuous_lambda_max(X, manifold, fine)
    evals = 0
    lo, hi = 0.0, lam_max  # lo: too many atoms, hi: too few
    lam = 0.5 * lam_max
    sol = None
    warm = None
    for _ in range(max_steps):
        sol = solve_class(X, manifold, lam, opts, init=warm)
        evals += 1
        warm = sol.representation
        if sol.order == n:
            break
        if sol.order < n:
            hi = lam
        else:
            lo = lam
        lam = math.sqrt(lo * hi) if lo > 0 else 0.25 * lam
    else:
        raise CertificationError(f"no regularization with exactly {n} atoms found", sol)

    gtol = 1e-3 * opts.tol
    cache = {lam: sol.representation}

    def margin(log_lam):
        nonlocal evals
        lm = math.exp(log_lam)
        near = min(cache, key=lambda k: abs(math.log(k) - log_lam))
        rep = _polish(X, manifold, lm, cache[near], opts.polish_iters, gtol * lm)
        evals += 1
        if rep.n != n:
            return 1.0
        cache[lm] = rep
        return _offsupport_peak(manifold, X, rep, lm, fine) / lm - 1.0

    a_hi = lam
    a_lo = lam * 0.5
    for _ in range(max_steps):
        if a_lo < LAM_FLOOR * lam_max:
            # (nearly) noiseless data: the order holds down to rounding level
            near = min(cache, key=lambda k: abs(math.log(k) - math.log(a_hi)))
            full = solve_class(X, manifold, a_hi, opts, init=cache[near])
            return OrderSearch(full, lam_max, evals + 1)
        if margin(math.log(a_lo)) > 0:
            break
        a_hi, a_lo = a_lo, a_lo * 0.5
    else:
        return OrderSearch(sol, lam_max, evals)
    root = brentq(margin, math.log(a_lo), math.log(a_hi), xtol=rtol / 4)
    lam_star = math.exp(root) * (1 + rtol)
    near = min(cache, key=lambda k: abs(math.log(k) - math.log(lam_star)))
    rep = _polish(X, manifold, lam_star, cache[near], opts.polish_iters, gtol * lam_star)
    cert = verify_class_optimality(rep, X, manifold, lam_star, opts.tol, fine)
    if not cert.passed or rep.n != n:
        # fall back to the full refinement at the same regularization
        full = solve_class(X, manifold, lam_star, opts, init=rep)
        return OrderSearch(full, lam_max, evals + 1)
    out = ClassSolution(rep.sorted(), float(lam_star), X - rep.synthesize(manifold), cert)
    return OrderSearch(out, lam_max, evals)
