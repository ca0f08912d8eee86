"""Array manifolds, sparse representations and the data model ``X = A(theta) S + N``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "DomainError",
    "Manifold",
    "UlaManifold",
    "PlanarArrayManifold",
    "SparseRepresentation",
    "Observation",
    "NoiseModel",
    "electrical_angle",
    "steering_vector",
    "steering_derivative",
    "build_matrices",
    "generate_observation",
    "sample_correlation",
    "trial_rng",
    "load_geometry",
]

_DOMAIN_SLACK = 1e-12


class DomainError(ValueError):
    """A position parameter lies outside the manifold's domain."""


def electrical_angle(theta):
    """Map a physical arrival angle in ``[0, pi]`` to the ULA electrical angle ``pi cos(theta)``."""
    return np.pi * np.cos(theta)


def _readonly(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


class Manifold:
    """Smooth family of steering vectors ``theta -> a(theta)`` in ``C^m``.

    Subclasses implement :meth:`_phase` style evaluation through
    :meth:`vectors`, :meth:`derivatives` and :meth:`second_derivatives`,
    each mapping a 1-D array of parameters to an ``m x n`` matrix.
    """

    m: int
    domain: tuple
    periodic: bool = False
    coordinate: str = "theta"

    def vectors(self, thetas) -> np.ndarray:
        raise NotImplementedError

    def derivatives(self, thetas) -> np.ndarray:
        raise NotImplementedError

    def second_derivatives(self, thetas) -> np.ndarray:
        raise NotImplementedError

    @property
    def width(self) -> float:
        return self.domain[1] - self.domain[0]

    def check(self, thetas) -> np.ndarray:
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        lo, hi = self.domain
        if thetas.size and (thetas.min() < lo - _DOMAIN_SLACK or thetas.max() > hi + _DOMAIN_SLACK):
            raise DomainError(f"parameter outside domain [{lo}, {hi}]: {thetas}")
        return thetas

    def wrap(self, thetas):
        """Bring parameters back into the domain (periodic wrap or clipping)."""
        lo, hi = self.domain
        thetas = np.asarray(thetas, dtype=float)
        if self.periodic:
            return lo + np.mod(thetas - lo, hi - lo)
        return np.clip(thetas, lo, hi)

    def distance(self, t1, t2):
        """Parameter distance, measured along the circle for periodic manifolds."""
        d = np.abs(np.asarray(t1, dtype=float) - np.asarray(t2, dtype=float))
        if self.periodic:
            d = np.minimum(d, self.width - d)
        return d

    def scan_points(self, n_points: int) -> np.ndarray:
        lo, hi = self.domain
        if self.periodic:
            return lo + (hi - lo) * np.arange(n_points) / n_points
        return np.linspace(lo, hi, n_points)

    def correlate(self, V, thetas) -> np.ndarray:
        """Return ``A(thetas)^H V``; rows index ``thetas``."""
        V = np.asarray(V)
        if V.ndim == 1:
            V = V[:, None]
        out = np.empty((len(thetas), V.shape[1]), dtype=complex)
        # chunked to bound memory on dense scans
        step = max(1, 2**22 // max(self.m, 1))
        for start in range(0, len(thetas), step):
            sl = slice(start, start + step)
            out[sl] = self.vectors(thetas[sl]).conj().T @ V
        return out

    def dual_scan(self, V, n_points: int):
        """Evaluate ``A^H(theta) V`` on ``n_points`` uniformly spread parameters."""
        thetas = self.scan_points(n_points)
        return thetas, self.correlate(V, thetas)


class UlaManifold(Manifold):
    """Half-wavelength uniform linear array in electrical angle ``phi``.

    Entry ``k`` (zero based) of ``a(phi)`` is ``exp(1j * k * phi)``; the
    domain is ``[-pi, pi]`` and the manifold is ``2 pi`` periodic.
    """

    periodic = True
    coordinate = "electrical"

    def __init__(self, m: int):
        if m < 1:
            raise ValueError("m must be positive")
        self.m = int(m)
        self.domain = (-np.pi, np.pi)
        self._k = np.arange(self.m, dtype=float)

    def __repr__(self):
        return f"UlaManifold(m={self.m})"

    def __eq__(self, other):
        return isinstance(other, UlaManifold) and other.m == self.m

    def __hash__(self):
        return hash(("ula", self.m))

    def vectors(self, thetas):
        thetas = self.check(thetas)
        return np.exp(1j * np.outer(self._k, thetas))

    def derivatives(self, thetas):
        return (1j * self._k)[:, None] * self.vectors(thetas)

    def second_derivatives(self, thetas):
        return (-self._k**2)[:, None] * self.vectors(thetas)

    def dual_scan(self, V, n_points: int):
        # phi_l = -pi + 2 pi l / L: a^H(phi_l) v is an FFT of (-1)^k v_k
        V = np.asarray(V)
        if V.ndim == 1:
            V = V[:, None]
        L = max(int(n_points), self.m)
        sign = (-1.0) ** self._k
        vals = np.fft.fft(V * sign[:, None], n=L, axis=0)
        return self.scan_points(L), vals


class PlanarArrayManifold(Manifold):
    """Planar array of sensors at polar positions ``(r_i, rho_i)``.

    Radii are measured in wavelengths, so entry ``i`` of the steering
    vector is ``exp(1j * 2 pi r_i cos(theta - rho_i))``.
    """

    def __init__(self, radii, angles, domain=(0.0, np.pi), periodic: bool = False):
        radii = np.asarray(radii, dtype=float).ravel()
        angles = np.asarray(angles, dtype=float).ravel()
        if radii.shape != angles.shape or radii.size == 0:
            raise ValueError("radii and angles must be non-empty and of equal length")
        self.radii = _readonly(radii)
        self.angles = _readonly(angles)
        self.m = radii.size
        self.domain = (float(domain[0]), float(domain[1]))
        self.periodic = periodic

    @classmethod
    def ula(cls, m: int):
        """Half-wavelength ULA in physical arrival angle on ``[0, pi]``."""
        return cls(np.arange(m) / 2.0, np.zeros(m))

    def __repr__(self):
        return f"PlanarArrayManifold(m={self.m}, domain={self.domain})"

    def _phase(self, thetas):
        thetas = self.check(thetas)
        return 2 * np.pi * self.radii[:, None], thetas[None, :] - self.angles[:, None]

    def vectors(self, thetas):
        k, arg = self._phase(thetas)
        return np.exp(1j * k * np.cos(arg))

    def derivatives(self, thetas):
        k, arg = self._phase(thetas)
        return -1j * k * np.sin(arg) * np.exp(1j * k * np.cos(arg))

    def second_derivatives(self, thetas):
        k, arg = self._phase(thetas)
        a = np.exp(1j * k * np.cos(arg))
        return (-1j * k * np.cos(arg) - (k * np.sin(arg)) ** 2) * a


def steering_vector(manifold: Manifold, theta: float) -> np.ndarray:
    return manifold.vectors([theta])[:, 0]


def steering_derivative(manifold: Manifold, theta: float) -> np.ndarray:
    return manifold.derivatives([theta])[:, 0]


@dataclass(frozen=True)
class Matrices:
    A: np.ndarray
    D: np.ndarray
    has_duplicates: bool

    def __iter__(self):
        return iter((self.A, self.D))


def build_matrices(manifold: Manifold, thetas) -> Matrices:
    """Steering matrix ``A`` and derivative matrix ``D`` at ``thetas``.

    Unpacks as ``A, D = build_matrices(...)``; ``has_duplicates`` flags
    repeated parameters (rank checks are left to callers).
    """
    thetas = manifold.check(thetas)
    if thetas.size == 0:
        raise ValueError("need at least one parameter")
    dup = np.unique(thetas).size < thetas.size
    return Matrices(manifold.vectors(thetas), manifold.derivatives(thetas), bool(dup))


@dataclass(frozen=True)
class SparseRepresentation:
    """Position parameters and the ``n x T`` amplitude matrix attached to them."""

    thetas: np.ndarray
    amplitudes: np.ndarray
    coordinate: str = "electrical"

    def __post_init__(self):
        thetas = np.atleast_1d(np.asarray(self.thetas, dtype=float)).ravel()
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.ndim == 1:
            amps = amps[:, None] if thetas.size else amps.reshape(0, 1)
        if amps.shape[0] != thetas.size:
            raise ValueError("one amplitude row per position parameter required")
        object.__setattr__(self, "thetas", _readonly(thetas))
        object.__setattr__(self, "amplitudes", _readonly(amps))

    @classmethod
    def empty(cls, T: int = 1, coordinate: str = "electrical"):
        return cls(np.zeros(0), np.zeros((0, T), dtype=complex), coordinate)

    @property
    def n(self) -> int:
        return self.thetas.size

    @property
    def T(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def row_norms(self) -> np.ndarray:
        """The ``gamma_i`` of each amplitude row."""
        return np.linalg.norm(self.amplitudes, axis=1)

    @property
    def penalty(self) -> float:
        return float(self.row_norms.sum())

    def is_irreducible(self) -> bool:
        return bool(np.all(self.row_norms > 0))

    def sorted(self) -> "SparseRepresentation":
        order = np.argsort(self.thetas)
        return SparseRepresentation(self.thetas[order], self.amplitudes[order], self.coordinate)

    def synthesize(self, manifold: Manifold) -> np.ndarray:
        if self.n == 0:
            return np.zeros((manifold.m, self.T), dtype=complex)
        return manifold.vectors(self.thetas) @ self.amplitudes


def trial_rng(seed: int, trial: int = 0) -> np.random.Generator:
    """Counter-based generator for one trial of a seeded experiment."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial)])))


@dataclass(frozen=True)
class NoiseModel:
    """Circularly symmetric complex Gaussian noise with covariance ``C``.

    ``covariance=None`` means ``sigma**2 * I``.
    """

    sigma: float = 1.0
    seed: int = 0
    covariance: Optional[np.ndarray] = None

    def cov(self, m: int) -> np.ndarray:
        if self.covariance is None:
            return self.sigma**2 * np.eye(m)
        C = np.asarray(self.covariance, dtype=complex)
        if C.shape != (m, m):
            raise ValueError("noise covariance has wrong shape")
        return C

    def draw(self, m: int, T: int, trial: int = 0) -> np.ndarray:
        rng = trial_rng(self.seed, trial)
        Z = (rng.standard_normal((m, T)) + 1j * rng.standard_normal((m, T))) / math.sqrt(2)
        if self.covariance is None:
            return self.sigma * Z
        w, V = np.linalg.eigh(self.cov(m))
        return (V * np.sqrt(np.clip(w, 0, None))) @ Z


@dataclass(frozen=True)
class Observation:
    X: np.ndarray
    truth: Optional[SparseRepresentation] = None
    noise_sigma: float = 0.0
    noise: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def T(self) -> int:
        return self.X.shape[1]


def generate_observation(
    manifold: Manifold,
    truth: SparseRepresentation,
    noise: NoiseModel,
    T: Optional[int] = None,
    trial: int = 0,
) -> Observation:
    """Draw ``X = A(theta) S + N``; deterministic in ``(noise.seed, trial)``."""
    T = truth.T if T is None else int(T)
    if truth.T != T:
        raise ValueError("truth amplitudes must have T columns")
    clean = truth.synthesize(manifold)
    if noise.covariance is None and noise.sigma == 0:
        N = np.zeros_like(clean)
    else:
        N = noise.draw(manifold.m, T, trial)
    X = clean + N
    X.setflags(write=False)
    return Observation(X, truth, float(noise.sigma), N)


def sample_correlation(X) -> np.ndarray:
    """``R_x = X X^H / T``."""
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[:, None]
    R = X @ X.conj().T / X.shape[1]
    return (R + R.conj().T) / 2


def load_geometry(source: Union[str, Path, Sequence[str]]) -> Manifold:
    """Read an array geometry from a small text config.

    Two forms are accepted::

        ula 15                  # half-wavelength ULA, electrical angle

        domain 0 3.141592653589793
        sensor 0.0 0.0          # r (wavelengths), rho (radians)
        sensor 0.5 0.0
        ...

    Blank lines and ``#`` comments are ignored.
    """
    if isinstance(source, (str, Path)) and Path(source).exists():
        lines = Path(source).read_text().splitlines()
    elif isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = list(source)
    radii, angles = [], []
    domain = (0.0, np.pi)
    periodic = False
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *vals = line.replace(",", " ").split()
        key = key.lower()
        if key == "ula":
            return UlaManifold(int(vals[0]))
        if key == "sensor":
            radii.append(float(vals[0]))
            angles.append(float(vals[1]))
        elif key == "domain":
            domain = (float(vals[0]), float(vals[1]))
        elif key == "periodic":
            periodic = vals[0].lower() in ("1", "true", "yes")
        else:
            raise ValueError(f"unknown geometry key {key!r}")
    if not radii:
        raise ValueError("geometry config lists no sensors")
    return PlanarArrayManifold(radii, angles, domain, periodic)
