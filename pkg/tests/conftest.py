from __future__ import annotations

import numpy as np
import pytest

from lassodoa.manifold import SparseRepresentation, UlaManifold


@pytest.fixture
def ula15():
    return UlaManifold(15)


def twice_rayleigh_truth(m: int, center: float = 0.3, T: int = 1) -> SparseRepresentation:
    """Two unit sources separated by 4 pi / m in electrical angle."""
    th = np.array([center, center + 4 * np.pi / m])
    return SparseRepresentation(th, np.ones((2, T), dtype=complex))


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def structured_instance(rng, m=None, T=None, n_src=None, noise=0.3):
    """A few sources plus noise on a ULA, with lam a fraction of lam_max.

    Instances built this way keep the grid problem's dual well curved, so
    solutions stay sparse (plain white data at small lam gives flat duals).
    """
    m = m or int(rng.integers(4, 17))
    T = T or int(rng.integers(1, 5))
    n_src = n_src or int(rng.integers(1, 4))
    man = UlaManifold(m)
    th = rng.uniform(-np.pi, np.pi, n_src)
    S = crandn(rng, n_src, T) + 0.5 * np.exp(2j * np.pi * rng.random((n_src, 1)))
    X = man.vectors(th) @ S + noise * crandn(rng, m, T)
    return man, X
