from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lassodoa.consistency import kernel_F
from lassodoa.manifold import (
    DomainError,
    NoiseModel,
    PlanarArrayManifold,
    SparseRepresentation,
    UlaManifold,
    build_matrices,
    electrical_angle,
    generate_observation,
    load_geometry,
    sample_correlation,
    steering_derivative,
    steering_vector,
)


def test_ula_values_at_simple_angles():
    np.testing.assert_allclose(steering_vector(UlaManifold(3), 0.0), [1, 1, 1])
    np.testing.assert_allclose(steering_vector(UlaManifold(2), np.pi), [1, -1], atol=1e-15)
    np.testing.assert_allclose(steering_derivative(UlaManifold(3), 0.0), [0, 1j, 2j])


def test_physical_angle_ula_matches_electrical_angle():
    ula = PlanarArrayManifold.ula(2)
    np.testing.assert_allclose(steering_vector(ula, np.pi / 3), [1, 1j], atol=1e-15)
    theta = np.linspace(0, np.pi, 7)
    np.testing.assert_allclose(
        PlanarArrayManifold.ula(6).vectors(theta), UlaManifold(6).vectors(electrical_angle(theta)), atol=1e-12
    )


def test_domain_is_enforced():
    with pytest.raises(DomainError):
        steering_vector(PlanarArrayManifold.ula(4), 3.5)
    with pytest.raises(DomainError):
        steering_vector(UlaManifold(4), -4.0)


def test_planar_derivative_vanishes_where_cosine_is_stationary():
    man = PlanarArrayManifold([0.7, 0.3, 1.1], [0.4, 1.0, 2.0])
    assert abs(steering_derivative(man, 0.4)[0]) < 1e-15


@pytest.mark.parametrize(
    "man",
    [UlaManifold(9), PlanarArrayManifold([0.0, 0.5, 1.3, 2.2], [0.0, 0.3, 1.9, 4.0]), PlanarArrayManifold.ula(7)],
)
def test_unit_modulus_and_derivatives_match_finite_differences(man):
    rng = np.random.default_rng(4)
    lo, hi = man.domain
    th = rng.uniform(lo + 1e-3, hi - 1e-3, 100)
    A = man.vectors(th)
    np.testing.assert_allclose(np.abs(A), 1.0, atol=1e-14)
    np.testing.assert_allclose(np.sum(np.abs(A) ** 2, axis=0), man.m, rtol=1e-13)
    h = 1e-6
    fd = (man.vectors(th + h) - man.vectors(th - h)) / (2 * h)
    D = man.derivatives(th)
    rel = np.linalg.norm(fd - D, axis=0) / np.linalg.norm(D, axis=0).clip(1e-12)
    assert rel.max() < 1e-6
    fd2 = (man.derivatives(th + h) - man.derivatives(th - h)) / (2 * h)
    D2 = man.second_derivatives(th)
    assert (np.linalg.norm(fd2 - D2, axis=0) / np.linalg.norm(D2, axis=0).clip(1e-12)).max() < 1e-6


def test_build_matrices_columns_and_duplicates():
    man = UlaManifold(6)
    A, D = build_matrices(man, [0.2])
    np.testing.assert_array_equal(A[:, 0], steering_vector(man, 0.2))
    np.testing.assert_array_equal(D[:, 0], steering_derivative(man, 0.2))
    assert build_matrices(man, [0.1, 0.1]).has_duplicates
    phis = np.linspace(-3, 3, 6)
    assert np.linalg.matrix_rank(build_matrices(man, phis).A) == 6


def test_normalized_gram_approaches_integral_kernel():
    m, delta = 4096, 3.0
    A, _ = build_matrices(UlaManifold(m), [0.0, delta / m])
    G = A.conj().T @ A / m
    np.testing.assert_allclose(G[0, 1], kernel_F(np.array([delta]))[0], atol=1e-3)


def test_representation_row_norms_and_irreducibility():
    rep = SparseRepresentation([0.1, 0.2], [[3 + 4j, 0], [0, 0]])
    np.testing.assert_allclose(rep.row_norms, [5, 0])
    assert not rep.is_irreducible()
    with pytest.raises(ValueError):
        SparseRepresentation([0.1], np.ones((2, 1)))
    with pytest.raises(ValueError):
        rep.thetas[0] = 1.0


def test_noiseless_observation_is_exact_and_seeded_draws_repeat():
    man = UlaManifold(5)
    truth = SparseRepresentation([0.3, -1.0], [[1.0], [2j]])
    obs = generate_observation(man, truth, NoiseModel(sigma=0.0))
    np.testing.assert_array_equal(obs.X, truth.synthesize(man))
    a = generate_observation(man, truth, NoiseModel(1.0, seed=11), trial=3).X
    b = generate_observation(man, truth, NoiseModel(1.0, seed=11), trial=3).X
    np.testing.assert_array_equal(a, b)
    c = generate_observation(man, truth, NoiseModel(1.0, seed=11), trial=4).X
    assert not np.array_equal(a, c)


def test_noise_covariance_monte_carlo():
    m, trials = 8, 100_000
    noise = NoiseModel(1.0, seed=5)
    N = np.hstack([noise.draw(m, 1, k) for k in range(trials)])
    C = N @ N.conj().T / trials
    assert np.linalg.norm(C - np.eye(m)) / np.linalg.norm(np.eye(m)) < 0.02
    # circular symmetry: real and imaginary parts each carry half the power
    assert abs(np.var(N.real) - 0.5) < 0.01 and abs(np.var(N.imag) - 0.5) < 0.01
    assert abs(np.mean(N * N)) < 0.01


def test_noise_draws_follow_a_given_covariance():
    m, trials = 4, 20_000
    L = np.array([[1, 0, 0, 0], [0.5, 1, 0, 0], [0, 0.2j, 1, 0], [0, 0, 0, 0.3]])
    C = L @ L.conj().T
    noise = NoiseModel(1.0, seed=2, covariance=C)
    N = np.hstack([noise.draw(m, 1, k) for k in range(trials)])
    assert np.linalg.norm(N @ N.conj().T / trials - C) / np.linalg.norm(C) < 0.05


def test_sample_correlation_basics():
    assert not np.any(sample_correlation(np.zeros((3, 2))))
    x = np.array([1, 1j, -2])
    np.testing.assert_allclose(sample_correlation(x), np.outer(x, x.conj()))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_sample_correlation_is_rotation_invariant(T, seed):
    rng = np.random.default_rng(seed)
    man = UlaManifold(6)
    S = rng.standard_normal((2, T)) + 1j * rng.standard_normal((2, T))
    Q, _ = np.linalg.qr(rng.standard_normal((T, T)) + 1j * rng.standard_normal((T, T)))
    X1 = SparseRepresentation([0.2, 1.4], S).synthesize(man)
    X2 = SparseRepresentation([0.2, 1.4], S @ Q).synthesize(man)
    np.testing.assert_allclose(sample_correlation(X1), sample_correlation(X2), atol=1e-12)
    R = sample_correlation(X1)
    np.testing.assert_allclose(R, R.conj().T)
    assert np.linalg.eigvalsh(R).min() > -1e-12


def test_geometry_text_config(tmp_path):
    assert load_geometry("ula 12") == UlaManifold(12)
    text = "# two sensors\ndomain 0 3.14159\nsensor 0 0\nsensor 0.5 0.0\n"
    man = load_geometry(text)
    assert isinstance(man, PlanarArrayManifold) and man.m == 2
    p = tmp_path / "geom.txt"
    p.write_text(text)
    np.testing.assert_allclose(load_geometry(p).vectors([1.0]), man.vectors([1.0]))
    with pytest.raises(ValueError):
        load_geometry("wobble 3")
