from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lassodoa.class_estimator import (
    CertificationError,
    ClassOptions,
    continuous_lambda_max,
    grid_fineness,
    properness_max_count,
    reduce_representation,
    set_distance,
    solve_class,
    solve_class_for_order,
    verify_class_optimality,
)
from lassodoa.grid_lasso import Grid, solve_group_lasso
from lassodoa.manifold import NoiseModel, SparseRepresentation, UlaManifold
from lassodoa.performance import predict_performance
from lassodoa.perturbation import build_expansion

from conftest import crandn, structured_instance, twice_rayleigh_truth


# --- set distance and fineness -----------------------------------------------------


def test_set_distance_examples():
    assert set_distance([1.0, 2.5], [1.0, 2.5]) == 0
    assert set_distance([1], [1, 5]) == 0
    assert set_distance([1, 5], [1]) == 4
    assert set_distance([0, 2], [1]) == 1
    assert set_distance([], [1]) == 0
    assert set_distance([1], []) == np.inf
    assert set_distance([3.0], [-3.0], period=2 * np.pi) == pytest.approx(2 * np.pi - 6)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=1, max_size=6),
    st.lists(st.floats(-10, 10), min_size=1, max_size=6),
    st.lists(st.floats(-10, 10), min_size=1, max_size=6),
)
def test_set_distance_triangle_inequality(a, b, c):
    assert set_distance(a, c) <= set_distance(a, b) + set_distance(b, c) + 1e-12
    assert set_distance(a, a + b) == 0


def test_grid_fineness_examples():
    h = np.pi / 10
    assert grid_fineness(np.arange(11) * h, (0, np.pi)) == pytest.approx(h / 2)
    assert grid_fineness([np.pi / 2], (0, np.pi)) == pytest.approx(np.pi / 2)
    man = UlaManifold(8)
    assert grid_fineness(Grid.uniform(man, 64), man.domain, periodic=True) == pytest.approx(np.pi / 64)


def test_grid_fineness_matches_dense_scan():
    rng = np.random.default_rng(4)
    pts = np.sort(rng.uniform(0, np.pi, 13))
    probe = np.linspace(0, np.pi, 10**6)
    brute = np.max(np.min(np.abs(probe[:, None] - pts[None, :]), axis=1))
    assert abs(grid_fineness(pts, (0, np.pi)) - brute) <= np.pi / 10**6


# --- reduction --------------------------------------------------------------------------


def test_reduce_representation():
    rep = SparseRepresentation([0.1, 0.2, 0.3], [[1.0], [0.0], [2j]])
    red = reduce_representation(rep)
    np.testing.assert_array_equal(red.thetas, [0.1, 0.3])
    assert reduce_representation(red) is red
    assert reduce_representation(SparseRepresentation([0.1], [[0.0]])).n == 0


# --- certificate --------------------------------------------------------------------------


def test_empty_representation_certified_above_lambda_max():
    rng = np.random.default_rng(0)
    man, X = structured_instance(rng, m=8, T=2)
    lm = continuous_lambda_max(X, man)
    empty = SparseRepresentation(np.zeros(0), np.zeros((0, 2)))
    assert verify_class_optimality(empty, X, man, lm * 1.001).passed
    assert not verify_class_optimality(empty, X, man, lm * 0.99).passed
    assert solve_class(X, man, lm * 1.001).order == 0


def test_unshrunk_truth_fails_alignment():
    man = UlaManifold(15)
    truth = twice_rayleigh_truth(15)
    cert = verify_class_optimality(truth, truth.synthesize(man), man, lam=0.1)
    assert not cert.passed
    assert cert.alignment_error == pytest.approx(0.1)


def test_self_certification_random_scenarios():
    rng = np.random.default_rng(21)
    for _ in range(50):
        man, X = structured_instance(rng)
        lam = rng.uniform(0.2, 0.7) * continuous_lambda_max(X, man)
        sol = solve_class(X, man, lam)
        assert sol.certificate.passed
        assert verify_class_optimality(sol, X, man).passed
        assert sol.order <= man.m - 1
        assert np.all(sol.representation.row_norms > 0)


def test_certification_error_reports_missing_source():
    man = UlaManifold(15)
    truth = SparseRepresentation([-1.0, 1.0], [[1.0], [1.0]])
    X = truth.synthesize(man)
    one = SparseRepresentation([-1.0], [[1.0]])
    with pytest.raises(CertificationError) as err:
        solve_class(X, man, 0.5, ClassOptions(max_refine=1), init=one)
    assert err.value.violation > 0
    assert abs(err.value.violation_theta - 1.0) < 0.05
    assert err.value.best is not None


def test_lambda_must_be_positive():
    with pytest.raises(ValueError):
        solve_class(np.ones(4), UlaManifold(4), 0.0)


# --- estimates ------------------------------------------------------------------------------


def test_noiseless_off_grid_single_source():
    man = UlaManifold(12)
    th = 0.123456789
    X = man.vectors([th]) * (0.8 - 0.3j)
    sol = solve_class(X, man, 1e-3)
    assert sol.order == 1
    assert abs(sol.thetas[0] - th) < 1e-6


def test_twice_rayleigh_pair_within_predicted_spread():
    m, sigma = 15, 1e-3
    man = UlaManifold(m)
    truth = twice_rayleigh_truth(m)
    noise = NoiseModel(sigma, seed=3)
    X = truth.synthesize(man) + noise.draw(m, 1, 0)
    sol = solve_class_for_order(X, man, 2).solution
    pred = predict_performance(build_expansion(man, truth), noise)
    assert sol.order == 2 and sol.certificate.passed
    z = (sol.thetas - truth.thetas - pred.bias) / np.sqrt(pred.variance)
    assert np.all(np.abs(z) < 3)


def test_order_search_sits_at_the_order_boundary():
    m = 15
    man = UlaManifold(m)
    truth = twice_rayleigh_truth(m)
    X = truth.synthesize(man) + NoiseModel(1e-3, seed=5).draw(m, 1, 0)
    res = solve_class_for_order(X, man, 2, rtol=1e-6)
    lam = res.solution.lam
    # slightly smaller regularization leaves a third peak above lambda
    below = solve_class(X, man, lam * (1 - 1e-4), init=res.solution.representation)
    assert below.order > 2


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_snapshot_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    man, X = structured_instance(rng, m=8, T=3)
    lam = 0.4 * continuous_lambda_max(X, man)
    Q, _ = np.linalg.qr(crandn(rng, 3, 3))
    opts = ClassOptions(tol=1e-10)
    a = solve_class(X, man, lam, opts)
    b = solve_class(X @ Q, man, lam, opts)
    assert a.order == b.order
    np.testing.assert_allclose(a.thetas, b.thetas, atol=1e-9)


def test_homotopy_slope_follows_beta():
    m = 15
    man = UlaManifold(m)
    truth = twice_rayleigh_truth(m)
    exp = build_expansion(man, truth)
    X = truth.synthesize(man)
    lam = 0.02
    opts = ClassOptions(tol=1e-10)
    base = solve_class(X, man, lam, opts)
    for sgn in (-1, 1):
        other = solve_class(X, man, lam * (1 + sgn * 1e-3), opts, init=base.representation)
        slope = (other.thetas - base.thetas) / (sgn * 1e-3 * lam)
        np.testing.assert_allclose(slope, exp.beta, rtol=0.05)


def test_grid_to_continuum_convergence():
    m = 15
    man = UlaManifold(m)
    truth = twice_rayleigh_truth(m)
    X = truth.synthesize(man) + NoiseModel(1e-2, seed=1).draw(m, 1, 0)
    lam = 0.3
    cls = solve_class(X, man, lam).thetas
    dists = []
    for k in range(3, 10):
        grid = Grid.uniform(man, 2**k)
        zeta = grid_fineness(grid, man.domain, periodic=True)
        sup = solve_group_lasso(X, grid, man, lam).support_thetas
        dists.append(set_distance(sup, cls, period=2 * np.pi))
    assert np.all(np.diff(dists) <= 1e-12)
    assert dists[-1] < 2 * zeta


def test_uniqueness_check_on_regular_instance():
    man = UlaManifold(10)
    X = twice_rayleigh_truth(10).synthesize(man)
    sol = solve_class(X, man, 0.5, ClassOptions(check_uniqueness=True))
    assert not sol.non_unique


# --- properness -----------------------------------------------------------------------------------


def _dense_count(Z, n=2**20, rel_tol=1e-9):
    m = Z.shape[0]
    # a^H(phi) z = sum_k z_k exp(-1j k phi): one FFT per column
    F = np.sum(np.abs(np.fft.fft(Z, n=n, axis=0)) ** 2, axis=1)
    is_max = (F >= np.roll(F, 1)) & (F > np.roll(F, -1))
    return int(np.sum(is_max & (F >= F.max() * (1 - rel_tol))))


def test_properness_rank_one():
    man = UlaManifold(9)
    res = properness_max_count(man.vectors([0.7]), man)
    assert res.count == 1
    assert res.locations[0] == pytest.approx(0.7, abs=1e-6)


def test_properness_random_m4_bound():
    rng = np.random.default_rng(0)
    man = UlaManifold(4)
    for _ in range(100):
        assert properness_max_count(crandn(rng, 4, int(rng.integers(1, 4))), man).count <= 3


@pytest.mark.parametrize("m", [4, 6, 9])
def test_properness_extreme_case_reaches_m_minus_one(m):
    man = UlaManifold(m)
    phis = np.angle(np.exp(2j * np.pi * np.arange(1, m) / m))
    res = properness_max_count(man.vectors(phis), man)
    assert res.count == m - 1
    assert res.count == _dense_count(man.vectors(phis), rel_tol=1e-8)


def test_properness_polynomial_matches_dense_scan():
    rng = np.random.default_rng(2)
    man = UlaManifold(6)
    cases = [crandn(rng, 6, 2) for _ in range(5)]
    cases.append(man.vectors([0.2, 0.2 + 2 * np.pi / 6]))
    for Z in cases:
        assert properness_max_count(Z, man).count == _dense_count(Z)


def test_properness_constant_function_and_errors():
    man = UlaManifold(5)
    e1 = np.zeros((5, 1))
    e1[0] = 1
    assert properness_max_count(e1, man).count == -1
    with pytest.raises(ValueError):
        properness_max_count(np.zeros((5, 1)), man)
