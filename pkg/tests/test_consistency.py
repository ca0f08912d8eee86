from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lassodoa.consistency import (
    asymptotic_consistency_test,
    asymptotic_kernels,
    check_consistency,
    consistency_lhs_matrix,
    kernel_F,
    kernel_G,
    kernel_H,
    resolution_threshold_search,
    unit_phase_xi_sampler,
)
from lassodoa.manifold import SparseRepresentation, UlaManifold
from lassodoa.perturbation import build_expansion

from conftest import twice_rayleigh_truth

# Threshold for the single sample Xi = I, frozen from the first run.
IDENTITY_THRESHOLD_OVER_PI = 1.2983


# --- finite-m scan -----------------------------------------------------------------------


@pytest.mark.parametrize("phi0", [-2.0, 0.0, 1.3])
def test_single_source_consistent(phi0):
    man = UlaManifold(15)
    v = check_consistency(man, SparseRepresentation([phi0], [[1.0 - 2j]]))
    assert v.consistent
    assert v.margin > 0
    # beta vanishes, so the scan is |a^H(theta) a(phi0)| / m
    ref = np.abs(man.vectors(v.scan_thetas).conj().T @ man.vectors([phi0]))[:, 0] / 15
    np.testing.assert_allclose(v.scan_values, ref, atol=1e-12)


def test_twice_rayleigh_pair_consistent():
    v = check_consistency(UlaManifold(15), twice_rayleigh_truth(15))
    assert v.consistent
    np.testing.assert_allclose(v.support_values, 1, atol=1e-9)
    assert np.all(v.support_curvature < 0)


def test_close_pair_inconsistent():
    m = 15
    v = check_consistency(UlaManifold(m), SparseRepresentation([0.3, 0.3 + 0.5 * np.pi / m], [[1.0], [1.0]]))
    assert not v.consistent


def test_support_values_are_one_for_random_amplitudes():
    rng = np.random.default_rng(5)
    man = UlaManifold(12)
    for _ in range(10):
        S = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
        truth = SparseRepresentation([-1.5, 0.2, 2.0], S)
        exp = build_expansion(man, truth)
        M = consistency_lhs_matrix(exp)
        vals = np.linalg.norm(exp.A.conj().T @ M, axis=1)
        np.testing.assert_allclose(vals, 1, atol=1e-9)


def test_singular_configuration_raises():
    with pytest.raises(ValueError):
        check_consistency(UlaManifold(8), SparseRepresentation([0.3, 0.3], [[1.0], [1.0]]))


@pytest.mark.parametrize("delta", [1.5 * np.pi, 3 * np.pi])
def test_finite_m_verdicts_approach_asymptotic(delta):
    ref = asymptotic_consistency_test(delta, np.ones((2, 2)))
    gaps = []
    for m in (64, 256, 1024):
        v = check_consistency(UlaManifold(m), SparseRepresentation([0.1, 0.1 + delta / m], [[1.0], [1.0]]))
        assert v.consistent == ref.passed
        gaps.append(abs(v.worst_value - ref.worst_value))
    assert gaps[0] > gaps[1] > gaps[2]


# --- kernels -------------------------------------------------------------------------------


def test_kernel_limits():
    K = asymptotic_kernels(1e-9)
    assert K.F[0, 1] == pytest.approx(1)
    np.testing.assert_allclose(np.diag(asymptotic_kernels(2.0).H), 1 / 3)
    np.testing.assert_allclose(np.diag(asymptotic_kernels(2.0).G), 0.5j)
    assert kernel_F(0.0) == pytest.approx(1)
    assert kernel_G(0.0) == pytest.approx(0.5j)
    assert kernel_H(0.0) == pytest.approx(1 / 3)


@settings(max_examples=60, deadline=None)
@given(st.floats(-30, 30))
def test_kernel_derivative_identities(d):
    h = 1e-5
    dF = (kernel_F(d + h) - kernel_F(d - h)) / (2 * h)
    dG = (kernel_G(d + h) - kernel_G(d - h)) / (2 * h)
    assert abs(kernel_G(d) - dF) < 1e-8
    assert abs(kernel_H(d) + dG) < 1e-8
    assert kernel_F(-d) == pytest.approx(np.conj(kernel_F(d)), abs=1e-15)


def test_kernels_continuous_across_series_switch():
    for k in (kernel_F, kernel_G, kernel_H):
        lo, hi = k(1 - 1e-12), k(1 + 1e-12)
        assert abs(lo - hi) < 1e-9


def test_kernels_are_integrals_over_the_aperture():
    # F(d) = int_0^1 exp(j d x) dx, G = F', H = -G'
    x = (np.arange(20000) + 0.5) / 20000
    for d in (0.7, 5.0, -11.0):
        e = np.exp(1j * d * x)
        assert kernel_F(d) == pytest.approx(e.mean(), abs=1e-8)
        assert kernel_G(d) == pytest.approx((1j * x * e).mean(), abs=1e-8)
        assert kernel_H(d) == pytest.approx((x**2 * e).mean(), abs=1e-8)


# --- asymptotic test and threshold ---------------------------------------------------------


def test_asymptotic_test_far_and_near():
    rng = np.random.default_rng(0)
    xis = [unit_phase_xi_sampler(rng) for _ in range(20)]
    assert all(asymptotic_consistency_test(4 * np.pi, Xi).passed for Xi in xis)
    # below the threshold a positive fraction of the draws fails; "almost all" is lost
    fails = sum(not asymptotic_consistency_test(0.5 * np.pi, Xi).passed for Xi in xis)
    assert fails >= len(xis) // 2
    assert not asymptotic_consistency_test(0.5 * np.pi, np.ones((2, 2))).passed


def test_asymptotic_test_brackets_threshold():
    rng = np.random.default_rng(0)
    xis = [unit_phase_xi_sampler(rng) for _ in range(200)]
    assert not all(asymptotic_consistency_test(2.2 * np.pi, Xi, decide_only=True).passed for Xi in xis)
    assert all(asymptotic_consistency_test(2.32 * np.pi, Xi, decide_only=True).passed for Xi in xis)


def test_unit_phase_sampler_shape():
    rng = np.random.default_rng(1)
    for T in (1, 3):
        Xi = unit_phase_xi_sampler(rng, T)
        np.testing.assert_allclose(np.diag(Xi), 1)
        assert np.linalg.eigvalsh(Xi).min() > -1e-12


def test_identity_threshold_regression():
    res = resolution_threshold_search(xis=[np.eye(2, dtype=complex)])
    assert res.threshold / np.pi == pytest.approx(IDENTITY_THRESHOLD_OVER_PI, abs=1e-4)
    assert res.monotone
    # the single sample passes above and fails below
    assert asymptotic_consistency_test(res.threshold + 1e-3, np.eye(2)).passed
    assert not asymptotic_consistency_test(res.threshold - 1e-3, np.eye(2)).passed
