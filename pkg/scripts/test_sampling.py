#!/usr/bin/env python3
"""
Tests for tensor-normal data, Bartlett factors, the multiway Cholesky sampler
and the posterior draw routines. Moment checks allow 5 standard errors.
"""
import sys
from pathlib import Path

import numpy as np

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from kronvb.core.elbo import JointState, MeanFieldState
from kronvb.core.exceptions import DimensionError, DofError
from kronvb.core.kron_tensor import FactorSet, kron_dense, nearest_kron_residual
from kronvb.core.sampling import (
    WishartSpec,
    bartlett_lower,
    mahalanobis_predictive,
    multiway_iw_cholesky,
    sample_joint_iw,
    sample_mean_field,
    sample_tensor_normal,
    wishart_draw,
)

SE_MULTIPLE = 5.0


def random_spd(d, rng):
    M = rng.standard_normal((d, d))
    return M @ M.T + d * np.eye(d)


def within_se(samples, target):
    """Entry-wise |mean − target| ≤ 5 standard errors."""
    samples = np.asarray(samples)
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    return bool(np.all(np.abs(mean - target) <= SE_MULTIPLE * se + 1e-12))


def test_tensor_normal():
    """Test tensor-normal observations."""
    print("=" * 60)
    print("Testing tensor-normal sampling...")
    print("=" * 60)

    rng = np.random.default_rng(1)
    sigmas = FactorSet([random_spd(2, rng), random_spd(3, rng)])
    cov = kron_dense(sigmas)
    n = 100_000
    Y, stats = sample_tensor_normal(sigmas, n, rng=2)
    assert Y.shape == (n, 6)
    assert stats.n_obs == n
    emp = stats.gram / n
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / n)
    assert np.all(np.abs(emp - cov) <= SE_MULTIPLE * se)
    print("  ✅ Empirical covariance matches ⊗Σ_i - PASSED")

    Y0, stats0 = sample_tensor_normal(sigmas, 0, rng=2)
    assert Y0.shape == (0, 6)
    assert np.array_equal(stats0.gram, np.zeros((6, 6)))
    print("  ✅ n = 0 gives S = 0 - PASSED")

    Ya, _ = sample_tensor_normal(sigmas, 5, rng=9)
    Yb, _ = sample_tensor_normal(sigmas, 5, rng=9)
    assert np.array_equal(Ya, Yb)
    print("  ✅ Seed determinism - PASSED")
    print("✅ Tensor-normal sampling - ALL TESTS PASSED\n")
    return True


def test_bartlett():
    """Test the Bartlett decomposition."""
    print("=" * 60)
    print("Testing Bartlett factors...")
    print("=" * 60)

    rng = np.random.default_rng(3)
    draws = [bartlett_lower(4, 8.0, rng) for _ in range(20_000)]
    for L in draws[:100]:
        assert np.all(np.triu(L, k=1) == 0.0)
        assert np.all(np.diag(L) > 0.0)
    products = np.array([L @ L.T for L in draws])
    assert within_se(products, 8.0 * np.eye(4))
    print("  ✅ E[LLᵀ] = νI - PASSED")

    scalars = np.array([bartlett_lower(1, 3.5, rng)[0, 0] ** 2 for _ in range(20_000)])
    assert within_se(scalars, 3.5)
    print("  ✅ Scalar case is χ²_ν with real ν - PASSED")

    try:
        bartlett_lower(4, 3.0, rng)
        assert False, "ν ≤ p − 1 should raise"
    except DofError:
        pass
    print("  ✅ Degrees-of-freedom check - PASSED")
    print("✅ Bartlett factors - ALL TESTS PASSED\n")
    return True


def test_multiway_cholesky():
    """Test the multiway Cholesky sampler against the dense path."""
    print("=" * 60)
    print("Testing multiway Cholesky sampler...")
    print("=" * 60)

    rng = np.random.default_rng(4)
    Q = FactorSet([random_spd(2, rng), random_spd(3, rng)])
    chols = [np.linalg.cholesky(M) for M in Q]
    assert np.allclose(np.linalg.cholesky(kron_dense(Q)), kron_dense(chols), rtol=1e-12, atol=1e-12)
    print("  ✅ chol(⊗Q_i) = ⊗chol(Q_i) - PASSED")

    spec = WishartSpec(9.0, Q)
    L = bartlett_lower(6, 9.0, rng)
    W_L = multiway_iw_cholesky(spec, bartlett=L)
    assert np.allclose(W_L, kron_dense(chols) @ L, rtol=1e-12, atol=1e-12)
    assert np.all(np.triu(W_L, k=1) == 0.0)
    print("  ✅ Fast path equals (⊗L_i)L for a shared Bartlett draw - PASSED")

    Q3 = FactorSet([random_spd(2, rng), random_spd(3, rng), random_spd(2, rng)])
    L3 = bartlett_lower(12, 14.0, rng)
    W3 = multiway_iw_cholesky(WishartSpec(14.0, Q3), bartlett=L3)
    chols3 = [np.linalg.cholesky(M) for M in Q3]
    assert np.allclose(W3, kron_dense(chols3) @ L3, rtol=1e-12, atol=1e-12)
    print("  ✅ Reversed reshape order with three modes - PASSED")

    eye = FactorSet.identity((2, 3))
    W_I = multiway_iw_cholesky(WishartSpec(9.0, eye), bartlett=L)
    assert np.allclose(W_I @ W_I.T, L @ L.T, rtol=1e-13, atol=1e-13)
    print("  ✅ Identity factors leave the draw unchanged - PASSED")

    samples = np.array([wishart_draw(spec, rng) for _ in range(20_000)])
    assert within_se(samples, 9.0 * kron_dense(Q))
    print("  ✅ E[W_L W_Lᵀ] = ν⊗Q_i - PASSED")
    print("✅ Multiway Cholesky sampler - ALL TESTS PASSED\n")
    return True


def test_posterior_draws():
    """Test joint and mean-field posterior draws."""
    print("=" * 60)
    print("Testing posterior draws...")
    print("=" * 60)

    rng = np.random.default_rng(5)
    A = FactorSet([random_spd(2, rng), random_spd(2, rng)])
    p = 4
    nu_v = p + 10.0
    state = JointState.from_dof(nu_v, A)
    draws = sample_joint_iw(state, 10_000, rng=6)
    for S in draws[:50]:
        np.linalg.cholesky(S)
    assert within_se(np.array(draws), kron_dense(A) / (nu_v - p - 1))
    print("  ✅ Joint draw mean = ⊗A_i/(ν_v − p − 1) - PASSED")

    assert max(nearest_kron_residual(S, (2, 2)) for S in draws[:20]) > 1e-6
    print("  ✅ Joint draws are non-separable - PASSED")

    again = sample_joint_iw(state, 3, rng=6)
    assert all(np.array_equal(a, b) for a, b in zip(again, draws[:3]))
    print("  ✅ Seed determinism - PASSED")

    mf = MeanFieldState.from_dof((8.0, 9.0), FactorSet([random_spd(2, rng), random_spd(3, rng)]))
    mf_draws = sample_mean_field(mf, 10_000, rng=7)
    for i, (d, nu) in enumerate(zip(mf.dims, mf.nu_v)):
        assert within_se(np.array([D[i] for D in mf_draws]), mf.factors[i] / (nu - d - 1))
    assert all(nearest_kron_residual(kron_dense(D), (2, 3)) < 1e-12 for D in mf_draws[:20])
    print("  ✅ Mean-field draws: per-mode means and exact separability - PASSED")

    t1 = np.array([np.trace(D[0]) for D in mf_draws])
    t2 = np.array([np.trace(D[1]) for D in mf_draws])
    # rank correlation keeps the check robust to the heavy IW tails
    r1, r2 = np.argsort(np.argsort(t1)), np.argsort(np.argsort(t2))
    corr = np.corrcoef(r1, r2)[0, 1]
    assert abs(corr) <= SE_MULTIPLE / np.sqrt(len(mf_draws))
    print("  ✅ Modes are drawn independently - PASSED")

    try:
        sample_mean_field(MeanFieldState((-50.0, 0.0), mf.factors), 1, rng=1)
        assert False, "ν ≤ d + 1 should raise"
    except DofError:
        pass
    print("  ✅ Degrees-of-freedom check - PASSED")
    print("✅ Posterior draws - ALL TESTS PASSED\n")
    return True


def test_mahalanobis():
    """Test the predictive Mahalanobis distances."""
    print("=" * 60)
    print("Testing predictive Mahalanobis distances...")
    print("=" * 60)

    rng = np.random.default_rng(8)
    truth = FactorSet([random_spd(2, rng), random_spd(3, rng)])
    dense = kron_dense(truth)
    K, m, p = 200, 100, 6

    values = mahalanobis_predictive(np.linalg.inv(dense), [dense] * K, m, rng=1)
    assert values.shape == (K,)
    assert within_se(values, float(p))
    print("  ✅ Draw equal to the truth gives E[M] = p - PASSED")

    c = 2.5
    values = mahalanobis_predictive(np.eye(p), [c * np.eye(p)] * K, m, rng=2)
    assert within_se(values, c * p)
    print("  ✅ Scaled identity gives E[M] = c·p - PASSED")

    draws = [FactorSet([random_spd(2, rng), random_spd(3, rng)]) for _ in range(5)]
    separable = mahalanobis_predictive(truth.inverses(), draws, m, rng=3)
    dense_path = mahalanobis_predictive(np.linalg.inv(dense), [kron_dense(D) for D in draws], m, rng=3)
    assert np.allclose(separable, dense_path, rtol=1e-9)
    print("  ✅ Factor path matches the dense path - PASSED")

    try:
        mahalanobis_predictive(np.eye(p), [np.eye(4)], m, rng=1)
        assert False, "shape mismatch should raise"
    except DimensionError:
        pass
    print("  ✅ Shape check - PASSED")
    print("✅ Predictive Mahalanobis distances - ALL TESTS PASSED\n")
    return True


def main():
    """Run all sampling tests."""
    print("\n" + "=" * 60)
    print("Sampling - Comprehensive Test")
    print("=" * 60)
    print()

    all_passed = True

    try:
        all_passed &= test_tensor_normal()
        all_passed &= test_bartlett()
        all_passed &= test_multiway_cholesky()
        all_passed &= test_posterior_draws()
        all_passed &= test_mahalanobis()

        print("=" * 60)
        if all_passed:
            print("✅ ALL TESTS PASSED")
        else:
            print("❌ SOME TESTS FAILED - Please review errors above")
        print("=" * 60)

        return 0 if all_passed else 1

    except Exception as e:
        print(f"\n❌ TEST ERROR: {e}")
        import traceback
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
