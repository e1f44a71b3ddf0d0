#!/usr/bin/env python3
"""
Tests for Kronecker index algebra, folding, mode products and partial traces.
"""
import itertools
import sys
from pathlib import Path

import numpy as np

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from kronvb.core.exceptions import DimensionError, IndexBoundsError
from kronvb.core.kron_tensor import (
    FactorDims,
    FactorSet,
    SufficientStats,
    kron_dense,
    kron_entry,
    kron_trace,
    linear_index,
    mode_product,
    multi_index,
    nearest_kron_residual,
    partial_trace,
    symmetric_fold,
    symmetric_unfold,
)


def random_spd(d, rng):
    M = rng.standard_normal((d, d))
    return M @ M.T + d * np.eye(d)


def test_indexing():
    """Test linear and multi-index conversion."""
    print("=" * 60)
    print("Testing index conversion...")
    print("=" * 60)

    assert linear_index((1, 1), (2, 3)) == 1
    assert linear_index((2, 3), (2, 3)) == 6
    assert linear_index((1, 2, 1), (2, 3, 2)) == 3
    print("  ✅ Fixed examples - PASSED")

    dims = (2, 3, 2)
    seen = []
    for multi in itertools.product(*[range(1, d + 1) for d in dims]):
        p = linear_index(multi, dims)
        assert multi_index(p, dims) == multi
        seen.append(p)
    assert seen == list(range(1, 13)), "row-major enumeration must be a bijection onto 1..12"
    print("  ✅ Bijection over the full box - PASSED")

    try:
        linear_index((3, 1), (2, 3))
        assert False, "out-of-bounds index should raise"
    except IndexBoundsError as e:
        assert e.mode == 1
        assert "mode 1" in e.message
    print("  ✅ Bounds error names the mode - PASSED")

    for p in (0, 13):
        try:
            multi_index(p, (2, 3, 2))
            assert False, "out-of-range linear index should raise"
        except IndexBoundsError as e:
            assert e.mode is None and e.index == p
            assert e.message == f"Index out of bounds in linear index: {p} not in [1, 12]"
    print("  ✅ Linear index bounds error reports p and the order - PASSED")

    try:
        linear_index((1, 1, 1), (2, 3))
        assert False, "length mismatch should raise"
    except DimensionError:
        pass
    print("  ✅ Multi-index length check - PASSED")

    dims = FactorDims((5, 6, 4, 3))
    assert dims.total == 360
    assert dims.comp_products == (72, 60, 90, 120)
    assert dims.comp_product_pair(0, 1) == 12
    print("  ✅ Complement products - PASSED")
    print("✅ Index conversion - ALL TESTS PASSED\n")
    return True


def test_kron_entries():
    """Test entry access against the dense product."""
    print("=" * 60)
    print("Testing Kronecker entries...")
    print("=" * 60)

    eye = FactorSet.identity((2, 3))
    assert kron_entry(eye, (2, 3), (2, 3)) == 1.0
    assert kron_entry(eye, (1, 3), (2, 3)) == 0.0
    assert kron_entry(eye, (2, 1), (2, 3)) == 0.0
    print("  ✅ Identity factors - PASSED")

    rng = np.random.default_rng(3)
    factors = FactorSet([rng.standard_normal((2, 2)), rng.standard_normal((3, 3))])
    dense = kron_dense(factors)
    for _ in range(5):
        row = (int(rng.integers(1, 3)), int(rng.integers(1, 4)))
        col = (int(rng.integers(1, 3)), int(rng.integers(1, 4)))
        expected = dense[linear_index(row, (2, 3)) - 1, linear_index(col, (2, 3)) - 1]
        assert abs(kron_entry(factors, row, col) - expected) <= 1e-14 * max(1.0, abs(expected))
    print("  ✅ Random entries match dense product - PASSED")

    A = random_spd(2, rng)
    B = random_spd(3, rng)
    fs = FactorSet([A, B])
    assert np.isclose(fs.kron_logdet(), np.linalg.slogdet(np.kron(A, B))[1], rtol=1e-12)
    print("  ✅ Kronecker log-determinant - PASSED")
    print("✅ Kronecker entries - ALL TESTS PASSED\n")
    return True


def test_fold_and_mode_product():
    """Test folding and mode products."""
    print("=" * 60)
    print("Testing folding and mode products...")
    print("=" * 60)

    T = symmetric_fold(np.eye(4), (2, 2))
    for i1, i2, j1, j2 in itertools.product(range(2), repeat=4):
        expected = 1.0 if (i1 == j1 and i2 == j2) else 0.0
        assert T.values[i1, i2, j1, j2] == expected
    print("  ✅ Folded identity - PASSED")

    rng = np.random.default_rng(5)
    A = rng.standard_normal((6, 6))
    assert np.array_equal(symmetric_unfold(symmetric_fold(A, (2, 3))), A)
    try:
        symmetric_fold(np.eye(5), (2, 3))
        assert False, "wrong order should raise"
    except DimensionError:
        pass
    print("  ✅ Fold/unfold - PASSED")

    X = rng.standard_normal((2, 3, 4))
    assert np.array_equal(mode_product(X, np.eye(3), 1), X)
    M = rng.standard_normal((5, 3))
    Y = mode_product(X, M, 1)
    assert Y.shape == (2, 5, 4)
    unfolded = np.moveaxis(X, 1, 0).reshape(3, -1)
    expected = np.moveaxis((M @ unfolded).reshape(5, 2, 4), 0, 1)
    assert np.allclose(Y, expected, rtol=1e-13, atol=1e-13)
    assert np.allclose(mode_product(np.ones((2, 1, 3)), np.array([[2.5]]), 1), 2.5)
    try:
        mode_product(X, np.eye(4), 1)
        assert False, "column mismatch should raise"
    except DimensionError:
        pass
    print("  ✅ Mode products - PASSED")
    print("✅ Folding and mode products - ALL TESTS PASSED\n")
    return True


def test_partial_trace():
    """Test the contraction operator T^(k)."""
    print("=" * 60)
    print("Testing partial traces...")
    print("=" * 60)

    rng = np.random.default_rng(7)
    dims = FactorDims((2, 3, 2))
    sigmas = [random_spd(d, rng) for d in dims]
    invs = [np.linalg.inv(S) for S in sigmas]
    Y = rng.standard_normal((9, dims.total))
    stats = SufficientStats.from_observations(Y, dims)

    full = float(np.trace(np.linalg.solve(kron_dense(sigmas), stats.gram)))
    for k in range(dims.ndim):
        Tk = partial_trace(stats, invs, k)
        assert Tk.shape == (dims[k], dims[k])
        assert np.allclose(Tk, Tk.T)
        assert np.isclose(np.sum(invs[k] * Tk), full, rtol=1e-10)
    print("  ✅ tr(Σ_k⁻¹ T^(k)) = tr(Σ⁻¹S) for every mode - PASSED")

    for k in range(dims.ndim):
        a = partial_trace(stats, invs, k, strategy="full")
        b = partial_trace(stats, invs, k, strategy="triangular")
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    print("  ✅ Triangular contraction matches full - PASSED")

    kron_stats = SufficientStats(dims, kron_dense(sigmas), 0)
    assert np.isclose(kron_trace(kron_stats, invs), dims.total, rtol=1e-12)
    separable = SufficientStats.zero(dims).with_prior(FactorSet(sigmas))
    assert np.isclose(kron_trace(separable, invs), dims.total, rtol=1e-12)
    for k in range(dims.ndim):
        assert np.allclose(partial_trace(separable, invs, k), dims.comp_product(k) * sigmas[k])
    print("  ✅ S = ⊗Σ_i gives the total order - PASSED")

    assert kron_trace(SufficientStats.zero(dims), invs) == 0.0
    print("  ✅ S = 0 gives 0 - PASSED")

    try:
        partial_trace(stats, invs[:2], 0)
        assert False, "missing factor should raise"
    except DimensionError:
        pass
    print("  ✅ Factor count check - PASSED")
    print("✅ Partial traces - ALL TESTS PASSED\n")
    return True


def test_nearest_kron_residual():
    """Test the separability residual."""
    print("=" * 60)
    print("Testing nearest-Kronecker residual...")
    print("=" * 60)

    rng = np.random.default_rng(11)
    A = kron_dense([random_spd(2, rng), random_spd(3, rng)])
    assert nearest_kron_residual(A, (2, 3)) < 1e-12
    print("  ✅ Separable matrix has zero residual - PASSED")

    v = rng.standard_normal(6)
    B = A + 0.5 * np.outer(v, v)
    assert nearest_kron_residual(B, (2, 3)) > 1e-4
    print("  ✅ Perturbed matrix has positive residual - PASSED")
    print("✅ Nearest-Kronecker residual - ALL TESTS PASSED\n")
    return True


def main():
    """Run all Kronecker algebra tests."""
    print("\n" + "=" * 60)
    print("Kronecker Algebra - Comprehensive Test")
    print("=" * 60)
    print()

    all_passed = True

    try:
        all_passed &= test_indexing()
        all_passed &= test_kron_entries()
        all_passed &= test_fold_and_mode_product()
        all_passed &= test_partial_trace()
        all_passed &= test_nearest_kron_residual()

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
