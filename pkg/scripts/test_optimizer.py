#!/usr/bin/env python3
"""
Tests for the Riemannian ascent loop, convergence diagnostics and distances.
"""
import math
import sys
from pathlib import Path

import numpy as np
from scipy import special

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from kronvb.core.elbo import JointState, MeanFieldState, conjugate_posterior, elbo_joint
from kronvb.core.exceptions import DegenerateMetricError, ValidationError
from kronvb.core.kron_tensor import FactorDims, FactorSet, SufficientStats, kron_dense
from kronvb.core.optimizer import (
    Snapshot,
    check_convergence,
    distance_to_truth,
    fit,
    fit_joint,
    fit_mean_field,
    initial_joint_state,
    initial_mean_field_state,
    iterations_to_threshold,
    plateau_iteration,
    posterior_mean_factors,
)
from kronvb.core.sampling import sample_tensor_normal
from kronvb.core.spd_geometry import MetricKind
from kronvb.models.request import ConvergenceConfig, OptimizerConfig
from kronvb.models.response import ConvergenceStatus, Trace, TraceRow


def random_spd(d, rng):
    M = rng.standard_normal((d, d))
    return M @ M.T + d * np.eye(d)


def make_trace(values, grad_norm=0.0):
    trace = Trace(method="joint", metric="pullback")
    for i, v in enumerate(values):
        trace.append(TraceRow(iteration=i, elbo=v, grad_norm=grad_norm, logdets=[0.0], nu_v=[5.0]))
    return trace


def test_conjugate_fit():
    """Test that a single-mode fit recovers the exact posterior."""
    print("=" * 60)
    print("Testing single-mode fit against the conjugate posterior...")
    print("=" * 60)

    rng = np.random.default_rng(20)
    p, n, nu = 3, 10, 5.0
    Y = rng.standard_normal((n, p)) @ np.linalg.cholesky(random_spd(p, rng)).T
    stats = SufficientStats.from_observations(Y, (p,))
    Lam = np.eye(p)
    post_nu, post_scale = conjugate_posterior(stats, nu, Lam)
    log_ml = (
        -n * p / 2 * math.log(math.pi)
        + special.multigammaln(post_nu / 2, p) - special.multigammaln(nu / 2, p)
        - post_nu / 2 * np.linalg.slogdet(post_scale)[1]
    )

    init = JointState(0.0, FactorSet([np.eye(p)]), nu, Lam)
    cfg = OptimizerConfig(
        log10_step=-1.0,
        max_iters=3000,
        backtracking=True,
        convergence=ConvergenceConfig(elbo_rel_tol=1e-12, grad_norm_tol=1e-7, window=20),
    )
    result = fit_joint(stats, init, cfg)
    assert result.status == ConvergenceStatus.CONVERGED, result.message
    c, factors = posterior_mean_factors(result.state)
    assert np.allclose(c * factors[0], post_scale / (post_nu - p - 1), rtol=1e-6)
    assert math.isclose(result.state.nu_v, post_nu, rel_tol=1e-5)
    assert math.isclose(result.final_elbo, log_ml, rel_tol=1e-9)
    print(f"  ✅ Converged in {result.iterations} iterations to the exact posterior - PASSED")

    elbos = result.trace.elbos()
    assert np.all(np.diff(elbos) >= -1e-12 * np.abs(elbos[:-1]))
    print("  ✅ Backtracking keeps the bound monotone - PASSED")

    boundary = elbo_joint(result.state.with_params(-20.0, result.state.factors), stats).value
    assert boundary < result.final_elbo
    print("  ✅ Bound at z = −20 is below the optimum - PASSED")

    summary = result.summary(cfg.convergence)
    assert summary.status == "converged"
    assert summary.iterations == result.iterations
    assert summary.plateau_iteration is not None and summary.plateau_iteration <= result.iterations
    print("  ✅ Fit summary - PASSED")
    print("✅ Single-mode fit - ALL TESTS PASSED\n")
    return True


def test_prior_recovery():
    """Test that without data the fit returns to the prior."""
    print("=" * 60)
    print("Testing prior recovery without data...")
    print("=" * 60)

    dims = FactorDims((2, 2))
    stats = SufficientStats.zero(dims)
    init = initial_joint_state(dims, 1.0, rng=3)
    assert init.z == 0.0 and math.isclose(init.nu_v, dims.total + 2)
    assert abs(np.linalg.slogdet(init.factors[1])[1]) < 1e-10
    cfg = OptimizerConfig(log10_step=-1.0, log10_step_dof=0.0, max_iters=500, backtracking=True)
    result = fit_joint(stats, init, cfg)

    # prior IW(p + 2, ⊗ I/2) has mean ⊗ I/2
    prior_mean = FactorSet([0.5 * np.eye(2), 0.5 * np.eye(2)])
    assert distance_to_truth(result.state, prior_mean) < 1e-10
    assert abs(result.final_elbo) < 1e-8
    assert result.final_elbo > result.trace.elbos()[0]
    print("  ✅ Posterior mean returns to the prior mean - PASSED")

    mf_init = initial_mean_field_state(dims, 1.0, rng=3)
    mf = fit_mean_field(stats, mf_init, OptimizerConfig(metric=MetricKind.PRODUCT, log10_step=-1.0,
                                                        max_iters=800, backtracking=True))
    assert abs(mf.final_elbo) < 1e-8
    for A, L in zip(mf.state.factors, mf_init.prior_scales):
        assert np.allclose(A, L, rtol=1e-5, atol=1e-8)
    print("  ✅ Mean-field factors return to the per-mode priors - PASSED")
    print("✅ Prior recovery - ALL TESTS PASSED\n")
    return True


def test_dof_boundary():
    """Test that a start at the dof boundary is neither stationary nor converged."""
    print("=" * 60)
    print("Testing fits started at the dof boundary...")
    print("=" * 60)

    rng = np.random.default_rng(24)
    p, n, nu = 3, 10, 5.0
    Y = rng.standard_normal((n, p)) @ np.linalg.cholesky(random_spd(p, rng)).T
    stats = SufficientStats.from_observations(Y, (p,))
    Lam = np.eye(p)
    _, post_scale = conjugate_posterior(stats, nu, Lam)

    # the factor shape is already optimal, so only the dof is off
    start = JointState(-20.0, FactorSet([post_scale]), nu, Lam)
    cfg = OptimizerConfig(
        log10_step=-1.0,
        max_iters=100,
        backtracking=True,
        convergence=ConvergenceConfig(elbo_rel_tol=1e-12, grad_norm_tol=1e-7, window=20),
    )
    result = fit_joint(stats, start, cfg)
    first = result.trace.rows[0]
    assert first.nu_v[0] < p + 1 + 1e-6
    assert first.grad_norm > 1.0, f"grad norm {first.grad_norm} hides the dof gradient"
    assert result.status != ConvergenceStatus.CONVERGED
    print(f"  ✅ Boundary start reports grad norm {first.grad_norm:.2f} and status {result.status.value} - PASSED")

    # from the default start the dof reaches n + ν instead of the boundary
    fitted = fit_joint(stats, JointState(0.0, FactorSet([np.eye(p)]), nu, Lam), cfg.model_copy(update={"max_iters": 3000}))
    assert fitted.status == ConvergenceStatus.CONVERGED, fitted.message
    assert math.isclose(fitted.state.nu_v, n + nu, rel_tol=1e-5)
    assert min(row.nu_v[0] for row in fitted.trace.rows) >= p + 2 - 1e-12
    print("  ✅ Default start never drifts toward the boundary - PASSED")
    print("✅ Dof boundary - ALL TESTS PASSED\n")
    return True


def test_full_size_start():
    """Test the first iterations at dims (5, 6, 4, 3) with the shared default step."""
    print("=" * 60)
    print("Testing the start of a full-size joint fit...")
    print("=" * 60)

    rng = np.random.default_rng(25)
    dims = FactorDims((5, 6, 4, 3))
    truth = FactorSet([random_spd(d, rng) for d in dims])
    _, stats = sample_tensor_normal(truth, 50, rng)
    init = initial_joint_state(dims, float(np.trace(stats.gram)) / stats.n_obs, rng)
    target = stats.n_obs + init.prior_nu

    result = fit_joint(stats, init, OptimizerConfig(log10_step=-4.4, max_iters=40, backtracking=False))
    assert result.status != ConvergenceStatus.DIVERGED, result.message
    assert result.iterations == 40
    nus = [row.nu_v[0] for row in result.trace.rows]
    assert all(a <= b for a, b in zip(nus, nus[1:])), "dof should rise monotonically toward n + ν"
    assert dims.total + 1 < nus[-1] < target
    elbos = result.trace.elbos()
    assert np.all(np.diff(elbos) >= -1e-12 * np.abs(elbos[:-1]))
    print(f"  ✅ 40 unguarded steps at ε = 10^-4.4 raise ν_v to {nus[-1]:.2f} - PASSED")

    plain = fit_joint(stats, init, OptimizerConfig(log10_step=-4.4, max_iters=1, backtracking=False, exact_scale=False))
    assert plain.trace.elbos()[0] < elbos[0]
    print("  ✅ Scale step raises the starting bound - PASSED")
    print("✅ Full-size start - ALL TESTS PASSED\n")
    return True


def test_ascent_direction():
    """Test that one tiny step never lowers the bound."""
    print("=" * 60)
    print("Testing the ascent property...")
    print("=" * 60)

    rng = np.random.default_rng(21)
    cfg = OptimizerConfig(log10_step=-7.0, max_iters=1, backtracking=False)
    for trial in range(20):
        dims = FactorDims((2, 3))
        truth = FactorSet([random_spd(2, rng), random_spd(3, rng)])
        _, stats = sample_tensor_normal(truth, 8, rng)
        gamma = float(np.trace(stats.gram)) / stats.n_obs

        joint = fit_joint(stats, initial_joint_state(dims, gamma, rng), cfg)
        e0, e1 = joint.trace.elbos()
        assert e1 >= e0 - 1e-12 * abs(e0), f"joint trial {trial}: {e0} -> {e1}"

        mf = fit_mean_field(stats, initial_mean_field_state(dims, gamma, rng),
                            cfg.model_copy(update={"metric": MetricKind.PRODUCT}))
        e0, e1 = mf.trace.elbos()
        assert e1 >= e0 - 1e-12 * abs(e0), f"mean-field trial {trial}: {e0} -> {e1}"
    print("  ✅ 20 random instances for both families - PASSED")
    print("✅ Ascent property - ALL TESTS PASSED\n")
    return True


def test_fit_controls():
    """Test metric handling, divergence, recording and callbacks."""
    print("=" * 60)
    print("Testing fit controls...")
    print("=" * 60)

    rng = np.random.default_rng(22)
    dims = FactorDims((2, 2))
    truth = FactorSet([random_spd(2, rng), random_spd(2, rng)])
    _, stats = sample_tensor_normal(truth, 50, rng)
    init = initial_joint_state(dims, 1.0, rng)

    try:
        fit_joint(stats, init, OptimizerConfig(metric=MetricKind.PULLBACK_NAIVE))
        assert False, "naive metric should be rejected"
    except DegenerateMetricError:
        pass
    print("  ✅ Naive pullback metric rejected - PASSED")

    mf = fit_mean_field(stats, initial_mean_field_state(dims, 1.0, rng),
                        OptimizerConfig(metric=MetricKind.PULLBACK, log10_step=-4.0, max_iters=3))
    assert mf.trace.metric == "product"
    print("  ✅ Mean-field fits fall back to the product metric - PASSED")

    # the scale step absorbs the huge factors; a step of 100 still overflows z on the first move
    big = JointState(0.0, FactorSet([1e6 * np.eye(2), np.eye(2)]), float(dims.total + 2),
                     FactorSet([0.5 * np.eye(2), 0.5 * np.eye(2)]))
    result = fit_joint(stats, big, OptimizerConfig(log10_step=2.0, max_iters=10, backtracking=False))
    assert result.status == ConvergenceStatus.DIVERGED
    assert len(result.trace) == 1 and result.state.z == 0.0
    assert "iteration 1" in result.message
    print("  ✅ Overflow without backtracking reports divergence and keeps the last good state - PASSED")

    rows = []
    cfg = OptimizerConfig(log10_step=-4.0, max_iters=10, record_every=3, keep_snapshots=True)
    result = fit(stats, init, cfg, truth=truth, on_record=rows.append)
    assert list(result.trace.iterations()) == [0, 3, 6, 9, 10]
    assert len(rows) == len(result.trace) == len(result.snapshots)
    assert all(r.log_distance is not None for r in result.trace.rows)
    assert result.status == ConvergenceStatus.RUNNING
    assert "cap" in result.message
    frame = result.trace.to_frame(method="joint")
    assert {"iteration", "elbo", "log_abs_elbo", "nu_v", "logdet_1", "logdet_2", "log_distance"} <= set(frame.columns)
    assert (frame["method"] == "joint").all()
    print("  ✅ Recording cadence, snapshots and callbacks - PASSED")

    try:
        fit(stats, truth, cfg)
        assert False, "unsupported state should raise"
    except ValidationError:
        pass
    print("  ✅ Dispatch on state type - PASSED")
    print("✅ Fit controls - ALL TESTS PASSED\n")
    return True


def test_convergence_checks():
    """Test convergence status, plateaus and threshold counts."""
    print("=" * 60)
    print("Testing convergence diagnostics...")
    print("=" * 60)

    cfg = ConvergenceConfig(elbo_rel_tol=1e-8, grad_norm_tol=1e-6, window=50)
    assert check_convergence(make_trace([-5.0] * 60), cfg) == ConvergenceStatus.CONVERGED
    assert check_convergence(make_trace([-5.0] * 60, grad_norm=1.0), cfg) == ConvergenceStatus.STALLED
    assert check_convergence(make_trace([-100.0 + 2.0 * i for i in range(60)]), cfg) == ConvergenceStatus.RUNNING
    assert check_convergence(make_trace([-5.0] * 10), cfg) == ConvergenceStatus.RUNNING
    assert check_convergence(make_trace([-5.0] * 59 + [float("nan")]), cfg) == ConvergenceStatus.DIVERGED
    assert check_convergence(make_trace([-5.0] * 60), OptimizerConfig(convergence=cfg)) == ConvergenceStatus.CONVERGED
    try:
        check_convergence(make_trace([]), cfg)
        assert False, "empty trace should raise"
    except ValidationError:
        pass
    print("  ✅ Status rules - PASSED")

    values = [float(v) for v in range(1, 11)] + [10.0] * 100
    assert plateau_iteration(values, 1e-6, 5) == 9
    assert plateau_iteration(values, 1e-6, 5, iterations=[10 * i for i in range(len(values))]) == 90
    assert plateau_iteration([float(v) for v in range(1, 200)], 1e-6, 5) is None
    assert plateau_iteration([1.0, 1.0], 1e-6, 5) is None
    print("  ✅ Plateau detection - PASSED")

    eye = FactorSet([np.eye(2)])
    snaps = [Snapshot(i, c, eye) for i, c in enumerate([2.0, 1.5, 1.01, 1.001, 1.0])]
    assert iterations_to_threshold(snaps, 0.005) == 3
    assert iterations_to_threshold(snaps, 10.0) == 0
    assert iterations_to_threshold([], 0.005) is None
    print("  ✅ Iterations to threshold - PASSED")
    print("✅ Convergence diagnostics - ALL TESTS PASSED\n")
    return True


def test_distances():
    """Test posterior means and distances to the truth."""
    print("=" * 60)
    print("Testing distances...")
    print("=" * 60)

    rng = np.random.default_rng(23)
    truth = FactorSet([random_spd(2, rng), random_spd(2, rng)])
    state = JointState(0.0, truth)
    assert distance_to_truth(state, truth) < 1e-10 * float(np.sum(kron_dense(truth) ** 2))
    print("  ✅ Mean equal to the truth gives 0 - PASSED")

    state = JointState(0.4, FactorSet([random_spd(2, rng), random_spd(2, rng)]))
    c, factors = posterior_mean_factors(state)
    assert math.isclose(c, 1.0 / (state.nu_v - 4 - 1), rel_tol=1e-12)
    dense = float(np.sum((c * kron_dense(factors) - kron_dense(truth)) ** 2))
    assert math.isclose(distance_to_truth(state, truth), dense, rel_tol=1e-12)
    assert math.isclose(distance_to_truth(state, kron_dense(truth)), dense, rel_tol=1e-12)
    print("  ✅ Factor-wise distance matches the dense oracle - PASSED")

    mf = MeanFieldState((0.3, -0.2), factors)
    c, _ = posterior_mean_factors(mf)
    expected = 1.0 / ((mf.nu_v[0] - 3) * (mf.nu_v[1] - 3))
    assert math.isclose(c, expected, rel_tol=1e-12)
    print("  ✅ Mean-field posterior mean scale - PASSED")
    print("✅ Distances - ALL TESTS PASSED\n")
    return True


def main():
    """Run all optimizer tests."""
    print("\n" + "=" * 60)
    print("Optimizer - Comprehensive Test")
    print("=" * 60)
    print()

    all_passed = True

    try:
        all_passed &= test_convergence_checks()
        all_passed &= test_distances()
        all_passed &= test_ascent_direction()
        all_passed &= test_fit_controls()
        all_passed &= test_conjugate_fit()
        all_passed &= test_prior_recovery()
        all_passed &= test_dof_boundary()
        all_passed &= test_full_size_start()

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
