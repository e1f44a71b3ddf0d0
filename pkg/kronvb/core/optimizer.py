"""
Riemannian gradient ascent for the joint and mean-field approximations.

Each iteration first moves the degrees of freedom along the z gradient, then
re-evaluates the factor gradients at the new degrees of freedom, converts
them to Riemannian gradients and follows the affine-invariant geodesics.
With ``exact_scale`` the start and every step are then rescaled to the
closed-form optimum of the overall factor scale, which keeps the dof
gradient pointing at its fixed point n + ν (joint) or ν_i + n·d_{-i}.
"""
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from kronvb.core.elbo import (
    ElboValue,
    JointObjective,
    JointState,
    MeanFieldObjective,
    MeanFieldState,
    mean_field_prior,
)
from kronvb.core.exceptions import (
    DegenerateMetricError,
    DimensionError,
    DofError,
    NumericError,
    ValidationError,
)
from kronvb.core.kron_tensor import FactorDims, FactorSet, SufficientStats, kron_dense
from kronvb.core.sampling import RngLike, WishartSpec, make_rng, wishart_draw
from kronvb.core.spd_geometry import (
    MetricKind,
    geodesic_step,
    normalize_factors,
    riemannian_grad,
    tangent_norm,
)
from kronvb.models.request import ConvergenceConfig, OptimizerConfig
from kronvb.models.response import ConvergenceStatus, FitSummary, Trace, TraceRow
from kronvb.services.logger import app_logger

State = Union[JointState, MeanFieldState]
Truth = Union[FactorSet, np.ndarray]

# exp(z) overflows a double beyond this
_MAX_Z = 700.0
# relative slack in the acceptance test, above round-off in the bound
_ACCEPT_RTOL = 1e-12


class Snapshot(NamedTuple):
    """Posterior mean c·⊗F_i at one recorded iteration."""
    iteration: int
    scale: float
    factors: FactorSet


@dataclass
class FitResult:
    state: State
    trace: Trace
    status: ConvergenceStatus
    message: Optional[str] = None
    snapshots: List[Snapshot] = field(default_factory=list, repr=False)

    @property
    def iterations(self) -> int:
        last = self.trace.last
        return last.iteration if last else 0

    @property
    def final_elbo(self) -> Optional[float]:
        last = self.trace.last
        return last.elbo if last else None

    def summary(self, convergence: Optional[ConvergenceConfig] = None) -> FitSummary:
        convergence = convergence or ConvergenceConfig()
        last = self.trace.last
        return FitSummary(
            method=self.trace.method,
            metric=self.trace.metric,
            status=self.status,
            message=self.message,
            iterations=self.iterations,
            final_elbo=self.final_elbo,
            plateau_iteration=plateau_iteration(
                self.trace.elbos(), convergence.elbo_rel_tol, convergence.window, self.trace.iterations()
            ),
            nu_v=list(last.nu_v) if last else [],
            logdets=list(last.logdets) if last else [],
        )


# ---------------------------------------------------------------------------
# Posterior means and distances
# ---------------------------------------------------------------------------

def posterior_mean_factors(state: State) -> Tuple[float, FactorSet]:
    """
    E_q[Σ] as (c, {A_i}) with E_q[Σ] = c·⊗A_i.

    Joint: c = 1/(ν_v − p − 1) = e^{−z}. Mean-field: c = ∏ 1/(ν_{v_i} − d_i − 1).
    """
    if isinstance(state, JointState):
        log_c = -state.z
    else:
        log_c = -float(sum(state.z))
    if not math.isfinite(log_c) or log_c > _MAX_Z:
        raise DofError(float("nan"), state.dims.total + 1, what="degrees of freedom for the posterior mean")
    return math.exp(log_c), state.factors


def _kron_inner(a: FactorSet, b: FactorSet) -> float:
    """⟨⊗A_k, ⊗B_k⟩_F = ∏ tr(A_kᵀB_k)."""
    return float(np.prod([np.sum(A * B) for A, B in zip(a, b)]))


def scaled_kron_distance(c1: float, a: FactorSet, c2: float, b: FactorSet) -> float:
    """‖c1·⊗A_k − c2·⊗B_k‖_F² without forming either product."""
    if a.dims != b.dims:
        raise DimensionError(f"factor dims {a.dims.dims} vs {b.dims.dims}")
    value = c1 * c1 * _kron_inner(a, a) - 2.0 * c1 * c2 * _kron_inner(a, b) + c2 * c2 * _kron_inner(b, b)
    return max(value, 0.0)


def distance_to_truth(state: State, truth: Truth) -> float:
    """‖E_q[Σ] − Σ*‖_F², factor-wise for a separable truth and dense otherwise."""
    c, factors = posterior_mean_factors(state)
    if isinstance(truth, FactorSet):
        return scaled_kron_distance(c, factors, 1.0, truth)
    truth = np.asarray(truth, dtype=float)
    p = factors.dims.total
    if truth.shape != (p, p):
        raise DimensionError(f"truth of shape {truth.shape} for a covariance of order {p}")
    diff = c * kron_dense(factors) - truth
    return float(np.sum(diff * diff))


def _log_distance(state: State, truth: Optional[Truth]) -> Optional[float]:
    if truth is None:
        return None
    return math.log(max(distance_to_truth(state, truth), np.finfo(float).tiny))


# ---------------------------------------------------------------------------
# Trace diagnostics
# ---------------------------------------------------------------------------

def _window_spread(values: np.ndarray, window: int) -> np.ndarray:
    """Relative spread (max − min)/|last| of every run of window + 1 consecutive values."""
    runs = np.lib.stride_tricks.sliding_window_view(values, window + 1)
    scale = np.maximum(np.abs(runs[:, -1]), np.finfo(float).tiny)
    return (runs.max(axis=1) - runs.min(axis=1)) / scale


def plateau_iteration(
    values: Sequence[float],
    rel_tol: float,
    window: int,
    iterations: Optional[Sequence[int]] = None,
) -> Optional[int]:
    """
    First recorded iteration from which the relative change over every
    following window stays ≤ rel_tol; None when the trace never settles.
    """
    values = np.asarray(values, dtype=float)
    iterations = np.arange(len(values)) if iterations is None else np.asarray(iterations)
    if len(values) <= window or not np.all(np.isfinite(values)):
        return None
    ok = _window_spread(values, window) <= rel_tol
    if not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    start = 0 if len(bad) == 0 else int(bad[-1]) + 1
    return int(iterations[start])


def check_convergence(trace: Trace, cfg: Union[ConvergenceConfig, OptimizerConfig]) -> ConvergenceStatus:
    if isinstance(cfg, OptimizerConfig):
        cfg = cfg.convergence
    if len(trace) == 0:
        raise ValidationError("cannot assess convergence of an empty trace")
    elbos = trace.elbos()
    norms = trace.grad_norms()
    if not (np.all(np.isfinite(elbos)) and np.all(np.isfinite(norms))):
        return ConvergenceStatus.DIVERGED
    if len(elbos) <= cfg.window:
        return ConvergenceStatus.RUNNING
    spread = _window_spread(elbos[-(cfg.window + 1):], cfg.window)[0]
    if spread > cfg.elbo_rel_tol:
        return ConvergenceStatus.RUNNING
    if norms[-1] <= cfg.grad_norm_tol:
        return ConvergenceStatus.CONVERGED
    return ConvergenceStatus.STALLED


def iterations_to_threshold(snapshots: Sequence[Snapshot], beta: float) -> Optional[int]:
    """
    First snapshot iteration whose posterior mean lies within Frobenius
    distance β of the final snapshot; None without snapshots.
    """
    if beta <= 0:
        raise ValidationError(f"threshold must be positive, got {beta}")
    if not snapshots:
        return None
    final = snapshots[-1]
    for snap in snapshots:
        d2 = scaled_kron_distance(snap.scale, snap.factors, final.scale, final.factors)
        if math.sqrt(d2) < beta:
            return snap.iteration
    return final.iteration


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _scale_root(dims: FactorDims, gamma: float, root: bool) -> float:
    if not gamma > 0:
        raise ValidationError(f"initialization scale γ must be positive, got {gamma}")
    return gamma ** (1.0 / dims.ndim) if root else gamma


def _random_factors(dims: FactorDims, scale: float, rng: np.random.Generator) -> FactorSet:
    """A_i ~ IW(d_i + 2, (scale/d_i) I)."""
    return FactorSet([
        wishart_draw(WishartSpec(d + 2.0, (scale / d) * np.eye(d), inverse=True), rng) for d in dims
    ])


def initial_joint_state(
    dims: Union[FactorDims, Sequence[int]],
    gamma: float = 1.0,
    rng: RngLike = None,
    prior_nu: Optional[float] = None,
    prior_scale: Union[FactorSet, np.ndarray, None] = None,
    root: bool = True,
) -> JointState:
    """
    Random start A_i ~ IW(d_i+2, (γ^{1/D}/d_i) I), ν_v = p + 2, modes i > 1 at
    unit determinant.

    The default prior is IW(p + 2, ⊗(γ^{1/D}/d_i) I). With ``root=False`` the
    factor scale is γ/d_i instead of γ^{1/D}/d_i.
    """
    dims = FactorDims.of(dims)
    rng = make_rng(rng)
    scale = _scale_root(dims, gamma, root)
    factors = normalize_factors(_random_factors(dims, scale, rng), preserve_product=True)
    if prior_nu is None:
        prior_nu = float(dims.total + 2)
    if prior_scale is None:
        prior_scale = FactorSet([(scale / d) * np.eye(d) for d in dims])
    return JointState(0.0, factors, float(prior_nu), prior_scale)


def initial_mean_field_state(
    dims: Union[FactorDims, Sequence[int]],
    gamma: float = 1.0,
    rng: RngLike = None,
    root: bool = True,
) -> MeanFieldState:
    """Random start A_i ~ IW(d_i+2, (γ^{1/D}/d_i) I), ν_{v_i} = d_i + 2, priors IW(d_i+2, (γ^{1/D}/d_i) I)."""
    dims = FactorDims.of(dims)
    rng = make_rng(rng)
    factors = _random_factors(dims, _scale_root(dims, gamma, root), rng)
    prior_nus, prior_scales = mean_field_prior(dims, gamma)
    return MeanFieldState(tuple(0.0 for _ in dims), factors, prior_nus, prior_scales)


# ---------------------------------------------------------------------------
# Ascent loop
# ---------------------------------------------------------------------------

class _Ascent(ABC):
    """Shared iteration, backtracking and recording logic."""

    method: str

    def __init__(
        self,
        objective,
        metric: MetricKind,
        cfg: OptimizerConfig,
        truth: Optional[Truth] = None,
        on_record: Optional[Callable[[TraceRow], None]] = None,
    ):
        self.objective = objective
        self.metric = metric
        self.cfg = cfg
        self.truth = truth
        self.on_record = on_record

    @abstractmethod
    def move_dof(self, state: State, ev: ElboValue, t: float) -> Tuple[object, object]:
        """New z parameters and the matching degrees of freedom."""

    @abstractmethod
    def nu_list(self, state: State) -> List[float]:
        """Degrees of freedom as recorded in the trace."""

    def propose(self, state: State, ev: ElboValue, t_factor: float, t_dof: float) -> Tuple[State, ElboValue]:
        z_new, nu_new = self.move_dof(state, ev, t_dof)
        grads = self.objective.gradients_at(nu_new, ev)
        V = riemannian_grad(state.factors, grads, self.metric)
        factors = geodesic_step(state.factors, V, t_factor, self.metric)
        candidate = state.with_params(z_new, factors)
        if self.cfg.exact_scale:
            candidate = self.objective.calibrate(candidate)
        return candidate, self.objective.evaluate(candidate)

    def grad_norm(self, state: State, ev: ElboValue) -> float:
        V = riemannian_grad(state.factors, ev.grads, self.metric)
        # ν gradient too: e^z vanishes at the dof boundary
        dof_sq = sum(g * g for g in ev.grad_z) + sum(g * g for g in ev.grad_dof)
        sq = tangent_norm(state.factors, V, self.metric) ** 2 + float(dof_sq)
        return math.sqrt(sq)

    def _guarded_step(self, state: State, ev: ElboValue) -> Tuple[Optional[State], Optional[ElboValue], float, int]:
        t_factor, t_dof = self.cfg.step_size, self.cfg.dof_step_size
        floor = ev.value - _ACCEPT_RTOL * abs(ev.value)
        for halvings in range(self.cfg.max_halvings + 1):
            try:
                candidate, cand_ev = self.propose(state, ev, t_factor, t_dof)
            except NumericError as e:
                app_logger.debug(f"{self.method}: rejected step at t={t_factor:.3e} ({e.message})")
            else:
                if cand_ev.value >= floor:
                    return candidate, cand_ev, t_factor, halvings
            t_factor /= 2.0
            t_dof /= 2.0
        return None, None, t_factor, self.cfg.max_halvings

    def _record(self, trace: Trace, snapshots: List[Snapshot], iteration: int, state: State,
                ev: ElboValue, step: float, halvings: int) -> None:
        row = TraceRow(
            iteration=iteration,
            elbo=ev.value,
            grad_norm=self.grad_norm(state, ev),
            logdets=[float(v) for v in ev.logdets],
            nu_v=self.nu_list(state),
            step=step,
            halvings=halvings,
            log_distance=_log_distance(state, self.truth),
        )
        trace.append(row)
        if self.cfg.keep_snapshots:
            scale, factors = posterior_mean_factors(state)
            snapshots.append(Snapshot(iteration, scale, factors))
        if self.on_record is not None:
            self.on_record(row)

    def run(self, init: State) -> FitResult:
        cfg = self.cfg
        trace = Trace(method=self.method, metric=self.metric.value)
        snapshots: List[Snapshot] = []
        state = self.objective.calibrate(init) if cfg.exact_scale else init
        ev = self.objective.evaluate(state)
        self._record(trace, snapshots, 0, state, ev, 0.0, 0)

        app_logger.info(
            f"Starting {self.method} fit: metric={self.metric.value} "
            f"eps={cfg.step_size:.3e} eps_dof={cfg.dof_step_size:.3e} max_iters={cfg.max_iters}"
        )

        status = check_convergence(trace, cfg.convergence)
        message: Optional[str] = None
        last_recorded = 0
        step, halvings = 0.0, 0
        iteration = 0

        for iteration in range(1, cfg.max_iters + 1):
            if cfg.backtracking:
                candidate, cand_ev, step, halvings = self._guarded_step(state, ev)
                if candidate is None:
                    if trace.last.grad_norm <= cfg.convergence.grad_norm_tol:
                        status = ConvergenceStatus.CONVERGED
                    else:
                        status = ConvergenceStatus.STALLED
                        message = f"no ascent after {cfg.max_halvings} halvings at iteration {iteration}"
                        app_logger.warning(f"{self.method} fit stalled: {message}")
                    iteration -= 1
                    break
            else:
                try:
                    candidate, cand_ev = self.propose(state, ev, cfg.step_size, cfg.dof_step_size)
                    step, halvings = cfg.step_size, 0
                except NumericError as e:
                    status = ConvergenceStatus.DIVERGED
                    message = f"iteration {iteration}: {e.message}"
                    app_logger.error(f"{self.method} fit diverged, keeping the last good state: {message}")
                    iteration -= 1
                    break

            state, ev = candidate, cand_ev
            if iteration % cfg.record_every == 0:
                self._record(trace, snapshots, iteration, state, ev, step, halvings)
                last_recorded = iteration
                status = check_convergence(trace, cfg.convergence)
                if status in (ConvergenceStatus.CONVERGED, ConvergenceStatus.DIVERGED):
                    break

        if iteration > last_recorded:
            self._record(trace, snapshots, iteration, state, ev, step, halvings)
        if status == ConvergenceStatus.RUNNING:
            message = f"iteration cap {cfg.max_iters} reached"

        app_logger.info(
            f"Finished {self.method} fit: status={status.value} iterations={trace.last.iteration} "
            f"elbo={trace.last.elbo:.6e}"
        )
        return FitResult(state, trace, status, message, snapshots)


class _JointAscent(_Ascent):
    method = "joint"

    def move_dof(self, state: JointState, ev: ElboValue, t: float):
        z = state.z + t * ev.grad_z[0]
        if not (math.isfinite(z) and z < _MAX_Z):
            raise NumericError(f"z = {z}", term="degrees of freedom update")
        return z, math.exp(z) + state.dims.total + 1

    def nu_list(self, state: JointState) -> List[float]:
        return [state.nu_v]


class _MeanFieldAscent(_Ascent):
    method = "meanfield"

    def move_dof(self, state: MeanFieldState, ev: ElboValue, t: float):
        zs = tuple(z + t * g for z, g in zip(state.z, ev.grad_z))
        if not all(math.isfinite(z) and z < _MAX_Z for z in zs):
            raise NumericError(f"z = {zs}", term="degrees of freedom update")
        return zs, tuple(math.exp(z) + d + 1 for z, d in zip(zs, state.dims))

    def nu_list(self, state: MeanFieldState) -> List[float]:
        return list(state.nu_v)


def fit_joint(
    stats: SufficientStats,
    init: JointState,
    cfg: Optional[OptimizerConfig] = None,
    truth: Optional[Truth] = None,
    on_record: Optional[Callable[[TraceRow], None]] = None,
) -> FitResult:
    """
    Fit the joint Kronecker Inverse-Wishart approximation.

    Under the pullback metric the start is renormalized so that modes i > 1
    have unit determinant (the product ⊗A_i is unchanged) and every step
    keeps them there.
    """
    cfg = cfg or OptimizerConfig()
    metric = MetricKind(cfg.metric)
    if metric == MetricKind.PULLBACK_NAIVE:
        raise DegenerateMetricError()
    orthogonalized = metric == MetricKind.PULLBACK
    if orthogonalized:
        init = init.with_params(init.z, normalize_factors(init.factors, preserve_product=True))
    objective = JointObjective(stats, init.prior_nu, init.prior_scale, orthogonalized=orthogonalized)
    return _JointAscent(objective, metric, cfg, truth, on_record).run(init)


def fit_mean_field(
    stats: SufficientStats,
    init: MeanFieldState,
    cfg: Optional[OptimizerConfig] = None,
    truth: Optional[Truth] = None,
    on_record: Optional[Callable[[TraceRow], None]] = None,
) -> FitResult:
    """Fit the mean-field approximation; always uses the product metric with simultaneous dof updates."""
    cfg = cfg or OptimizerConfig()
    metric = MetricKind(cfg.metric)
    if metric == MetricKind.PULLBACK_NAIVE:
        raise DegenerateMetricError()
    if metric != MetricKind.PRODUCT:
        app_logger.warning(f"mean-field fits use the product metric; ignoring metric={metric.value}")
    objective = MeanFieldObjective.for_state(init, stats)
    return _MeanFieldAscent(objective, MetricKind.PRODUCT, cfg, truth, on_record).run(init)


def fit(
    stats: SufficientStats,
    init: State,
    cfg: Optional[OptimizerConfig] = None,
    truth: Optional[Truth] = None,
    on_record: Optional[Callable[[TraceRow], None]] = None,
) -> FitResult:
    """Dispatch on the state type."""
    if isinstance(init, JointState):
        return fit_joint(stats, init, cfg, truth, on_record)
    if isinstance(init, MeanFieldState):
        return fit_mean_field(stats, init, cfg, truth, on_record)
    raise ValidationError(f"unsupported state type {type(init).__name__}")
