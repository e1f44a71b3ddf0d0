"""
Evidence lower bounds and Euclidean gradients for the joint Kronecker
Inverse-Wishart approximation and the mean-field approximation.

Model: y_1..y_n ~ N(0, Σ) with Σ of order p = ∏d_i.

Joint: prior Σ ~ IW(ν, Λ), q(Σ) = IW(ν_v, ⊗A_i), ν_v = exp(z) + p + 1.
Collecting expectations under q gives

    LB = C − ν_v/2·tr((⊗A_i)⁻¹(S+Λ)) + ν_v·p/2 − (n+ν)/2·Σ_i d_{-i} log|A_i|
         − (ν_v−n−ν)/2·Σ_{i=1..p} ψ((ν_v−p+i)/2) + log Γ_p(ν_v/2)

with C = −np/2·log 2π + np/2·log 2 + ν/2·log|Λ| − log Γ_p(ν/2).

Mean-field: Σ_i ~ IW(ν_i, Λ_i) independently, q = ∏ IW(ν_{v_i}, A_i),
E_q[⊗Σ_i⁻¹] = (∏ν_{v_j}) ⊗A_i⁻¹.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, special

from kronvb.core.exceptions import DimensionError, DofError, DomainError, NumericError, ValidationError
from kronvb.core.kron_tensor import FactorDims, FactorSet, SufficientStats, partial_trace
from kronvb.core.spd_geometry import as_spd, symmetrize

LOG_2 = math.log(2.0)
LOG_2PI = math.log(2.0 * math.pi)
# |log|A_i|| allowed for modes i > 1 in the orthogonalized bound
UNIT_DET_TOL = 1e-8

PriorScale = Union[np.ndarray, FactorSet]


def log_multigamma(p: int, a: float) -> float:
    """log Γ_p(a) = p(p−1)/4·log π + Σ_{j=1..p} log Γ(a + (1−j)/2)."""
    if p < 1:
        raise DomainError(f"multivariate gamma order must be positive, got {p}")
    if not a > (p - 1) / 2.0:
        raise DomainError(f"log Γ_{p}({a}) needs a > {(p - 1) / 2.0}")
    return float(special.multigammaln(a, p))


def _dof_args(p: int, nu: float) -> np.ndarray:
    args = (nu - p + np.arange(1, p + 1)) / 2.0
    if not args[0] > 0.0:
        raise DomainError(f"digamma sums need ν > {p - 1}, got {nu}")
    return args


def digamma_sum(p: int, nu: float) -> float:
    """Σ_{i=1..p} ψ((ν − p + i)/2)."""
    return float(np.sum(special.digamma(_dof_args(p, nu))))


def trigamma_sum(p: int, nu: float) -> float:
    """Σ_{i=1..p} ψ′((ν − p + i)/2); d/dν digamma_sum = trigamma_sum / 2."""
    return float(np.sum(special.polygamma(1, _dof_args(p, nu))))


def _finite(term: str, value):
    if not np.all(np.isfinite(value)):
        raise NumericError("non-finite value", term=term)
    return value


def prior_logdet(prior_scale: PriorScale) -> float:
    if isinstance(prior_scale, FactorSet):
        return prior_scale.kron_logdet()
    return as_spd(prior_scale, term="prior scale").logdet


def scatter_scale(stats: SufficientStats) -> float:
    """γ = tr(Ŝ) with Ŝ = S/n; 1 when there are no observations."""
    if stats.n_obs == 0 or stats.gram is None:
        return 1.0
    return float(np.trace(stats.gram)) / stats.n_obs


@dataclass(frozen=True)
class JointState:
    """Joint variational parameters (z, {A_i}) with the IW(ν, Λ) prior."""

    z: float
    factors: FactorSet
    prior_nu: Optional[float] = None
    prior_scale: Optional[PriorScale] = None

    @property
    def dims(self) -> FactorDims:
        return self.factors.dims

    @property
    def nu_v(self) -> float:
        return math.exp(self.z) + self.dims.total + 1

    @classmethod
    def from_dof(
        cls,
        nu_v: float,
        factors: FactorSet,
        prior_nu: Optional[float] = None,
        prior_scale: Optional[PriorScale] = None,
    ) -> "JointState":
        p = factors.dims.total
        if not nu_v > p + 1:
            raise DofError(nu_v, p + 1, what="joint variational degrees of freedom")
        return cls(math.log(nu_v - p - 1), factors, prior_nu, prior_scale)

    def with_params(self, z: float, factors: FactorSet) -> "JointState":
        return replace(self, z=float(z), factors=factors)


@dataclass(frozen=True)
class MeanFieldState:
    """Per-mode variational parameters (z_i, A_i) with IW(ν_i, Λ_i) priors."""

    z: Tuple[float, ...]
    factors: FactorSet
    prior_nus: Tuple[float, ...] = ()
    prior_scales: Tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        D = len(self.factors)
        if len(self.z) != D:
            raise DimensionError(f"{len(self.z)} dof parameters for {D} modes")
        if self.prior_nus and (len(self.prior_nus) != D or len(self.prior_scales) != D):
            raise DimensionError("mean-field priors need one (ν_i, Λ_i) per mode")

    @property
    def dims(self) -> FactorDims:
        return self.factors.dims

    @property
    def nu_v(self) -> Tuple[float, ...]:
        return tuple(math.exp(z) + d + 1 for z, d in zip(self.z, self.dims))

    @classmethod
    def from_dof(
        cls,
        nu_v: Sequence[float],
        factors: FactorSet,
        prior_nus: Sequence[float] = (),
        prior_scales: Sequence[np.ndarray] = (),
    ) -> "MeanFieldState":
        zs = []
        for nu, d in zip(nu_v, factors.dims):
            if not nu > d + 1:
                raise DofError(nu, d + 1, what="mean-field degrees of freedom")
            zs.append(math.log(nu - d - 1))
        return cls(tuple(zs), factors, tuple(prior_nus), tuple(np.asarray(s, dtype=float) for s in prior_scales))

    def with_params(self, z: Sequence[float], factors: FactorSet) -> "MeanFieldState":
        return replace(self, z=tuple(float(v) for v in z), factors=factors)


def mean_field_prior(dims: Union[FactorDims, Sequence[int]], gamma: float) -> Tuple[Tuple[float, ...], Tuple[np.ndarray, ...]]:
    """Per-mode priors IW(d_i + 2, (γ^{1/D}/d_i) I)."""
    dims = FactorDims.of(dims)
    if not gamma > 0:
        raise ValidationError(f"prior scale γ must be positive, got {gamma}")
    root = gamma ** (1.0 / dims.ndim)
    nus = tuple(float(d + 2) for d in dims)
    scales = tuple((root / d) * np.eye(d) for d in dims)
    return nus, scales


@dataclass(frozen=True)
class ElboValue:
    """
    Bound value, gradients and reusable workspaces.

    ``constant`` holds the parameter-free part already included in ``value``.
    ``grad_z`` and ``grad_dof`` have one entry for the joint model and one per
    mode for mean-field.
    """

    value: float
    constant: float
    grads: Tuple[np.ndarray, ...]
    grad_z: Tuple[float, ...]
    grad_dof: Tuple[float, ...]
    trace_workspace: np.ndarray
    partial_traces: Tuple[np.ndarray, ...] = field(repr=False, default=())
    inverses: Tuple[np.ndarray, ...] = field(repr=False, default=())
    logdets: Tuple[float, ...] = ()
    data_trace: float = 0.0

    @property
    def variable_part(self) -> float:
        return self.value - self.constant


def _inverses(factors: FactorSet) -> Tuple[Tuple[np.ndarray, ...], Tuple[float, ...]]:
    spds = [as_spd(A, term=f"A_{i + 1}") for i, A in enumerate(factors)]
    return tuple(s.inverse for s in spds), tuple(s.logdet for s in spds)


class JointObjective:
    """
    Joint ELBO for fixed data and prior.

    S + Λ and the constant are prepared once; ``evaluate`` is called per
    iteration.
    """

    def __init__(
        self,
        stats: SufficientStats,
        prior_nu: float,
        prior_scale: PriorScale,
        orthogonalized: bool = False,
        strategy: str = "full",
    ):
        if prior_scale is None or prior_nu is None:
            raise ValidationError("the joint bound needs a prior (ν, Λ)")
        self.dims = stats.dims
        self.n = stats.n_obs
        p = self.dims.total
        if not prior_nu > p - 1:
            raise DofError(prior_nu, p - 1, what="prior degrees of freedom")
        self.prior_nu = float(prior_nu)
        self.orthogonalized = orthogonalized
        self.strategy = strategy
        self.target = stats.with_prior(prior_scale)
        n, nu = self.n, self.prior_nu
        self.constant = _finite(
            "constant",
            -n * p / 2.0 * LOG_2PI
            + n * p / 2.0 * LOG_2
            + nu / 2.0 * prior_logdet(prior_scale)
            - log_multigamma(p, nu / 2.0),
        )

    @classmethod
    def for_state(cls, state: JointState, stats: SufficientStats, orthogonalized: bool = False) -> "JointObjective":
        return cls(stats, state.prior_nu, state.prior_scale, orthogonalized)

    def _factor_grads(self, nu_v: float, invs, partials) -> Tuple[np.ndarray, ...]:
        coef = (self.n + self.prior_nu) / 2.0
        grads = []
        for i, (W, T) in enumerate(zip(invs, partials)):
            G = nu_v / 2.0 * (W @ T @ W)
            if not (self.orthogonalized and i > 0):
                G = G - coef * self.dims.comp_product(i) * W
            grads.append(_finite(f"gradient of A_{i + 1}", symmetrize(G)))
        return tuple(grads)

    def evaluate(self, state: JointState, with_gradient: bool = True) -> ElboValue:
        dims, n, nu = self.dims, self.n, self.prior_nu
        if state.dims != dims:
            raise DimensionError(f"state dims {state.dims.dims} != data dims {dims.dims}")
        p = dims.total
        nu_v = state.nu_v
        ez = math.exp(state.z)
        invs, logdets = _inverses(state.factors)

        T1 = partial_trace(self.target, invs, 0, strategy=self.strategy)
        tr = _finite("trace term", float(np.sum(invs[0] * T1)))
        if self.orthogonalized:
            for i in range(1, dims.ndim):
                if abs(logdets[i]) > UNIT_DET_TOL:
                    raise ValidationError(
                        f"orthogonalized bound needs |A_{i + 1}| = 1, got log|A_{i + 1}| = {logdets[i]:.3e}"
                    )
            logdet_psi = dims.comp_product(0) * logdets[0]
        else:
            logdet_psi = sum(c * l for c, l in zip(dims.comp_products, logdets))

        value = (
            self.constant
            - nu_v / 2.0 * tr
            + nu_v * p / 2.0
            - (n + nu) / 2.0 * logdet_psi
            - (nu_v - n - nu) / 2.0 * _finite("digamma sum", digamma_sum(p, nu_v))
            + _finite("log multigamma", log_multigamma(p, nu_v / 2.0))
        )
        _finite("elbo", value)

        if not with_gradient:
            return ElboValue(value, self.constant, (), (), (), T1, (T1,), invs, logdets, tr)

        partials = (T1,) + tuple(
            partial_trace(self.target, invs, i, strategy=self.strategy) for i in range(1, dims.ndim)
        )
        grad_dof = _finite(
            "dof gradient",
            -tr / 2.0 + p / 2.0 - (nu_v - n - nu) / 4.0 * trigamma_sum(p, nu_v),
        )
        return ElboValue(
            value=float(value),
            constant=float(self.constant),
            grads=self._factor_grads(nu_v, invs, partials),
            grad_z=(grad_dof * ez,),
            grad_dof=(grad_dof,),
            trace_workspace=T1,
            partial_traces=partials,
            inverses=invs,
            logdets=logdets,
            data_trace=tr,
        )

    def gradients_at(self, nu_v: float, evaluation: ElboValue) -> Tuple[np.ndarray, ...]:
        """Factor gradients at a new ν_v, reusing the contractions of ``evaluation``."""
        return self._factor_grads(nu_v, evaluation.inverses, evaluation.partial_traces)

    def optimal_scale(self, state: JointState) -> float:
        """
        Factor c maximizing the bound over A_1 → c·A_1 with ν_v and the shapes
        fixed: c = ν_v·tr((⊗A_i)⁻¹(S+Λ)) / ((n+ν)·p).
        """
        tr = self.evaluate(state, with_gradient=False).data_trace
        return state.nu_v * tr / ((self.n + self.prior_nu) * self.dims.total)

    def calibrate(self, state: JointState) -> JointState:
        """Rescale A_1 to the exact optimum; other modes keep their determinants."""
        c = _finite("optimal scale", self.optimal_scale(state))
        return state.with_params(state.z, state.factors.scaled(0, c))


class MeanFieldObjective:
    """Mean-field ELBO for fixed data and per-mode priors."""

    def __init__(
        self,
        stats: SufficientStats,
        prior_nus: Sequence[float],
        prior_scales: Sequence[np.ndarray],
        strategy: str = "full",
    ):
        self.stats = stats
        self.dims = stats.dims
        self.n = stats.n_obs
        if len(prior_nus) != self.dims.ndim or len(prior_scales) != self.dims.ndim:
            raise DimensionError("mean-field priors need one (ν_i, Λ_i) per mode")
        self.prior_nus = tuple(float(v) for v in prior_nus)
        self.prior_scales = tuple(np.asarray(s, dtype=float) for s in prior_scales)
        for i, (nu_i, L, d) in enumerate(zip(self.prior_nus, self.prior_scales, self.dims)):
            if L.shape != (d, d):
                raise DimensionError(f"prior scale {i + 1} has shape {L.shape}, expected ({d}, {d})")
            if not nu_i > d - 1:
                raise DofError(nu_i, d - 1, what=f"prior degrees of freedom of mode {i + 1}")
        self.strategy = strategy
        p = self.dims.total
        const = -self.n * p / 2.0 * LOG_2PI
        for i, (nu_i, L, d) in enumerate(zip(self.prior_nus, self.prior_scales, self.dims)):
            const += (
                nu_i / 2.0 * as_spd(L, term=f"prior scale {i + 1}").logdet
                - log_multigamma(d, nu_i / 2.0)
                + self.n * self.dims.comp_product(i) * d / 2.0 * LOG_2
            )
        self.constant = _finite("constant", const)

    @classmethod
    def for_state(cls, state: MeanFieldState, stats: SufficientStats) -> "MeanFieldObjective":
        return cls(stats, state.prior_nus, state.prior_scales)

    def _weights(self, i: int) -> float:
        # ν_i + n·d_{-i}: prior dof plus the observations seen by mode i
        return self.prior_nus[i] + self.n * self.dims.comp_product(i)

    def _factor_grads(self, nus: Sequence[float], invs, partials) -> Tuple[np.ndarray, ...]:
        big = float(np.prod(nus))
        grads = []
        for i, (W, T, L) in enumerate(zip(invs, partials, self.prior_scales)):
            G = big / 2.0 * (W @ T @ W) + nus[i] / 2.0 * (W @ L @ W) - self._weights(i) / 2.0 * W
            grads.append(_finite(f"gradient of A_{i + 1}", symmetrize(G)))
        return tuple(grads)

    def evaluate(self, state: MeanFieldState, with_gradient: bool = True) -> ElboValue:
        dims = self.dims
        if state.dims != dims:
            raise DimensionError(f"state dims {state.dims.dims} != data dims {dims.dims}")
        nus = state.nu_v
        big = float(np.prod(nus))
        invs, logdets = _inverses(state.factors)

        T1 = partial_trace(self.stats, invs, 0, strategy=self.strategy)
        tr = _finite("trace term", float(np.sum(invs[0] * T1)))

        value = self.constant - big / 2.0 * tr
        prior_traces = []
        for i, d in enumerate(dims):
            nu_vi, w = nus[i], self._weights(i)
            prior_tr = float(np.sum(self.prior_scales[i] * invs[i]))
            prior_traces.append(prior_tr)
            value += (
                -w / 2.0 * logdets[i]
                - (nu_vi - w) / 2.0 * digamma_sum(d, nu_vi)
                + log_multigamma(d, nu_vi / 2.0)
                + nu_vi * d / 2.0
                - nu_vi / 2.0 * prior_tr
            )
        _finite("elbo", value)

        if not with_gradient:
            return ElboValue(float(value), self.constant, (), (), (), T1, (T1,), invs, logdets, tr)

        partials = (T1,) + tuple(
            partial_trace(self.stats, invs, i, strategy=self.strategy) for i in range(1, dims.ndim)
        )
        grad_dof = []
        for i, d in enumerate(dims):
            nu_vi = nus[i]
            g = (
                -big * tr / (2.0 * nu_vi)
                - (nu_vi - self._weights(i)) / 4.0 * trigamma_sum(d, nu_vi)
                + d / 2.0
                - prior_traces[i] / 2.0
            )
            grad_dof.append(_finite(f"dof gradient of mode {i + 1}", g))
        grad_z = tuple(g * math.exp(z) for g, z in zip(grad_dof, state.z))
        return ElboValue(
            value=float(value),
            constant=float(self.constant),
            grads=self._factor_grads(nus, invs, partials),
            grad_z=grad_z,
            grad_dof=tuple(grad_dof),
            trace_workspace=T1,
            partial_traces=partials,
            inverses=invs,
            logdets=logdets,
            data_trace=tr,
        )

    def gradients_at(self, nus: Sequence[float], evaluation: ElboValue) -> Tuple[np.ndarray, ...]:
        return self._factor_grads(nus, evaluation.inverses, evaluation.partial_traces)

    def optimal_scales(self, state: MeanFieldState) -> Tuple[float, ...]:
        """
        Per-mode factors s_i jointly maximizing the bound over A_i → s_i·A_i.

        With Q = ∏ν_{v_j}·tr(⊗(s_jA_j)⁻¹S) the stationarity conditions read
        Q + ν_{v_i}·tr(Λ_iA_i⁻¹)/s_i = w_i·d_i, so s_i follows from the single
        root Q ∈ [0, min w_i·d_i) of a monotone equation.
        """
        ev = self.evaluate(state, with_gradient=False)
        nus = state.nu_v
        loads = np.array([self._weights(i) * d for i, d in enumerate(self.dims)])
        priors = np.array([nus[i] * float(np.sum(L * W)) for i, (L, W) in enumerate(zip(self.prior_scales, ev.inverses))])
        data = float(np.prod(nus)) * ev.data_trace
        if not data > 0.0:
            return tuple(float(v) for v in priors / loads)

        m = float(loads.min())
        gaps = loads - m
        log_fixed = math.log(data) - float(np.sum(np.log(priors)))

        def slack(x: float) -> np.ndarray:
            # w_i·d_i − Q with Q = m·expit(x)
            return gaps + m * special.expit(-x)

        def balance(x: float) -> float:
            return math.log(m) + float(special.log_expit(x)) - log_fixed - float(np.sum(np.log(slack(x))))

        lo, hi = -1.0, 1.0
        while balance(lo) > 0.0:
            lo *= 2.0
            if lo < -1e6:
                raise NumericError("no bracket below the scale root", term="mean-field scales")
        while balance(hi) < 0.0:
            if hi >= 700.0:
                raise NumericError("no bracket above the scale root", term="mean-field scales")
            hi = min(2.0 * hi, 700.0)
        x = optimize.brentq(balance, lo, hi, xtol=1e-12)
        return tuple(float(v) for v in priors / slack(x))

    def calibrate(self, state: MeanFieldState) -> MeanFieldState:
        """Rescale every A_i to the joint scale optimum."""
        scales = _finite("optimal scales", np.asarray(self.optimal_scales(state)))
        return state.with_params(state.z, FactorSet([s * A for s, A in zip(scales, state.factors)]))


def elbo_joint(state: JointState, stats: SufficientStats, orthogonalized: bool = False) -> ElboValue:
    return JointObjective.for_state(state, stats, orthogonalized).evaluate(state)


def grad_joint(
    state: JointState,
    stats: SufficientStats,
    orthogonalized: bool = False,
) -> Tuple[Tuple[np.ndarray, ...], float]:
    """Per-mode Euclidean gradients and the z gradient of the joint bound."""
    ev = elbo_joint(state, stats, orthogonalized)
    return ev.grads, ev.grad_z[0]


def elbo_mean_field(state: MeanFieldState, stats: SufficientStats) -> ElboValue:
    return MeanFieldObjective.for_state(state, stats).evaluate(state)


def grad_mean_field(
    state: MeanFieldState,
    stats: SufficientStats,
) -> Tuple[Tuple[np.ndarray, ...], Tuple[float, ...]]:
    ev = elbo_mean_field(state, stats)
    return ev.grads, ev.grad_z


def conjugate_posterior(stats: SufficientStats, prior_nu: float, prior_scale: PriorScale) -> Tuple[float, np.ndarray]:
    """Exact unstructured posterior IW(ν + n, Λ + S) in dense form."""
    return float(prior_nu + stats.n_obs), stats.with_prior(prior_scale).dense()
