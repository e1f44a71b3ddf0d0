"""
Random generation: tensor-normal data, Bartlett Wishart factors, the
multiway Cholesky Inverse-Wishart sampler and mean-field draws.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from kronvb.config import settings
from kronvb.core.exceptions import DimensionError, DofError, ValidationError
from kronvb.core.kron_tensor import FactorDims, FactorSet, SufficientStats, mode_product
from kronvb.core.spd_geometry import as_spd, symmetrize

if TYPE_CHECKING:
    from kronvb.core.elbo import JointState, MeanFieldState

RngLike = Union[None, int, np.random.Generator]


def make_rng(seed: RngLike = None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_generators(seed: RngLike, count: int) -> List[np.random.Generator]:
    """Independent child streams; the same parent seed yields the same children."""
    if isinstance(seed, np.random.Generator):
        entropy = seed.integers(0, 2 ** 63 - 1, size=4)
        seq = np.random.SeedSequence([int(e) for e in entropy])
    else:
        seq = np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in seq.spawn(count)]


@dataclass(frozen=True)
class WishartSpec:
    """
    Wishart(ν, Q) or Inverse-Wishart(ν, Ψ) law.

    With ``inverse=True`` the scale is Ψ and draws are produced from
    Wishart(ν, Ψ⁻¹) Cholesky factors.
    """

    dof: float
    scale: Union[FactorSet, np.ndarray]
    inverse: bool = False

    @property
    def order(self) -> int:
        if isinstance(self.scale, FactorSet):
            return self.scale.dims.total
        return int(np.shape(self.scale)[0])

    def validate(self, require_mean: bool = False) -> "WishartSpec":
        p = self.order
        if not self.dof > p - 1:
            raise DofError(self.dof, p - 1)
        if require_mean and self.inverse and not self.dof > p + 1:
            raise DofError(self.dof, p + 1, what="degrees of freedom for the inverse-Wishart mean")
        return self

    def wishart_scale_factors(self) -> FactorSet:
        """Per-mode Q_i of the underlying Wishart law (inverted when ``inverse``)."""
        if not isinstance(self.scale, FactorSet):
            raise ValidationError("multiway sampling requires a FactorSet scale")
        if self.inverse:
            return FactorSet([as_spd(A).inverse for A in self.scale])
        return self.scale


def bartlett_lower(order: int, dof: float, rng: RngLike = None) -> np.ndarray:
    """
    Lower-triangular L with LLᵀ ~ Wishart(ν, I).

    L_ii = √χ²_{ν−i+1} (drawn as Gamma((ν−i+1)/2, scale 2), so ν may be real)
    and L_ij ~ N(0, 1) below the diagonal.
    """
    rng = make_rng(rng)
    if order < 1:
        raise ValidationError(f"order must be positive, got {order}")
    if not dof > order - 1:
        raise DofError(dof, order - 1)
    L = np.zeros((order, order))
    shapes = (dof - np.arange(order)) / 2.0
    L[np.diag_indices(order)] = np.sqrt(rng.gamma(shape=shapes, scale=2.0))
    L[np.tril_indices(order, k=-1)] = rng.standard_normal(order * (order - 1) // 2)
    return L


def _apply_factors(Z: np.ndarray, chols: Sequence[np.ndarray], dims: FactorDims) -> np.ndarray:
    """(⊗L_i) z for each row z of Z, via mode products on the (n, d_1, ..., d_D) view."""
    n = Z.shape[0]
    X = Z.reshape((n,) + dims.dims)
    for i, L in enumerate(chols):
        X = mode_product(X, L, i + 1)
    return X.reshape(n, dims.total)


def sample_tensor_normal(
    factors: FactorSet,
    n: int,
    rng: RngLike = None,
) -> Tuple[np.ndarray, SufficientStats]:
    """n observations y = (⊗L_i) z with L_i = chol(Σ_i); returns (Y, S)."""
    rng = make_rng(rng)
    if n < 0:
        raise ValidationError(f"sample count must be non-negative, got {n}")
    dims = factors.dims
    chols = [as_spd(S, term=f"factor {i + 1}").chol for i, S in enumerate(factors)]
    Z = rng.standard_normal((n, dims.total))
    Y = _apply_factors(Z, chols, dims)
    if n == 0:
        return Y, SufficientStats(dims, np.zeros((dims.total, dims.total)), 0)
    return Y, SufficientStats.from_observations(Y, dims)


def sample_dense_normal(
    cov: np.ndarray,
    n: int,
    dims: Union[FactorDims, Sequence[int]],
    rng: RngLike = None,
) -> Tuple[np.ndarray, SufficientStats]:
    """n observations from N(0, cov) for a dense, possibly non-separable covariance."""
    rng = make_rng(rng)
    dims = FactorDims.of(dims)
    spd = as_spd(cov, term="truth covariance")
    if spd.order != dims.total:
        raise DimensionError(f"covariance order {spd.order} != {dims.total}")
    Z = rng.standard_normal((n, dims.total))
    Y = Z @ spd.chol.T
    if n == 0:
        return Y, SufficientStats(dims, np.zeros((dims.total, dims.total)), 0)
    return Y, SufficientStats.from_observations(Y, dims)


def multiway_iw_cholesky(
    spec: WishartSpec,
    rng: RngLike = None,
    bartlett: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Lower-triangular W_L of order ∏d_i with W_L W_Lᵀ ~ Wishart(ν, ⊗Q_i).

    The Bartlett factor is reshaped column-major into the 2D-way array of
    extents (d_D, ..., d_1, d_D, ..., d_1); array axis i then receives
    chol(Q_{D−i+1}) and the result is unfolded back. This equals (⊗L_i) L.
    """
    spec.validate()
    Q = spec.wishart_scale_factors()
    dims = Q.dims
    p = dims.total
    D = dims.ndim
    chols = [as_spd(M, term=f"scale factor {i + 1}").chol for i, M in enumerate(Q)]
    if bartlett is None:
        bartlett = bartlett_lower(p, spec.dof, rng)
    elif bartlett.shape != (p, p):
        raise DimensionError(f"Bartlett factor has shape {bartlett.shape}, expected ({p}, {p})")

    reversed_dims = dims.dims[::-1]
    X = np.reshape(bartlett, reversed_dims + reversed_dims, order="F")
    for axis in range(D):
        X = mode_product(X, chols[D - 1 - axis], axis)
    return np.reshape(X, (p, p), order="F")


def _iw_from_wishart_chol(W_L: np.ndarray) -> np.ndarray:
    """Σ = (W_L W_Lᵀ)⁻¹ through a triangular inverse."""
    M = linalg.solve_triangular(W_L, np.eye(W_L.shape[0]), lower=True)
    return symmetrize(M.T @ M)


def wishart_draw(spec: WishartSpec, rng: RngLike = None) -> np.ndarray:
    """One dense draw of the law described by ``spec``."""
    rng = make_rng(rng)
    spec.validate()
    if isinstance(spec.scale, FactorSet):
        W_L = multiway_iw_cholesky(spec, rng)
    else:
        scale = as_spd(spec.scale, term="scale")
        Q_chol = as_spd(scale.inverse).chol if spec.inverse else scale.chol
        W_L = Q_chol @ bartlett_lower(scale.order, spec.dof, rng)
    if spec.inverse:
        return _iw_from_wishart_chol(W_L)
    return symmetrize(W_L @ W_L.T)


def _parallel_draws(fn, generators: Sequence[np.random.Generator]) -> list:
    if len(generators) <= 1 or settings.MAX_WORKERS <= 1:
        return [fn(g) for g in generators]
    with ThreadPoolExecutor(max_workers=settings.MAX_WORKERS) as executor:
        return list(executor.map(fn, generators))


def sample_joint_iw(state: "JointState", n_draws: int, rng: RngLike = None) -> List[np.ndarray]:
    """Dense draws Σ ~ IW(ν_v, ⊗A_i); generically non-separable."""
    spec = WishartSpec(state.nu_v, state.factors, inverse=True).validate(require_mean=True)
    Q = spec.wishart_scale_factors()
    plain = WishartSpec(spec.dof, Q, inverse=False)

    def one(g: np.random.Generator) -> np.ndarray:
        return _iw_from_wishart_chol(multiway_iw_cholesky(plain, g))

    return _parallel_draws(one, spawn_generators(rng, n_draws))


def sample_dense_iw(
    dof: float,
    scale: np.ndarray,
    n_draws: int,
    rng: RngLike = None,
) -> List[np.ndarray]:
    """Dense Bartlett draws from IW(ν, Ψ); refuses orders above the dense limit."""
    scale = as_spd(scale, term="scale")
    if scale.order > settings.DENSE_LIMIT:
        raise ValidationError(
            f"dense inverse-Wishart sampling refused for order {scale.order} > {settings.DENSE_LIMIT}"
        )
    WishartSpec(dof, scale.values, inverse=True).validate(require_mean=True)
    Q_chol = as_spd(scale.inverse, term="inverse scale").chol

    def one(g: np.random.Generator) -> np.ndarray:
        return _iw_from_wishart_chol(Q_chol @ bartlett_lower(scale.order, dof, g))

    return _parallel_draws(one, spawn_generators(rng, n_draws))


def sample_mean_field(state: "MeanFieldState", n_draws: int, rng: RngLike = None) -> List[FactorSet]:
    """Independent per-mode draws Σ_i ~ IW(ν_{v_i}, A_i); every draw is separable."""
    dims = state.factors.dims
    for d, nu in zip(dims, state.nu_v):
        if not nu > d + 1:
            raise DofError(nu, d + 1, what="mean-field degrees of freedom")
    q_chols = [as_spd(as_spd(A).inverse).chol for A in state.factors]

    def one(g: np.random.Generator) -> FactorSet:
        mats = []
        for d, nu, Lq in zip(dims, state.nu_v, q_chols):
            mats.append(_iw_from_wishart_chol(Lq @ bartlett_lower(d, nu, g)))
        return FactorSet(mats)

    return _parallel_draws(one, spawn_generators(rng, n_draws))


def _quadratic_mean(truth_inv: Union[np.ndarray, FactorSet], Y: np.ndarray, dims: FactorDims) -> float:
    if isinstance(truth_inv, FactorSet):
        W = _apply_factors(Y, list(truth_inv), dims)
    else:
        W = Y @ truth_inv
    return float(np.sum(Y * W) / Y.shape[0])


def mahalanobis_predictive(
    truth_inv: Union[np.ndarray, FactorSet],
    draws: Sequence[Union[np.ndarray, FactorSet]],
    m: int,
    rng: RngLike = None,
) -> np.ndarray:
    """
    M^(t) = (1/m) Σ_i y_iᵀ Σ*⁻¹ y_i with y_i ~ N(0, Σ^(t)) for every draw Σ^(t).

    ``truth_inv`` is the dense inverse truth or its per-mode inverse factors.
    """
    if m < 1:
        raise ValidationError(f"inner sample count must be positive, got {m}")
    if isinstance(truth_inv, FactorSet):
        dims = truth_inv.dims
    else:
        truth_inv = np.asarray(truth_inv, dtype=float)
        dims = FactorDims((truth_inv.shape[0],))
    p = dims.total

    def one(args) -> float:
        draw, g = args
        if isinstance(draw, FactorSet):
            if draw.dims.total != p:
                raise DimensionError(f"draw of order {draw.dims.total} vs truth of order {p}")
            chols = [as_spd(S, term="draw factor").chol for S in draw]
            Y = _apply_factors(g.standard_normal((m, p)), chols, draw.dims)
        else:
            if np.shape(draw) != (p, p):
                raise DimensionError(f"draw of shape {np.shape(draw)} vs truth of order {p}")
            Y = g.standard_normal((m, p)) @ as_spd(draw, term="draw").chol.T
        return _quadratic_mean(truth_inv, Y, dims)

    generators = spawn_generators(rng, len(draws))
    return np.array([one(args) for args in zip(draws, generators)])
