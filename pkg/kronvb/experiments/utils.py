"""
Shared helpers for harness experiments: seeds, ground truths, simulated
data and per-mode correlation summaries.
"""
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from kronvb.core.elbo import JointState, MeanFieldState
from kronvb.core.exceptions import DimensionError, ValidationError
from kronvb.core.kron_tensor import FactorDims, FactorSet, SufficientStats, kron_dense
from kronvb.core.sampling import RngLike, make_rng, sample_dense_normal, sample_tensor_normal
from kronvb.core.spd_geometry import as_spd, normalize_factors, symmetrize
from kronvb.models.response import EigenSummary, MahalanobisSummary

# Seed roles; every experiment derives its generators from (master seed, role, index).
ROLE_TRUTH = 0
ROLE_DATA = 1
ROLE_INIT = 2
ROLE_DRAWS = 3


def derive_seed(master: int, role: int, index: int = 0) -> int:
    """Deterministic 63-bit sub-seed for one role of one cell."""
    state = np.random.SeedSequence([int(master) & 0xFFFFFFFF, role, index]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def truth_factors(dims: Union[FactorDims, Sequence[int]], rng: RngLike = None) -> FactorSet:
    """
    Σ_i = L Lᵀ with L lower-triangular standard normal plus d_i on the
    diagonal; modes i > 1 rescaled to unit determinant.
    """
    dims = FactorDims.of(dims)
    rng = make_rng(rng)
    mats = []
    for d in dims:
        L = np.tril(rng.standard_normal((d, d))) + d * np.eye(d)
        mats.append(symmetrize(L @ L.T))
    return normalize_factors(FactorSet(mats), preserve_product=False)


def misspecified_truth(factors: FactorSet, rank: int, xi: float, rng: RngLike = None) -> np.ndarray:
    """Dense Σ* = ⊗Σ_i + Σ_{j=1..r} x_j x_jᵀ with x_j ~ N(0, ξI)."""
    if rank < 0:
        raise ValidationError(f"rank must be non-negative, got {rank}")
    if not xi > 0:
        raise ValidationError(f"perturbation variance must be positive, got {xi}")
    rng = make_rng(rng)
    p = factors.dims.total
    X = np.sqrt(xi) * rng.standard_normal((p, rank))
    return symmetrize(kron_dense(factors) + X @ X.T)


def simulate(
    truth: Union[FactorSet, np.ndarray],
    dims: Union[FactorDims, Sequence[int]],
    n: int,
    rng: RngLike = None,
) -> Tuple[np.ndarray, SufficientStats]:
    """Observations from a separable or dense truth."""
    if isinstance(truth, FactorSet):
        return sample_tensor_normal(truth, n, rng)
    return sample_dense_normal(truth, n, dims, rng)


def observations_from_tensor(array: np.ndarray, center: bool = False) -> Tuple[np.ndarray, FactorDims]:
    """
    (d_1, ..., d_D, n) tensor → (n, ∏d_i) rows of row-major vectorized slices.

    The last mode indexes observations.
    """
    array = np.asarray(array, dtype=float)
    if array.ndim < 2:
        raise DimensionError(f"data needs at least one mode plus the observation mode, got shape {array.shape}")
    dims = FactorDims(tuple(int(d) for d in array.shape[:-1]))
    n = array.shape[-1]
    Y = np.moveaxis(array, -1, 0).reshape(n, dims.total)
    if center:
        Y = Y - Y.mean(axis=0, keepdims=True)
    return Y, dims


def tensor_from_observations(Y: np.ndarray, dims: Union[FactorDims, Sequence[int]]) -> np.ndarray:
    dims = FactorDims.of(dims)
    Y = np.asarray(Y, dtype=float)
    return np.moveaxis(Y.reshape((Y.shape[0],) + dims.dims), 0, -1)


def synthetic_array(shape: Sequence[int], rng: RngLike = None, noise: float = 0.1) -> Tuple[np.ndarray, FactorSet]:
    """
    Stand-in for a real multiway data set: separable tensor-normal slices plus
    white noise, shaped (d_1, ..., d_D, n).
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2:
        raise ValidationError("synthetic shape needs at least one mode plus the observation mode")
    rng = make_rng(rng)
    dims = FactorDims(shape[:-1])
    truth = truth_factors(dims, rng)
    Y, _ = sample_tensor_normal(truth, shape[-1], rng)
    Y = Y + noise * rng.standard_normal(Y.shape)
    return tensor_from_observations(Y, dims), truth


def correlation_matrix(A: np.ndarray) -> np.ndarray:
    """D^{-1/2} A D^{-1/2} with an exactly unit diagonal."""
    A = as_spd(A, term="correlation input").values
    s = 1.0 / np.sqrt(np.diag(A))
    R = symmetrize(A * np.outer(s, s))
    np.fill_diagonal(R, 1.0)
    return R


def _orient(v: np.ndarray) -> np.ndarray:
    # eigenvector sign is arbitrary; make the largest component positive
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def eigen_summary(
    state: Union[JointState, MeanFieldState, FactorSet],
    mode_names: Optional[Sequence[str]] = None,
) -> List[EigenSummary]:
    """
    Per-mode eigen-decomposition of the mean correlation matrices.

    Correlations depend only on the factor shapes, so the Kronecker scale
    ambiguity drops out.
    """
    factors = state if isinstance(state, FactorSet) else state.factors
    out = []
    for i, A in enumerate(factors):
        R = correlation_matrix(A)
        w, V = np.linalg.eigh(R)
        order = np.argsort(w)[::-1]
        w, V = w[order], V[:, order]
        out.append(EigenSummary(
            mode=i + 1,
            name=mode_names[i] if mode_names else None,
            eigenvalues=[float(x) for x in w],
            first_vector=[float(x) for x in _orient(V[:, 0])],
            second_vector=[float(x) for x in _orient(V[:, 1])] if V.shape[1] > 1 else None,
        ))
    return out


def summarize_distances(method: str, values: np.ndarray) -> MahalanobisSummary:
    values = np.asarray(values, dtype=float)
    probs = (0.05, 0.25, 0.5, 0.75, 0.95)
    qs = np.quantile(values, probs)
    return MahalanobisSummary(
        method=method,
        count=int(values.size),
        mean=float(values.mean()),
        variance=float(values.var(ddof=1)) if values.size > 1 else 0.0,
        quantiles={f"q{int(round(100 * p)):02d}": float(q) for p, q in zip(probs, qs)},
    )

