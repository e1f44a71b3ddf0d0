"""
Kronecker and tensor index algebra.

Conventions used throughout the package:

- A FactorSet stores mode 1 first and represents ``A_1 ⊗ A_2 ⊗ ... ⊗ A_D``
  (first factor outermost).
- Linear and multi-indices passed to ``linear_index`` and ``kron_entry`` are
  1-based; mode arguments (``mode``, ``k``) are 0-based positions.
- A vectorized observation of length ``∏ d_i`` reshapes in row-major order to
  a ``(d_1, ..., d_D)`` array, mode 1 being the slowest-varying index.
"""
from dataclasses import dataclass, field
from functools import cached_property, reduce
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from kronvb.core.exceptions import (
    DimensionError,
    IndexBoundsError,
    NumericError,
    ValidationError,
)


@dataclass(frozen=True)
class FactorDims:
    """Ordered mode dimensions (d_1, ..., d_D) and their derived products."""

    dims: Tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 1:
            raise ValidationError("at least one mode is required")
        for mode, d in enumerate(dims):
            if d < 1:
                raise ValidationError(f"mode {mode + 1} has non-positive extent {d}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def of(cls, dims: Union["FactorDims", Sequence[int]]) -> "FactorDims":
        if isinstance(dims, FactorDims):
            return dims
        return cls(tuple(dims))

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def total(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    @property
    def comp_products(self) -> Tuple[int, ...]:
        """d_{-i} = ∏_{j≠i} d_j for every mode."""
        return tuple(self.total // d for d in self.dims)

    def comp_product(self, i: int) -> int:
        return self.total // self.dims[i]

    def comp_product_pair(self, i: int, j: int) -> int:
        """∏_{k∉{i,j}} d_k."""
        return self.total // (self.dims[i] * self.dims[j])

    def __len__(self) -> int:
        return len(self.dims)

    def __iter__(self) -> Iterator[int]:
        return iter(self.dims)

    def __getitem__(self, i: int) -> int:
        return self.dims[i]


class FactorSet:
    """
    Ordered per-mode square matrices representing their Kronecker product.

    The dense product is never formed unless ``kron_dense`` is called.
    """

    def __init__(self, matrices: Sequence[np.ndarray]):
        mats = []
        for mode, m in enumerate(matrices):
            arr = np.array(m, dtype=float)
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise DimensionError(
                    f"factor {mode + 1} must be square, got shape {arr.shape}"
                )
            arr.setflags(write=False)
            mats.append(arr)
        if not mats:
            raise ValidationError("a FactorSet needs at least one factor")
        self._matrices: Tuple[np.ndarray, ...] = tuple(mats)
        self._dims = FactorDims(tuple(m.shape[0] for m in mats))

    @classmethod
    def identity(cls, dims: Union[FactorDims, Sequence[int]]) -> "FactorSet":
        return cls([np.eye(d) for d in FactorDims.of(dims)])

    @property
    def dims(self) -> FactorDims:
        return self._dims

    @property
    def matrices(self) -> Tuple[np.ndarray, ...]:
        return self._matrices

    def replace(self, mode: int, matrix: np.ndarray) -> "FactorSet":
        mats = list(self._matrices)
        mats[mode] = matrix
        return FactorSet(mats)

    def scaled(self, mode: int, c: float) -> "FactorSet":
        return self.replace(mode, c * self._matrices[mode])

    def inverses(self) -> "FactorSet":
        return FactorSet([np.linalg.inv(m) for m in self._matrices])

    def logdets(self) -> Tuple[float, ...]:
        out = []
        for mode, m in enumerate(self._matrices):
            sign, logdet = np.linalg.slogdet(m)
            if sign <= 0:
                raise NumericError(f"factor {mode + 1} has non-positive determinant", term="logdet")
            out.append(float(logdet))
        return tuple(out)

    def kron_logdet(self) -> float:
        """log|⊗A_i| = Σ d_{-i} log|A_i|."""
        return float(sum(c * l for c, l in zip(self._dims.comp_products, self.logdets())))

    def kron_dense(self) -> np.ndarray:
        return kron_dense(self)

    def __len__(self) -> int:
        return len(self._matrices)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self._matrices)

    def __getitem__(self, i: int) -> np.ndarray:
        return self._matrices[i]

    def __repr__(self) -> str:
        return f"FactorSet(dims={self._dims.dims})"


@dataclass(frozen=True)
class MultiIndexPair:
    """Row and column multi-indices (1-based) addressing a Kronecker entry."""

    row: Tuple[int, ...]
    col: Tuple[int, ...]


@dataclass(frozen=True)
class FoldedSymmetricTensor:
    """Order-2D array pairing row and column multi-indices of a matrix."""

    dims: FactorDims
    values: np.ndarray

    def __post_init__(self):
        expected = self.dims.dims + self.dims.dims
        if self.values.shape != expected:
            raise DimensionError(f"folded values have shape {self.values.shape}, expected {expected}")


@dataclass(frozen=True)
class SufficientStats:
    """
    Gram matrix S = Σ_n y_n y_nᵀ of vectorized observations.

    ``gram`` may be None for an all-zero scatter. ``kron_terms`` are separable
    addends (for example a Kronecker prior scale) kept in factor form.
    """

    dims: FactorDims
    gram: Optional[np.ndarray]
    n_obs: int = 0
    kron_terms: Tuple[FactorSet, ...] = field(default_factory=tuple)

    def __post_init__(self):
        p = self.dims.total
        if self.gram is not None and self.gram.shape != (p, p):
            raise DimensionError(f"Gram matrix has shape {self.gram.shape}, expected ({p}, {p})")
        if self.n_obs < 0:
            raise ValidationError(f"observation count must be non-negative, got {self.n_obs}")
        for term in self.kron_terms:
            if term.dims != self.dims:
                raise DimensionError(f"separable term dims {term.dims.dims} != {self.dims.dims}")

    @classmethod
    def from_observations(cls, Y: np.ndarray, dims: Union[FactorDims, Sequence[int]]) -> "SufficientStats":
        """Build S from an (n, ∏d_i) array of vectorized observations."""
        dims = FactorDims.of(dims)
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2 or Y.shape[1] != dims.total:
            raise DimensionError(f"observations must be (n, {dims.total}), got {Y.shape}")
        gram = Y.T @ Y
        return cls(dims=dims, gram=gram, n_obs=Y.shape[0])

    @classmethod
    def zero(cls, dims: Union[FactorDims, Sequence[int]]) -> "SufficientStats":
        return cls(dims=FactorDims.of(dims), gram=None, n_obs=0)

    def with_prior(self, prior_scale: Union[np.ndarray, FactorSet, None]) -> "SufficientStats":
        """Return S + Λ, adding a dense Λ once or keeping a separable Λ in factor form."""
        if prior_scale is None:
            return self
        if isinstance(prior_scale, FactorSet):
            return SufficientStats(self.dims, self.gram, self.n_obs, self.kron_terms + (prior_scale,))
        lam = np.asarray(prior_scale, dtype=float)
        p = self.dims.total
        if lam.shape != (p, p):
            raise DimensionError(f"prior scale has shape {lam.shape}, expected ({p}, {p})")
        gram = lam.copy() if self.gram is None else self.gram + lam
        return SufficientStats(self.dims, gram, self.n_obs, self.kron_terms)

    @cached_property
    def folded(self) -> Optional[FoldedSymmetricTensor]:
        if self.gram is None:
            return None
        return symmetric_fold(self.gram, self.dims)

    def dense(self) -> np.ndarray:
        """Materialize S including separable addends (small dims only)."""
        p = self.dims.total
        out = np.zeros((p, p)) if self.gram is None else np.array(self.gram, dtype=float)
        for term in self.kron_terms:
            out = out + kron_dense(term)
        return out


def _check_multi(multi: Sequence[int], dims: FactorDims) -> Tuple[int, ...]:
    if len(multi) != dims.ndim:
        raise DimensionError(f"multi-index has {len(multi)} entries for {dims.ndim} modes")
    for mode, (i, d) in enumerate(zip(multi, dims)):
        if not 1 <= int(i) <= d:
            raise IndexBoundsError(mode + 1, int(i), d)
    return tuple(int(i) for i in multi)


def linear_index(multi: Sequence[int], dims: Union[FactorDims, Sequence[int]]) -> int:
    """
    Map a 1-based multi-index to its 1-based linear index.

    p = Σ_{k<D} (i_k − 1) ∏_{j>k} d_j + i_D
    """
    dims = FactorDims.of(dims)
    multi = _check_multi(multi, dims)
    p = 0
    for i, d in zip(multi, dims):
        p = p * d + (i - 1)
    return p + 1


def multi_index(p: int, dims: Union[FactorDims, Sequence[int]]) -> Tuple[int, ...]:
    """Inverse of ``linear_index``."""
    dims = FactorDims.of(dims)
    if not 1 <= int(p) <= dims.total:
        raise IndexBoundsError(None, int(p), dims.total)
    rest = int(p) - 1
    out = []
    for d in reversed(dims.dims):
        rest, i = divmod(rest, d)
        out.append(i + 1)
    return tuple(reversed(out))


def kron_entry(factors: FactorSet, row_multi: Sequence[int], col_multi: Sequence[int]) -> float:
    """Entry of ⊗A_i at (row_multi, col_multi): ∏_k A_k[i1_k, i2_k]."""
    row = _check_multi(row_multi, factors.dims)
    col = _check_multi(col_multi, factors.dims)
    value = 1.0
    for A, i, j in zip(factors, row, col):
        value *= A[i - 1, j - 1]
    return float(value)


def kron_dense(factors: Union[FactorSet, Sequence[np.ndarray]]) -> np.ndarray:
    """Dense Kronecker product, first factor outermost."""
    return reduce(np.kron, list(factors))


def symmetric_fold(A: np.ndarray, dims: Union[FactorDims, Sequence[int]]) -> FoldedSymmetricTensor:
    """View an order-∏d_i matrix as a (d_1..d_D, d_1..d_D) array (no copy)."""
    dims = FactorDims.of(dims)
    A = np.asarray(A)
    p = dims.total
    if A.shape != (p, p):
        raise DimensionError(f"matrix of shape {A.shape} cannot fold to dims {dims.dims}")
    return FoldedSymmetricTensor(dims, A.reshape(dims.dims + dims.dims))


def symmetric_unfold(T: FoldedSymmetricTensor) -> np.ndarray:
    p = T.dims.total
    return T.values.reshape(p, p)


def mode_product(T: np.ndarray, M: np.ndarray, mode: int) -> np.ndarray:
    """T ×_mode M: multiply every mode-``mode`` fiber of T by M."""
    T = np.asarray(T)
    M = np.atleast_2d(np.asarray(M))
    if not 0 <= mode < T.ndim:
        raise DimensionError(f"mode {mode} out of range for a {T.ndim}-way array")
    if M.shape[1] != T.shape[mode]:
        raise DimensionError(
            f"matrix with {M.shape[1]} columns cannot act on mode {mode} of extent {T.shape[mode]}"
        )
    out = np.tensordot(M, T, axes=([1], [mode]))
    return np.moveaxis(out, 0, mode)


def _contract_pair_full(X: np.ndarray, ax_r: int, ax_c: int, W: np.ndarray) -> np.ndarray:
    return np.tensordot(X, W, axes=([ax_r, ax_c], [0, 1]))


def _contract_pair_triangular(X: np.ndarray, ax_r: int, ax_c: int, W: np.ndarray) -> np.ndarray:
    # W symmetric: fold (a, b) and (b, a) onto a <= b before the dot product.
    X = np.moveaxis(X, (ax_r, ax_c), (-2, -1))
    d = W.shape[0]
    iu, ju = np.triu_indices(d)
    paired = X + np.swapaxes(X, -1, -2)
    weights = W[iu, ju] * np.where(iu == ju, 0.5, 1.0)
    return paired[..., iu, ju] @ weights


_CONTRACTIONS = {
    "full": _contract_pair_full,
    "triangular": _contract_pair_triangular,
}


def _kron_term_partial_trace(term: FactorSet, inv_factors: Sequence[Optional[np.ndarray]], k: int) -> np.ndarray:
    # T^(k)(⊗F) = F_k ∏_{j≠k} tr(Σ_j⁻¹ F_j)
    scale = 1.0
    for j, (F, W) in enumerate(zip(term, inv_factors)):
        if j != k:
            scale *= float(np.sum(W * F.T))
    return scale * term[k]


def partial_trace(
    stats: SufficientStats,
    inv_factors: Sequence[Optional[np.ndarray]],
    k: int,
    strategy: str = "full",
) -> np.ndarray:
    """
    The operator T^(k): contract S with Σ_j⁻¹ over every mode j ≠ k.

    Satisfies tr(Σ_k⁻¹ T^(k)) = tr((⊗Σ_i)⁻¹ S). ``inv_factors`` has one entry
    per mode; entry k is ignored and may be None.
    """
    dims = stats.dims
    D = dims.ndim
    if len(inv_factors) != D:
        raise DimensionError(f"expected {D} inverse factors, got {len(inv_factors)}")
    if not 0 <= k < D:
        raise DimensionError(f"mode {k} out of range for {D} modes")
    for j, W in enumerate(inv_factors):
        if j != k and (W is None or np.shape(W) != (dims[j], dims[j])):
            raise DimensionError(f"inverse factor {j + 1} must be {dims[j]}x{dims[j]}")
    try:
        contract = _CONTRACTIONS[strategy]
    except KeyError:
        raise ValidationError(f"unknown contraction strategy '{strategy}'")

    d_k = dims[k]
    result = np.zeros((d_k, d_k))

    folded = stats.folded
    if folded is not None:
        X = folded.values
        # axis labels: ("r", j) for row-side mode j, ("c", j) for column-side
        labels = [("r", j) for j in range(D)] + [("c", j) for j in range(D)]
        for j in range(D):
            if j == k:
                continue
            ax_r = labels.index(("r", j))
            ax_c = labels.index(("c", j))
            X = contract(X, ax_r, ax_c, np.asarray(inv_factors[j]))
            labels = [lab for lab in labels if lab not in (("r", j), ("c", j))]
        result = result + np.asarray(X).reshape(d_k, d_k)

    for term in stats.kron_terms:
        result = result + _kron_term_partial_trace(term, inv_factors, k)

    result = 0.5 * (result + result.T)
    if not np.all(np.isfinite(result)):
        raise NumericError(f"non-finite entries in mode {k + 1} contraction", term="partial_trace")
    return result


def kron_trace(stats: SufficientStats, inv_factors: Sequence[np.ndarray], strategy: str = "full") -> float:
    """tr((⊗Σ_i)⁻¹ S) = tr(Σ_1⁻¹ T^(1))."""
    T1 = partial_trace(stats, inv_factors, 0, strategy=strategy)
    return float(np.sum(np.asarray(inv_factors[0]) * T1))


def nearest_kron_residual(A: np.ndarray, dims: Union[FactorDims, Sequence[int]], split: int = 1) -> float:
    """
    Relative distance from A to the nearest separable matrix B ⊗ C.

    B spans modes [0, split) and C the rest; returns √(Σ_{k≥2} σ_k²)/‖A‖_F of
    the rearranged matrix, which is 0 exactly when A is separable.
    """
    dims = FactorDims.of(dims)
    if not 1 <= split < dims.ndim:
        raise ValidationError(f"split must lie in [1, {dims.ndim - 1}]")
    m = int(np.prod(dims.dims[:split]))
    n = dims.total // m
    A = np.asarray(A, dtype=float)
    if A.shape != (m * n, m * n):
        raise DimensionError(f"matrix of shape {A.shape} does not match dims {dims.dims}")
    R = A.reshape(m, n, m, n).transpose(0, 2, 1, 3).reshape(m * m, n * n)
    s = np.linalg.svd(R, compute_uv=False)
    total = float(np.sqrt(np.sum(s ** 2)))
    if total == 0.0:
        return 0.0
    return float(np.sqrt(np.sum(s[1:] ** 2)) / total)
