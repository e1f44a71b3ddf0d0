"""
Riemannian structure on SPD matrices and on Kronecker factor products.

Affine-invariant metric, exponential map, traceless projection, pullback
metrics on (Σ_1, ..., Σ_D) ↦ ⊗Σ_i and Riemannian gradient conversion.
"""
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from kronvb.config import settings
from kronvb.core.exceptions import (
    DegenerateMetricError,
    DimensionError,
    NotSpdError,
    NumericError,
)
from kronvb.core.kron_tensor import FactorSet


class MetricKind(str, Enum):
    """Metric used on the factor product."""
    PRODUCT = "product"
    PULLBACK = "pullback"
    PULLBACK_NAIVE = "pullback-naive"


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


@dataclass(frozen=True)
class SpdMatrix:
    """Symmetric positive definite matrix with cached Cholesky factor and log-determinant."""

    values: np.ndarray
    chol: np.ndarray
    logdet: float

    @classmethod
    def from_array(cls, A: np.ndarray, rtol: float = 1e-12, term: Optional[str] = None) -> "SpdMatrix":
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"SPD matrix must be square, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise NotSpdError("non-finite entries", term=term)
        scale = max(float(np.max(np.abs(A))), np.finfo(float).tiny)
        asym = float(np.max(np.abs(A - A.T)))
        if asym > rtol * scale:
            raise NotSpdError(f"asymmetry {asym:.3e} exceeds tolerance", term=term)
        A = symmetrize(A)
        try:
            L = linalg.cholesky(A, lower=True)
        except linalg.LinAlgError as e:
            raise NotSpdError(str(e), term=term)
        diag = np.diag(L)
        if np.any(diag <= 0.0):
            raise NotSpdError("non-positive Cholesky pivot", term=term)
        logdet = 2.0 * float(np.sum(np.log(diag)))
        A.setflags(write=False)
        L.setflags(write=False)
        return cls(values=A, chol=L, logdet=logdet)

    @property
    def order(self) -> int:
        return self.values.shape[0]

    def solve(self, B: np.ndarray) -> np.ndarray:
        """Σ⁻¹B via the cached Cholesky factor."""
        return linalg.cho_solve((self.chol, True), B)

    @cached_property
    def inverse(self) -> np.ndarray:
        return symmetrize(self.solve(np.eye(self.order)))

    @cached_property
    def _eig(self) -> Tuple[np.ndarray, np.ndarray]:
        w, V = np.linalg.eigh(self.values)
        floor = settings.EIG_CLAMP * max(float(w[-1]), 0.0)
        return np.maximum(w, floor), V

    @cached_property
    def sqrt(self) -> np.ndarray:
        w, V = self._eig
        return symmetrize((V * np.sqrt(w)) @ V.T)

    @cached_property
    def inv_sqrt(self) -> np.ndarray:
        w, V = self._eig
        return symmetrize((V / np.sqrt(w)) @ V.T)


def as_spd(A: Union[SpdMatrix, np.ndarray], term: Optional[str] = None) -> SpdMatrix:
    return A if isinstance(A, SpdMatrix) else SpdMatrix.from_array(A, term=term)


def sym_function(A: np.ndarray, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply a scalar function to the eigenvalues of a symmetric matrix."""
    A = symmetrize(np.asarray(A, dtype=float))
    if not np.all(np.isfinite(A)):
        raise NumericError("non-finite input to symmetric eigendecomposition", term="eigh")
    try:
        w, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as e:
        raise NumericError(str(e), term="eigh")
    return symmetrize((V * f(w)) @ V.T)


def _check_shape(base: SpdMatrix, *mats: np.ndarray):
    for M in mats:
        if np.shape(M) != base.values.shape:
            raise DimensionError(f"matrix of shape {np.shape(M)} does not match base {base.values.shape}")


def ai_inner(base: Union[SpdMatrix, np.ndarray], U: np.ndarray, V: np.ndarray) -> float:
    """Affine-invariant inner product tr(Σ⁻¹UΣ⁻¹V)."""
    base = as_spd(base)
    _check_shape(base, U, V)
    X = base.solve(U)
    Y = base.solve(V)
    return float(np.sum(X * Y.T))


def ai_exp(base: Union[SpdMatrix, np.ndarray], V: np.ndarray, t: float = 1.0) -> SpdMatrix:
    """Σ(t) = Σ^{1/2} exp(t Σ^{-1/2} V Σ^{-1/2}) Σ^{1/2}."""
    base = as_spd(base)
    _check_shape(base, V)
    if t == 0.0:
        return base
    inner = base.inv_sqrt @ symmetrize(np.asarray(V, dtype=float)) @ base.inv_sqrt
    E = sym_function(t * inner, np.exp)
    out = base.sqrt @ E @ base.sqrt
    if not np.all(np.isfinite(out)):
        raise NumericError("exponential map overflowed", term="ai_exp")
    return SpdMatrix.from_array(symmetrize(out), term="ai_exp")


def ai_distance(A: Union[SpdMatrix, np.ndarray], B: Union[SpdMatrix, np.ndarray]) -> float:
    """Geodesic distance ‖log(A^{-1/2} B A^{-1/2})‖_F."""
    A = as_spd(A)
    B = as_spd(B)
    M = symmetrize(A.inv_sqrt @ B.values @ A.inv_sqrt)
    w = np.linalg.eigvalsh(M)
    w = np.maximum(w, settings.EIG_CLAMP * max(float(w[-1]), 0.0))
    return float(np.sqrt(np.sum(np.log(w) ** 2)))


def project_traceless(base: Union[SpdMatrix, np.ndarray], V: np.ndarray) -> np.ndarray:
    """P(V) = V − tr(VΣ⁻¹)/d · Σ, so that tr(P(V)Σ⁻¹) = 0."""
    base = as_spd(base)
    _check_shape(base, V)
    tr = float(np.trace(base.solve(V)))
    return V - (tr / base.order) * base.values


@dataclass(frozen=True)
class TangentVector:
    """Per-mode symmetric tangent components V_i."""

    components: Tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.components)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.components[i]

    def validate(self, factors: FactorSet, metric: MetricKind, atol: float = 1e-10) -> bool:
        if len(self.components) != len(factors):
            raise DimensionError(f"{len(self.components)} tangent components for {len(factors)} modes")
        for i, (V, S) in enumerate(zip(self.components, factors)):
            if V.shape != S.shape:
                raise DimensionError(f"tangent component {i + 1} has shape {V.shape}, expected {S.shape}")
            if not np.allclose(V, V.T, atol=atol * max(1.0, float(np.max(np.abs(V))))):
                return False
            if metric == MetricKind.PULLBACK and i > 0:
                if abs(float(np.trace(np.linalg.solve(S, V)))) > atol * max(1.0, float(np.max(np.abs(V)))):
                    return False
        return True


def _factor_spds(factors: Union[FactorSet, Sequence[SpdMatrix]]) -> Tuple[SpdMatrix, ...]:
    return tuple(as_spd(S, term=f"factor {i + 1}") for i, S in enumerate(factors))


def pullback_metric_naive(factors: FactorSet) -> np.ndarray:
    """
    Block matrix of the pullback of the affine-invariant metric.

    Blocks are d_i² × d_j² over row-major vec(V_i):
    g_ii = d_{-i} Σ_i⁻¹ ⊗ Σ_i⁻¹ and g_ij = d_{-ij} vec(Σ_i⁻¹) vec(Σ_j⁻¹)ᵀ.
    Degenerate for D ≥ 2 (V_1 = Σ_1, V_2 = −Σ_2 is a null direction).
    """
    dims = factors.dims
    invs = [S.inverse for S in _factor_spds(factors)]
    sizes = [d * d for d in dims]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    G = np.zeros((offsets[-1], offsets[-1]))
    for i in range(dims.ndim):
        si = slice(offsets[i], offsets[i + 1])
        G[si, si] = dims.comp_product(i) * np.kron(invs[i], invs[i])
        for j in range(dims.ndim):
            if j == i:
                continue
            sj = slice(offsets[j], offsets[j + 1])
            G[si, sj] = dims.comp_product_pair(i, j) * np.outer(invs[i].ravel(), invs[j].ravel())
    return symmetrize(G)


def pullback_metric_orthogonalized(factors: FactorSet) -> np.ndarray:
    """Block-diagonal metric ⊕ d_{-i} Σ_i⁻¹ ⊗ Σ_i⁻¹ valid on the unit-determinant slice."""
    dims = factors.dims
    blocks = [dims.comp_product(i) * np.kron(S.inverse, S.inverse) for i, S in enumerate(_factor_spds(factors))]
    return linalg.block_diag(*blocks)


def metric_quadratic_form(factors: FactorSet, V: TangentVector, metric: MetricKind) -> float:
    """
    ⟨V, V⟩ in closed form.

    Naive pullback: Σ_i d_{-i} tr(Σ_i⁻¹V_iΣ_i⁻¹V_i) + Σ_{i≠j} d_{-ij} tr(Σ_i⁻¹V_i) tr(Σ_j⁻¹V_j).
    """
    dims = factors.dims
    spds = _factor_spds(factors)
    own = [ai_inner(S, Vi, Vi) for S, Vi in zip(spds, V.components)]
    if metric == MetricKind.PRODUCT:
        return float(sum(own))
    value = float(sum(dims.comp_product(i) * g for i, g in enumerate(own)))
    if metric == MetricKind.PULLBACK:
        return value
    traces = [float(np.trace(S.solve(Vi))) for S, Vi in zip(spds, V.components)]
    for i in range(dims.ndim):
        for j in range(dims.ndim):
            if i != j:
                value += dims.comp_product_pair(i, j) * traces[i] * traces[j]
    return value


def tangent_norm(factors: FactorSet, V: TangentVector, metric: MetricKind) -> float:
    return float(np.sqrt(max(metric_quadratic_form(factors, V, metric), 0.0)))


def riemannian_grad(
    factors: FactorSet,
    euclid_grads: Sequence[np.ndarray],
    metric: MetricKind,
) -> TangentVector:
    """
    Convert per-mode Euclidean gradients G_i into a Riemannian gradient.

    Product metric: Σ_i G_i Σ_i. Orthogonalized pullback: (1/d_{-i}) Σ_i G_i Σ_i,
    projected to the traceless slice for every mode after the first.
    """
    metric = MetricKind(metric)
    if metric == MetricKind.PULLBACK_NAIVE:
        raise DegenerateMetricError()
    if len(euclid_grads) != len(factors):
        raise DimensionError(f"{len(euclid_grads)} gradients for {len(factors)} modes")
    dims = factors.dims
    out = []
    for i, (S, G) in enumerate(zip(factors, euclid_grads)):
        G = symmetrize(np.asarray(G, dtype=float))
        if G.shape != S.shape:
            raise DimensionError(f"gradient {i + 1} has shape {G.shape}, expected {S.shape}")
        V = symmetrize(S @ G @ S)
        if metric == MetricKind.PULLBACK:
            V = V / dims.comp_product(i)
            if i > 0:
                V = symmetrize(project_traceless(S, V))
        out.append(V)
    return TangentVector(tuple(out))


def unit_determinant(S: np.ndarray) -> np.ndarray:
    """A / |A|^{1/d}."""
    spd = as_spd(S, term="renormalization")
    return spd.values * np.exp(-spd.logdet / spd.order)


def normalize_factors(factors: FactorSet, preserve_product: bool = True) -> FactorSet:
    """Set |A_i| = 1 for i > 1, moving the removed scale into mode 1 when asked."""
    mats = [np.array(factors[0])]
    log_scale = 0.0
    for i in range(1, len(factors)):
        spd = as_spd(factors[i], term=f"factor {i + 1}")
        mats.append(spd.values * np.exp(-spd.logdet / spd.order))
        log_scale += spd.logdet / spd.order
    if preserve_product:
        mats[0] = mats[0] * np.exp(log_scale)
    return FactorSet(mats)


def geodesic_step(
    factors: FactorSet,
    V: TangentVector,
    t: float,
    metric: MetricKind,
) -> FactorSet:
    """Move each factor along its geodesic; renormalize modes i > 1 under the pullback metric."""
    metric = MetricKind(metric)
    if metric == MetricKind.PULLBACK_NAIVE:
        raise DegenerateMetricError()
    if len(V) != len(factors):
        raise DimensionError(f"{len(V)} tangent components for {len(factors)} modes")
    if t == 0.0:
        return factors
    mats = []
    for i, (S, Vi) in enumerate(zip(factors, V.components)):
        moved = ai_exp(S, Vi, t).values
        if metric == MetricKind.PULLBACK and i > 0:
            moved = unit_determinant(moved)
        mats.append(moved)
    return FactorSet(mats)
