"""
Result models: optimizer traces and experiment summaries.
"""
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field


class ConvergenceStatus(str, Enum):
    """Fit status derived from a trace."""
    CONVERGED = "converged"
    RUNNING = "running"
    STALLED = "stalled"
    DIVERGED = "diverged"


class TraceRow(BaseModel):
    """One recorded optimizer iteration."""
    iteration: int = Field(..., ge=0, description="Iteration index (0 = initial state)")
    elbo: float = Field(..., description="ELBO value including constants")
    grad_norm: float = Field(..., description="Riemannian gradient norm incl. the dof component")
    logdets: List[float] = Field(..., description="Per-mode log-determinants of A_i")
    nu_v: List[float] = Field(..., description="Variational degrees of freedom (one per mode for mean-field)")
    step: float = Field(0.0, description="Factor step actually taken")
    halvings: int = Field(0, ge=0, description="Backtracking halvings used")
    log_distance: Optional[float] = Field(None, description="log ‖E_q[Σ] − Σ*‖_F² when a truth is supplied")


class Trace(BaseModel):
    """Recorded optimizer history."""
    method: str = Field(..., description="'joint' or 'meanfield'")
    metric: str = Field(..., description="Metric used for the factor steps")
    rows: List[TraceRow] = Field(default_factory=list)

    def append(self, row: TraceRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError(f"trace iterations must increase: {row.iteration} after {self.rows[-1].iteration}")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def last(self) -> Optional[TraceRow]:
        return self.rows[-1] if self.rows else None

    def elbos(self) -> np.ndarray:
        return np.array([r.elbo for r in self.rows], dtype=float)

    def grad_norms(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.rows], dtype=float)

    def log_distances(self) -> np.ndarray:
        return np.array(
            [np.nan if r.log_distance is None else r.log_distance for r in self.rows], dtype=float
        )

    def iterations(self) -> np.ndarray:
        return np.array([r.iteration for r in self.rows], dtype=int)

    def to_frame(self, **labels) -> pd.DataFrame:
        """One row per recorded point, per-mode values spread into numbered columns."""
        records = []
        for r in self.rows:
            rec: Dict[str, object] = dict(labels)
            rec.update(
                iteration=r.iteration,
                elbo=r.elbo,
                log_abs_elbo=float(np.log(abs(r.elbo))) if r.elbo != 0 else float("-inf"),
                grad_norm=r.grad_norm,
                log_distance=r.log_distance,
                step=r.step,
                halvings=r.halvings,
            )
            for i, v in enumerate(r.nu_v, start=1):
                rec[f"nu_v_{i}" if len(r.nu_v) > 1 else "nu_v"] = v
            for i, v in enumerate(r.logdets, start=1):
                rec[f"logdet_{i}"] = v
            records.append(rec)
        return pd.DataFrame.from_records(records)


class FitSummary(BaseModel):
    """Summary of one fit, as written to run summaries."""
    method: str
    metric: str
    status: ConvergenceStatus
    message: Optional[str] = None
    iterations: int = Field(..., ge=0)
    final_elbo: Optional[float] = None
    plateau_iteration: Optional[int] = Field(None, description="First iteration of the ELBO plateau")
    nu_v: List[float] = Field(default_factory=list)
    logdets: List[float] = Field(default_factory=list)

    class Config:
        use_enum_values = True


class EigenSummary(BaseModel):
    """Eigen-decomposition of one mode's mean correlation matrix."""
    mode: int = Field(..., ge=1)
    name: Optional[str] = None
    eigenvalues: List[float] = Field(..., description="Sorted descending; sum to the mode extent")
    first_vector: List[float]
    second_vector: Optional[List[float]] = None


class MahalanobisSummary(BaseModel):
    """Distribution summary of predictive Mahalanobis distances for one method."""
    method: str
    count: int
    mean: float
    variance: float
    quantiles: Dict[str, float]
