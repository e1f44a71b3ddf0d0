"""
Configuration models for fits, experiments and CLI runs.

All bundles reject unknown keys so typos in config files fail validation
before any computation starts.
"""
from enum import Enum
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from kronvb.core.spd_geometry import MetricKind


class MethodKind(str, Enum):
    """Variational family."""
    JOINT = "joint"
    MEANFIELD = "meanfield"


class ExperimentKind(str, Enum):
    """Harness experiments."""
    CONVERGENCE_SWEEP = "convergence-sweep"
    METRIC_COMPARISON = "metric-comparison"
    MAHALANOBIS_STUDY = "mahalanobis-study"
    MISSPEC_TABLE = "misspec-table"
    REAL_DATA_FIT = "real-data-fit"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _positive_dims(dims: List[int]) -> List[int]:
    if not dims:
        raise ValueError("dims must list at least one mode")
    if any(d < 1 for d in dims):
        raise ValueError(f"every mode extent must be positive, got {dims}")
    return dims


class ConvergenceConfig(StrictModel):
    """Stopping rule on recorded trace points."""
    elbo_rel_tol: float = Field(1e-8, gt=0.0, description="Relative ELBO change allowed over the window")
    grad_norm_tol: float = Field(1e-6, gt=0.0, description="Riemannian gradient norm threshold")
    window: int = Field(50, ge=1, description="Number of recorded points in the window")


class OptimizerConfig(StrictModel):
    """
    Riemannian gradient ascent settings.

    Step sizes are log10 exponents. Without ``log10_step_dof`` the global step
    drives both the factors and the degrees of freedom.
    """
    metric: MetricKind = Field(MetricKind.PULLBACK, description="Metric on the factor product")
    log10_step: float = Field(-4.4, le=2.0, description="log10 of the factor step size ε (or ε_A)")
    log10_step_dof: Optional[float] = Field(None, le=2.0, description="log10 of ε_ν in split mode")
    max_iters: int = Field(3000, ge=1, description="Iteration cap")
    convergence: ConvergenceConfig = Field(default_factory=ConvergenceConfig)
    record_every: int = Field(1, ge=1, description="Record every k-th iteration")
    seed: Optional[int] = Field(None, description="Seed for the initialization draw")
    backtracking: bool = Field(True, description="Halve the step on ELBO decrease")
    max_halvings: int = Field(30, ge=0, description="Backtracking budget per iteration")
    keep_snapshots: bool = Field(False, description="Store per-iteration factors for threshold counting")
    exact_scale: bool = Field(True, description="Solve the overall factor scale exactly at the start and after every step")

    @property
    def step_size(self) -> float:
        return 10.0 ** self.log10_step

    @property
    def dof_step_size(self) -> float:
        if self.log10_step_dof is None:
            return self.step_size
        return 10.0 ** self.log10_step_dof


class ExperimentSpec(StrictModel):
    """Parameters of one harness experiment; defaults give the full-size protocol."""
    kind: ExperimentKind = Field(..., description="Experiment to run")
    dims: List[int] = Field(default_factory=lambda: [5, 6, 4, 3], description="Mode extents")
    n_obs: int = Field(50, ge=1, description="Number of simulated observations")
    seed: int = Field(1, description="Master seed; cells derive sub-seeds from it")

    # step-size grids (log10)
    joint_log10_steps: List[float] = Field(
        default_factory=lambda: [-6.0, -5.5, -5.0, -4.75, -4.5, -4.4, -4.25],
        description="Global steps for the joint fit"
    )
    meanfield_log10_steps: List[float] = Field(
        default_factory=lambda: [-7.0, -6.5, -6.0, -5.75, -5.5],
        description="Global steps for the mean-field fit"
    )
    product_log10_steps: List[float] = Field(
        default_factory=lambda: [-4.9, -5.0, -5.1, -5.35, -5.5, -6.0],
        description="Factor steps for the product metric arm"
    )
    pullback_log10_step: float = Field(-3.5, description="Factor step for the pullback arm")
    dof_log10_step: float = Field(-5.0, description="Split dof step size")
    joint_log10_step: float = Field(-4.4, description="Joint step for single-fit experiments")
    meanfield_log10_step: float = Field(-5.5, description="Mean-field step for single-fit experiments")

    max_iters_joint: int = Field(3000, ge=1)
    max_iters_meanfield: int = Field(10000, ge=1)

    # misspecification
    ranks: List[int] = Field(default_factory=lambda: [1, 3, 5, 10], description="Low-rank perturbation ranks r")
    xi: float = Field(0.2, gt=0.0, description="Perturbation variance ξ")
    beta: float = Field(0.005, gt=0.0, description="Convergence threshold β")
    misspec_log10_step_joint: float = Field(-3.5)
    misspec_log10_step_meanfield: float = Field(-5.5)
    misspec_max_iters_joint: int = Field(3000, ge=1)
    misspec_max_iters_meanfield: int = Field(30000, ge=1)

    # Monte Carlo
    draws: int = Field(200, ge=1, description="Posterior draws K")
    inner: int = Field(100, ge=1, description="Predictive samples m per draw")

    # real data
    data_path: Optional[Path] = Field(None, description="Tensor file for the real-data fit")
    synthetic_shape: List[int] = Field(
        default_factory=lambda: [30, 30, 6, 10],
        description="Shape of the synthetic stand-in when no data file is given"
    )
    init_gamma: float = Field(5.0, gt=0.0, description="Initialization scale γ for the real-data fit")
    prior_ridge: float = Field(1e-6, ge=0.0, description="Relative ridge added to the sample covariance prior")
    real_data_max_iters: int = Field(300, ge=1, description="Iteration cap for the real-data fit")
    center: bool = Field(True, description="Subtract the sample mean over the observation mode")

    backtracking: bool = Field(False, description="Safeguarded steps (off to reproduce instabilities)")
    record_every: int = Field(1, ge=1)
    workers: Optional[int] = Field(None, ge=1, description="Worker pool size for grid cells")

    @field_validator("dims")
    @classmethod
    def check_dims(cls, v: List[int]) -> List[int]:
        return _positive_dims(v)

    @field_validator(
        "joint_log10_steps", "meanfield_log10_steps", "product_log10_steps", "ranks"
    )
    @classmethod
    def check_non_empty(cls, v: list) -> list:
        if not v:
            raise ValueError("grids must not be empty")
        return v

    @field_validator("ranks")
    @classmethod
    def check_ranks(cls, v: List[int]) -> List[int]:
        if any(r < 0 for r in v):
            raise ValueError(f"ranks must be non-negative, got {v}")
        if len(set(v)) != len(v):
            raise ValueError(f"ranks must be distinct, got {v}")
        return v

    @field_validator("synthetic_shape")
    @classmethod
    def check_synthetic_shape(cls, v: List[int]) -> List[int]:
        if len(v) < 2 or any(d < 1 for d in v):
            raise ValueError("synthetic shape needs at least one mode plus the observation mode")
        return v


class SimulateConfig(StrictModel):
    """cmd_simulate bundle."""
    dims: List[int] = Field(..., description="Mode extents")
    n: int = Field(..., ge=1, description="Number of observations")
    seed: int = Field(1)
    out: Path = Field(Path("outputs/simulate"))

    @field_validator("dims")
    @classmethod
    def check_dims(cls, v: List[int]) -> List[int]:
        return _positive_dims(v)


class FitConfig(StrictModel):
    """cmd_fit bundle."""
    data: Path = Field(..., description="Tensor file whose last mode indexes observations")
    method: MethodKind = Field(MethodKind.JOINT)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    gamma: Optional[float] = Field(None, gt=0.0, description="Prior/initialization scale γ (default tr(S)/n)")
    center: bool = Field(False, description="Subtract the sample mean before fitting")
    truth: Optional[Path] = Field(None, description="Truth file for log-distance tracking")
    out: Path = Field(Path("outputs/fit"))


class SampleConfig(StrictModel):
    """cmd_sample bundle."""
    state: Path = Field(..., description="State file written by fit")
    draws: int = Field(200, ge=1, description="Number of draws K")
    inner: int = Field(100, ge=1, description="Predictive samples m for the Mahalanobis study")
    truth: Optional[Path] = Field(None, description="Truth file for the Mahalanobis study")
    write_draws: bool = Field(False, description="Write the draws file")
    seed: int = Field(1)
    out: Path = Field(Path("outputs/sample"))


class ExperimentConfig(StrictModel):
    """cmd_experiment bundle."""
    experiment: ExperimentSpec
    out: Path = Field(Path("outputs/experiment"))

    @model_validator(mode="after")
    def check_data_path(self) -> "ExperimentConfig":
        path = self.experiment.data_path
        if path is not None and self.experiment.kind != ExperimentKind.REAL_DATA_FIT:
            raise ValueError("data_path only applies to the real-data-fit experiment")
        return self
