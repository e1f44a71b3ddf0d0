"""
Pydantic models for kronvb.
"""
from kronvb.models.request import (
    ConvergenceConfig,
    ExperimentConfig,
    ExperimentKind,
    ExperimentSpec,
    FitConfig,
    MethodKind,
    OptimizerConfig,
    SampleConfig,
    SimulateConfig,
)
from kronvb.models.response import (
    ConvergenceStatus,
    EigenSummary,
    FitSummary,
    MahalanobisSummary,
    Trace,
    TraceRow,
)
from kronvb.models.run import CellRun, CellStatus

__all__ = [
    # Configuration models
    "ConvergenceConfig",
    "OptimizerConfig",
    "ExperimentKind",
    "ExperimentSpec",
    "MethodKind",
    "SimulateConfig",
    "FitConfig",
    "SampleConfig",
    "ExperimentConfig",
    # Result models
    "ConvergenceStatus",
    "TraceRow",
    "Trace",
    "FitSummary",
    "EigenSummary",
    "MahalanobisSummary",
    # Cell tracking
    "CellRun",
    "CellStatus",
]
