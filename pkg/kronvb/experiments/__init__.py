"""
Harness experiments, one module per experiment kind.
"""
from typing import Dict, Type

from kronvb.experiments.base_experiment import BaseExperiment
from kronvb.experiments.convergence_sweep import ConvergenceSweepExperiment
from kronvb.experiments.mahalanobis_study import MahalanobisStudyExperiment
from kronvb.experiments.metric_comparison import MetricComparisonExperiment
from kronvb.experiments.misspec_table import MisspecTableExperiment
from kronvb.experiments.real_data_fit import RealDataFitExperiment
from kronvb.models.request import ExperimentKind

EXPERIMENTS: Dict[ExperimentKind, Type[BaseExperiment]] = {
    ExperimentKind.CONVERGENCE_SWEEP: ConvergenceSweepExperiment,
    ExperimentKind.METRIC_COMPARISON: MetricComparisonExperiment,
    ExperimentKind.MAHALANOBIS_STUDY: MahalanobisStudyExperiment,
    ExperimentKind.MISSPEC_TABLE: MisspecTableExperiment,
    ExperimentKind.REAL_DATA_FIT: RealDataFitExperiment,
}

__all__ = [
    "BaseExperiment",
    "ConvergenceSweepExperiment",
    "MetricComparisonExperiment",
    "MahalanobisStudyExperiment",
    "MisspecTableExperiment",
    "RealDataFitExperiment",
    "EXPERIMENTS",
]
