"""
Base experiment class for all harness experiments.
Provides logging, standardized results and a parallel grid-cell runner.
"""
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from kronvb.config import settings
from kronvb.core.elbo import JointState, MeanFieldState, scatter_scale
from kronvb.core.exceptions import KronVBException
from kronvb.core.kron_tensor import FactorDims, FactorSet, SufficientStats
from kronvb.core.optimizer import FitResult, initial_joint_state, initial_mean_field_state, plateau_iteration
from kronvb.core.run_manager import run_manager
from kronvb.core.spd_geometry import MetricKind
from kronvb.experiments.utils import ROLE_DATA, ROLE_INIT, ROLE_TRUTH, derive_seed, simulate, truth_factors
from kronvb.models.request import ConvergenceConfig, ExperimentKind, ExperimentSpec, OptimizerConfig
from kronvb.services.logger import app_logger

# Plateau rule for log-distance traces
DISTANCE_REL_TOL = 1e-3
DISTANCE_WINDOW = 50


@dataclass(frozen=True)
class Cell:
    """One isolated unit of work in an experiment grid."""
    cell_id: str
    params: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None


@dataclass
class CellOutcome:
    cell: Cell
    success: bool
    value: Any = None
    error: Optional[str] = None


@dataclass
class SimulatedProblem:
    """Ground truth, data and shared starting points for one simulated experiment."""
    dims: FactorDims
    truth: Union[FactorSet, np.ndarray]
    stats: SufficientStats
    gamma: float
    joint_init: JointState
    meanfield_init: MeanFieldState


class BaseExperiment(ABC):
    """Base class for all experiments."""

    kind: ExperimentKind

    def __init__(self, spec: ExperimentSpec):
        """Initialize base experiment."""
        self.spec = spec
        self.logger = app_logger
        self.name = self.__class__.__name__

    @abstractmethod
    def execute(self, **kwargs) -> Dict[str, Any]:
        """
        Run the experiment.

        Returns:
            Standardized result dictionary whose data holds ``tables``
            (name → DataFrame) and ``summary`` (YAML-ready mapping)
        """

    def log_start(self, task_name: str, **context):
        """Log task start."""
        self.logger.info(f"[{self.name}] Starting {task_name} {self._fmt(context)}".rstrip())

    def log_complete(self, task_name: str, **context):
        """Log task completion."""
        self.logger.info(f"[{self.name}] Completed {task_name} {self._fmt(context)}".rstrip())

    def log_error(self, task_name: str, error: Exception, **context):
        """Log task error."""
        self.logger.error(f"[{self.name}] Error in {task_name}: {error} {self._fmt(context)}".rstrip())

    @staticmethod
    def _fmt(context: Dict[str, Any]) -> str:
        return " ".join(f"{k}={v}" for k, v in context.items())

    def create_result(
        self,
        success: bool,
        data: Optional[Dict] = None,
        error: Optional[str] = None,
        metadata: Optional[Dict] = None
    ) -> Dict[str, Any]:
        """
        Create standardized result dictionary.

        Args:
            success: Whether at least one cell produced a result
            data: Result data
            error: Error message if failed
            metadata: Additional metadata

        Returns:
            Standardized result dictionary
        """
        result = {
            "success": success,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "experiment": self.kind.value,
        }

        if data:
            result["data"] = data

        if error:
            result["error"] = error

        if metadata:
            result["metadata"] = metadata

        return result

    def run_cells(self, cells: Sequence[Cell], work: Callable[[Cell], Any]) -> List[CellOutcome]:
        """
        Run independent cells on a worker pool.

        Failures are recorded per cell rather than aborting the grid.
        Outcomes come back in the order of ``cells``.
        """
        experiment = self.kind.value
        for cell in cells:
            run_manager.create_cell(experiment, cell.cell_id, seed=cell.seed, metadata=cell.params)

        def guarded(cell: Cell) -> CellOutcome:
            run_manager.start_cell(experiment, cell.cell_id)
            try:
                value = work(cell)
            except KronVBException as e:
                self.log_error("cell", e, cell=cell.cell_id)
                run_manager.fail_cell(experiment, cell.cell_id, e.message)
                return CellOutcome(cell, False, error=e.message)
            meta = value.summary().model_dump(mode="json") if isinstance(value, FitResult) else None
            run_manager.complete_cell(experiment, cell.cell_id, metadata=meta)
            return CellOutcome(cell, True, value=value)

        workers = min(self.spec.workers or settings.MAX_WORKERS, max(len(cells), 1))
        outcomes: Dict[str, CellOutcome] = {}
        if workers <= 1:
            for cell in cells:
                outcomes[cell.cell_id] = guarded(cell)
        else:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                futures = {executor.submit(guarded, cell): cell for cell in cells}
                for future in as_completed(futures):
                    outcome = future.result()
                    outcomes[outcome.cell.cell_id] = outcome

        failed = [o.cell.cell_id for o in outcomes.values() if not o.success]
        if failed:
            self.logger.warning(f"[{self.name}] {len(failed)} of {len(cells)} cells failed: {', '.join(sorted(failed))}")
        return [outcomes[cell.cell_id] for cell in cells]

    @staticmethod
    def failures_frame(outcomes: Sequence[CellOutcome]) -> pd.DataFrame:
        rows = [
            {"cell_id": o.cell.cell_id, **o.cell.params, "error": o.error}
            for o in outcomes if not o.success
        ]
        return pd.DataFrame(rows, columns=None if rows else ["cell_id", "error"])

    def simulated_problem(
        self,
        truth: Union[FactorSet, np.ndarray, None] = None,
        index: int = 0
    ) -> SimulatedProblem:
        """
        Draw (or take) a truth, simulate n observations and draw the shared
        starting points.

        Args:
            truth: Separable or dense truth; defaults to the standard truth sampler
            index: Replicate index; different indices give independent data

        Returns:
            SimulatedProblem whose priors and starts use γ = tr(S)/n
        """
        spec = self.spec
        dims = FactorDims.of(spec.dims)
        if truth is None:
            truth = truth_factors(dims, derive_seed(spec.seed, ROLE_TRUTH))
        _, stats = simulate(truth, dims, spec.n_obs, derive_seed(spec.seed, ROLE_DATA, index))
        gamma = scatter_scale(stats)
        init_seed = derive_seed(spec.seed, ROLE_INIT, index)
        return SimulatedProblem(
            dims=dims,
            truth=truth,
            stats=stats,
            gamma=gamma,
            joint_init=initial_joint_state(dims, gamma, init_seed),
            meanfield_init=initial_mean_field_state(dims, gamma, init_seed),
        )

    def optimizer_config(
        self,
        metric: MetricKind,
        log10_step: float,
        max_iters: int,
        log10_step_dof: Optional[float] = None,
        keep_snapshots: bool = False,
        backtracking: Optional[bool] = None
    ) -> OptimizerConfig:
        return OptimizerConfig(
            metric=metric,
            log10_step=log10_step,
            log10_step_dof=log10_step_dof,
            max_iters=max_iters,
            record_every=self.spec.record_every,
            backtracking=self.spec.backtracking if backtracking is None else backtracking,
            keep_snapshots=keep_snapshots,
            seed=self.spec.seed,
        )

    @staticmethod
    def distance_plateau(result: FitResult) -> Optional[int]:
        """First iteration from which the log distance to the truth stays flat."""
        trace = result.trace
        return plateau_iteration(trace.log_distances(), DISTANCE_REL_TOL, DISTANCE_WINDOW, trace.iterations())

    @staticmethod
    def elbo_plateau(result: FitResult, convergence: Optional[ConvergenceConfig] = None) -> Optional[int]:
        convergence = convergence or ConvergenceConfig()
        trace = result.trace
        return plateau_iteration(trace.elbos(), convergence.elbo_rel_tol, convergence.window, trace.iterations())
