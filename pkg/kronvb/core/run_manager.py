"""
Run manager for tracking experiment grid cells.
Uses in-memory storage for cell status tracking.
"""
from datetime import datetime, timezone
from threading import Lock
from typing import Dict, List, Optional, Tuple

from kronvb.core.exceptions import CellNotFoundError
from kronvb.models.run import CellRun, CellStatus


class RunManager:
    """
    In-memory manager for harness grid cells.

    Thread-safe implementation: worker threads update their own cells
    concurrently.
    """

    def __init__(self):
        """Initialize run manager with empty storage."""
        self._cells: Dict[Tuple[str, str], CellRun] = {}
        self._lock = Lock()

    def create_cell(
        self,
        experiment: str,
        cell_id: str,
        seed: Optional[int] = None,
        metadata: Optional[Dict] = None
    ) -> CellRun:
        """
        Register a cell, replacing any earlier cell with the same key.

        Args:
            experiment: Experiment kind
            cell_id: Deterministic cell key within the experiment
            seed: Sub-seed of the cell
            metadata: Cell parameters

        Returns:
            Created CellRun instance
        """
        cell = CellRun(
            cell_id=cell_id,
            experiment=experiment,
            status=CellStatus.PENDING,
            seed=seed,
            metadata=dict(metadata or {})
        )

        with self._lock:
            self._cells[(experiment, cell_id)] = cell

        return cell

    def get_cell(self, experiment: str, cell_id: str) -> Optional[CellRun]:
        with self._lock:
            return self._cells.get((experiment, cell_id))

    def require_cell(self, experiment: str, cell_id: str) -> CellRun:
        cell = self.get_cell(experiment, cell_id)
        if cell is None:
            raise CellNotFoundError(f"{experiment}/{cell_id}")
        return cell

    def start_cell(self, experiment: str, cell_id: str) -> bool:
        """
        Mark a cell as running.

        Returns:
            True if started, False if the cell is unknown
        """
        with self._lock:
            cell = self._cells.get((experiment, cell_id))
            if not cell:
                return False

            cell.status = CellStatus.RUNNING
            cell.started_at = datetime.now(timezone.utc)
            return True

    def complete_cell(
        self,
        experiment: str,
        cell_id: str,
        metadata: Optional[Dict] = None
    ) -> bool:
        """
        Mark a cell as completed and merge result metadata.

        Returns:
            True if completed, False if the cell is unknown
        """
        with self._lock:
            cell = self._cells.get((experiment, cell_id))
            if not cell:
                return False

            cell.status = CellStatus.COMPLETED
            cell.completed_at = datetime.now(timezone.utc)
            if metadata:
                cell.metadata.update(metadata)
            return True

    def fail_cell(
        self,
        experiment: str,
        cell_id: str,
        error: str,
        metadata: Optional[Dict] = None
    ) -> bool:
        """
        Mark a cell as failed.

        Returns:
            True if failed, False if the cell is unknown
        """
        with self._lock:
            cell = self._cells.get((experiment, cell_id))
            if not cell:
                return False

            cell.status = CellStatus.FAILED
            cell.completed_at = datetime.now(timezone.utc)
            cell.error_message = error
            if metadata:
                cell.metadata.update(metadata)
            return True

    def list_cells(
        self,
        experiment: Optional[str] = None,
        status: Optional[CellStatus] = None
    ) -> List[CellRun]:
        """
        List cells sorted by key, optionally filtered by experiment and status.
        """
        with self._lock:
            items = sorted(self._cells.items(), key=lambda kv: kv[0])
        cells = [c for _, c in items]
        if experiment:
            cells = [c for c in cells if c.experiment == experiment]
        if status:
            cells = [c for c in cells if c.status == CellStatus(status).value]
        return cells

    def clear(self, experiment: Optional[str] = None) -> int:
        """
        Drop tracked cells, all of them or those of one experiment.

        Returns:
            Number of removed cells
        """
        with self._lock:
            keys = [k for k in self._cells if experiment is None or k[0] == experiment]
            for k in keys:
                del self._cells[k]
            return len(keys)


# Global run manager instance
run_manager = RunManager()
