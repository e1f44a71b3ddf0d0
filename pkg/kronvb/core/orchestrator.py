"""
Experiment orchestrator for kronvb.
Dispatches an experiment configuration to its experiment and writes every
table, fitted state, the run summary and the resolved configuration.
"""
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd

from kronvb.core.exceptions import KronVBException
from kronvb.core.run_manager import run_manager
from kronvb.experiments import EXPERIMENTS
from kronvb.models.request import ExperimentConfig
from kronvb.services.logger import app_logger, run_log
from kronvb.services.storage_service import storage_service


class ExperimentOrchestrator:
    """Runs one harness experiment end to end."""

    def __init__(self):
        """Initialize orchestrator."""
        self.logger = app_logger

    def execute(self, config: ExperimentConfig) -> Dict[str, Any]:
        """
        Execute an experiment and persist its outputs.

        Args:
            config: Validated experiment configuration

        Returns:
            Dictionary with success flag, output directory and written files
        """
        spec = config.experiment
        kind = spec.kind.value
        out = storage_service.run_dir(config.out)
        run_manager.clear(kind)
        written: List[Path] = [storage_service.save_config_echo(config, out / "config.yaml")]

        with run_log(out, kind) as log_path:
            result = self._run(config, out, written)
        written.append(log_path)
        return result

    def _run(self, config: ExperimentConfig, out: Path, written: List[Path]) -> Dict[str, Any]:
        spec = config.experiment
        kind = spec.kind.value
        self.logger.info(f"[Orchestrator] Starting experiment {kind} -> {out}")
        experiment = EXPERIMENTS[spec.kind](spec)
        try:
            result = experiment.execute()
        except KronVBException as e:
            self.logger.error(f"[Orchestrator] Experiment {kind} aborted: {e.message}")
            raise

        data = result.get("data", {})
        for name, frame in data.get("tables", {}).items():
            if isinstance(frame, pd.DataFrame) and not frame.empty:
                written.append(storage_service.save_table(frame, out / f"{name}.csv"))
        for name, state in data.get("states", {}).items():
            written.append(storage_service.save_state(state, out / f"state_{name}.yaml"))

        cells = [
            {"cell_id": c.cell_id, "status": c.status, "error": c.error_message}
            for c in run_manager.list_cells(kind)
        ]
        summary = {
            "experiment": kind,
            "success": result["success"],
            "error": result.get("error"),
            "results": data.get("summary", {}),
            "cells": cells,
        }
        written.append(storage_service.save_summary(summary, out / "summary.yaml"))

        failed = sum(1 for c in cells if c["status"] == "failed")
        self.logger.info(
            f"[Orchestrator] Experiment {kind} finished: success={result['success']} "
            f"cells={len(cells)} failed={failed}"
        )
        return {
            "success": result["success"],
            "experiment": kind,
            "out": out,
            "files": written,
            "failed_cells": failed,
            "error": result.get("error"),
        }


# Global orchestrator instance
orchestrator = ExperimentOrchestrator()
