"""
Convergence sweep: joint (pullback metric) and mean-field (product metric)
fits over their step-size grids on one simulated data set.
"""
from typing import Any, Dict

import pandas as pd

from kronvb.core.optimizer import fit_joint, fit_mean_field
from kronvb.core.spd_geometry import MetricKind
from kronvb.experiments.base_experiment import BaseExperiment, Cell
from kronvb.models.request import ExperimentKind, MethodKind


class ConvergenceSweepExperiment(BaseExperiment):
    """Trace ELBO and distance to the truth for every (method, ε) cell."""

    kind = ExperimentKind.CONVERGENCE_SWEEP

    def execute(self, **kwargs) -> Dict[str, Any]:
        spec = self.spec
        self.log_start("convergence sweep", dims=spec.dims, n=spec.n_obs)
        problem = self.simulated_problem()

        cells = [
            Cell(f"joint/eps={e:g}", {"method": MethodKind.JOINT.value, "log10_eps": e})
            for e in spec.joint_log10_steps
        ] + [
            Cell(f"meanfield/eps={e:g}", {"method": MethodKind.MEANFIELD.value, "log10_eps": e})
            for e in spec.meanfield_log10_steps
        ]

        def work(cell: Cell):
            e = cell.params["log10_eps"]
            if cell.params["method"] == MethodKind.JOINT.value:
                cfg = self.optimizer_config(MetricKind.PULLBACK, e, spec.max_iters_joint)
                return fit_joint(problem.stats, problem.joint_init, cfg, truth=problem.truth)
            cfg = self.optimizer_config(MetricKind.PRODUCT, e, spec.max_iters_meanfield)
            return fit_mean_field(problem.stats, problem.meanfield_init, cfg, truth=problem.truth)

        outcomes = self.run_cells(cells, work)

        frames = []
        cell_summaries = {}
        for o in outcomes:
            if not o.success:
                cell_summaries[o.cell.cell_id] = {"status": "failed", "error": o.error}
                continue
            frames.append(o.value.trace.to_frame(**o.cell.params))
            cell_summaries[o.cell.cell_id] = {
                **o.value.summary().model_dump(mode="json"),
                "log10_eps": o.cell.params["log10_eps"],
                "distance_plateau_iteration": self.distance_plateau(o.value),
            }

        traces = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
        succeeded = len(frames)
        self.log_complete("convergence sweep", cells=len(cells), succeeded=succeeded)
        return self.create_result(
            success=succeeded > 0,
            data={
                "tables": {"traces": traces, "failures": self.failures_frame(outcomes)},
                "summary": {
                    "dims": list(spec.dims),
                    "n_obs": spec.n_obs,
                    "gamma": problem.gamma,
                    "cells": cell_summaries,
                },
            },
            error=None if succeeded else "every cell failed",
        )
