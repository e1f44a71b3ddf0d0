"""
Metric comparison on the joint model: orthogonalized pullback metric at one
factor step against the product metric over a grid, dof step held fixed.
"""
from typing import Any, Dict

import pandas as pd

from kronvb.core.optimizer import fit_joint
from kronvb.core.spd_geometry import MetricKind
from kronvb.experiments.base_experiment import BaseExperiment, Cell
from kronvb.models.request import ExperimentKind


class MetricComparisonExperiment(BaseExperiment):
    kind = ExperimentKind.METRIC_COMPARISON

    def execute(self, **kwargs) -> Dict[str, Any]:
        spec = self.spec
        self.log_start("metric comparison", dims=spec.dims, n=spec.n_obs)
        # both arms share truth, data and start
        problem = self.simulated_problem()

        cells = [Cell(
            f"pullback/eps={spec.pullback_log10_step:g}",
            {"metric": MetricKind.PULLBACK.value, "log10_eps": spec.pullback_log10_step},
        )] + [
            Cell(f"product/eps={e:g}", {"metric": MetricKind.PRODUCT.value, "log10_eps": e})
            for e in spec.product_log10_steps
        ]

        def work(cell: Cell):
            cfg = self.optimizer_config(
                MetricKind(cell.params["metric"]),
                cell.params["log10_eps"],
                spec.max_iters_joint,
                log10_step_dof=spec.dof_log10_step,
            )
            return fit_joint(problem.stats, problem.joint_init, cfg, truth=problem.truth)

        outcomes = self.run_cells(cells, work)

        frames = []
        cell_summaries = {}
        plateaus = {}
        for o in outcomes:
            if not o.success:
                cell_summaries[o.cell.cell_id] = {"status": "failed", "error": o.error}
                continue
            frames.append(o.value.trace.to_frame(**o.cell.params))
            plateau = self.distance_plateau(o.value)
            plateaus[o.cell.cell_id] = plateau
            cell_summaries[o.cell.cell_id] = {
                **o.value.summary().model_dump(mode="json"),
                **o.cell.params,
                "distance_plateau_iteration": plateau,
            }

        pullback_id = cells[0].cell_id
        pullback_plateau = plateaus.get(pullback_id)
        product_plateaus = [plateaus.get(c.cell_id) for c in cells[1:]]
        # a product arm that never plateaus counts as slower
        pullback_fastest = pullback_plateau is not None and all(
            p is None or pullback_plateau < p for p in product_plateaus
        )

        traces = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
        self.log_complete("metric comparison", pullback_plateau=pullback_plateau, pullback_fastest=pullback_fastest)
        return self.create_result(
            success=bool(frames),
            data={
                "tables": {"traces": traces, "failures": self.failures_frame(outcomes)},
                "summary": {
                    "dims": list(spec.dims),
                    "n_obs": spec.n_obs,
                    "log10_eps_dof": spec.dof_log10_step,
                    "pullback_fastest": pullback_fastest,
                    "cells": cell_summaries,
                },
            },
            error=None if frames else "every cell failed",
        )
