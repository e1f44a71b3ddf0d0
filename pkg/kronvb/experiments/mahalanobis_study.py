"""
Posterior predictive Mahalanobis study.

For each method, K covariance draws are taken from the (approximate)
posterior; for each draw, m predictive samples are scored against the true
precision. The exact conjugate posterior and the truth itself serve as
references.
"""
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from kronvb.core.elbo import conjugate_posterior
from kronvb.core.optimizer import FitResult, fit_joint, fit_mean_field
from kronvb.core.sampling import mahalanobis_predictive, sample_dense_iw, sample_joint_iw, sample_mean_field
from kronvb.core.spd_geometry import MetricKind
from kronvb.experiments.base_experiment import BaseExperiment, Cell
from kronvb.experiments.utils import ROLE_DRAWS, derive_seed, summarize_distances
from kronvb.models.request import ExperimentKind

METHODS = ("truth", "unstructured", "joint", "meanfield")


class MahalanobisStudyExperiment(BaseExperiment):
    kind = ExperimentKind.MAHALANOBIS_STUDY

    def execute(self, **kwargs) -> Dict[str, Any]:
        spec = self.spec
        self.log_start("mahalanobis study", dims=spec.dims, K=spec.draws, m=spec.inner)
        problem = self.simulated_problem()
        truth_inv = problem.truth.inverses()
        init = problem.joint_init

        cells = [
            Cell(method, {"method": method}, derive_seed(spec.seed, ROLE_DRAWS, i))
            for i, method in enumerate(METHODS)
        ]

        def work(cell: Cell) -> Dict[str, Any]:
            method = cell.params["method"]
            fit: Optional[FitResult] = None
            if method == "truth":
                draws = [problem.truth] * spec.draws
            elif method == "unstructured":
                dof, scale = conjugate_posterior(problem.stats, init.prior_nu, init.prior_scale)
                draws = sample_dense_iw(dof, scale, spec.draws, cell.seed)
            elif method == "joint":
                cfg = self.optimizer_config(MetricKind.PULLBACK, spec.joint_log10_step, spec.max_iters_joint)
                fit = fit_joint(problem.stats, init, cfg)
                draws = sample_joint_iw(fit.state, spec.draws, cell.seed)
            else:
                cfg = self.optimizer_config(MetricKind.PRODUCT, spec.meanfield_log10_step, spec.max_iters_meanfield)
                fit = fit_mean_field(problem.stats, problem.meanfield_init, cfg)
                draws = sample_mean_field(fit.state, spec.draws, cell.seed)
            # inner samples use a stream independent of the draws
            values = mahalanobis_predictive(truth_inv, draws, spec.inner, cell.seed + 1)
            return {"values": values, "fit": fit}

        outcomes = self.run_cells(cells, work)

        frames = []
        summaries = {}
        fits = {}
        for o in outcomes:
            method = o.cell.params["method"]
            if not o.success:
                summaries[method] = {"status": "failed", "error": o.error}
                continue
            values = o.value["values"]
            frames.append(pd.DataFrame({
                "method": method,
                "draw": np.arange(1, len(values) + 1),
                "mahalanobis": values,
            }))
            summaries[method] = summarize_distances(method, values).model_dump()
            if o.value["fit"] is not None:
                fits[method] = o.value["fit"].summary().model_dump(mode="json")

        variance_ratio = None
        if "joint" in fits and "meanfield" in fits:
            variance_ratio = summaries["meanfield"]["variance"] / max(summaries["joint"]["variance"], np.finfo(float).tiny)

        table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
        self.log_complete("mahalanobis study", variance_ratio=variance_ratio)
        return self.create_result(
            success=bool(frames),
            data={
                "tables": {"mahalanobis": table, "failures": self.failures_frame(outcomes)},
                "summary": {
                    "dims": list(spec.dims),
                    "n_obs": spec.n_obs,
                    "order": problem.dims.total,
                    "draws": spec.draws,
                    "inner": spec.inner,
                    "methods": summaries,
                    "fits": fits,
                    "meanfield_to_joint_variance_ratio": variance_ratio,
                },
            },
            error=None if frames else "every cell failed",
        )
