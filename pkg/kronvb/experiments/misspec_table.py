"""
Iterations to convergence under misspecification.

Truths are ⊗Σ_i plus a rank-r perturbation; for each rank and method the
count is the first iteration whose posterior mean lies within β (Frobenius)
of the final one.
"""
from typing import Any, Dict

import pandas as pd

from kronvb.core.optimizer import FitResult, fit_joint, fit_mean_field, iterations_to_threshold
from kronvb.core.spd_geometry import MetricKind
from kronvb.experiments.base_experiment import BaseExperiment, Cell
from kronvb.experiments.utils import ROLE_TRUTH, derive_seed, misspecified_truth, truth_factors
from kronvb.models.request import ExperimentKind, MethodKind
from kronvb.models.response import ConvergenceStatus


class MisspecTableExperiment(BaseExperiment):
    kind = ExperimentKind.MISSPEC_TABLE

    def _count(self, result: FitResult, max_iters: int) -> Dict[str, Any]:
        count = iterations_to_threshold(result.snapshots, self.spec.beta)
        # the last snapshot is trivially within β of itself
        capped = count is None or (
            count >= result.iterations and result.status != ConvergenceStatus.CONVERGED
        )
        return {
            "iterations": None if capped else count,
            "capped": capped,
            "display": f">{max_iters}" if capped else str(count),
            "status": result.status.value,
        }

    def execute(self, **kwargs) -> Dict[str, Any]:
        spec = self.spec
        self.log_start("misspecification table", ranks=spec.ranks, xi=spec.xi, beta=spec.beta)
        base = truth_factors(spec.dims, derive_seed(spec.seed, ROLE_TRUTH))

        problems = {}
        for i, r in enumerate(spec.ranks):
            truth = misspecified_truth(base, r, spec.xi, derive_seed(spec.seed, ROLE_TRUTH, i + 1))
            problems[r] = self.simulated_problem(truth=truth, index=i)

        cells = []
        for r in spec.ranks:
            for method in (MethodKind.JOINT, MethodKind.MEANFIELD):
                cells.append(Cell(f"{method.value}/r={r}", {"method": method.value, "rank": r}))

        def work(cell: Cell) -> Dict[str, Any]:
            problem = problems[cell.params["rank"]]
            if cell.params["method"] == MethodKind.JOINT.value:
                max_iters = spec.misspec_max_iters_joint
                cfg = self.optimizer_config(
                    MetricKind.PULLBACK, spec.misspec_log10_step_joint, max_iters, keep_snapshots=True
                )
                result = fit_joint(problem.stats, problem.joint_init, cfg)
            else:
                max_iters = spec.misspec_max_iters_meanfield
                cfg = self.optimizer_config(
                    MetricKind.PRODUCT, spec.misspec_log10_step_meanfield, max_iters, keep_snapshots=True
                )
                result = fit_mean_field(problem.stats, problem.meanfield_init, cfg)
            return self._count(result, max_iters)

        outcomes = self.run_cells(cells, work)

        rows = []
        for o in outcomes:
            row = {"method": o.cell.params["method"], "rank": o.cell.params["rank"]}
            if o.success:
                row.update(o.value)
            else:
                row.update({"iterations": None, "capped": True, "display": "failed", "status": "failed"})
            rows.append(row)
        counts = pd.DataFrame(rows)
        wide = counts.pivot(index="method", columns="rank", values="display")
        wide.columns = [f"r={c}" for c in wide.columns]
        wide = wide.reset_index()

        ratios = {}
        for r in spec.ranks:
            j = counts[(counts["method"] == "joint") & (counts["rank"] == r)]["iterations"].iloc[0]
            mf = counts[(counts["method"] == "meanfield") & (counts["rank"] == r)]["iterations"].iloc[0]
            ratios[f"r={r}"] = None if j is None or mf is None or pd.isna(j) or pd.isna(mf) or j == 0 else float(mf) / float(j)

        joint_counts = [
            None if pd.isna(v) else int(v)
            for v in counts[counts["method"] == "joint"].sort_values("rank")["iterations"]
        ]
        nondecreasing = None not in joint_counts and all(a <= b for a, b in zip(joint_counts, joint_counts[1:]))

        succeeded = sum(o.success for o in outcomes)
        self.log_complete("misspecification table", succeeded=succeeded)
        return self.create_result(
            success=succeeded > 0,
            data={
                "tables": {"counts": counts, "table": wide, "failures": self.failures_frame(outcomes)},
                "summary": {
                    "dims": list(spec.dims),
                    "n_obs": spec.n_obs,
                    "xi": spec.xi,
                    "beta": spec.beta,
                    "counts": {f"{row['method']}/r={row['rank']}": row["display"] for row in rows},
                    "meanfield_to_joint_ratio": ratios,
                    "joint_counts_nondecreasing": nondecreasing,
                },
            },
            error=None if succeeded else "every cell failed",
        )
