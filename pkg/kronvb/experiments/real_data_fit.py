"""
Real-data workflow: fit the joint approximation to a multiway array whose
last mode holds i.i.d. observations, then summarize each mode's mean
correlation matrix by its eigen-decomposition.

The mean is marginalized by centering; the prior scale is the sample
covariance (plus a relative ridge, since it is singular when n ≤ p), so the
fit targets S + C.
"""
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from kronvb.core.exceptions import ValidationError
from kronvb.core.kron_tensor import SufficientStats
from kronvb.core.optimizer import fit_joint, initial_joint_state
from kronvb.core.spd_geometry import MetricKind, symmetrize
from kronvb.experiments.base_experiment import BaseExperiment, Cell
from kronvb.experiments.utils import (
    ROLE_DATA,
    ROLE_INIT,
    derive_seed,
    eigen_summary,
    observations_from_tensor,
    synthetic_array,
)
from kronvb.models.request import ExperimentKind
from kronvb.models.response import EigenSummary
from kronvb.services.storage_service import storage_service


def sample_covariance_prior(stats: SufficientStats, ridge: float) -> np.ndarray:
    """C + ridge·(tr C/p)·I with C = S/n."""
    if stats.n_obs == 0 or stats.gram is None:
        raise ValidationError("the sample-covariance prior needs at least one observation")
    p = stats.dims.total
    C = stats.gram / stats.n_obs
    level = float(np.trace(C)) / p
    if not level > 0:
        raise ValidationError("data have zero variance after centering")
    return symmetrize(C + ridge * level * np.eye(p))


def eigen_frame(summaries: Sequence[EigenSummary]) -> pd.DataFrame:
    """One row per (mode, component): eigenvalue and the first two eigenvector entries."""
    rows = []
    for s in summaries:
        for k, lam in enumerate(s.eigenvalues):
            rows.append({
                "mode": s.mode,
                "name": s.name,
                "component": k + 1,
                "eigenvalue": lam,
                "first_vector": s.first_vector[k],
                "second_vector": s.second_vector[k] if s.second_vector else None,
            })
    return pd.DataFrame(rows)


class RealDataFitExperiment(BaseExperiment):
    kind = ExperimentKind.REAL_DATA_FIT

    def _load(self):
        spec = self.spec
        if spec.data_path is not None:
            array, sidecar = storage_service.load_tensor(spec.data_path)
            names: Optional[List[str]] = sidecar.get("mode_names")
            return array, (names[:-1] if names else None), str(spec.data_path)
        array, _ = synthetic_array(spec.synthetic_shape, derive_seed(spec.seed, ROLE_DATA))
        return array, None, "synthetic"

    def execute(self, **kwargs) -> Dict[str, Any]:
        spec = self.spec
        array, mode_names, source = self._load()
        self.log_start("real-data fit", source=source, shape=list(array.shape))

        Y, dims = observations_from_tensor(array, center=spec.center)
        stats = SufficientStats.from_observations(Y, dims)
        prior_scale = sample_covariance_prior(stats, spec.prior_ridge)
        prior_nu = float(dims.total + 2)
        init = initial_joint_state(
            dims,
            spec.init_gamma,
            derive_seed(spec.seed, ROLE_INIT),
            prior_nu=prior_nu,
            prior_scale=prior_scale,
            root=False,
        )
        # large orders: always safeguard the steps
        cfg = self.optimizer_config(
            MetricKind.PULLBACK, spec.joint_log10_step, spec.real_data_max_iters, backtracking=True
        )

        cell = Cell("joint", {"method": "joint", "source": source})
        outcome = self.run_cells([cell], lambda c: fit_joint(stats, init, cfg))[0]
        if not outcome.success:
            return self.create_result(
                success=False,
                data={"tables": {"failures": self.failures_frame([outcome])}, "summary": {"source": source}},
                error=outcome.error,
            )

        result = outcome.value
        summaries = eigen_summary(result.state, mode_names)
        self.log_complete("real-data fit", status=result.status.value, iterations=result.iterations)
        return self.create_result(
            success=True,
            data={
                "tables": {
                    "traces": result.trace.to_frame(method="joint"),
                    "eigen": eigen_frame(summaries),
                },
                "summary": {
                    "source": source,
                    "shape": list(array.shape),
                    "dims": list(dims.dims),
                    "n_obs": stats.n_obs,
                    "centered": spec.center,
                    "prior_nu": prior_nu,
                    "prior_ridge": spec.prior_ridge,
                    "fit": result.summary().model_dump(mode="json"),
                    "modes": [s.model_dump() for s in summaries],
                },
                "states": {"joint": result.state},
            },
        )
