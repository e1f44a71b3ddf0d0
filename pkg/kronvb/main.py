"""
Command-line entry point for kronvb.

Subcommands: simulate, fit, sample, experiment, validate-config. Every run
validates its parameter bundle before computing and writes the resolved
configuration next to its outputs.
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Type

import numpy as np
import pandas as pd
import pydantic
import yaml

from kronvb import __version__
from kronvb.config import settings
from kronvb.core.elbo import JointState, scatter_scale
from kronvb.core.exceptions import KronVBException, StorageError, ValidationError
from kronvb.core.kron_tensor import FactorSet, SufficientStats, kron_dense, nearest_kron_residual
from kronvb.core.optimizer import fit_joint, fit_mean_field, initial_joint_state, initial_mean_field_state, posterior_mean_factors
from kronvb.core.sampling import mahalanobis_predictive, sample_joint_iw, sample_mean_field, sample_tensor_normal
from kronvb.core.spd_geometry import MetricKind
from kronvb.experiments.utils import (
    ROLE_DATA,
    ROLE_TRUTH,
    observations_from_tensor,
    derive_seed,
    summarize_distances,
    tensor_from_observations,
    truth_factors,
)
from kronvb.models.request import (
    ExperimentConfig,
    ExperimentKind,
    FitConfig,
    MethodKind,
    SampleConfig,
    SimulateConfig,
)
from kronvb.models.response import ConvergenceStatus
from kronvb.services.logger import app_logger
from kronvb.services.storage_service import gram_checksum, storage_service

EXIT_OK = 0

# draws whose nearest-Kronecker residual exceeds this are reported non-separable
SEPARABLE_TOL = 1e-8

BUNDLES: Dict[str, Type[pydantic.BaseModel]] = {
    "simulate": SimulateConfig,
    "fit": FitConfig,
    "sample": SampleConfig,
    "experiment": ExperimentConfig,
}


class CliParser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as validation failures (exit 1)."""

    def error(self, message: str):
        raise ValidationError(f"usage: {message}")


def _dims(text: str) -> List[int]:
    try:
        return [int(v) for v in text.replace("x", ",").split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"dims must be a comma-separated list of integers, got '{text}'")


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"expected a comma-separated list of integers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="kronvb", description="Variational Kronecker Inverse-Wishart fits and experiments.")
    parser.add_argument("--version", action="version", version=f"kronvb {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", type=Path, help="YAML file with the parameter bundle; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, help="Output directory")

    p = sub.add_parser("simulate", help="Simulate tensor-normal data and a ground truth")
    common(p)
    p.add_argument("--dims", type=_dims, help="Mode extents, e.g. 5,6,4,3")
    p.add_argument("--n", type=int, help="Number of observations")

    p = sub.add_parser("fit", help="Fit the joint or mean-field approximation")
    common(p)
    p.add_argument("--data", type=Path, help="Tensor file (last mode = observations)")
    p.add_argument("--method", choices=[m.value for m in MethodKind])
    p.add_argument("--metric", choices=[m.value for m in MetricKind])
    p.add_argument("--eps", type=float, help="log10 factor step, e.g. -4.4")
    p.add_argument("--eps-dof", type=float, help="log10 dof step (split mode)")
    p.add_argument("--iters", type=int, help="Iteration cap")
    p.add_argument("--truth", type=Path, help="Truth factor file for distance tracking")
    p.add_argument("--gamma", type=float, help="Prior and initialization scale γ")
    p.add_argument("--center", action="store_true", default=None, help="Subtract the sample mean")
    p.add_argument("--no-backtracking", dest="backtracking", action="store_false", default=None)

    p = sub.add_parser("sample", help="Draw from a fitted state")
    common(p)
    p.add_argument("--state", type=Path, help="State file written by fit")
    p.add_argument("--K", dest="draws", type=int, help="Number of draws")
    p.add_argument("--m", dest="inner", type=int, help="Predictive samples per draw")
    p.add_argument("--truth", type=Path, help="Truth factor file for the Mahalanobis study")
    p.add_argument("--write-draws", action="store_true", default=None)

    p = sub.add_parser("experiment", help="Run a harness experiment")
    common(p)
    p.add_argument("--experiment", choices=[k.value for k in ExperimentKind])
    p.add_argument("--dims", type=_dims)
    p.add_argument("--n", dest="n_obs", type=int)
    p.add_argument("--eps", dest="joint_log10_step", type=float, help="log10 joint step")
    p.add_argument("--eps-dof", dest="dof_log10_step", type=float, help="log10 split dof step")
    p.add_argument("--iters", dest="max_iters_joint", type=int, help="Joint iteration cap")
    p.add_argument("--r", dest="ranks", type=_ints, help="Perturbation ranks, e.g. 1,3,5")
    p.add_argument("--xi", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--K", dest="draws", type=int)
    p.add_argument("--m", dest="inner", type=int)
    p.add_argument("--data", dest="data_path", type=Path)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("validate-config", help="Validate a configuration file without running it")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--kind", choices=list(BUNDLES), default="experiment", help="Bundle type in the file")

    return parser


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------

def load_config_file(path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return {}
    if not path.exists():
        raise StorageError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ValidationError(f"cannot parse {path}: {e}")
    if not isinstance(data, dict):
        raise ValidationError(f"{path} must contain a mapping")
    return data


def _overlay(base: Dict[str, Any], **flags) -> Dict[str, Any]:
    out = dict(base)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def validate_bundle(model: Type[pydantic.BaseModel], data: Dict[str, Any]) -> pydantic.BaseModel:
    try:
        return model.model_validate(data)
    except pydantic.ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ValidationError(f"invalid {model.__name__}: {problems}")


def resolve_config(args: argparse.Namespace) -> pydantic.BaseModel:
    """Merge the config file with explicit flags and validate the bundle."""
    base = load_config_file(getattr(args, "config", None))
    if args.command == "simulate":
        return validate_bundle(SimulateConfig, _overlay(base, dims=args.dims, n=args.n, seed=args.seed, out=args.out))

    if args.command == "fit":
        optimizer = _overlay(
            base.get("optimizer", {}),
            metric=args.metric,
            log10_step=args.eps,
            log10_step_dof=args.eps_dof,
            max_iters=args.iters,
            seed=args.seed,
            backtracking=args.backtracking,
        )
        method = args.method or base.get("method", MethodKind.JOINT.value)
        if method == MethodKind.MEANFIELD.value and "metric" not in optimizer:
            optimizer["metric"] = MetricKind.PRODUCT.value
        data = _overlay(base, data=args.data, method=method, truth=args.truth, gamma=args.gamma,
                        center=args.center, out=args.out)
        data["optimizer"] = optimizer
        return validate_bundle(FitConfig, data)

    if args.command == "sample":
        return validate_bundle(SampleConfig, _overlay(
            base, state=args.state, draws=args.draws, inner=args.inner, truth=args.truth,
            write_draws=args.write_draws, seed=args.seed, out=args.out,
        ))

    if args.command == "experiment":
        spec = _overlay(
            base.get("experiment", {}),
            kind=args.experiment, dims=args.dims, n_obs=args.n_obs, seed=args.seed,
            joint_log10_step=args.joint_log10_step, dof_log10_step=args.dof_log10_step,
            max_iters_joint=args.max_iters_joint, ranks=args.ranks, xi=args.xi, beta=args.beta,
            draws=args.draws, inner=args.inner, data_path=args.data_path, workers=args.workers,
        )
        return validate_bundle(ExperimentConfig, _overlay(base, experiment=spec, out=args.out))

    raise ValidationError(f"unknown command '{args.command}'")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: SimulateConfig) -> int:
    out = storage_service.run_dir(cfg.out)
    truth = truth_factors(cfg.dims, derive_seed(cfg.seed, ROLE_TRUTH))
    Y, stats = sample_tensor_normal(truth, cfg.n, derive_seed(cfg.seed, ROLE_DATA))
    storage_service.save_tensor(
        tensor_from_observations(Y, truth.dims),
        out / "data.bin",
        extra={"observation_mode": len(cfg.dims) + 1, "seed": cfg.seed},
    )
    storage_service.save_factors(truth, out / "truth.yaml", kind="truth", seed=cfg.seed)
    storage_service.save_config_echo(cfg, out / "config.yaml")
    checksum = gram_checksum(stats.gram)
    app_logger.info(f"Simulated {cfg.n} observations of dims {cfg.dims} into {out}")
    print(f"gram_sha256 {checksum}")
    return EXIT_OK


def cmd_fit(cfg: FitConfig) -> int:
    out = storage_service.run_dir(cfg.out)
    array, _ = storage_service.load_tensor(cfg.data)
    Y, dims = observations_from_tensor(array, center=cfg.center)
    stats = SufficientStats.from_observations(Y, dims)
    gamma = cfg.gamma if cfg.gamma is not None else scatter_scale(stats)
    truth = storage_service.load_factors(cfg.truth)[0] if cfg.truth is not None else None
    opt = cfg.optimizer
    seed = opt.seed if opt.seed is not None else 1
    storage_service.save_config_echo(cfg, out / "config.yaml")

    if cfg.method == MethodKind.JOINT:
        result = fit_joint(stats, initial_joint_state(dims, gamma, seed), opt, truth=truth)
    else:
        result = fit_mean_field(stats, initial_mean_field_state(dims, gamma, seed), opt, truth=truth)

    storage_service.save_table(result.trace.to_frame(method=cfg.method.value), out / "trace.csv")
    storage_service.save_state(result.state, out / "state.yaml")
    summary = result.summary(opt.convergence)
    storage_service.save_summary(summary.model_dump(mode="json"), out / "summary.yaml")

    last = result.trace.last
    print(f"status {result.status.value} iterations {last.iteration} elbo {last.elbo:.10e}")
    if result.status == ConvergenceStatus.DIVERGED:
        app_logger.error(f"Fit diverged: {result.message}; last row {last.model_dump()}")
        return 2
    return EXIT_OK


def _separability(draws: Sequence, dims) -> Optional[float]:
    if dims.ndim < 2 or not draws:
        return None
    if isinstance(draws[0], FactorSet):
        return 0.0
    return float(np.max([nearest_kron_residual(d, dims, split=1) for d in draws]))


def cmd_sample(cfg: SampleConfig) -> int:
    out = storage_service.run_dir(cfg.out)
    state = storage_service.load_state(cfg.state)
    dims = state.dims
    storage_service.save_config_echo(cfg, out / "config.yaml")

    if isinstance(state, JointState):
        if dims.total > settings.DENSE_LIMIT:
            raise ValidationError(f"dense joint draws refused for order {dims.total} > {settings.DENSE_LIMIT}")
        draws = sample_joint_iw(state, cfg.draws, cfg.seed)
        method = MethodKind.JOINT.value
    else:
        draws = sample_mean_field(state, cfg.draws, cfg.seed)
        method = MethodKind.MEANFIELD.value

    scale, factors = posterior_mean_factors(state)
    residual = _separability(draws, dims)
    summary: Dict[str, Any] = {
        "method": method,
        "dims": list(dims.dims),
        "draws": cfg.draws,
        "seed": cfg.seed,
        "posterior_mean_scale": scale,
        "posterior_mean_logdets": list(factors.logdets()),
        "max_nearest_kron_residual": residual,
        "separable": None if residual is None else residual <= SEPARABLE_TOL,
    }
    if dims.total <= settings.DENSE_LIMIT:
        dense = [d if isinstance(d, np.ndarray) else kron_dense(d) for d in draws]
        summary["draw_mean_trace"] = float(np.mean([np.trace(d) for d in dense]))
        summary["posterior_mean_trace"] = scale * float(np.prod([np.trace(A) for A in factors]))

    if cfg.truth is not None:
        truth = storage_service.load_factors(cfg.truth)[0]
        values = mahalanobis_predictive(truth.inverses(), draws, cfg.inner, cfg.seed + 1)
        summary["mahalanobis"] = summarize_distances(method, values).model_dump()
        storage_service.save_table(
            pd.DataFrame({"draw": np.arange(1, len(values) + 1), "mahalanobis": values}),
            out / "mahalanobis.csv",
        )

    if cfg.write_draws:
        storage_service.save_draws(draws, out / "draws")
    storage_service.save_summary(summary, out / "summary.yaml")
    print(f"draws {cfg.draws} method {method} separable {summary['separable']}")
    return EXIT_OK


def cmd_experiment(cfg: ExperimentConfig) -> int:
    from kronvb.core.orchestrator import orchestrator

    result = orchestrator.execute(cfg)
    print(f"experiment {result['experiment']} success {result['success']} out {result['out']}")
    return EXIT_OK if result["success"] else 2


def cmd_validate_config(path: Path, kind: str) -> int:
    data = load_config_file(path)
    cfg = validate_bundle(BUNDLES[kind], data)
    print(yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False), end="")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "sample": cmd_sample,
    "experiment": cmd_experiment,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse, validate and dispatch; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        if args.command == "validate-config":
            return cmd_validate_config(args.config, args.kind)
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except KronVBException as e:
        app_logger.error(e.message)
        print(f"error: {e.message}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        app_logger.error(f"I/O failure: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
