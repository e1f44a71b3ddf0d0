"""
Storage service for handling file operations.
Manages tensor data files, state files, result tables and run summaries.
"""
import hashlib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel

from kronvb.config import settings
from kronvb.core.elbo import JointState, MeanFieldState
from kronvb.core.exceptions import StorageError, describe_position
from kronvb.core.kron_tensor import FactorSet

# Written into every state file; readers in other languages rely on it.
STATE_CONVENTIONS = {
    "factor_order": "first-outermost",
    "scale_mode": 1,
    "layout": "row-major",
    "dof_parameterization": "nu_v = exp(z) + order + 1",
}

_LE_FLOAT = np.dtype("<f8")


def _to_builtin(value: Any) -> Any:
    """Convert numpy scalars and arrays into YAML-safe Python objects."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    return value


def _dump_yaml(data: Dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(_to_builtin(data), f, sort_keys=False, default_flow_style=None)
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}")
    return path


def _load_yaml(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise StorageError(f"file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise StorageError(f"cannot read {path}: {e}")
    if not isinstance(data, dict):
        raise StorageError(f"{path} does not contain a mapping")
    return data


def gram_checksum(gram: np.ndarray) -> str:
    """sha256 of the little-endian float64 bytes of the Gram matrix."""
    data = np.ascontiguousarray(np.asarray(gram, dtype=_LE_FLOAT))
    return hashlib.sha256(data.tobytes()).hexdigest()


class StorageService:
    """Service for managing file storage operations."""

    def __init__(self, base_dir: Optional[Path] = None):
        """Initialize storage service with a default output directory."""
        self.base_dir = Path(base_dir) if base_dir is not None else settings.output_dir

    def run_dir(self, out: Union[str, Path, None] = None) -> Path:
        """
        Resolve and create an output directory.

        Args:
            out: Explicit directory; relative names are used as given

        Returns:
            Path to the created directory
        """
        target = Path(out) if out is not None else self.base_dir
        try:
            target.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StorageError(f"cannot create output directory {target}: {e}")
        return target

    # ------------------------------------------------------------------
    # Tensor data
    # ------------------------------------------------------------------

    @staticmethod
    def _tensor_paths(path: Union[str, Path]) -> Tuple[Path, Path]:
        path = Path(path)
        stem = path.with_suffix("") if path.suffix in (".bin", ".yaml", ".yml") else path
        return stem.with_suffix(".bin"), stem.with_suffix(".yaml")

    def save_tensor(
        self,
        array: np.ndarray,
        path: Union[str, Path],
        mode_names: Optional[Sequence[str]] = None,
        extra: Optional[Dict[str, Any]] = None
    ) -> Path:
        """
        Save a tensor as little-endian float64 row-major bytes plus a YAML sidecar.

        Args:
            array: Tensor data; the last mode indexes observations by convention
            path: Target path; `.bin` and `.yaml` suffixes are derived from it
            mode_names: Optional names, one per mode
            extra: Additional sidecar entries

        Returns:
            Path to the binary file
        """
        array = np.asarray(array, dtype=float)
        if mode_names is not None and len(mode_names) != array.ndim:
            raise StorageError(f"{len(mode_names)} mode names for a {array.ndim}-way tensor")
        bin_path, meta_path = self._tensor_paths(path)
        bin_path.parent.mkdir(parents=True, exist_ok=True)
        try:
            with open(bin_path, "wb") as f:
                f.write(np.ascontiguousarray(array, dtype=_LE_FLOAT).tobytes(order="C"))
        except OSError as e:
            raise StorageError(f"cannot write {bin_path}: {e}")
        sidecar = {
            "shape": list(array.shape),
            "layout": "row-major",
            "dtype": "float64-le",
            "mode_names": list(mode_names) if mode_names is not None else None,
        }
        if extra:
            sidecar.update(extra)
        _dump_yaml(sidecar, meta_path)
        return bin_path

    def load_tensor(self, path: Union[str, Path]) -> Tuple[np.ndarray, Dict[str, Any]]:
        """
        Load a tensor written by `save_tensor`.

        Returns:
            (array, sidecar) with the array in row-major order

        Raises:
            StorageError: missing files, value-count mismatch or NaN entries
        """
        bin_path, meta_path = self._tensor_paths(path)
        sidecar = _load_yaml(meta_path)
        shape = sidecar.get("shape")
        if not isinstance(shape, list) or not shape or any(not isinstance(d, int) or d < 1 for d in shape):
            raise StorageError(f"{meta_path}: invalid shape {shape!r}")
        if sidecar.get("layout", "row-major") != "row-major":
            raise StorageError(f"{meta_path}: unsupported layout {sidecar.get('layout')!r}")
        names = sidecar.get("mode_names")
        if names is not None and len(names) != len(shape):
            raise StorageError(f"{meta_path}: {len(names)} mode names for {len(shape)} modes")
        if not bin_path.exists():
            raise StorageError(f"file not found: {bin_path}")
        values = np.fromfile(bin_path, dtype=_LE_FLOAT)
        expected = int(np.prod(shape))
        if values.size != expected:
            raise StorageError(f"{bin_path}: {values.size} values, shape {tuple(shape)} needs {expected}")
        array = values.astype(float).reshape(shape)
        bad = np.argwhere(~np.isfinite(array))
        if len(bad):
            raise StorageError(
                f"{bin_path}: non-finite value at multi-index {describe_position(bad[0])} "
                f"({len(bad)} in total)"
            )
        return array, sidecar

    def load_csv_matrix(self, path: Union[str, Path], header: bool = False) -> np.ndarray:
        """
        Load a 2-way slice from CSV.

        Raises:
            StorageError: naming the first missing or non-numeric cell (1-based row and column)
        """
        path = Path(path)
        if not path.exists():
            raise StorageError(f"file not found: {path}")
        try:
            frame = pd.read_csv(path, header=0 if header else None, dtype=str, skipinitialspace=True)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise StorageError(f"cannot parse {path}: {e}")
        numeric = frame.apply(pd.to_numeric, errors="coerce")
        bad = np.argwhere(numeric.isna().to_numpy())
        if len(bad):
            r, c = bad[0]
            raw = frame.iat[r, c]
            raise StorageError(
                f"{path}: missing or non-numeric value {raw!r} at row {r + 1}, column {c + 1}"
            )
        return numeric.to_numpy(dtype=float)

    # ------------------------------------------------------------------
    # Factor and state files
    # ------------------------------------------------------------------

    def save_factors(self, factors: FactorSet, path: Union[str, Path], **header) -> Path:
        """Write per-mode matrices (row-major nested lists) with the convention header."""
        data = {"conventions": dict(STATE_CONVENTIONS), **header}
        data["dims"] = list(factors.dims.dims)
        data["factors"] = [np.asarray(A) for A in factors]
        return _dump_yaml(data, Path(path))

    def load_factors(self, path: Union[str, Path]) -> Tuple[FactorSet, Dict[str, Any]]:
        path = Path(path)
        data = _load_yaml(path)
        return self._factors_from(data, path), data

    @staticmethod
    def _factors_from(data: Dict[str, Any], path: Path) -> FactorSet:
        try:
            mats = [np.asarray(m, dtype=float) for m in data["factors"]]
            dims = [int(d) for d in data["dims"]]
        except (KeyError, TypeError, ValueError) as e:
            raise StorageError(f"{path}: malformed factor list ({e})")
        if [m.shape for m in mats] != [(d, d) for d in dims]:
            raise StorageError(f"{path}: factor shapes do not match dims {dims}")
        return FactorSet(mats)

    def save_state(self, state: Union[JointState, MeanFieldState], path: Union[str, Path]) -> Path:
        """
        Save a fitted state.

        Separable priors are stored alongside; dense priors are recorded as such
        but not written.
        """
        if isinstance(state, JointState):
            header: Dict[str, Any] = {"method": "joint", "z": [state.z], "nu_v": [state.nu_v]}
            prior: Dict[str, Any] = {"nu": state.prior_nu}
            if isinstance(state.prior_scale, FactorSet):
                prior["scale_factors"] = [np.asarray(A) for A in state.prior_scale]
            elif state.prior_scale is not None:
                prior["scale_factors"] = None
                prior["note"] = "dense prior scale not stored"
            header["prior"] = prior
        else:
            header = {
                "method": "meanfield",
                "z": list(state.z),
                "nu_v": list(state.nu_v),
                "prior": {
                    "nus": list(state.prior_nus),
                    "scales": [np.asarray(L) for L in state.prior_scales],
                },
            }
        return self.save_factors(state.factors, path, **header)

    def load_state(self, path: Union[str, Path]) -> Union[JointState, MeanFieldState]:
        path = Path(path)
        data = _load_yaml(path)
        factors = self._factors_from(data, path)
        method = data.get("method")
        prior = data.get("prior") or {}
        try:
            z = [float(v) for v in data["z"]]
        except (KeyError, TypeError, ValueError) as e:
            raise StorageError(f"{path}: malformed dof parameters ({e})")
        if method == "joint":
            if len(z) != 1:
                raise StorageError(f"{path}: joint state needs one z value, got {len(z)}")
            scale_factors = prior.get("scale_factors")
            prior_scale = FactorSet([np.asarray(m, dtype=float) for m in scale_factors]) if scale_factors else None
            prior_nu = prior.get("nu")
            return JointState(z[0], factors, None if prior_nu is None else float(prior_nu), prior_scale)
        if method == "meanfield":
            return MeanFieldState(
                tuple(z),
                factors,
                tuple(float(v) for v in prior.get("nus", ())),
                tuple(np.asarray(s, dtype=float) for s in prior.get("scales", ())),
            )
        raise StorageError(f"{path}: unknown method {method!r}")

    # ------------------------------------------------------------------
    # Tables and summaries
    # ------------------------------------------------------------------

    def save_table(self, frame: pd.DataFrame, path: Union[str, Path]) -> Path:
        """Write a CSV table with a fixed float format so reruns are byte-identical."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        try:
            frame.to_csv(path, index=False, float_format="%.17g")
        except OSError as e:
            raise StorageError(f"cannot write {path}: {e}")
        return path

    def save_summary(self, summary: Dict[str, Any], path: Union[str, Path]) -> Path:
        return _dump_yaml(summary, Path(path))

    def save_config_echo(self, config: BaseModel, path: Union[str, Path]) -> Path:
        """Write the fully-resolved configuration next to the outputs."""
        return _dump_yaml(config.model_dump(mode="json"), Path(path))

    def save_draws(self, draws: List[Union[np.ndarray, FactorSet]], path: Union[str, Path]) -> Path:
        """Dense draws as a (K, p, p) tensor; separable draws as a factor YAML list."""
        path = Path(path)
        if draws and isinstance(draws[0], FactorSet):
            data = {
                "conventions": dict(STATE_CONVENTIONS),
                "dims": list(draws[0].dims.dims),
                "draws": [[np.asarray(A) for A in d] for d in draws],
            }
            return _dump_yaml(data, path.with_suffix(".yaml"))
        return self.save_tensor(np.stack(draws), path)

    def list_files(self, directory: Union[str, Path], pattern: Optional[str] = None) -> List[Path]:
        """
        List files in a directory.

        Args:
            directory: Directory to list
            pattern: Optional glob pattern to filter files

        Returns:
            Sorted list of file paths
        """
        target = Path(directory)
        if not target.exists():
            return []
        if pattern:
            return sorted(target.glob(pattern))
        return sorted(f for f in target.iterdir() if f.is_file())


# Global storage service instance
storage_service = StorageService()
