#!/usr/bin/env python3
"""
Tests for the kronvb command line: simulate, fit, sample, experiment and
validate-config, including exit codes.
"""
import contextlib
import io
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from kronvb.core.sampling import sample_joint_iw
from kronvb.main import main as cli
from kronvb.services.storage_service import StorageService


def run_cli(*argv):
    """Run the CLI in-process; returns (exit code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


def load_yaml(path):
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f)


def test_simulate():
    """Test data simulation and its reproducibility."""
    print("=" * 60)
    print("Testing simulate...")
    print("=" * 60)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        code, out, _ = run_cli("simulate", "--dims", "2,3", "--n", "20", "--seed", "1", "--out", tmp / "a")
        assert code == 0
        tag, checksum = out.split()
        assert tag == "gram_sha256" and len(checksum) == 64
        assert (tmp / "a" / "data.bin").stat().st_size == 6 * 20 * 8
        assert load_yaml(tmp / "a" / "data.yaml")["shape"] == [2, 3, 20]
        truth = load_yaml(tmp / "a" / "truth.yaml")
        assert truth["dims"] == [2, 3] and truth["kind"] == "truth"
        assert load_yaml(tmp / "a" / "config.yaml")["dims"] == [2, 3]
        print("  ✅ Data, truth, config echo and checksum - PASSED")

        code, again, _ = run_cli("simulate", "--dims", "2,3", "--n", "20", "--seed", "1", "--out", tmp / "b")
        assert code == 0 and again == out
        assert (tmp / "a" / "data.bin").read_bytes() == (tmp / "b" / "data.bin").read_bytes()
        code, other, _ = run_cli("simulate", "--dims", "2,3", "--n", "20", "--seed", "2", "--out", tmp / "c")
        assert code == 0 and other != out
        print("  ✅ Same seed gives byte-identical data - PASSED")

        config = tmp / "simulate.yaml"
        config.write_text(yaml.safe_dump({"dims": [2, 2], "n": 5, "seed": 3, "out": str(tmp / "d")}))
        code, _, _ = run_cli("simulate", "--config", config, "--n", "7")
        assert code == 0
        assert load_yaml(tmp / "d" / "data.yaml")["shape"] == [2, 2, 7]
        print("  ✅ Flags override the config file - PASSED")
    print("✅ Simulate - ALL TESTS PASSED\n")
    return True


def test_fit_and_sample():
    """Test fits and draws for both families."""
    print("=" * 60)
    print("Testing fit and sample...")
    print("=" * 60)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        sim = tmp / "sim"
        assert run_cli("simulate", "--dims", "2,3", "--n", "30", "--seed", "4", "--out", sim)[0] == 0

        fit_args = ["fit", "--data", sim / "data.bin", "--truth", sim / "truth.yaml", "--eps", "-1.5", "--iters", "30"]
        code, out, _ = run_cli(*fit_args, "--out", tmp / "joint")
        assert code == 0
        assert out.startswith("status ") and "iterations 30" in out
        trace = pd.read_csv(tmp / "joint" / "trace.csv")
        assert list(trace["iteration"]) == list(range(31))
        assert trace["log_distance"].notna().all()
        assert {"elbo", "grad_norm", "nu_v", "logdet_1", "logdet_2"} <= set(trace.columns)
        state = load_yaml(tmp / "joint" / "state.yaml")
        assert state["method"] == "joint" and state["conventions"]["factor_order"] == "first-outermost"
        assert load_yaml(tmp / "joint" / "summary.yaml")["iterations"] == 30
        print("  ✅ Joint fit writes trace, state and summary - PASSED")

        assert run_cli(*fit_args, "--out", tmp / "joint2")[0] == 0
        assert (tmp / "joint" / "trace.csv").read_bytes() == (tmp / "joint2" / "trace.csv").read_bytes()
        print("  ✅ Fits are reproducible - PASSED")

        code, _, _ = run_cli(*fit_args, "--method", "meanfield", "--eps", "-2", "--out", tmp / "mf")
        assert code == 0
        assert load_yaml(tmp / "mf" / "config.yaml")["optimizer"]["metric"] == "product"
        assert {"nu_v_1", "nu_v_2"} <= set(pd.read_csv(tmp / "mf" / "trace.csv").columns)
        print("  ✅ Mean-field fit defaults to the product metric - PASSED")

        code, out, _ = run_cli("sample", "--state", tmp / "joint" / "state.yaml", "--K", "10", "--m", "5",
                               "--truth", sim / "truth.yaml", "--write-draws", "--out", tmp / "sj")
        assert code == 0 and "separable False" in out
        summary = load_yaml(tmp / "sj" / "summary.yaml")
        assert summary["method"] == "joint" and summary["max_nearest_kron_residual"] > 1e-8
        assert summary["mahalanobis"]["count"] == 10
        assert len(pd.read_csv(tmp / "sj" / "mahalanobis.csv")) == 10
        assert load_yaml(tmp / "sj" / "draws.yaml")["shape"] == [10, 6, 6]
        print("  ✅ Joint draws are dense and non-separable - PASSED")

        code, _, _ = run_cli("sample", "--state", tmp / "joint" / "state.yaml", "--K", "1", "--seed", "9",
                             "--write-draws", "--out", tmp / "one")
        assert code == 0
        storage = StorageService(tmp)
        drawn, _ = storage.load_tensor(tmp / "one" / "draws.bin")
        expected = sample_joint_iw(storage.load_state(tmp / "joint" / "state.yaml"), 1, rng=9)[0]
        assert np.array_equal(drawn[0], expected)
        print("  ✅ Seed-pinned draw equals the library call - PASSED")

        code, out, _ = run_cli("sample", "--state", tmp / "mf" / "state.yaml", "--K", "10",
                               "--write-draws", "--out", tmp / "smf")
        assert code == 0 and "separable True" in out
        draws = load_yaml(tmp / "smf" / "draws.yaml")
        assert len(draws["draws"]) == 10 and draws["dims"] == [2, 3]
        assert "mahalanobis" not in load_yaml(tmp / "smf" / "summary.yaml")
        print("  ✅ Mean-field draws are stored per mode - PASSED")
    print("✅ Fit and sample - ALL TESTS PASSED\n")
    return True


def test_experiment_and_validation():
    """Test the experiment command and config validation."""
    print("=" * 60)
    print("Testing experiment and validate-config...")
    print("=" * 60)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        config = tmp / "sweep.yaml"
        config.write_text(yaml.safe_dump({
            "experiment": {
                "kind": "convergence-sweep",
                "dims": [2, 2],
                "n_obs": 15,
                "joint_log10_steps": [-2.0],
                "meanfield_log10_steps": [-2.0],
                "max_iters_joint": 20,
                "max_iters_meanfield": 20,
                "backtracking": True,
            },
            "out": str(tmp / "sweep"),
        }))
        code, out, _ = run_cli("experiment", "--config", config, "--seed", "3")
        assert code == 0 and "success True" in out
        assert load_yaml(tmp / "sweep" / "config.yaml")["experiment"]["seed"] == 3
        assert (tmp / "sweep" / "traces.csv").exists()
        print("  ✅ Experiment from a config file with overrides - PASSED")

        code, out, _ = run_cli("validate-config", "--config", project_root / "config" / "experiments" / "convergence_sweep.yaml")
        assert code == 0 and "convergence-sweep" in out
        for name, kind in (("fit_joint.yaml", "fit"), ("sample.yaml", "sample"), ("real_data_fit.yaml", "experiment")):
            assert run_cli("validate-config", "--config", project_root / "config" / "experiments" / name, "--kind", kind)[0] == 0
        print("  ✅ Shipped configs validate - PASSED")

        typo = tmp / "typo.yaml"
        typo.write_text("experiment:\n  kind: misspec-table\n  rankz: [1, 2]\n")
        code, _, err = run_cli("validate-config", "--config", typo)
        assert code == 1 and "rankz" in err
        broken = tmp / "broken.yaml"
        broken.write_text("experiment: [unclosed\n")
        assert run_cli("validate-config", "--config", broken)[0] == 1
        print("  ✅ Unknown keys and bad YAML rejected - PASSED")
    print("✅ Experiment and validate-config - ALL TESTS PASSED\n")
    return True


def test_exit_codes():
    """Test usage, validation and I/O exit codes."""
    print("=" * 60)
    print("Testing exit codes...")
    print("=" * 60)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        usage = [
            ["bogus"],
            [],
            ["simulate", "--dims", "2,a", "--n", "3"],
            ["simulate", "--dims", "2,3", "--n", "0", "--out", tmp / "zero"],
            ["simulate", "--dims", "2,0", "--n", "3", "--out", tmp / "zero"],
            ["fit", "--out", tmp / "nodata"],
            ["fit", "--data", tmp / "x.bin", "--metric", "euclidean"],
        ]
        for argv in usage:
            code, _, err = run_cli(*argv)
            assert code == 1, f"{argv}: exit {code}"
            assert err.startswith("error:")
        print("  ✅ Usage and validation errors exit with 1 - PASSED")

        assert run_cli("fit", "--data", tmp / "missing.bin", "--out", tmp / "fit")[0] == 3
        assert run_cli("sample", "--state", tmp / "missing.yaml", "--out", tmp / "s")[0] == 3
        assert run_cli("validate-config", "--config", tmp / "missing.yaml")[0] == 3
        print("  ✅ Missing files exit with 3 - PASSED")

        sim = tmp / "sim"
        assert run_cli("simulate", "--dims", "2,2", "--n", "40", "--seed", "2", "--out", sim)[0] == 0
        code, out, _ = run_cli("fit", "--data", sim / "data.bin", "--eps", "2", "--iters", "5",
                               "--gamma", "1e-6", "--no-backtracking", "--out", tmp / "div")
        assert code == 2, f"exit {code}: {out}"
        assert out.startswith("status diverged")
        print("  ✅ Divergence exits with 2 - PASSED")
    print("✅ Exit codes - ALL TESTS PASSED\n")
    return True


def main():
    """Run all CLI tests."""
    print("\n" + "=" * 60)
    print("Command Line - Comprehensive Test")
    print("=" * 60)
    print()

    all_passed = True

    try:
        all_passed &= test_simulate()
        all_passed &= test_fit_and_sample()
        all_passed &= test_experiment_and_validation()
        all_passed &= test_exit_codes()

        print("=" * 60)
        if all_passed:
            print("✅ ALL TESTS PASSED")
        else:
            print("❌ SOME TESTS FAILED - Please review errors above")
        print("=" * 60)

        return 0 if all_passed else 1

    except Exception as e:
        print(f"\n❌ TEST ERROR: {e}")
        import traceback
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
