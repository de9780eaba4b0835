import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from revdiff.cli import EXIT_INVALID, EXIT_OK, EXIT_PROTOCOL, build_parser, build_spec, main, merge_settings
from revdiff.ensemble import read_trajectories

FAST = ["--T", "0.02", "--dt", "0.001", "--traj", "3"]


def read_flow(path):
    with open(path / "flow.csv") as fh:
        return list(csv.DictReader(fh))


class TestExitCodes:
    @pytest.mark.parametrize("cmd", ["forward", "reverse", "sme", "depol-forward", "depol-reverse", "gate"])
    def test_runs_succeed(self, cmd, tmp_path):
        assert main([cmd, *FAST, "--out", str(tmp_path)]) == EXIT_OK
        assert {p.name for p in tmp_path.iterdir()} == {"flow.csv", "trajectories.jsonl", "summary.json"}

    @pytest.mark.parametrize(
        "argv",
        [
            ["forward", "--bogus", "1"],
            ["forward", "--p", "abc"],
            ["forward", "--p", "-0.1"],
            ["forward", "--dt", "0.3", "--T", "1"],
            ["gate", "--p", "0"],
            ["depol-reverse", "--p", "0.5", "--T", "2"],
            ["forward", "--traj", "0"],
            ["forward", "--workers", "0"],
            ["forward", "--initial", "[1, 0, 0]"],
            ["forward", "--initial", "[0, 0]"],
            ["ensemble", "--p", "0.1"],
            [],
        ],
    )
    def test_validation_errors(self, argv, capsys):
        assert main(argv) == EXIT_INVALID
        assert "error" in capsys.readouterr().err

    def test_bad_config_file(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["forward", "--config", str(bad)]) == EXIT_INVALID
        bad.write_text('{"p": 0.1, "colour": "red"}')
        assert main(["forward", "--config", str(bad)]) == EXIT_INVALID
        bad.write_text("[1, 2]")
        assert main(["forward", "--config", str(bad)]) == EXIT_INVALID
        assert main(["forward", "--config", str(tmp_path / "missing.json")]) == EXIT_INVALID

    def test_teleport_failure_exit(self, tmp_path, capsys):
        code = main(["teleport", "--p", "0.2", "--T", "1", "--dt", "0.01", "--traj", "4", "--out", str(tmp_path)])
        summary = json.loads((tmp_path / "summary.json").read_text())
        failed = summary["teleport"]["failed_runs"]
        assert code == (EXIT_PROTOCOL if failed else EXIT_OK)
        if failed:
            assert "attempt budget" in capsys.readouterr().err


class TestSettings:
    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"p": 0.3, "T": 0.05, "n_traj": 7}))
        args = build_parser().parse_args(["forward", "--config", str(cfg), "--p", "0.1"])
        s = merge_settings(args)
        assert s["p"] == 0.1 and s["T"] == 0.05 and s["n_traj"] == 7

    def test_config_equals_flags(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"pauli": "XZ", "p": 0.3, "T": 0.02, "dt": 0.001, "seed": 4, "n_traj": 3,
                                   "initial": "haar"}))
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["reverse", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
        flags = ["--pauli", "XZ", "--p", "0.3", "--T", "0.02", "--dt", "0.001", "--seed", "4", "--traj", "3",
                 "--initial", "haar"]
        assert main(["reverse", *flags, "--out", str(b)]) == EXIT_OK
        for name in ("flow.csv", "trajectories.jsonl", "summary.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_ensemble_kind(self):
        spec, opts = build_spec("ensemble", {"kind": "depolarizing", "segment": "forward", "T": 0.1, "n_traj": 2})
        assert spec.kind == "depolarizing" and spec.segment == "forward"
        assert spec.time_grid[-1] == pytest.approx(0.1) and len(spec.time_grid) == 101
        assert opts == {"out": None, "workers": 1}

    def test_gate_grid_span(self):
        spec, _ = build_spec("gate", {"T": 0.5, "grid_points": 3})
        assert spec.time_grid == pytest.approx([0.5, 0.75, 1.0])

    def test_theta_sampler_from_config(self):
        spec, _ = build_spec("gate", {"T": 0.1, "theta_sampler": {"kind": "uniform", "low": 0, "high": 1}})
        assert spec.config.theta_sampler.high == 1


class TestOutputs:
    def test_forward_without_noise_is_constant(self, tmp_path):
        assert main(["forward", "--p", "0", "--T", "0.05", "--traj", "2", "--initial", "haar", "--out", str(tmp_path)]) == 0
        rows = read_flow(tmp_path)
        assert all(float(r["mean"]) == pytest.approx(1, abs=1e-14) for r in rows)
        assert float(rows[-1]["t"]) == pytest.approx(0.05)

    def test_reverse_returns_to_start(self, tmp_path):
        assert main(["reverse", "--pauli", "XZ", "--initial", "haar", *FAST, "--out", str(tmp_path)]) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["terminal_fidelity"]["min"] == pytest.approx(1, abs=1e-10)
        recs = read_trajectories(tmp_path / "trajectories.jsonl")
        assert len(recs) == 3 and recs[0]["states"].shape == (101, 4)
        assert np.all(np.isfinite(recs[0]["fidelity"]))

    def test_explicit_initial(self, tmp_path):
        assert main(["forward", "--p", "0", "--initial", "[0, 1]", *FAST, "--out", str(tmp_path)]) == 0
        rec = read_trajectories(tmp_path / "trajectories.jsonl")[0]
        np.testing.assert_allclose(np.abs(rec["states"][0]), [0, 1])


@pytest.mark.slow
def test_verify_suite_passes():
    proc = subprocess.run([sys.executable, "-m", "revdiff.cli", "verify"], capture_output=True, text=True, timeout=600)
    assert proc.returncode == EXIT_OK, proc.stdout + proc.stderr
    assert "FAIL" not in proc.stdout
